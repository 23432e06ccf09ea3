use gricnn_core::cnn::*;
use gricnn_core::synthdata::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn main() {
    let shape = NetShape {
        input_side: 63,
        layers: vec![
            LayerSpec { kernel_side: 5, in_channels: 1, out_channels: 1, activation: Activation::Sigmoid, pool: Pool::None },
            LayerSpec { kernel_side: 5, in_channels: 1, out_channels: 1, activation: Activation::Sigmoid, pool: Pool::None },
            LayerSpec { kernel_side: 3, in_channels: 1, out_channels: 1, activation: Activation::Sigmoid, pool: Pool::Avg(7) },
        ],
        flatten_nodes: 8,
        hidden_dim: None,
        symmetric: false,
    };
    let params = NetworkParams::random(&shape, &mut StdRng::seed_from_u64(0)).unwrap();
    // per-class mean flatten vectors and within-class std
    let mut class_means = [[0.0f64; 8]; 2];
    let mut class_sq = [[0.0f64; 8]; 2];
    let n = 40;
    for class_idx in 0..2 {
        let class = if class_idx == 0 { LesionClass::Smooth } else { LesionClass::Spiculated };
        for seed in 0..n {
            let img = gen_lesion(&LesionSpec { class, side: 63, seed }).unwrap();
            let v = forward_stack(&img, &params).unwrap();
            for j in 0..8 {
                class_means[class_idx][j] += v.as_slice()[j] / n as f64;
                class_sq[class_idx][j] += v.as_slice()[j].powi(2) / n as f64;
            }
        }
    }
    for j in 0..4 {
        let d = (class_means[0][j] - class_means[1][j]).abs();
        let s0 = (class_sq[0][j] - class_means[0][j].powi(2)).sqrt();
        let s1 = (class_sq[1][j] - class_means[1][j].powi(2)).sqrt();
        println!("node {j}: |Δmean| = {d:.4}, within-class std = {s0:.4}/{s1:.4}, separation = {:.2}", d / (s0 + s1).max(1e-9));
    }
}
