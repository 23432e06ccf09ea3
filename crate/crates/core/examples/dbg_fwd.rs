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
    let img = gen_lesion(&LesionSpec { class: LesionClass::Spiculated, side: 63, seed: 5 }).unwrap();
    println!("image sum {:.3} max {:.3}", img.sum(), img.as_slice().iter().fold(0.0f64, |a, &b| a.max(b)));

    // manual layer-by-layer
    let mut map = img.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let conv = conv_same(&map, &layer.kernels[0]).unwrap();
        let mut act = conv.clone();
        for v in act.as_mut_slice() { *v = Activation::Sigmoid.apply(*v); }
        let pooled = match layer.spec.pool { Pool::None => act.clone(), Pool::Avg(w) => avg_pool(&act, w).unwrap() };
        let n = pooled.as_slice().len() as f64;
        let mean = pooled.sum() / n;
        let var = pooled.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        println!("layer {l}: out side {} mean {:.4} std {:.4}", pooled.side(), mean, var.sqrt());
        map = pooled;
    }
    for (t, tpl) in params.flatten[0].iter().enumerate().take(4) {
        let u: f64 = map.as_slice().iter().zip(tpl.as_slice()).map(|(a, b)| a * b).sum();
        println!("flatten node {t}: u = {u:.4} v = {:.6}", Activation::Sigmoid.apply(u));
    }
    let v = forward_stack(&img, &params).unwrap();
    println!("flatten vector: {:?}", &v.as_slice()[..4]);
}
