use gricnn_core::cnn::*;
use gricnn_core::synthdata::gen_dataset;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn shape() -> NetShape {
    let act = Activation::LRelu(0.01);
    NetShape {
        input_side: 63,
        layers: vec![
            LayerSpec { kernel_side: 11, in_channels: 1, out_channels: 2, activation: act, pool: Pool::None },
            LayerSpec { kernel_side: 9, in_channels: 2, out_channels: 2, activation: act, pool: Pool::None },
            LayerSpec { kernel_side: 7, in_channels: 2, out_channels: 2, activation: act, pool: Pool::Avg(7) },
        ],
        flatten_nodes: 8,
        hidden_dim: Some(16),
        symmetric: false,
    }
}

fn accuracy(params: &NetworkParams, data: &[(gricnn_core::grid::Grid2D, u8)]) -> f64 {
    let mut correct = 0;
    for (img, label) in data {
        let v = forward_stack(img, params).unwrap();
        let out = head_forward(&v, params).unwrap();
        let pred = if out[0] >= out[1] { 0u8 } else { 1 };
        if pred == *label { correct += 1; }
    }
    correct as f64 / data.len() as f64
}

fn main() {
    for seed in 0..5u64 {
        let train = gen_dataset(200, 0.5, 63, 1000 + seed).unwrap();
        let test = gen_dataset(100, 0.5, 63, 9000 + seed).unwrap();
        let mut best = (0.0, 0.0, 0.0f64);
        for lr in [1.0, 2.0, 4.0] {
            let mut params =
                NetworkParams::random(&shape(), &mut StdRng::seed_from_u64(seed)).unwrap();
            params.flatten_activation = Activation::Sigmoid;
            for _ in 0..20 {
                for chunk in train.chunks(10) {
                    let (next, _) = sgd_step(&params, chunk, lr).unwrap();
                    params = next;
                }
            }
            let tr = accuracy(&params, &train);
            let te = accuracy(&params, &test);
            println!("  seed {seed} lr {lr}: train {tr:.3} test {te:.3}");
            if tr > best.1 {
                best = (lr, tr, te);
            }
        }
        println!("seed {seed}: selected lr {} -> test {:.3}", best.0, best.2);
    }
}
