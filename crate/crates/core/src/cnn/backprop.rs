//! Backpropagation and the SGD update for a single convolution stack.

use rayon::prelude::*;

use crate::grid::{Dih4Element, Grid2D};
use crate::symmetry::symmetrize;

use super::{
    conv_same, forward_stack_trace, head_forward_trace, mse_loss, targets_for_label, CnnError,
    NetworkParams, OutputVector, Pool, StackTrace,
};

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub kernels: Vec<Grid2D>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Loss gradients for every parameter class of a stack.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub flatten: Vec<Vec<Grid2D>>,
    pub head: Vec<DenseGrads>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Gradients {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerGrads {
                kernels: l
                    .kernels
                    .iter()
                    .map(|k| Grid2D::zeros(k.side()).expect("odd side"))
                    .collect(),
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        let flatten = params
            .flatten
            .iter()
            .map(|nodes| {
                nodes.iter().map(|t| Grid2D::zeros(t.side()).expect("odd side")).collect()
            })
            .collect();
        let head = params
            .head
            .iter()
            .map(|d| DenseGrads {
                weights: vec![0.0; d.weights.len()],
                biases: vec![0.0; d.biases.len()],
            })
            .collect();
        Gradients { layers, flatten, head }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ka, kb) in a.kernels.iter_mut().zip(&b.kernels) {
                for (x, y) in ka.as_mut_slice().iter_mut().zip(kb.as_slice()) {
                    *x += y;
                }
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
        for (a, b) in self.flatten.iter_mut().zip(&other.flatten) {
            for (ta, tb) in a.iter_mut().zip(b) {
                for (x, y) in ta.as_mut_slice().iter_mut().zip(tb.as_slice()) {
                    *x += y;
                }
            }
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for k in &mut l.kernels {
                for x in k.as_mut_slice() {
                    *x *= s;
                }
            }
            for x in &mut l.biases {
                *x *= s;
            }
        }
        for nodes in &mut self.flatten {
            for t in nodes {
                for x in t.as_mut_slice() {
                    *x *= s;
                }
            }
        }
        for d in &mut self.head {
            for x in &mut d.weights {
                *x *= s;
            }
            for x in &mut d.biases {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.kernels.iter().all(|k| k.as_slice().iter().all(|x| x.is_finite()))
                && l.biases.iter().all(|x| x.is_finite())
        }) && self
            .flatten
            .iter()
            .all(|nodes| nodes.iter().all(|t| t.as_slice().iter().all(|x| x.is_finite())))
            && self.head.iter().all(|d| {
                d.weights.iter().all(|x| x.is_finite()) && d.biases.iter().all(|x| x.is_finite())
            })
    }

    /// Orbit-average every kernel and template gradient so updates stay on
    /// the Dih4-invariant manifold.
    pub fn project_symmetric(&mut self) {
        for l in &mut self.layers {
            for k in &mut l.kernels {
                *k = symmetrize(k);
            }
        }
        for nodes in &mut self.flatten {
            for t in nodes {
                *t = symmetrize(t);
            }
        }
    }
}

/// Backward pass of the head. Returns per-layer gradients, the loss gradient
/// with respect to the flatten vector, the loss and the outputs.
pub(crate) fn head_backward(
    params: &NetworkParams,
    trace: &super::HeadTrace,
    target: &[f64; 2],
) -> (Vec<DenseGrads>, Vec<f64>, f64, OutputVector) {
    let output = trace.output;
    let loss = mse_loss(&output, target);
    let depth = params.head.len();
    let mut grads: Vec<DenseGrads> = params
        .head
        .iter()
        .map(|d| DenseGrads { weights: vec![0.0; d.weights.len()], biases: vec![0.0; d.out_dim] })
        .collect();
    // Delta on the last layer's pre-activations; sigmoid' computed from the
    // stored activation a as a·(1−a).
    let mut delta: Vec<f64> =
        (0..2).map(|j| (output[j] - target[j]) * output[j] * (1.0 - output[j])).collect();
    for l in (0..depth).rev() {
        let dense = &params.head[l];
        let inputs = &trace.inputs[l];
        for o in 0..dense.out_dim {
            grads[l].biases[o] = delta[o];
            let row = &mut grads[l].weights[o * dense.in_dim..(o + 1) * dense.in_dim];
            for (w, x) in row.iter_mut().zip(inputs) {
                *w = delta[o] * x;
            }
        }
        let mut din = vec![0.0; dense.in_dim];
        for o in 0..dense.out_dim {
            let row = &dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim];
            for (d, w) in din.iter_mut().zip(row) {
                *d += w * delta[o];
            }
        }
        if l > 0 {
            // din is the gradient on layer l-1's activations a = σ(z).
            delta = din
                .iter()
                .zip(&trace.inputs[l])
                .map(|(d, a)| d * a * (1.0 - a))
                .collect();
        } else {
            return (grads, din, loss, output);
        }
    }
    unreachable!("head has at least one layer");
}

/// Backward pass of the convolution stack given the loss gradient on the
/// flatten vector. Returns conv-layer gradients and template gradients.
pub(crate) fn stack_backward(
    params: &NetworkParams,
    trace: &StackTrace,
    flatten_delta: &[f64],
) -> (Vec<LayerGrads>, Vec<Vec<Grid2D>>) {
    let final_maps = trace.maps.last().expect("maps non-empty");
    let act_f = params.flatten_activation;
    // Flatten stage.
    let mut flatten_grads: Vec<Vec<Grid2D>> = Vec::with_capacity(params.flatten.len());
    let mut dmaps: Vec<Grid2D> = final_maps
        .iter()
        .map(|m| Grid2D::zeros(m.side()).expect("odd side"))
        .collect();
    let mut node_idx = 0;
    for (c, nodes) in params.flatten.iter().enumerate() {
        let mut channel_grads = Vec::with_capacity(nodes.len());
        for template in nodes {
            let du = flatten_delta[node_idx] * act_f.derivative(trace.flatten_pre[node_idx]);
            node_idx += 1;
            let mut tg = Grid2D::zeros(template.side()).expect("odd side");
            for (g, m) in tg.as_mut_slice().iter_mut().zip(final_maps[c].as_slice()) {
                *g = du * m;
            }
            // δ on the final map: Σ_t δu_t · T_t, accumulated in node order.
            for (d, t) in dmaps[c].as_mut_slice().iter_mut().zip(template.as_slice()) {
                *d += du * t;
            }
            channel_grads.push(tg);
        }
        flatten_grads.push(channel_grads);
    }
    // Conv layers, last to first.
    let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let preacts = &trace.preacts[l];
        let inputs = &trace.maps[l];
        let side = preacts[0].side();
        let mut grads = LayerGrads {
            kernels: layer
                .kernels
                .iter()
                .map(|k| Grid2D::zeros(k.side()).expect("odd side"))
                .collect(),
            biases: vec![0.0; layer.spec.out_channels],
        };
        let mut dz_all = Vec::with_capacity(layer.spec.out_channels);
        for o in 0..layer.spec.out_channels {
            // Un-pool, then multiply by the activation derivative at z.
            let da = match layer.spec.pool {
                Pool::None => dmaps[o].clone(),
                Pool::Avg(w) => upsample_avg(&dmaps[o], w, side),
            };
            let mut dz = da;
            for (d, z) in dz.as_mut_slice().iter_mut().zip(preacts[o].as_slice()) {
                *d *= layer.spec.activation.derivative(*z);
            }
            grads.biases[o] = dz.as_slice().iter().sum();
            for (i, input) in inputs.iter().enumerate() {
                grads.kernels[o * layer.spec.in_channels + i] =
                    kernel_gradient(input, &dz, layer.spec.kernel_side);
            }
            dz_all.push(dz);
        }
        // Propagate to the previous layer's maps.
        if l > 0 {
            let prev_side = inputs[0].side();
            let mut dprev: Vec<Grid2D> = inputs
                .iter()
                .map(|_| Grid2D::zeros(prev_side).expect("odd side"))
                .collect();
            let rot180 = Dih4Element::rotation(2);
            for (o, dz) in dz_all.iter().enumerate() {
                for (i, dp) in dprev.iter_mut().enumerate() {
                    let flipped = rot180.apply(layer.kernel(o, i));
                    let contrib = conv_same(dz, &flipped).expect("kernel fits map");
                    for (a, b) in dp.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
                        *a += b;
                    }
                }
            }
            dmaps = dprev;
        }
        layer_grads.push(grads);
    }
    layer_grads.reverse();
    (layer_grads, flatten_grads)
}

/// d loss / d kernel for one (input map, δz) pair:
/// grad[kr][kc] = Σ_p δz[p] · input[p + (kr,kc) − centre], zero outside.
fn kernel_gradient(input: &Grid2D, dz: &Grid2D, kernel_side: usize) -> Grid2D {
    let n = input.side();
    let h = (kernel_side / 2) as i64;
    let mut grad = Grid2D::zeros(kernel_side).expect("odd side");
    for kr in 0..kernel_side {
        for kc in 0..kernel_side {
            let mut acc = 0.0;
            let dr = kr as i64 - h;
            let dc = kc as i64 - h;
            let r_lo = (-dr).max(0) as usize;
            let r_hi = ((n as i64 - dr).min(n as i64)) as usize;
            let c_lo = (-dc).max(0) as usize;
            let c_hi = ((n as i64 - dc).min(n as i64)) as usize;
            for r in r_lo..r_hi {
                for c in c_lo..c_hi {
                    acc += dz.get(r, c)
                        * input.get((r as i64 + dr) as usize, (c as i64 + dc) as usize);
                }
            }
            grad.set(kr, kc, acc);
        }
    }
    grad
}

/// Adjoint of average pooling: each block pixel receives δ/w².
fn upsample_avg(dpooled: &Grid2D, w: usize, full_side: usize) -> Grid2D {
    let norm = (w * w) as f64;
    Grid2D::from_fn(full_side, |r, c| dpooled.get(r / w, c / w) / norm).expect("odd side")
}

/// Full backward pass for one sample: gradients, loss and outputs.
pub fn backprop(
    params: &NetworkParams,
    input: &Grid2D,
    target: &[f64; 2],
) -> Result<(Gradients, f64, OutputVector), CnnError> {
    let stack = forward_stack_trace(input, params)?;
    let head_trace = head_forward_trace(&stack.flatten, params)?;
    let (head_grads, flatten_delta, loss, output) = head_backward(params, &head_trace, target);
    let (layer_grads, flatten_grads) = stack_backward(params, &stack, &flatten_delta);
    Ok((Gradients { layers: layer_grads, flatten: flatten_grads, head: head_grads }, loss, output))
}

/// One batch SGD step on the mean squared error. Gradients are averaged over
/// the batch in index order; in symmetric mode kernel and template gradients
/// are orbit-projected before the update so the invariance is preserved
/// bit-exactly. A non-finite loss rejects the step.
pub fn sgd_step(
    params: &NetworkParams,
    batch: &[(Grid2D, u8)],
    lr: f64,
) -> Result<(NetworkParams, f64), CnnError> {
    if batch.is_empty() {
        return Err(CnnError::ShapeMismatch("empty batch".into()));
    }
    // Per-sample gradients run concurrently; the reduction walks the batch
    // in index order so results are bit-reproducible.
    let results: Vec<Result<(Gradients, f64), CnnError>> = batch
        .par_iter()
        .map(|(image, label)| {
            backprop(params, image, &targets_for_label(*label)).map(|(g, l, _)| (g, l))
        })
        .collect();
    let mut total = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for r in results {
        let (grads, loss) = r?;
        total.add_assign(&grads);
        loss_sum += loss;
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    let mean_loss = loss_sum * scale;
    if !mean_loss.is_finite() || !total.is_finite() {
        return Err(CnnError::NonFiniteLoss);
    }
    if lr == 0.0 {
        return Ok((params.clone(), mean_loss));
    }
    if params.symmetric_mode {
        total.project_symmetric();
    }
    Ok((apply_update(params, &total, lr), mean_loss))
}

pub(crate) fn apply_update(params: &NetworkParams, grads: &Gradients, lr: f64) -> NetworkParams {
    let mut new = params.clone();
    for (layer, g) in new.layers.iter_mut().zip(&grads.layers) {
        for (k, kg) in layer.kernels.iter_mut().zip(&g.kernels) {
            for (w, d) in k.as_mut_slice().iter_mut().zip(kg.as_slice()) {
                *w -= lr * d;
            }
        }
        for (b, d) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= lr * d;
        }
    }
    for (nodes, gnodes) in new.flatten.iter_mut().zip(&grads.flatten) {
        for (t, tg) in nodes.iter_mut().zip(gnodes) {
            for (w, d) in t.as_mut_slice().iter_mut().zip(tg.as_slice()) {
                *w -= lr * d;
            }
        }
    }
    for (dense, g) in new.head.iter_mut().zip(&grads.head) {
        for (w, d) in dense.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, d) in dense.biases.iter_mut().zip(&g.biases) {
            *b -= lr * d;
        }
    }
    new
}
