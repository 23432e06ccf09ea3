//! Deterministic convolution stack: forward and backward passes, activations,
//! symmetric average pooling, full-field flatten templates and the fully
//! connected head.
//!
//! "Convolution" throughout is centred zero-padded cross-correlation with
//! stride 1 and a fixed kernel-row-major accumulation order, so repeated runs
//! are bit-identical.

mod backprop;
mod io;

pub use backprop::{backprop, sgd_step, DenseGrads, Gradients, LayerGrads};
pub(crate) use backprop::{apply_update, head_backward, stack_backward};
pub use io::{load_params, read_params, save_params, write_params};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::grid::{Grid2D, GridError};
use crate::symmetry::{is_dih4_invariant, symmetrize};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("kernel side {kernel} is invalid for input side {input}")]
    KernelSize { kernel: usize, input: usize },
    #[error("pool window {window} does not divide feature side {side}")]
    PoolWindow { window: usize, side: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss; step rejected")]
    NonFiniteLoss,
    #[error("bad params file: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Relu,
    LRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::LRelu(slope) => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LRelu(slope) => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Relu => write!(f, "relu"),
            Activation::LRelu(s) => write!(f, "lrelu:{s}"),
        }
    }
}

impl FromStr for Activation {
    type Err = CnnError;

    fn from_str(s: &str) -> Result<Self, CnnError> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            _ => {
                if let Some(rest) = s.strip_prefix("lrelu:") {
                    let slope: f64 = rest
                        .parse()
                        .map_err(|_| CnnError::Format(format!("bad lrelu slope {rest:?}")))?;
                    Ok(Activation::LRelu(slope))
                } else {
                    Err(CnnError::Format(format!("unknown activation {s:?}")))
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    None,
    Avg(usize),
}

impl fmt::Display for Pool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pool::None => write!(f, "none"),
            Pool::Avg(w) => write!(f, "avg:{w}"),
        }
    }
}

impl FromStr for Pool {
    type Err = CnnError;

    fn from_str(s: &str) -> Result<Self, CnnError> {
        match s {
            "none" => Ok(Pool::None),
            _ => {
                if let Some(rest) = s.strip_prefix("avg:") {
                    let w: usize = rest
                        .parse()
                        .map_err(|_| CnnError::Format(format!("bad pool window {rest:?}")))?;
                    Ok(Pool::Avg(w))
                } else {
                    Err(CnnError::Format(format!("unknown pool {s:?}")))
                }
            }
        }
    }
}

pub const KERNEL_SIDES: [usize; 5] = [3, 5, 7, 9, 11];

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kernel_side: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    pub pool: Pool,
}

/// One conv layer's parameters: kernels indexed `[out · in_channels + in]`
/// plus a bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    pub kernels: Vec<Grid2D>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    #[inline]
    pub fn kernel(&self, out: usize, inp: usize) -> &Grid2D {
        &self.kernels[out * self.spec.in_channels + inp]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out][in]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Flatten node activations, channel-major: all nodes of channel 0 first.
#[derive(Clone, Debug, PartialEq)]
pub struct FlattenVector(pub Vec<f64>);

impl FlattenVector {
    pub fn zeros(len: usize) -> Self {
        FlattenVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &FlattenVector) {
        assert_eq!(self.0.len(), other.0.len(), "flatten length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Network output: two sigmoid nodes.
pub type OutputVector = [f64; 2];

pub const OUTPUT_DIM: usize = 2;

/// Shape description used to build fresh parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct NetShape {
    pub input_side: usize,
    pub layers: Vec<LayerSpec>,
    /// Flatten nodes per final channel.
    pub flatten_nodes: usize,
    /// Optional hidden layer width between flatten and output.
    pub hidden_dim: Option<usize>,
    pub symmetric: bool,
}

impl NetShape {
    /// Feature-map side after every layer; validates kernel and pool sizes.
    pub fn feature_sides(&self) -> Result<Vec<usize>, CnnError> {
        if self.input_side % 2 == 0 || self.input_side == 0 {
            return Err(CnnError::Grid(GridError::EvenSide(self.input_side)));
        }
        if self.layers.is_empty() {
            return Err(CnnError::ShapeMismatch("network needs at least one conv layer".into()));
        }
        if self.flatten_nodes == 0 {
            return Err(CnnError::ShapeMismatch("flatten_nodes must be positive".into()));
        }
        let mut side = self.input_side;
        let mut sides = Vec::with_capacity(self.layers.len());
        let mut channels = 1usize;
        for (idx, spec) in self.layers.iter().enumerate() {
            if !KERNEL_SIDES.contains(&spec.kernel_side) {
                return Err(CnnError::KernelSize { kernel: spec.kernel_side, input: side });
            }
            if spec.kernel_side > side {
                return Err(CnnError::KernelSize { kernel: spec.kernel_side, input: side });
            }
            if spec.in_channels != channels {
                return Err(CnnError::ShapeMismatch(format!(
                    "layer {idx} expects {} input channels, got {}",
                    spec.in_channels, channels
                )));
            }
            if spec.out_channels == 0 {
                return Err(CnnError::ShapeMismatch(format!("layer {idx} has zero channels")));
            }
            if let Pool::Avg(w) = spec.pool {
                if w % 2 == 0 || w == 0 || side % w != 0 {
                    return Err(CnnError::PoolWindow { window: w, side });
                }
                side /= w;
                if side % 2 == 0 {
                    return Err(CnnError::PoolWindow { window: w, side: side * w });
                }
            }
            channels = spec.out_channels;
            sides.push(side);
        }
        Ok(sides)
    }

    pub fn final_side(&self) -> Result<usize, CnnError> {
        Ok(*self.feature_sides()?.last().expect("layers non-empty"))
    }

    pub fn final_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(1)
    }

    pub fn flatten_len(&self) -> usize {
        self.flatten_nodes * self.final_channels()
    }
}

/// Full parameter set for one convolution stack plus its head.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub input_side: usize,
    pub layers: Vec<ConvLayer>,
    /// Flatten weight templates, `[channel][node]`, each sized to the final
    /// feature map.
    pub flatten: Vec<Vec<Grid2D>>,
    pub flatten_activation: Activation,
    pub head: Vec<DenseLayer>,
    /// When set, every kernel and flatten template is Dih4-invariant
    /// bit-exactly and gradients are orbit-projected before updates.
    pub symmetric_mode: bool,
}

impl NetworkParams {
    /// Fresh parameters with uniform(-0.5, 0.5) weights and zero biases.
    pub fn random(shape: &NetShape, rng: &mut impl Rng) -> Result<Self, CnnError> {
        let sides = shape.feature_sides()?;
        let final_side = *sides.last().expect("layers non-empty");
        let mut layers = Vec::with_capacity(shape.layers.len());
        for spec in &shape.layers {
            let mut kernels = Vec::with_capacity(spec.out_channels * spec.in_channels);
            for _ in 0..spec.out_channels * spec.in_channels {
                let mut k = random_grid(spec.kernel_side, rng);
                if shape.symmetric {
                    k = symmetrize(&k);
                }
                kernels.push(k);
            }
            layers.push(ConvLayer {
                spec: spec.clone(),
                kernels,
                biases: vec![0.0; spec.out_channels],
            });
        }
        let mut flatten = Vec::with_capacity(shape.final_channels());
        for _ in 0..shape.final_channels() {
            let mut nodes = Vec::with_capacity(shape.flatten_nodes);
            for _ in 0..shape.flatten_nodes {
                let mut t = random_grid(final_side, rng);
                if shape.symmetric {
                    t = symmetrize(&t);
                }
                nodes.push(t);
            }
            flatten.push(nodes);
        }
        let flatten_activation =
            shape.layers.last().map(|l| l.activation).unwrap_or(Activation::Sigmoid);
        let mut head = Vec::new();
        let mut in_dim = shape.flatten_len();
        if let Some(hidden) = shape.hidden_dim {
            head.push(random_dense(in_dim, hidden, rng));
            in_dim = hidden;
        }
        head.push(random_dense(in_dim, OUTPUT_DIM, rng));
        Ok(NetworkParams {
            input_side: shape.input_side,
            layers,
            flatten,
            flatten_activation,
            head,
            symmetric_mode: shape.symmetric,
        })
    }

    pub fn flatten_len(&self) -> usize {
        self.flatten.iter().map(|nodes| nodes.len()).sum()
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input_side: self.input_side,
            layers: self.layers.iter().map(|l| l.spec.clone()).collect(),
            flatten_nodes: self.flatten.first().map(|n| n.len()).unwrap_or(0),
            hidden_dim: if self.head.len() > 1 { Some(self.head[0].out_dim) } else { None },
            symmetric: self.symmetric_mode,
        }
    }

    /// Shape consistency plus, in symmetric mode, bit-exact Dih4 invariance
    /// of every kernel and template.
    pub fn validate(&self) -> Result<(), CnnError> {
        let shape = self.shape();
        let final_side = shape.final_side()?;
        for (idx, layer) in self.layers.iter().enumerate() {
            let want = layer.spec.out_channels * layer.spec.in_channels;
            if layer.kernels.len() != want || layer.biases.len() != layer.spec.out_channels {
                return Err(CnnError::ShapeMismatch(format!("layer {idx} parameter counts")));
            }
            for k in &layer.kernels {
                if k.side() != layer.spec.kernel_side {
                    return Err(CnnError::ShapeMismatch(format!("layer {idx} kernel side")));
                }
            }
        }
        if self.flatten.len() != shape.final_channels() {
            return Err(CnnError::ShapeMismatch("flatten channel count".into()));
        }
        for nodes in &self.flatten {
            if nodes.len() != shape.flatten_nodes {
                return Err(CnnError::ShapeMismatch("flatten node count".into()));
            }
            for t in nodes {
                if t.side() != final_side {
                    return Err(CnnError::ShapeMismatch("flatten template side".into()));
                }
            }
        }
        let mut in_dim = self.flatten_len();
        for (idx, dense) in self.head.iter().enumerate() {
            if dense.in_dim != in_dim
                || dense.weights.len() != dense.in_dim * dense.out_dim
                || dense.biases.len() != dense.out_dim
            {
                return Err(CnnError::ShapeMismatch(format!("head layer {idx}")));
            }
            in_dim = dense.out_dim;
        }
        if in_dim != OUTPUT_DIM {
            return Err(CnnError::ShapeMismatch("head must end in 2 output nodes".into()));
        }
        if self.symmetric_mode {
            for layer in &self.layers {
                for k in &layer.kernels {
                    if !is_dih4_invariant(k) {
                        return Err(CnnError::ShapeMismatch(
                            "symmetric mode kernel is not Dih4-invariant".into(),
                        ));
                    }
                }
            }
            for nodes in &self.flatten {
                for t in nodes {
                    if !is_dih4_invariant(t) {
                        return Err(CnnError::ShapeMismatch(
                            "symmetric mode template is not Dih4-invariant".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn random_grid(side: usize, rng: &mut impl Rng) -> Grid2D {
    Grid2D::from_fn(side, |_, _| rng.gen_range(-0.5..0.5)).expect("odd side")
}

fn random_dense(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> DenseLayer {
    let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    DenseLayer { in_dim, out_dim, weights, biases: vec![0.0; out_dim] }
}

/// Centred zero-padded cross-correlation; output side equals input side.
/// Accumulation visits kernel positions row-major for every output pixel.
pub fn conv_same(input: &Grid2D, kernel: &Grid2D) -> Result<Grid2D, CnnError> {
    let n = input.side();
    let k = kernel.side();
    if k > n {
        return Err(CnnError::KernelSize { kernel: k, input: n });
    }
    let h = (k / 2) as i64;
    let mut data = vec![0.0f64; n * n];
    let src = input.as_slice();
    let ker = kernel.as_slice();
    for r in 0..n {
        let out_row = &mut data[r * n..(r + 1) * n];
        for kr in 0..k {
            let ir = r as i64 + kr as i64 - h;
            if ir < 0 || ir >= n as i64 {
                continue;
            }
            let in_row = &src[ir as usize * n..(ir as usize + 1) * n];
            let k_row = &ker[kr * k..(kr + 1) * k];
            for (kc, &kv) in k_row.iter().enumerate() {
                let shift = kc as i64 - h;
                let c_lo = (-shift).max(0) as usize;
                let c_hi = ((n as i64 - shift).min(n as i64)) as usize;
                for c in c_lo..c_hi {
                    out_row[c] += kv * in_row[(c as i64 + shift) as usize];
                }
            }
        }
    }
    Ok(Grid2D::new(n, data)?)
}

/// Non-overlapping w×w block averages; requires w odd and dividing the side.
pub fn avg_pool(input: &Grid2D, w: usize) -> Result<Grid2D, CnnError> {
    let n = input.side();
    if w == 0 || w % 2 == 0 || n % w != 0 {
        return Err(CnnError::PoolWindow { window: w, side: n });
    }
    if w == 1 {
        return Ok(input.clone());
    }
    let out_side = n / w;
    let norm = (w * w) as f64;
    let mut out = Grid2D::zeros(out_side)?;
    for br in 0..out_side {
        for bc in 0..out_side {
            let mut acc = 0.0;
            for r in br * w..(br + 1) * w {
                for c in bc * w..(bc + 1) * w {
                    acc += input.get(r, c);
                }
            }
            out.set(br, bc, acc / norm);
        }
    }
    Ok(out)
}

/// Per-sample forward state kept for backpropagation.
pub(crate) struct StackTrace {
    /// Channel maps entering each layer; index 0 is the input image.
    pub maps: Vec<Vec<Grid2D>>,
    /// Pre-activation maps (after bias) per layer.
    pub preacts: Vec<Vec<Grid2D>>,
    /// Flatten pre-activations.
    pub flatten_pre: Vec<f64>,
    pub flatten: FlattenVector,
}

pub(crate) fn forward_stack_trace(
    input: &Grid2D,
    params: &NetworkParams,
) -> Result<StackTrace, CnnError> {
    if input.side() != params.input_side {
        return Err(CnnError::ShapeMismatch(format!(
            "input side {} does not match expected {}",
            input.side(),
            params.input_side
        )));
    }
    let mut maps = vec![vec![input.clone()]];
    let mut preacts = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let current = maps.last().expect("maps non-empty");
        if current.len() != layer.spec.in_channels {
            return Err(CnnError::ShapeMismatch("channel count".into()));
        }
        let side = current[0].side();
        let mut layer_pre = Vec::with_capacity(layer.spec.out_channels);
        let mut layer_out = Vec::with_capacity(layer.spec.out_channels);
        for o in 0..layer.spec.out_channels {
            let mut acc = Grid2D::zeros(side)?;
            for (i, map) in current.iter().enumerate() {
                let conv = conv_same(map, layer.kernel(o, i))?;
                for (a, b) in acc.as_mut_slice().iter_mut().zip(conv.as_slice()) {
                    *a += b;
                }
            }
            let bias = layer.biases[o];
            for z in acc.as_mut_slice() {
                *z += bias;
            }
            let mut activated = acc.clone();
            for v in activated.as_mut_slice() {
                *v = layer.spec.activation.apply(*v);
            }
            let pooled = match layer.spec.pool {
                Pool::None => activated,
                Pool::Avg(w) => avg_pool(&activated, w)?,
            };
            layer_pre.push(acc);
            layer_out.push(pooled);
        }
        preacts.push(layer_pre);
        maps.push(layer_out);
    }
    let final_maps = maps.last().expect("maps non-empty");
    if final_maps.len() != params.flatten.len() {
        return Err(CnnError::ShapeMismatch("flatten channel count".into()));
    }
    let mut flatten_pre = Vec::with_capacity(params.flatten_len());
    for (map, nodes) in final_maps.iter().zip(&params.flatten) {
        for template in nodes {
            if template.side() != map.side() {
                return Err(CnnError::ShapeMismatch("flatten template side".into()));
            }
            let mut acc = 0.0;
            for (m, t) in map.as_slice().iter().zip(template.as_slice()) {
                acc += m * t;
            }
            flatten_pre.push(acc);
        }
    }
    let flatten = FlattenVector(
        flatten_pre.iter().map(|&u| params.flatten_activation.apply(u)).collect(),
    );
    Ok(StackTrace { maps, preacts, flatten_pre, flatten })
}

/// Convolution stack up to and including the first flatten layer.
pub fn forward_stack(input: &Grid2D, params: &NetworkParams) -> Result<FlattenVector, CnnError> {
    Ok(forward_stack_trace(input, params)?.flatten)
}

pub(crate) struct HeadTrace {
    /// Input vector of each dense layer.
    pub inputs: Vec<Vec<f64>>,
    pub output: OutputVector,
}

pub(crate) fn head_forward_trace(
    v: &FlattenVector,
    params: &NetworkParams,
) -> Result<HeadTrace, CnnError> {
    let mut inputs = Vec::with_capacity(params.head.len());
    let mut current = v.0.clone();
    for dense in &params.head {
        if current.len() != dense.in_dim {
            return Err(CnnError::ShapeMismatch(format!(
                "head expects {} inputs, got {}",
                dense.in_dim,
                current.len()
            )));
        }
        let mut pre = Vec::with_capacity(dense.out_dim);
        for o in 0..dense.out_dim {
            let row = &dense.weights[o * dense.in_dim..(o + 1) * dense.in_dim];
            let mut acc = dense.biases[o];
            for (w, x) in row.iter().zip(&current) {
                acc += w * x;
            }
            pre.push(acc);
        }
        inputs.push(current);
        current = pre.iter().map(|&z| Activation::Sigmoid.apply(z)).collect();
    }
    if current.len() != OUTPUT_DIM {
        return Err(CnnError::ShapeMismatch("head must end in 2 outputs".into()));
    }
    Ok(HeadTrace { inputs, output: [current[0], current[1]] })
}

/// Fully connected head: affine plus sigmoid per layer, two output nodes.
pub fn head_forward(v: &FlattenVector, params: &NetworkParams) -> Result<OutputVector, CnnError> {
    Ok(head_forward_trace(v, params)?.output)
}

/// Training targets for a two-class label.
pub fn targets_for_label(label: u8) -> [f64; 2] {
    if label == 0 {
        [0.9, 0.1]
    } else {
        [0.1, 0.9]
    }
}

/// Half squared error over the two output nodes.
pub fn mse_loss(output: &OutputVector, target: &[f64; 2]) -> f64 {
    let d0 = output[0] - target[0];
    let d1 = output[1] - target[1];
    0.5 * (d0 * d0 + d1 * d1)
}
