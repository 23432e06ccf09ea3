//! The four geared rotationally identical CNN structures.
//!
//! A gear splits the quarter turn into `m` teeth of step angle `x`
//! (`m·x = 90`). Each tooth is one rotationally identical sub-channel; the
//! sub-channels merge by summation, at the first flatten layer for SSK, GSK
//! and GNK and at the input layer for SNK.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::cnn::{
    apply_update, backprop as cnn_backprop, forward_stack, forward_stack_trace, head_backward,
    head_forward, head_forward_trace, stack_backward, targets_for_label, CnnError, FlattenVector,
    Gradients, NetworkParams, OutputVector,
};
use crate::grid::{pad_to_canvas, rotate_bilinear, AngleDeg, Grid2D, GridError};
use crate::symmetry::dih4_orbit_sum;

#[derive(Debug, Error)]
pub enum GriError {
    #[error("invalid gear: {0}")]
    InvalidGear(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("bad model file: {0}")]
    Format(String),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four gear structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Structure {
    /// Shared symmetric kernels.
    Ssk,
    /// Shared non-symmetric kernels, orbit-combined at the input layer.
    Snk,
    /// Group-wise symmetric kernels.
    Gsk,
    /// Group-wise non-symmetric kernels, orbit-combined per tooth.
    Gnk,
}

impl Structure {
    pub const ALL: [Structure; 4] =
        [Structure::Ssk, Structure::Snk, Structure::Gsk, Structure::Gnk];

    pub fn wants_symmetric_kernels(self) -> bool {
        matches!(self, Structure::Ssk | Structure::Gsk)
    }

    pub fn is_groupwise(self) -> bool {
        matches!(self, Structure::Gsk | Structure::Gnk)
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Structure::Ssk => "ssk",
            Structure::Snk => "snk",
            Structure::Gsk => "gsk",
            Structure::Gnk => "gnk",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Structure {
    type Err = GriError;

    fn from_str(s: &str) -> Result<Self, GriError> {
        match s.to_ascii_lowercase().as_str() {
            "ssk" => Ok(Structure::Ssk),
            "snk" => Ok(Structure::Snk),
            "gsk" => Ok(Structure::Gsk),
            "gnk" => Ok(Structure::Gnk),
            other => Err(GriError::InvalidGear(format!("unknown structure {other:?}"))),
        }
    }
}

/// Structure kind plus the step angle `x` with `m·x = 90`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GearConfig {
    structure: Structure,
    step: AngleDeg,
    teeth: u32,
}

impl GearConfig {
    /// Requires 90 to be an exact integer multiple of `step` and `step` not
    /// itself a multiple of 90, so there are at least two teeth.
    pub fn new(structure: Structure, step: AngleDeg) -> Result<Self, GriError> {
        let teeth = step.teeth_per_quarter().ok_or_else(|| {
            GriError::InvalidGear(format!(
                "step {step}° must divide 90° into an integer number of teeth ≥ 2"
            ))
        })?;
        Ok(GearConfig { structure, step, teeth })
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn step(&self) -> AngleDeg {
        self.step
    }

    /// Tooth count `m` with `m·x = 90`.
    pub fn teeth(&self) -> u32 {
        self.teeth
    }

    /// Rotation angle of tooth `n`.
    pub fn tooth_angle(&self, n: u32) -> AngleDeg {
        self.step.scale(n as i64)
    }
}

/// A full gear model: shared base parameters plus, for group-wise
/// structures, one rotation-tied parameter set per tooth.
#[derive(Clone, Debug, PartialEq)]
pub struct GriModel {
    gear: GearConfig,
    base: NetworkParams,
    group_params: Vec<NetworkParams>,
    canvas_side: usize,
}

impl GriModel {
    pub fn new(
        gear: GearConfig,
        base: NetworkParams,
        canvas_side: usize,
    ) -> Result<Self, GriError> {
        if base.input_side != canvas_side {
            return Err(GriError::ModelMismatch(format!(
                "base expects input side {}, canvas is {}",
                base.input_side, canvas_side
            )));
        }
        if base.symmetric_mode != gear.structure.wants_symmetric_kernels() {
            return Err(GriError::ModelMismatch(format!(
                "structure {} requires symmetric_mode = {}",
                gear.structure,
                gear.structure.wants_symmetric_kernels()
            )));
        }
        base.validate()?;
        let group_params = build_groups(&gear, &base)?;
        Ok(GriModel { gear, base, group_params, canvas_side })
    }

    pub fn gear(&self) -> &GearConfig {
        &self.gear
    }

    pub fn base(&self) -> &NetworkParams {
        &self.base
    }

    pub fn group_params(&self) -> &[NetworkParams] {
        &self.group_params
    }

    pub fn canvas_side(&self) -> usize {
        self.canvas_side
    }

    fn params_for_tooth(&self, n: usize) -> &NetworkParams {
        if self.gear.structure.is_groupwise() {
            &self.group_params[n]
        } else {
            &self.base
        }
    }
}

fn build_groups(gear: &GearConfig, base: &NetworkParams) -> Result<Vec<NetworkParams>, GriError> {
    if !gear.structure.is_groupwise() {
        return Ok(Vec::new());
    }
    (0..gear.teeth).map(|n| rotate_kernels(base, gear.tooth_angle(n))).collect()
}

/// Replace every conv kernel and flatten template by its bilinear rotation
/// at the same side; biases and head weights are unchanged.
pub fn rotate_kernels(params: &NetworkParams, angle: AngleDeg) -> Result<NetworkParams, GriError> {
    let mut out = params.clone();
    for layer in &mut out.layers {
        for k in &mut layer.kernels {
            *k = rotate_bilinear(k, angle, k.side())?;
        }
    }
    for nodes in &mut out.flatten {
        for t in nodes {
            *t = rotate_bilinear(t, angle, t.side())?;
        }
    }
    Ok(out)
}

/// Sub-channel input grids for one presented (already padded) image.
///
/// SSK/GSK: the m step rotations. GNK: the m step rotations, each orbit
/// combined. SNK: a single grid summing all m orbit-combined rotations.
pub fn subchannel_inputs(
    padded: &Grid2D,
    gear: &GearConfig,
    canvas_side: usize,
) -> Result<Vec<Grid2D>, GriError> {
    if padded.side() != canvas_side {
        return Err(GriError::ModelMismatch(format!(
            "input side {} does not match canvas {}",
            padded.side(),
            canvas_side
        )));
    }
    let m = gear.teeth;
    match gear.structure {
        Structure::Ssk | Structure::Gsk => (0..m)
            .map(|n| Ok(rotate_bilinear(padded, gear.tooth_angle(n), canvas_side)?))
            .collect(),
        Structure::Gnk => (0..m)
            .map(|n| {
                let rotated = rotate_bilinear(padded, gear.tooth_angle(n), canvas_side)?;
                Ok(dih4_orbit_sum(&rotated))
            })
            .collect(),
        Structure::Snk => {
            let mut combined = Grid2D::zeros(canvas_side)?;
            for n in 0..m {
                let rotated = rotate_bilinear(padded, gear.tooth_angle(n), canvas_side)?;
                let orbit = dih4_orbit_sum(&rotated);
                for (a, b) in combined.as_mut_slice().iter_mut().zip(orbit.as_slice()) {
                    *a += b;
                }
            }
            Ok(vec![combined])
        }
    }
}

fn gather_flatten(model: &GriModel, inputs: &[Grid2D]) -> Result<FlattenVector, GriError> {
    let mut total: Option<FlattenVector> = None;
    for (n, input) in inputs.iter().enumerate() {
        let v = forward_stack(input, model.params_for_tooth(n))?;
        match &mut total {
            None => total = Some(v),
            Some(acc) => acc.add_assign(&v),
        }
    }
    total.ok_or_else(|| GriError::ModelMismatch("gear produced no sub-channels".into()))
}

/// Full gear forward pass: pad, build sub-channel inputs, fan-in the flatten
/// vectors in ascending tooth order, then the shared head.
pub fn forward_gri(image: &Grid2D, model: &GriModel) -> Result<OutputVector, GriError> {
    let padded = pad_to_canvas(image, model.canvas_side)?;
    let inputs = subchannel_inputs(&padded, &model.gear, model.canvas_side)?;
    let flatten = gather_flatten(model, &inputs)?;
    Ok(head_forward(&flatten, &model.base)?)
}

/// Output on the unrotated, unreflected input. Its Dih4 counterparts produce
/// the same value by construction; tests and the self-test assert this
/// rather than assuming it.
pub fn baseline_output(image: &Grid2D, model: &GriModel) -> Result<OutputVector, GriError> {
    forward_gri(image, model)
}

/// Per-sample gradients accumulated on the base parameter set.
fn gri_backprop(
    model: &GriModel,
    image: &Grid2D,
    target: &[f64; 2],
) -> Result<(Gradients, f64), GriError> {
    let padded = pad_to_canvas(image, model.canvas_side)?;
    let inputs = subchannel_inputs(&padded, &model.gear, model.canvas_side)?;
    if model.gear.structure == Structure::Snk {
        let (grads, loss, _) = cnn_backprop(&model.base, &inputs[0], target)?;
        return Ok((grads, loss));
    }
    // Flatten fan-in: run every tooth's stack, sum the flatten vectors, take
    // the head gradient once, then push the same flatten delta through each
    // tooth.
    let mut traces = Vec::with_capacity(inputs.len());
    let mut flatten: Option<FlattenVector> = None;
    for (n, input) in inputs.iter().enumerate() {
        let trace = forward_stack_trace(input, model.params_for_tooth(n))?;
        match &mut flatten {
            None => flatten = Some(trace.flatten.clone()),
            Some(acc) => acc.add_assign(&trace.flatten),
        }
        traces.push(trace);
    }
    let flatten = flatten.expect("at least one tooth");
    let head_trace = head_forward_trace(&flatten, &model.base)?;
    let (head_grads, flatten_delta, loss, _) = head_backward(&model.base, &head_trace, target);
    let mut total = Gradients::zeros_like(&model.base);
    total.head = head_grads;
    for (n, trace) in traces.iter().enumerate() {
        let params = model.params_for_tooth(n);
        let (layer_grads, flatten_grads) = stack_backward(params, trace, &flatten_delta);
        // Gradients of tooth n live in the rotated frame for group-wise
        // structures; rotate them back by −n·x before accumulating.
        let back = if model.gear.structure.is_groupwise() && n > 0 {
            Some(model.gear.tooth_angle(n as u32).neg())
        } else {
            None
        };
        for (acc, g) in total.layers.iter_mut().zip(&layer_grads) {
            for (ka, kg) in acc.kernels.iter_mut().zip(&g.kernels) {
                let aligned = match back {
                    Some(angle) => rotate_bilinear(kg, angle, kg.side())?,
                    None => kg.clone(),
                };
                for (a, b) in ka.as_mut_slice().iter_mut().zip(aligned.as_slice()) {
                    *a += b;
                }
            }
            for (a, b) in acc.biases.iter_mut().zip(&g.biases) {
                *a += b;
            }
        }
        for (acc_nodes, g_nodes) in total.flatten.iter_mut().zip(&flatten_grads) {
            for (ta, tg) in acc_nodes.iter_mut().zip(g_nodes) {
                let aligned = match back {
                    Some(angle) => rotate_bilinear(tg, angle, tg.side())?,
                    None => tg.clone(),
                };
                for (a, b) in ta.as_mut_slice().iter_mut().zip(aligned.as_slice()) {
                    *a += b;
                }
            }
        }
    }
    Ok((total, loss))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train all sub-channels together with plain SGD on the mean squared
/// error. Group-wise structures accumulate rotated-back gradients into the
/// base and rederive the per-tooth sets after every step, keeping the
/// rotation-tying invariant exact. Symmetric structures project gradients
/// onto the Dih4-invariant subspace before each update. A non-finite loss
/// aborts with [`GriError::Diverged`].
pub fn train_gri(
    model: &GriModel,
    data: &[(Grid2D, u8)],
    epochs: usize,
    lr: f64,
    batch_size: usize,
) -> Result<(GriModel, TrainReport), GriError> {
    if data.is_empty() || batch_size == 0 {
        return Err(GriError::ModelMismatch("training needs data and a batch size".into()));
    }
    let mut model = model.clone();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for batch in data.chunks(batch_size) {
            let results: Vec<Result<(Gradients, f64), GriError>> = batch
                .par_iter()
                .map(|(image, label)| gri_backprop(&model, image, &targets_for_label(*label)))
                .collect();
            let mut total = Gradients::zeros_like(&model.base);
            let mut loss_sum = 0.0;
            for r in results {
                let (g, loss) = r?;
                total.add_assign(&g);
                loss_sum += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            total.scale(scale);
            let batch_loss = loss_sum * scale;
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(GriError::Diverged { epoch });
            }
            epoch_loss += loss_sum;
            if lr == 0.0 {
                continue;
            }
            if model.base.symmetric_mode {
                total.project_symmetric();
            }
            model.base = apply_update(&model.base, &total, lr);
            model.group_params = build_groups(&model.gear, &model.base)?;
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }
    Ok((model, TrainReport { epoch_losses }))
}

const MODEL_MAGIC: &str = "GRI-MODEL";
const MODEL_VERSION: u32 = 1;

/// Model container: gear tag plus the base parameter set. Group parameter
/// sets are rederived on load, which keeps the rotation-tying invariant.
pub fn write_model(model: &GriModel, w: &mut impl Write) -> Result<(), GriError> {
    writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}")?;
    writeln!(w, "structure {}", model.gear.structure)?;
    writeln!(w, "step {}", model.gear.step)?;
    writeln!(w, "canvas {}", model.canvas_side)?;
    crate::cnn::write_params(&model.base, w)?;
    Ok(())
}

pub fn read_model(r: &mut impl BufRead) -> Result<GriModel, GriError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(GriError::Format("expected GRI-MODEL header".into()));
    }
    let version: u32 = parts
        .next()
        .ok_or_else(|| GriError::Format("missing model version".into()))?
        .parse()
        .map_err(|_| GriError::Format("bad model version".into()))?;
    if version != MODEL_VERSION {
        return Err(GriError::Format(format!("unsupported model version {version}")));
    }
    let structure: Structure = read_kv(r, "structure")?.parse()?;
    let step: AngleDeg =
        read_kv(r, "step")?.parse().map_err(|e: GridError| GriError::Format(e.to_string()))?;
    let canvas: usize =
        read_kv(r, "canvas")?.parse().map_err(|_| GriError::Format("bad canvas side".into()))?;
    let base = crate::cnn::read_params(r)?;
    let gear = GearConfig::new(structure, step)?;
    GriModel::new(gear, base, canvas)
}

fn read_kv(r: &mut impl BufRead, key: &str) -> Result<String, GriError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(GriError::Format(format!("expected {key} line")));
    }
    parts.next().map(str::to_owned).ok_or_else(|| GriError::Format(format!("missing {key} value")))
}

pub fn save_model(model: &GriModel, path: &Path) -> Result<(), GriError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(model, &mut f)
}

pub fn load_model(path: &Path) -> Result<GriModel, GriError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_model(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{Activation, LayerSpec, NetShape, Pool};
    use crate::grid::Dih4Element;
    use crate::symmetry::symmetrize;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn gear(structure: Structure, step_deg: i64) -> GearConfig {
        GearConfig::new(structure, AngleDeg::from_int(step_deg)).unwrap()
    }

    fn shape(canvas: usize, symmetric: bool) -> NetShape {
        NetShape {
            input_side: canvas,
            layers: vec![
                LayerSpec {
                    kernel_side: 3,
                    in_channels: 1,
                    out_channels: 1,
                    activation: Activation::Sigmoid,
                    pool: Pool::Avg(3),
                },
                LayerSpec {
                    kernel_side: 3,
                    in_channels: 1,
                    out_channels: 1,
                    activation: Activation::Sigmoid,
                    pool: Pool::None,
                },
            ],
            flatten_nodes: 4,
            hidden_dim: None,
            symmetric,
        }
    }

    fn model(structure: Structure, step_deg: i64, canvas: usize, seed: u64) -> GriModel {
        let mut rng = StdRng::seed_from_u64(seed);
        let base =
            NetworkParams::random(&shape(canvas, structure.wants_symmetric_kernels()), &mut rng)
                .unwrap();
        GriModel::new(gear(structure, step_deg), base, canvas).unwrap()
    }

    /// Smooth off-centre blob, disc-confined.
    fn blob(side: usize, seed: u64) -> Grid2D {
        let mut rng = StdRng::seed_from_u64(seed);
        let cx: f64 = rng.gen_range(-2.0..2.0);
        let cy: f64 = rng.gen_range(-2.0..2.0);
        let sigma = side as f64 / 12.0;
        let c = (side / 2) as f64;
        Grid2D::from_fn(side, |r, col| {
            let dx = col as f64 - c - cx;
            let dy = r as f64 - c - cy;
            0.8 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    #[test]
    fn gear_validation() {
        assert_eq!(gear(Structure::Ssk, 15).teeth(), 6);
        assert_eq!(gear(Structure::Ssk, 45).teeth(), 2);
        assert_eq!(
            GearConfig::new(Structure::Ssk, AngleDeg::new(1, 2).unwrap()).unwrap().teeth(),
            180
        );
        assert!(GearConfig::new(Structure::Ssk, AngleDeg::from_int(90)).is_err());
        assert!(GearConfig::new(Structure::Ssk, AngleDeg::from_int(180)).is_err());
        assert!(GearConfig::new(Structure::Ssk, AngleDeg::from_int(7)).is_err());
        assert!(GearConfig::new(Structure::Ssk, AngleDeg::zero()).is_err());
    }

    #[test]
    fn model_rejects_wrong_symmetry_mode() {
        let mut rng = StdRng::seed_from_u64(0);
        let base = NetworkParams::random(&shape(9, false), &mut rng).unwrap();
        assert!(GriModel::new(gear(Structure::Ssk, 45), base.clone(), 9).is_err());
        assert!(GriModel::new(gear(Structure::Snk, 45), base, 9).is_ok());
    }

    #[test]
    fn rotate_kernels_identity_angle() {
        let mut rng = StdRng::seed_from_u64(1);
        let base = NetworkParams::random(&shape(9, false), &mut rng).unwrap();
        let rotated = rotate_kernels(&base, AngleDeg::zero()).unwrap();
        assert_eq!(rotated, base);
    }

    #[test]
    fn rotate_kernels_quarter_turn_fixes_symmetric_sets() {
        let mut rng = StdRng::seed_from_u64(2);
        let base = NetworkParams::random(&shape(9, true), &mut rng).unwrap();
        let rotated = rotate_kernels(&base, AngleDeg::from_int(90)).unwrap();
        for (l, layer) in rotated.layers.iter().enumerate() {
            for (i, k) in layer.kernels.iter().enumerate() {
                assert!(k.bit_eq(&base.layers[l].kernels[i]), "kernel {l}/{i}");
            }
        }
    }

    #[test]
    fn rotate_kernels_matches_grid_rotation() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut base = NetworkParams::random(&shape(9, false), &mut rng).unwrap();
        let mut corner = Grid2D::zeros(3).unwrap();
        corner.set(0, 0, 1.0);
        base.layers[0].kernels[0] = corner.clone();
        let rotated = rotate_kernels(&base, AngleDeg::from_int(45)).unwrap();
        let oracle = rotate_bilinear(&corner, AngleDeg::from_int(45), 3).unwrap();
        assert!(rotated.layers[0].kernels[0].bit_eq(&oracle));
    }

    #[test]
    fn subchannel_inputs_ssk_definition() {
        let g = gear(Structure::Ssk, 45);
        let img = blob(21, 4);
        let padded = pad_to_canvas(&img, 33).unwrap();
        let inputs = subchannel_inputs(&padded, &g, 33).unwrap();
        assert_eq!(inputs.len(), 2);
        assert!(inputs[0].bit_eq(&padded));
        let r45 = rotate_bilinear(&padded, AngleDeg::from_int(45), 33).unwrap();
        assert!(inputs[1].bit_eq(&r45));
    }

    #[test]
    fn subchannel_inputs_snk_is_single_invariant_grid() {
        let g = gear(Structure::Snk, 45);
        let img = blob(21, 5);
        let padded = pad_to_canvas(&img, 33).unwrap();
        let inputs = subchannel_inputs(&padded, &g, 33).unwrap();
        assert_eq!(inputs.len(), 1);
        for e in Dih4Element::all() {
            assert!(e.apply(&inputs[0]).max_abs_diff(&inputs[0]) <= 1e-12);
        }
    }

    #[test]
    fn subchannel_inputs_gnk_per_tooth_invariance() {
        let g = gear(Structure::Gnk, 45);
        let img = blob(21, 6);
        let padded = pad_to_canvas(&img, 33).unwrap();
        let inputs = subchannel_inputs(&padded, &g, 33).unwrap();
        assert_eq!(inputs.len(), 2);
        for (n, grid) in inputs.iter().enumerate() {
            for e in Dih4Element::all() {
                assert!(e.apply(grid).max_abs_diff(grid) <= 1e-12, "tooth {n}");
            }
        }
    }

    #[test]
    fn forward_is_dih4_identical_for_all_structures() {
        let img = blob(21, 7);
        for (structure, tol) in [
            (Structure::Ssk, 1e-9),
            (Structure::Snk, 1e-9),
            (Structure::Gsk, 1e-9),
            (Structure::Gnk, 1e-9),
        ] {
            let m = model(structure, 45, 33, 8);
            let base_out = forward_gri(&img, &m).unwrap();
            for e in Dih4Element::all() {
                let out = forward_gri(&e.apply(&img), &m).unwrap();
                for j in 0..2 {
                    let rel = (out[j] - base_out[j]).abs() / base_out[j].abs().max(1e-300);
                    assert!(rel <= tol, "{structure} node {j} under {e:?}: rel {rel}");
                }
            }
        }
    }

    #[test]
    fn forward_matching_angle_deviation_is_small() {
        let img = blob(21, 9);
        let m = model(Structure::Ssk, 45, 33, 10);
        let baseline = baseline_output(&img, &m).unwrap();
        let rotated = rotate_bilinear(&img, AngleDeg::from_int(45), 33).unwrap();
        let out = forward_gri(&rotated, &m).unwrap();
        for j in 0..2 {
            let rel = (out[j] - baseline[j]).abs() / baseline[j].abs();
            assert!(rel <= 1e-3, "node {j} deviation {rel}");
        }
    }

    #[test]
    fn snk_symmetric_input_matches_single_pass_oracle() {
        // For a Dih4-symmetric image the combined input equals the plain sum
        // of the m rotations, each orbit-summed; evaluate that path
        // independently and compare end to end.
        let img = symmetrize(&blob(21, 11));
        let m = model(Structure::Snk, 45, 33, 12);
        let out = forward_gri(&img, &m).unwrap();
        let padded = pad_to_canvas(&img, 33).unwrap();
        let mut combined = Grid2D::zeros(33).unwrap();
        for n in 0..2u32 {
            let rot = rotate_bilinear(&padded, AngleDeg::from_int(45 * n as i64), 33).unwrap();
            for e in Dih4Element::all() {
                let t = e.apply(&rot);
                for (a, b) in combined.as_mut_slice().iter_mut().zip(t.as_slice()) {
                    *a += b;
                }
            }
        }
        let v = forward_stack(&combined, m.base()).unwrap();
        let oracle = head_forward(&v, m.base()).unwrap();
        for j in 0..2 {
            assert!((out[j] - oracle[j]).abs() <= 1e-9, "node {j}");
        }
    }

    #[test]
    fn baseline_equals_forward() {
        let img = blob(21, 13);
        let m = model(Structure::Gsk, 45, 33, 14);
        let a = baseline_output(&img, &m).unwrap();
        let b = forward_gri(&img, &m).unwrap();
        assert_eq!(a, b);
        assert!(a[0] > 0.0 && a[0] < 1.0 && a[1] > 0.0 && a[1] < 1.0);
    }

    #[test]
    fn train_zero_lr_keeps_model() {
        let m = model(Structure::Ssk, 45, 33, 15);
        let data = vec![(blob(21, 16), 0u8), (blob(21, 17), 1u8)];
        let (trained, report) = train_gri(&m, &data, 2, 0.0, 2).unwrap();
        assert_eq!(trained, m);
        assert_eq!(report.epoch_losses.len(), 2);
    }

    #[test]
    fn training_keeps_rotation_tying_bit_exact() {
        for structure in [Structure::Gsk, Structure::Gnk] {
            let m = model(structure, 45, 33, 18);
            let data = vec![(blob(21, 19), 0u8), (blob(21, 20), 1u8)];
            let (trained, _) = train_gri(&m, &data, 2, 0.5, 2).unwrap();
            for (n, gp) in trained.group_params().iter().enumerate() {
                let expect =
                    rotate_kernels(trained.base(), trained.gear().tooth_angle(n as u32)).unwrap();
                for (l, layer) in gp.layers.iter().enumerate() {
                    for (i, k) in layer.kernels.iter().enumerate() {
                        assert!(
                            k.bit_eq(&expect.layers[l].kernels[i]),
                            "{structure} tooth {n} kernel {l}/{i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_toy_set() {
        for structure in Structure::ALL {
            let m = model(structure, 45, 33, 21);
            let data: Vec<(Grid2D, u8)> =
                (0..6).map(|i| (blob(21, 100 + i), (i % 2) as u8)).collect();
            let (_, report) = train_gri(&m, &data, 8, 1.0, 3).unwrap();
            let first = report.epoch_losses[0];
            let last = *report.epoch_losses.last().unwrap();
            assert!(last < first, "{structure}: loss {first} -> {last}");
        }
    }

    #[test]
    fn model_file_round_trip() {
        for structure in Structure::ALL {
            let m = model(structure, 45, 33, 22);
            let mut buf = Vec::new();
            write_model(&m, &mut buf).unwrap();
            let back = read_model(&mut std::io::BufReader::new(&buf[..])).unwrap();
            assert_eq!(back, m);
        }
    }
}
