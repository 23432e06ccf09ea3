//! Output-consistency protocol: deterministic trial generation, baseline
//! normalization, offset sweeps and the self-test battery.
//!
//! Every trial is fully determined by (seed, index): a counter-based RNG
//! keyed by both drives the parameter draw, the test image and the test
//! angle, so trials can run concurrently and aggregation by index order is
//! bit-reproducible.

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cnn::{
    Activation, CnnError, LayerSpec, NetShape, NetworkParams, Pool, KERNEL_SIDES,
};
use crate::grid::{
    default_canvas_side, load_grid, rotate_bilinear, AngleDeg, Dih4Element, Grid2D, GridError,
};
use crate::gri::{
    baseline_output, forward_gri, load_model, GearConfig, GriError, GriModel, Structure,
};
use crate::report::{ConsistencyReport, OffsetRow, ReportConfig};
use crate::synthdata::{gen_lesion, LesionClass, LesionSpec, SynthError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("checkpoint {0} could not be loaded: {1}")]
    Checkpoint(PathBuf, String),
    #[error("image file {0} could not be loaded: {1}")]
    ImageFile(PathBuf, String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Gri(#[from] GriError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Where trial parameters come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamSource {
    /// Fresh uniform(-0.5, 0.5) weights per trial, random kernel sizes.
    Random,
    /// A trained model file; every trial reuses it.
    Checkpoint(PathBuf),
}

impl ParamSource {
    fn echo(&self) -> String {
        match self {
            ParamSource::Random => "random".into(),
            ParamSource::Checkpoint(p) => p.display().to_string(),
        }
    }
}

/// Where trial images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageSource {
    /// Synthetic lesions; `class_mix` is the smooth-class fraction.
    Synthetic { class_mix: f64 },
    /// Fixed list of grid files, cycled by trial index.
    Files(Vec<PathBuf>),
}

impl ImageSource {
    fn echo(&self) -> String {
        match self {
            ImageSource::Synthetic { class_mix } => format!("synthetic(mix={class_mix})"),
            ImageSource::Files(files) => format!("files({})", files.len()),
        }
    }
}

/// Reproducible trial plan: (seed, index) fully determines each trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub trials: usize,
    pub seed: u64,
    pub param_source: ParamSource,
    pub image_source: ImageSource,
}

/// Full sweep configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub structure: Structure,
    pub step: AngleDeg,
    pub conv_layers: usize,
    pub activation: Activation,
    pub image_side: usize,
    pub flatten_nodes: usize,
    /// Offset steps to evaluate, each in 0..=10.
    pub f_values: Vec<u8>,
    pub plan: TrialPlan,
}

impl SweepConfig {
    pub fn new(structure: Structure, step: AngleDeg, plan: TrialPlan) -> SweepConfig {
        SweepConfig {
            structure,
            step,
            conv_layers: 3,
            activation: Activation::Sigmoid,
            image_side: 63,
            flatten_nodes: 8,
            f_values: (0..=10).collect(),
            plan,
        }
    }

    pub fn canvas_side(&self) -> usize {
        default_canvas_side(self.image_side)
    }
}

/// Test-angle specification: angle = i·90° + n·x° + f·(x°/10), with an
/// optional reflection applied before the rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestAngleSpec {
    pub i: u8,
    pub n: u32,
    pub f: u8,
    pub reflect: bool,
}

impl TestAngleSpec {
    pub fn angle(&self, step: AngleDeg) -> AngleDeg {
        AngleDeg::from_int(90 * self.i as i64)
            .add(step.scale(self.n as i64))
            .add(step.div(10).scale(self.f as i64))
    }
}

/// One materialised trial.
pub struct Trial {
    pub model: GriModel,
    pub image: Grid2D,
    pub i: u8,
    pub n: u32,
    pub reflect: bool,
}

/// Per-trial outcome at one offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialResult {
    pub normalized: [f64; 2],
    pub deviation: [f64; 2],
    pub absolute_deviation: [f64; 2],
    pub baseline: [f64; 2],
    pub degenerate: bool,
}

impl TrialResult {
    /// Signed deviation of the node with the larger magnitude.
    pub fn worst_deviation(&self) -> f64 {
        if self.deviation[0].abs() >= self.deviation[1].abs() {
            self.deviation[0]
        } else {
            self.deviation[1]
        }
    }
}

const DEGENERATE_BASELINE: f64 = 1e-12;

/// Largest odd pool window from the kernel-size range that divides the
/// canvas into an odd number of blocks.
fn pick_pool(canvas_side: usize) -> Pool {
    for w in KERNEL_SIDES.iter().rev() {
        if canvas_side % w == 0 && (canvas_side / w) % 2 == 1 && canvas_side / w > 1 {
            return Pool::Avg(*w);
        }
    }
    Pool::None
}

fn random_net_shape(config: &SweepConfig, rng: &mut ChaCha8Rng) -> NetShape {
    let canvas = config.canvas_side();
    let mut layers = Vec::with_capacity(config.conv_layers);
    for l in 0..config.conv_layers {
        let kernel_side = KERNEL_SIDES[rng.gen_range(0..KERNEL_SIDES.len())];
        let pool = if l + 1 == config.conv_layers { pick_pool(canvas) } else { Pool::None };
        layers.push(LayerSpec {
            kernel_side,
            in_channels: 1,
            out_channels: 1,
            activation: config.activation,
            pool,
        });
    }
    NetShape {
        input_side: canvas,
        layers,
        flatten_nodes: config.flatten_nodes,
        hidden_dim: None,
        symmetric: config.structure.wants_symmetric_kernels(),
    }
}

/// Fresh model for a training run: kernel sides drawn once from the seed
/// stream, pooling on the last layer, symmetric mode per structure.
pub fn training_model(
    structure: Structure,
    step: AngleDeg,
    image_side: usize,
    conv_layers: usize,
    activation: Activation,
    flatten_nodes: usize,
    seed: u64,
) -> Result<GriModel, HarnessError> {
    let gear = GearConfig::new(structure, step)?;
    let canvas = default_canvas_side(image_side);
    let mut rng = crate::synthdata::stream_rng(seed, 0x5452_4149_4e00_0000);
    let mut layers = Vec::with_capacity(conv_layers);
    for l in 0..conv_layers {
        let kernel_side = KERNEL_SIDES[rng.gen_range(0..KERNEL_SIDES.len())];
        let pool = if l + 1 == conv_layers { pick_pool(canvas) } else { Pool::None };
        layers.push(LayerSpec {
            kernel_side,
            in_channels: 1,
            out_channels: 1,
            activation,
            pool,
        });
    }
    let shape = NetShape {
        input_side: canvas,
        layers,
        flatten_nodes,
        hidden_dim: None,
        symmetric: structure.wants_symmetric_kernels(),
    };
    let params = NetworkParams::random(&shape, &mut rng)?;
    Ok(GriModel::new(gear, params, canvas)?)
}

/// Shared immutable inputs loaded once per sweep.
struct SweepContext {
    gear: GearConfig,
    canvas_side: usize,
    checkpoint: Option<GriModel>,
    files: Option<Vec<Grid2D>>,
}

impl SweepContext {
    fn prepare(config: &SweepConfig) -> Result<SweepContext, HarnessError> {
        let gear = GearConfig::new(config.structure, config.step)?;
        let mut canvas_side = config.canvas_side();
        let checkpoint = match &config.plan.param_source {
            ParamSource::Random => None,
            ParamSource::Checkpoint(path) => {
                let model = load_model(path)
                    .map_err(|e| HarnessError::Checkpoint(path.clone(), e.to_string()))?;
                if model.gear().structure() != config.structure
                    || model.gear().step() != config.step
                {
                    return Err(HarnessError::InvalidPlan(format!(
                        "checkpoint gear ({} step {}) does not match requested {} step {}",
                        model.gear().structure(),
                        model.gear().step(),
                        config.structure,
                        config.step
                    )));
                }
                canvas_side = model.canvas_side();
                Some(model)
            }
        };
        let files = match &config.plan.image_source {
            ImageSource::Synthetic { class_mix } => {
                if !(0.0..=1.0).contains(class_mix) {
                    return Err(HarnessError::InvalidPlan(format!(
                        "class mix {class_mix} out of range"
                    )));
                }
                None
            }
            ImageSource::Files(paths) => {
                if paths.is_empty() {
                    return Err(HarnessError::InvalidPlan("empty image file list".into()));
                }
                let mut grids = Vec::with_capacity(paths.len());
                for p in paths {
                    let g = load_grid(p)
                        .map_err(|e| HarnessError::ImageFile(p.clone(), e.to_string()))?;
                    if g.side() > canvas_side {
                        return Err(HarnessError::InvalidPlan(format!(
                            "image {} side {} exceeds canvas {}",
                            p.display(),
                            g.side(),
                            canvas_side
                        )));
                    }
                    grids.push(g);
                }
                Some(grids)
            }
        };
        Ok(SweepContext { gear, canvas_side, checkpoint, files })
    }
}

/// Build the trial for (seed, index): draw i, n, reflect, the parameter set
/// (or reuse the checkpoint) and the test image.
pub fn make_trial(config: &SweepConfig, index: u64) -> Result<Trial, HarnessError> {
    let ctx = SweepContext::prepare(config)?;
    make_trial_in(config, &ctx, index)
}

fn make_trial_in(
    config: &SweepConfig,
    ctx: &SweepContext,
    index: u64,
) -> Result<Trial, HarnessError> {
    let mut rng = crate::synthdata::stream_rng(config.plan.seed, index ^ 0x5452_4941_4c00_0000);
    let i: u8 = rng.gen_range(0..4);
    let n: u32 = rng.gen_range(0..ctx.gear.teeth());
    let reflect: bool = rng.gen();
    let model = match &ctx.checkpoint {
        Some(m) => m.clone(),
        None => {
            let shape = random_net_shape(config, &mut rng);
            let params = NetworkParams::random(&shape, &mut rng)?;
            GriModel::new(ctx.gear, params, ctx.canvas_side)?
        }
    };
    let image = match &config.plan.image_source {
        ImageSource::Synthetic { class_mix } => {
            let class = if rng.gen::<f64>() < *class_mix {
                LesionClass::Smooth
            } else {
                LesionClass::Spiculated
            };
            let seed = rng.gen::<u64>();
            gen_lesion(&LesionSpec { class, side: config.image_side, seed })?
        }
        ImageSource::Files(_) => {
            let files = ctx.files.as_ref().expect("files loaded in prepare");
            files[(index % files.len() as u64) as usize].clone()
        }
    };
    Ok(Trial { model, image, i, n, reflect })
}

/// Evaluate one trial at offset `f` against a precomputed baseline.
fn evaluate(trial: &Trial, f: u8, baseline: &[f64; 2]) -> Result<TrialResult, HarnessError> {
    let presented = if f == 0 {
        // Matching case by construction: the baseline row presents the
        // original image and must report exactly zero deviation.
        trial.image.clone()
    } else {
        let spec = TestAngleSpec { i: trial.i, n: trial.n, f, reflect: trial.reflect };
        let angle = spec.angle(trial.model.gear().step());
        let oriented = if trial.reflect {
            Dih4Element::new(0, true).apply(&trial.image)
        } else {
            trial.image.clone()
        };
        rotate_bilinear(&oriented, angle, trial.model.canvas_side())?
    };
    let out = forward_gri(&presented, &trial.model)?;
    let degenerate =
        baseline[0].abs() < DEGENERATE_BASELINE || baseline[1].abs() < DEGENERATE_BASELINE;
    let mut normalized = [f64::NAN; 2];
    let mut deviation = [f64::NAN; 2];
    let mut absolute = [0.0; 2];
    for j in 0..2 {
        absolute[j] = (out[j] - baseline[j]).abs();
        if !degenerate {
            normalized[j] = out[j] / baseline[j];
            deviation[j] = normalized[j] - 1.0;
        }
    }
    Ok(TrialResult {
        normalized,
        deviation,
        absolute_deviation: absolute,
        baseline: *baseline,
        degenerate,
    })
}

/// Run one trial at offset `f` (computes the baseline itself).
pub fn run_trial(trial: &Trial, f: u8) -> Result<TrialResult, HarnessError> {
    let baseline = baseline_output(&trial.image, &trial.model)?;
    evaluate(trial, f, &baseline)
}

/// Run the full sweep: `plan.trials` trials per offset in `f_values`.
/// Trials execute concurrently; each is seeded by (seed, index) and the
/// baseline is computed once per index and shared across offsets.
pub fn run_sweep(config: &SweepConfig) -> Result<ConsistencyReport, HarnessError> {
    for f in &config.f_values {
        if *f > 10 {
            return Err(HarnessError::InvalidPlan(format!("offset f={f} out of range 0..=10")));
        }
    }
    let ctx = SweepContext::prepare(config)?;
    let per_index: Result<Vec<Vec<(u8, TrialResult)>>, HarnessError> = (0..config.plan.trials
        as u64)
        .into_par_iter()
        .map(|index| {
            let trial = make_trial_in(config, &ctx, index)?;
            let baseline = baseline_output(&trial.image, &trial.model)?;
            config
                .f_values
                .iter()
                .map(|&f| Ok((f, evaluate(&trial, f, &baseline)?)))
                .collect()
        })
        .collect();
    let per_index = per_index?;
    let rows = config
        .f_values
        .iter()
        .map(|&f| {
            let mut worst = Vec::new();
            let mut all = Vec::new();
            let mut norm_means = Vec::new();
            let mut degenerate = 0u64;
            for trial_rows in &per_index {
                for (rf, result) in trial_rows {
                    if *rf != f {
                        continue;
                    }
                    if result.degenerate {
                        degenerate += 1;
                        continue;
                    }
                    worst.push(result.worst_deviation());
                    all.extend_from_slice(&result.deviation);
                    norm_means.push((result.normalized[0] + result.normalized[1]) / 2.0);
                }
            }
            let offset = config.step.div(10).scale(f as i64);
            OffsetRow::aggregate(f, offset, worst, &all, &norm_means, degenerate)
        })
        .collect();
    Ok(ConsistencyReport { config: report_config(config, ctx.canvas_side), rows })
}

fn report_config(config: &SweepConfig, canvas_side: usize) -> ReportConfig {
    ReportConfig {
        structure: config.structure.to_string(),
        step: config.step,
        conv_layers: config.conv_layers,
        activation: config.activation.to_string(),
        trials: config.plan.trials,
        seed: config.plan.seed,
        image_side: config.image_side,
        canvas_side,
        param_source: config.plan.param_source.echo(),
        image_source: config.plan.image_source.echo(),
    }
}

/// One self-test outcome.
#[derive(Clone, Debug)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck { name, passed, detail }
}

/// The exact-identity property battery behind the `selftest` subcommand.
pub fn run_selftest(seed: u64) -> Vec<SelfCheck> {
    use crate::symmetry::{dih4_orbit_sum, is_dih4_invariant, symmetrize};
    let mut rng = crate::synthdata::stream_rng(seed, 0x53454c46);
    let mut checks = Vec::new();

    let grid = Grid2D::from_fn(11, |_, _| rng.gen_range(-1.0..1.0)).expect("odd side");

    // Group axioms.
    {
        let all = Dih4Element::all();
        let mut ok = true;
        let mut detail = String::new();
        for a in all {
            for b in all {
                let lhs = a.compose(b).apply(&grid);
                let rhs = a.apply(&b.apply(&grid));
                if !lhs.bit_eq(&rhs) {
                    ok = false;
                    detail = format!("compose mismatch {a:?}∘{b:?}");
                }
            }
            if !a.inverse().apply(&a.apply(&grid)).bit_eq(&grid) {
                ok = false;
                detail = format!("inverse mismatch {a:?}");
            }
        }
        checks.push(check("dih4-group-axioms", ok, detail));
    }

    // Quarter-turn exactness.
    {
        let mut ok = true;
        for k in 1..=3u8 {
            let rot = rotate_bilinear(&grid, AngleDeg::from_int(90 * k as i64), grid.side())
                .expect("valid rotation");
            if !rot.bit_eq(&Dih4Element::rotation(k).apply(&grid)) {
                ok = false;
            }
        }
        checks.push(check("quarter-turn-exactness", ok, String::new()));
    }

    // Bit-exact commutation of bilinear rotation with the group.
    {
        let mut ok = true;
        let mut detail = String::new();
        for (num, den) in [(7, 1), (45, 1), (833, 10)] {
            let a = AngleDeg::new(num, den).expect("valid angle");
            let r90 = Dih4Element::rotation(1);
            let s = Dih4Element::new(0, true);
            let lhs = rotate_bilinear(&r90.apply(&grid), a, 17).expect("rotation");
            let rhs = r90.apply(&rotate_bilinear(&grid, a, 17).expect("rotation"));
            if !lhs.bit_eq(&rhs) {
                ok = false;
                detail = format!("r90 commutation at {num}/{den}");
            }
            let lhs = rotate_bilinear(&s.apply(&grid), a, 17).expect("rotation");
            let rhs = s.apply(&rotate_bilinear(&grid, a.neg(), 17).expect("rotation"));
            if !lhs.bit_eq(&rhs) {
                ok = false;
                detail = format!("reflection relation at {num}/{den}");
            }
        }
        checks.push(check("rotation-group-commutation", ok, detail));
    }

    // Symmetrisation: invariant and idempotent, bit-exactly.
    {
        let s = symmetrize(&grid);
        let ok = is_dih4_invariant(&s) && symmetrize(&s).bit_eq(&s);
        checks.push(check("symmetrize-projection", ok, String::new()));
    }

    // Orbit-sum invariance.
    {
        let sum = dih4_orbit_sum(&grid);
        let worst = Dih4Element::all()
            .iter()
            .map(|g| g.apply(&sum).max_abs_diff(&sum))
            .fold(0.0, f64::max);
        checks.push(check("orbit-sum-invariance", worst <= 1e-12, format!("max diff {worst:.2e}")));
    }

    // Combine before vs at the end of convolution.
    {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let i = Grid2D::from_fn(9, |_, _| rng.gen_range(-1.0..1.0)).expect("odd side");
            let k = Grid2D::from_fn(3, |_, _| rng.gen_range(-0.5..0.5)).expect("odd side");
            let before = crate::cnn::conv_same(&dih4_orbit_sum(&i), &k).expect("conv");
            let after = crate::symmetry::combine_at_end(&i, &k).expect("conv");
            worst = worst.max(before.max_abs_diff(&after));
        }
        checks.push(check(
            "combine-before-or-after",
            worst <= 1e-12,
            format!("max diff {worst:.2e}"),
        ));
    }

    // Forward identity of every structure under the full group.
    {
        let mut worst: f64 = 0.0;
        let mut detail = String::new();
        for structure in Structure::ALL {
            let gear = GearConfig::new(structure, AngleDeg::from_int(45)).expect("valid gear");
            let shape = NetShape {
                input_side: 33,
                layers: vec![LayerSpec {
                    kernel_side: 3,
                    in_channels: 1,
                    out_channels: 1,
                    activation: Activation::Sigmoid,
                    pool: Pool::Avg(3),
                }],
                flatten_nodes: 4,
                hidden_dim: None,
                symmetric: structure.wants_symmetric_kernels(),
            };
            let params = NetworkParams::random(&shape, &mut rng).expect("valid shape");
            let model = GriModel::new(gear, params, 33).expect("valid model");
            let image = gen_lesion(&LesionSpec {
                class: LesionClass::Spiculated,
                side: 21,
                seed: rng.gen(),
            })
            .expect("valid lesion");
            let base = forward_gri(&image, &model).expect("forward");
            for g in Dih4Element::all() {
                let out = forward_gri(&g.apply(&image), &model).expect("forward");
                for j in 0..2 {
                    let rel = (out[j] - base[j]).abs() / base[j].abs().max(1e-300);
                    if rel > worst {
                        worst = rel;
                        detail = format!("{structure} under {g:?}: rel {rel:.2e}");
                    }
                }
            }
        }
        checks.push(check("gri-dih4-identity", worst <= 1e-9, detail));
    }

    // Gear validation.
    {
        let ok = GearConfig::new(Structure::Ssk, AngleDeg::from_int(15)).is_ok()
            && GearConfig::new(Structure::Ssk, AngleDeg::from_int(90)).is_err()
            && GearConfig::new(Structure::Ssk, AngleDeg::from_int(7)).is_err();
        checks.push(check("gear-validation", ok, String::new()));
    }

    // The f = 0 row reports exactly zero deviation.
    {
        let plan = TrialPlan {
            trials: 3,
            seed,
            param_source: ParamSource::Random,
            image_source: ImageSource::Synthetic { class_mix: 0.5 },
        };
        let mut config = SweepConfig::new(Structure::Ssk, AngleDeg::from_int(45), plan);
        config.image_side = 31;
        config.conv_layers = 1;
        config.f_values = vec![0];
        let ok = match run_sweep(&config) {
            Ok(report) => report
                .rows
                .iter()
                .all(|r| r.deviations.iter().all(|d| *d == 0.0) && r.degenerate == 0),
            Err(_) => false,
        };
        checks.push(check("baseline-row-zero-deviation", ok, String::new()));
    }

    checks
}
