//! Command-line driver: consistency sweeps, training runs, synthetic data
//! generation and the exact-identity self-test.
//!
//! Exit codes: 0 success, 1 usage error, 2 invariant violation.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gricnn_core::cnn::Activation;
use gricnn_core::grid::AngleDeg;
use gricnn_core::gri::{save_model, train_gri, Structure};
use gricnn_core::harness::{
    run_selftest, run_sweep, training_model, ImageSource, ParamSource, SweepConfig, TrialPlan,
};
use gricnn_core::report::{emit_report, ReportFormat};
use gricnn_core::synthdata::{gen_dataset, save_dataset};

#[derive(Parser)]
#[command(
    name = "gricnn",
    version,
    about = "Geared rotationally identical CNN structures: consistency sweeps, training, data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GearArgs {
    /// Gear structure.
    #[arg(long, default_value = "ssk")]
    structure: Structure,
    /// Step angle in degrees, as a rational like `15`, `1` or `1/2`.
    #[arg(long = "step-deg", default_value = "15")]
    step_deg: AngleDeg,
    /// Number of convolution layers.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Activation for conv layers and flatten nodes:
    /// sigmoid | relu | lrelu:<slope>.
    #[arg(long, default_value = "sigmoid")]
    activation: Activation,
    /// Flatten nodes per final channel.
    #[arg(long = "flatten-nodes", default_value_t = 8)]
    flatten_nodes: usize,
    /// Side of the square test images.
    #[arg(long = "image-side", default_value_t = 63)]
    image_side: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the output-consistency sweep and emit a report.
    Consistency {
        #[command(flatten)]
        gear: GearArgs,
        /// Trials per offset row.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `random` or a model checkpoint path.
        #[arg(long, default_value = "random")]
        params: String,
        /// `synthetic`, a grid file, or a `label,path` manifest.
        #[arg(long, default_value = "synthetic")]
        image: String,
        /// Smooth-class fraction for synthetic images.
        #[arg(long = "class-mix", default_value_t = 0.5)]
        class_mix: f64,
        /// Offset steps f to evaluate (0..=10).
        #[arg(long, value_delimiter = ',', default_values_t = (0..=10u8).collect::<Vec<_>>())]
        offsets: Vec<u8>,
        /// Output path, or `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Train a gear model on synthetic data and write a checkpoint.
    Train {
        #[command(flatten)]
        gear: GearArgs,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training set size (balanced two-class synthetic).
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic two-class dataset with a manifest.
    GenData {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Smooth-class fraction.
        #[arg(long = "class-mix", default_value_t = 0.5)]
        class_mix: f64,
        #[arg(long, default_value_t = 63)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Run the exact-identity property suite.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Consistency {
            gear,
            trials,
            seed,
            params,
            image,
            class_mix,
            offsets,
            out,
            format,
        } => {
            let param_source = if params == "random" {
                ParamSource::Random
            } else {
                ParamSource::Checkpoint(PathBuf::from(params))
            };
            let image_source = parse_image_source(&image, class_mix)?;
            let plan = TrialPlan { trials, seed, param_source, image_source };
            let mut config = SweepConfig::new(gear.structure, gear.step_deg, plan);
            config.conv_layers = gear.layers;
            config.activation = gear.activation;
            config.image_side = gear.image_side;
            config.flatten_nodes = gear.flatten_nodes;
            config.f_values = offsets;
            let report = run_sweep(&config)?;
            for row in &report.rows {
                anyhow::ensure!(
                    row.trial_count() == trials as u64,
                    "bucket conservation violated on row f={}",
                    row.f
                );
            }
            let text = emit_report(&report, format);
            if out == "-" {
                print!("{text}");
            } else {
                std::fs::write(&out, &text)?;
                eprintln!("report written to {out}");
            }
            if let Some(median) = report.median_offstep_abs_deviation() {
                eprintln!("diagnostic: median off-step |deviation| = {median:.3e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { gear, epochs, lr, seed, count, batch, out } => {
            anyhow::ensure!(lr > 0.0, "learning rate must be positive");
            let model = training_model(
                gear.structure,
                gear.step_deg,
                gear.image_side,
                gear.layers,
                gear.activation,
                gear.flatten_nodes,
                seed,
            )?;
            let data = gen_dataset(count, 0.5, gear.image_side, seed)?;
            let (trained, report) = train_gri(&model, &data, epochs, lr, batch)?;
            save_model(&trained, &out)?;
            let first = report.epoch_losses.first().copied().unwrap_or(f64::NAN);
            let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            eprintln!(
                "trained {} epochs on {count} samples: loss {first:.5} -> {last:.5}; model at {}",
                epochs,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::GenData { count, class_mix, side, seed, out_dir } => {
            let data = gen_dataset(count, class_mix, side, seed)?;
            let manifest = save_dataset(&data, &out_dir)?;
            println!("{}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { seed } => {
            let checks = run_selftest(seed);
            let mut all_ok = true;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for c in &checks {
                if c.passed {
                    writeln!(w, "PASS {}", c.name)?;
                } else {
                    all_ok = false;
                    writeln!(w, "FAIL {} ({})", c.name, c.detail)?;
                }
            }
            if all_ok {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn parse_image_source(arg: &str, class_mix: f64) -> anyhow::Result<ImageSource> {
    if arg == "synthetic" {
        return Ok(ImageSource::Synthetic { class_mix });
    }
    let path = PathBuf::from(arg);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("cannot read image source {arg}: {e}"))?;
    if text.starts_with("P-GRID") {
        return Ok(ImageSource::Files(vec![path]));
    }
    // Otherwise treat as a `label,path` manifest relative to its directory.
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    let mut files = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (_, rel) = line
            .split_once(',')
            .ok_or_else(|| anyhow::anyhow!("bad manifest line {line:?}"))?;
        files.push(dir.join(rel.trim()));
    }
    anyhow::ensure!(!files.is_empty(), "manifest {arg} lists no images");
    Ok(ImageSource::Files(files))
}
