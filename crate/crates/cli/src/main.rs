use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;
use propnet::metrics::NormSpec;
use propnet_cli::check::{check_grad, check_shift, GradCheckConfig, ShiftCheckConfig};
use propnet_cli::fit::{fit, FitConfig, Init, Optimizer, ToySet};
use propnet_cli::gen_gt::GenGtConfig;
use propnet_cli::{eval, gen_gt, load_loss_params, load_scheme, stats, CliError, CliResult};

#[derive(Parser)]
#[command(name = "propnet", version, about = "Facial landmark heatmap tooling")]
struct Cli {
    /// Boundary scheme file (default: bundled 98-point scheme).
    #[arg(long, global = true)]
    scheme: Option<PathBuf>,
    /// Loss hyper-parameter file with `key = value` lines.
    #[arg(long, global = true)]
    loss_params: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Landmarks per record.
    #[arg(long, global = true, default_value_t = 98)]
    points: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Subcommand)]
enum Command {
    /// Render landmark and boundary heatmaps for an annotation file.
    GenGt {
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Relative bbox padding before cropping.
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
    },
    /// Score predictions against annotations.
    Eval {
        predictions: PathBuf,
        ground_truth: PathBuf,
        /// Preset name or `interocular:A,B`, `interpupil:..`, `fixed:D`.
        #[arg(long, default_value = "wflw98")]
        norm: String,
        /// Failure threshold; repeat for several (default 0.1).
        #[arg(long = "threshold")]
        thresholds: Vec<f64>,
        /// Directory for report.tsv and ced.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the loss gradients.
    CheckGrad {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Negate the analytic gradients (self-test; must fail).
        #[arg(long)]
        inject_sign_bug: bool,
    },
    /// Shift consistency of plain versus blurred subsampling.
    CheckShift {
        #[arg(long = "kernel", default_values_t = [2usize, 3, 5])]
        kernels: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Gradient descent on free heatmaps toward ground truth.
    FitToy {
        /// Directory written by `gen-gt`.
        #[arg(required_unless_present = "synthetic", conflicts_with = "synthetic")]
        gt_dir: Option<PathBuf>,
        /// Use this many synthetic faces instead of a directory.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
        optimizer: OptimizerArg,
        /// Start from the ground truth instead of 0.5.
        #[arg(long)]
        init_gt: bool,
        /// Stop early once loss < ratio × initial and decoded NME < 0.01.
        #[arg(long)]
        stop_ratio: Option<f64>,
    },
    /// Fractions of records carrying each attribute.
    Stats { annotations: PathBuf },
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::GenGt { annotations, out, margin } => {
            let scheme = load_scheme(cli.scheme.as_deref(), cli.points)?;
            let cfg = GenGtConfig { n_points: cli.points, margin, ..Default::default() };
            gen_gt::run(&annotations, &scheme, &out, &cfg)
        }
        Command::Eval { predictions, ground_truth, norm, thresholds, out } => {
            let norm = NormSpec::parse(&norm)?;
            eval::run(&predictions, &ground_truth, cli.points, &norm, &thresholds, out.as_deref())
        }
        Command::CheckGrad { trials, inject_sign_bug } => {
            let p = load_loss_params(cli.loss_params.as_deref())?;
            let cfg = GradCheckConfig { trials, seed: cli.seed, inject_sign_bug, ..Default::default() };
            verdict(check_grad(&p, &cfg)?)
        }
        Command::CheckShift { kernels, trials } => {
            let cfg = ShiftCheckConfig { kernel_sizes: kernels, trials, seed: cli.seed, ..Default::default() };
            verdict(check_shift(&cfg)?)
        }
        Command::FitToy { gt_dir, synthetic, steps, lr, optimizer, init_gt, stop_ratio } => {
            let p = load_loss_params(cli.loss_params.as_deref())?;
            let set = match (gt_dir, synthetic) {
                (Some(dir), _) => ToySet::from_dir(&dir, GenGtConfig::default().input_size)?,
                (None, Some(n)) => ToySet::synthetic(n, cli.seed, &load_scheme(cli.scheme.as_deref(), cli.points)?)?,
                (None, None) => return Err(CliError::Input("give a gen-gt directory or --synthetic N".into())),
            };
            let cfg = FitConfig {
                steps,
                lr,
                optimizer: match optimizer {
                    OptimizerArg::Adam => Optimizer::Adam,
                    OptimizerArg::Sgd => Optimizer::Sgd,
                },
                init: if init_gt { Init::GroundTruth } else { Init::Constant(0.5) },
                stop_ratio,
                ..Default::default()
            };
            Ok(fit(&set, &p, &cfg)?.to_text())
        }
        Command::Stats { annotations } => stats::run(&annotations, cli.points),
    }
}

/// Prints the table before reporting a failed verification.
fn verdict(c: propnet_cli::check::Checked) -> CliResult<String> {
    if c.passed() {
        Ok(c.text)
    } else {
        print!("{}", c.text);
        Err(CliError::Verification(c.failures.join("; ")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(text.as_bytes()).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
