//! `dualspace` command-line front-end.
//!
//! Exit codes: 0 on success, 2 for configuration and input errors, 3 when a
//! run aborts at runtime (including non-finite losses).

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dualspace::experiment::{evaluate_checkpoint, run_in, ExperimentConfig, RunDir, RunOptions};
use dualspace::noisegen::{build_task, read_dataset, write_dataset, GaussianSourceSpec, TaskSpec};
use dualspace::{Error, Method, NoiseSpec, NoiseType};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dualspace", version, about = "Learning with mixed closed-set and open-set label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy Gaussian dataset.
    Synth(SynthArgs),
    /// Train a model, writing logs and checkpoints to a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Render charts and a markdown summary for a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Sym,
    Asym,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Joint,
    CrossEntropy,
}

#[derive(Args)]
struct SynthArgs {
    /// Total number of classes in the source.
    #[arg(long, default_value_t = 10)]
    c_total: usize,
    /// Number of known classes; the rest become open-set classes.
    #[arg(long, default_value_t = 8)]
    known: usize,
    /// Closed-set noise model.
    #[arg(long, value_enum, default_value = "sym")]
    noise: NoiseArg,
    /// Closed-set noise rate.
    #[arg(long, default_value_t = 0.4)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Samples per class, train and test together.
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Test samples per class.
    #[arg(long, default_value_t = 100)]
    test_per_class: usize,
    /// Distance between class means.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    /// Open-set training samples to mix in [default: the whole open pool].
    #[arg(long)]
    open_train: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (flat TOML); flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run directory; relative paths resolve under $DUALSPACE_OUTPUT_ROOT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the run directory's latest checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs [default: 300].
    #[arg(long)]
    epochs: Option<usize>,
    /// Warm-up epochs [default: 50].
    #[arg(long)]
    warmup: Option<usize>,
    /// Save a checkpoint every N epochs; 0 keeps only the final one [default: 0].
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Temperature [default: 0.1].
    #[arg(long)]
    tau: Option<f64>,
    /// Sharpening temperature of pseudo-labels [default: 0.5].
    #[arg(long)]
    sharpen_t: Option<f64>,
    /// Competitors averaged in the neighbor margin [default: 3].
    #[arg(long)]
    top_k: Option<usize>,
    /// Nearest neighbors per sample [default: 200].
    #[arg(long)]
    neighbors: Option<usize>,
    /// Mixup Beta parameter [default: 1].
    #[arg(long)]
    mixup_alpha: Option<f64>,
    /// Clean-selection ratio [default: 0.9].
    #[arg(long)]
    alpha_id: Option<f64>,
    /// Open-set filtering ratio [default: 0.1].
    #[arg(long)]
    alpha_ood: Option<f64>,
    /// Consistency loss weight [default: 0.5].
    #[arg(long)]
    lambda_con: Option<f64>,
    /// Contrastive loss weight [default: 0.3].
    #[arg(long)]
    lambda_bcl: Option<f64>,
    /// [default: 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate [default: 0.05].
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// [default: 0.0005]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Backbone widths, comma separated [default: 128,128].
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// [default: 128]
    #[arg(long)]
    proj_hidden: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Disable the pseudo-label loss.
    #[arg(long)]
    no_pu: bool,
    /// Disable the consistency loss.
    #[arg(long)]
    no_con: bool,
    /// Disable the contrastive loss.
    #[arg(long)]
    no_bcl: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the summary JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory produced by `train`.
    run_dir: PathBuf,
}

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn config_err(error: Error) -> Failure {
    Failure { code: EXIT_CONFIG, error }
}

fn runtime_err(error: Error) -> Failure {
    let code = match error {
        Error::InvalidSpec(_) | Error::Config(_) | Error::Format { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    };
    Failure { code, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Report(a) => report::run(&a.run_dir).map_err(config_err),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| runtime_err(Error::io(path, e)))
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let task = TaskSpec {
        source: GaussianSourceSpec {
            num_classes: a.c_total,
            dim: a.dim,
            per_class: a.per_class,
            test_per_class: a.test_per_class,
            separation: a.separation,
            seed: a.seed,
        },
        noise: NoiseSpec {
            known_classes: a.known,
            noise_type: match a.noise {
                NoiseArg::Sym => NoiseType::Symmetric,
                NoiseArg::Asym => NoiseType::Asymmetric,
            },
            noise_rate: a.rate,
            seed: a.seed,
        },
        open_train: a.open_train,
    };
    if a.known == a.c_total {
        warn!("every class is known: no open-set noise, and AUROC/FPR95 will be undefined");
    }
    let ds = build_task(&task).map_err(config_err)?;
    write_dataset(&a.out, &ds).map_err(runtime_err)?;
    let spec = toml::to_string(&task).map_err(|e| runtime_err(Error::Config(e.to_string())))?;
    write_text(&a.out.join("synth.toml"), &spec)?;
    info!(
        "wrote {} ({} samples, {} known of {} classes)",
        a.out.display(),
        ds.len(),
        ds.known_classes,
        ds.total_classes
    );
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&a.config, &a.dataset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(d)) => ExperimentConfig::new(d),
        (None, None) => return Err(Error::InvalidSpec("pass --config or --dataset".into())),
    };
    if let Some(d) = &a.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &a.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(m) = a.method {
        cfg.method = match m {
            MethodArg::Joint => Method::Joint,
            MethodArg::CrossEntropy => Method::CrossEntropy,
        };
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag.clone() { cfg.$($field).+ = v; })*
        };
    }
    set!(
        seed => seed,
        checkpoint_every => checkpoint_every,
        epochs => hyper.total_epochs,
        warmup => hyper.warmup_epochs,
        tau => hyper.tau,
        sharpen_t => hyper.sharpen_t,
        top_k => hyper.top_k,
        neighbors => hyper.neighbors,
        mixup_alpha => hyper.mixup_alpha,
        alpha_id => hyper.alpha_id,
        alpha_ood => hyper.alpha_ood,
        lambda_con => hyper.lambda_con,
        lambda_bcl => hyper.lambda_bcl,
        batch_size => hyper.batch_size,
        lr => hyper.lr,
        momentum => hyper.momentum,
        weight_decay => hyper.weight_decay,
        hidden => net.hidden,
        proj_hidden => net.proj_hidden,
        proj_dim => net.proj_dim,
    );
    if a.no_pu {
        cfg.ablation.enable_pu = false;
    }
    if a.no_con {
        cfg.ablation.enable_con = false;
    }
    if a.no_bcl {
        cfg.ablation.enable_bcl = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = resolve_config(a).map_err(config_err)?;
    let dataset = read_dataset(&cfg.dataset).map_err(config_err)?;
    let dir = RunDir::open(cfg.run_dir()).map_err(config_err)?;
    info!("training into {}", dir.path().display());
    let summary = run_in(&dir, &cfg, &dataset, RunOptions { resume: a.resume }).map_err(runtime_err)?;
    let text = serde_json::to_string_pretty(&summary.last).map_err(|e| runtime_err(Error::Config(e.to_string())))?;
    println!("{text}");
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let summary = evaluate_checkpoint(&a.checkpoint, &a.dataset).map_err(config_err)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| runtime_err(Error::Config(e.to_string())))?;
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    println!("{text}");
    Ok(())
}
