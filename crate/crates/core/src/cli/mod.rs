//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage, configuration or
//! input error, 3 numeric failure during training or inference.

mod config;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::CliConfig;

use crate::autodiff::GradCheckReport;
use crate::bundle::{generate_synthetic, read_bundle, validate_bundle, write_bundle, FeatureBundle};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::explain::{explain, export_all};
use crate::head::{fit, gradient_check, Checkpoint, GradCheckOptions, HeadParams, Mode, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mvpcbm",
    version,
    about = "Multi-layer concept bottleneck head: synthesize, train, evaluate, explain"
)]
struct Cli {
    /// Worker threads for per-sample loops (0 = all cores).
    #[arg(long, global = true, env = "MVPCBM_THREADS", default_value_t = 0)]
    threads: usize,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON object of settings.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. `--set lambda2=0` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<CliConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        CliConfig::build(self.config.as_deref(), &overrides)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    BaselineLastLayer,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic bundle with planted layer preferences.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train a head and write its checkpoint and per-epoch report.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON lines, one epoch per line.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Print accuracy metrics of a checkpoint on a bundle.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the top concepts behind one prediction.
    Explain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Write preference profile, activation maps and explanations as CSV/JSONL.
    ExportViz {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Sample whose activation maps are exported.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Check analytic gradients of the full loss against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Write the report JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        perturb_analytic: bool,
    },
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn print_text(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    print_text(&serde_json::to_string_pretty(value)?)
}

fn load_head(bundle_path: &Path, checkpoint_path: &Path) -> Result<(FeatureBundle, HeadParams, TrainConfig)> {
    let bundle = read_bundle(bundle_path)?;
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    checkpoint.check_bundle(&bundle)?;
    let params = checkpoint.params()?;
    Ok((bundle, params, checkpoint.config))
}

fn cmd_synth(out: &Path, config: &ConfigArgs) -> Result<i32> {
    let cfg = config.resolve()?;
    let bundle = generate_synthetic(&cfg.synth)?;
    write_bundle(&bundle, out)?;
    print_json(&json!({
        "path": out,
        "n_samples": bundle.n_samples(),
        "n_layers": bundle.n_layers,
        "n_attributes": bundle.n_attributes(),
        "n_concepts_per_attr": bundle.n_concepts(),
        "n_classes": bundle.n_classes(),
        "planted_layers": cfg.synth.resolved_planted_layers(),
        "violations": validate_bundle(&bundle).iter().map(ToString::to_string).collect::<Vec<_>>(),
        "fingerprint": bundle.fingerprint(),
    }))?;
    Ok(EXIT_OK)
}

fn cmd_train(
    bundle_path: &Path,
    checkpoint: &Path,
    report_path: &Path,
    mode: Option<ModeArg>,
    config: &ConfigArgs,
) -> Result<i32> {
    let mut cfg = config.resolve()?.train;
    if let Some(mode) = mode {
        cfg.mode = match mode {
            ModeArg::Full => Mode::Full,
            ModeArg::BaselineLastLayer => Mode::BaselineLastLayer,
        };
    }
    cfg.validate()?;
    let bundle = read_bundle(bundle_path)?;
    let (params, report) = fit(&bundle, &cfg)?;
    Checkpoint::new(&params, &cfg, &bundle).save(checkpoint)?;
    let file = File::create(report_path).map_err(|e| Error::io(report_path, e))?;
    let mut out = BufWriter::new(file);
    for epoch in &report.epochs {
        serde_json::to_writer(&mut out, epoch)?;
        out.write_all(b"\n").map_err(|e| Error::io(report_path, e))?;
    }
    out.flush().map_err(|e| Error::io(report_path, e))?;
    let last = report.epochs.last();
    print_json(&json!({
        "mode": cfg.mode,
        "epochs": report.epochs.len(),
        "final": last,
        "checkpoint": checkpoint,
        "report": report_path,
    }))?;
    Ok(EXIT_OK)
}

fn cmd_eval(bundle: &Path, checkpoint: &Path) -> Result<i32> {
    let (bundle, params, cfg) = load_head(bundle, checkpoint)?;
    let result = evaluate(&bundle, &params, &cfg)?;
    print_json(&json!({
        "acc": result.accuracy,
        "bmac": result.balanced_accuracy,
        "per_class_recall": result.per_class_recall,
        "confusion": result.confusion,
        "n_samples": bundle.n_samples(),
    }))?;
    Ok(EXIT_OK)
}

fn cmd_explain(bundle: &Path, checkpoint: &Path, sample: usize, topk: usize) -> Result<i32> {
    let (bundle, params, cfg) = load_head(bundle, checkpoint)?;
    print_json(&explain(&bundle, &params, &cfg, sample, topk)?)?;
    Ok(EXIT_OK)
}

fn cmd_export(bundle: &Path, checkpoint: &Path, out_dir: &Path, sample: usize, topk: usize) -> Result<i32> {
    let (bundle, params, cfg) = load_head(bundle, checkpoint)?;
    let files = export_all(out_dir, &bundle, &params, &cfg, sample, topk)?;
    print_json(&json!({ "out_dir": out_dir, "files": files }))?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(seed: u64, tol: f64, out: Option<&Path>, perturb: bool) -> Result<i32> {
    let report: GradCheckReport = gradient_check(&GradCheckOptions {
        seed,
        tol,
        perturb_analytic: perturb,
        ..GradCheckOptions::default()
    })?;
    let text = serde_json::to_string_pretty(&report)?;
    print_text(&text)?;
    if let Some(path) = out {
        fs::write(path, format!("{text}\n")).map_err(|e| Error::io(path, e))?;
    }
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY })
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Synth { out, config } => cmd_synth(out, config),
        Command::Train {
            bundle,
            checkpoint,
            report,
            mode,
            config,
        } => cmd_train(bundle, checkpoint, report, *mode, config),
        Command::Eval { bundle, checkpoint } => cmd_eval(bundle, checkpoint),
        Command::Explain {
            bundle,
            checkpoint,
            sample,
            topk,
        } => cmd_explain(bundle, checkpoint, *sample, *topk),
        Command::ExportViz {
            bundle,
            checkpoint,
            out_dir,
            sample,
            topk,
        } => cmd_export(bundle, checkpoint, out_dir, *sample, *topk),
        Command::Gradcheck {
            seed,
            tol,
            out,
            perturb_analytic,
        } => cmd_gradcheck(*seed, *tol, out.as_deref(), *perturb_analytic),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
