//! `tse` command-line driver: synth, train, eval, sweep and compare.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{DatasetPreset, ExperimentConfig};
use crate::error::{Result, TseError};
use crate::evaluation::{
    classifier_report, compare_reports, evaluate, n_inactive_sweep, EvalOptions, EvalReport, SweepTable,
};
use crate::model::load_checkpoint;
use crate::refinement::{RefinementConfig, RefinementMode};
use crate::synthesis::{build_dataset, ManifestSource, SampleSource, Split};
use crate::training::{train, TrainArtifacts};

#[derive(Parser, Debug)]
#[command(name = "tse", version, about = "Target sound extraction experiments with classifier-driven query refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to evaluate; defaults to `<out>/<system>/best.ckpt`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated thresholds for model-mode refinement.
    #[arg(long, value_delimiter = ',')]
    pub theta_grid: Option<Vec<f64>>,
    /// Restrict to one refinement mode.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RefinementMode>,
    /// Also write a per-sample refinement trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize the dataset and write its manifest.
    Synth(Common),
    /// Train the configured system.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Mean SNRi as a function of the number of inactive query classes.
    Sweep(EvalArgs),
    /// Combine evaluation reports into one table.
    Compare {
        /// Report files written by `eval`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Where to write the combined table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<RefinementMode, String> {
    RefinementMode::parse(s).ok_or_else(|| format!("unknown mode {s:?}; expected model, oracle or off"))
}

/// Exit status for an error: 2 configuration, 3 divergence, 4 missing artifact, 1 otherwise.
pub fn exit_code(err: &TseError) -> u8 {
    match err {
        TseError::Divergence { .. } => 3,
        TseError::MissingArtifact(_) => 4,
        TseError::ConfigInvalid(_)
        | TseError::NoClassifier(_)
        | TseError::IncompatibleVocabulary(_)
        | TseError::InvalidVocabulary(_)
        | TseError::VocabTooSmall { .. }
        | TseError::InsufficientClasses { .. } => 2,
        _ => 1,
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    master_seed: u64,
    eval_seed: u64,
    version: &'a str,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snapshot(cfg: &ExperimentConfig, dir: &Path, command: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let info =
        RunInfo { command, master_seed: cfg.master_seed, eval_seed: cfg.eval_seed(), version: env!("CARGO_PKG_VERSION") };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(())
}

fn open_split(cfg: &ExperimentConfig, split: Split) -> Result<ManifestSource> {
    ManifestSource::open(&cfg.manifest_path(), split)
}

pub fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    if cfg.dataset.preset == DatasetPreset::Manifest {
        return Err(TseError::ConfigInvalid("dataset.preset = \"manifest\" is imported, not synthesized".into()));
    }
    let path = cfg.manifest_path();
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = build_dataset(&cfg.vocabulary()?, &cfg.mixture_preset(), cfg.counts(), cfg.master_seed, &dir)?;
    snapshot(&cfg, &dir, "synth")?;
    println!("wrote {} mixtures to {}", manifest.entries.len(), dir.display());
    Ok(())
}

pub fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let mut tcfg = cfg.training_config()?;
    tcfg.verbose = true;
    let train_set = open_split(&cfg, Split::Train)?;
    let val_set = open_split(&cfg, Split::Val)?;
    let dir = cfg.system_dir();
    snapshot(&cfg, &dir, "train")?;
    let artifacts = TrainArtifacts { dir: dir.clone() };
    let val: Option<&dyn SampleSource> = if val_set.is_empty() { None } else { Some(&val_set) };
    let outcome = train(&train_set, val, &cfg.model_config()?, &tcfg, Some(&artifacts))?;
    println!(
        "trained {} for {} epochs; best epoch {} -> {}",
        cfg.system.name(),
        tcfg.epochs,
        outcome.best_epoch,
        artifacts.best_checkpoint().display()
    );
    Ok(())
}

fn settings(args: &EvalArgs, cfg: &ExperimentConfig, has_classifier: bool) -> Result<Vec<RefinementConfig>> {
    let grid = args.theta_grid.clone().unwrap_or_else(|| cfg.evaluation.theta_grid.clone());
    let model_rows = || grid.iter().map(|&t| RefinementConfig::model(t)).collect::<Result<Vec<_>>>();
    Ok(match args.mode {
        Some(RefinementMode::Off) => vec![RefinementConfig::off()],
        Some(RefinementMode::Oracle) => vec![RefinementConfig::oracle()],
        Some(RefinementMode::Model) => model_rows()?,
        None => {
            let mut s = vec![RefinementConfig::off()];
            if has_classifier {
                s.extend(model_rows()?);
            }
            s.push(RefinementConfig::oracle());
            s
        }
    })
}

struct EvalContext {
    cfg: ExperimentConfig,
    model: crate::model::TseModel<f32>,
    test: ManifestSource,
    settings: Vec<RefinementConfig>,
    opts: EvalOptions,
    dir: PathBuf,
}

fn eval_context(args: &EvalArgs, sub: &str) -> Result<EvalContext> {
    let cfg = load_config(&args.common)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| TrainArtifacts { dir: cfg.system_dir() }.best_checkpoint());
    let vocab = cfg.vocabulary()?;
    let (model, meta) = load_checkpoint(&ckpt, Some(&vocab))?;
    let test = open_split(&cfg, Split::Test)?;
    let settings = settings(args, &cfg, model.has_classifier())?;
    let dir = cfg.system_dir().join(sub);
    let mut opts = EvalOptions::new(cfg.eval_seed(), &meta.system);
    opts.checkpoint_id = format!("{}@step{}", ckpt.display(), meta.step);
    opts.vocabulary_fingerprint = Some(meta.vocabulary_fingerprint.clone());
    if args.trace {
        fs::create_dir_all(&dir)?;
        opts.trace = Some(dir.join("trace.jsonl"));
    }
    Ok(EvalContext { cfg, model, test, settings, opts, dir })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ctx = eval_context(args, "eval")?;
    let report = evaluate(&ctx.model, &ctx.test, &ctx.cfg.conditions()?, &ctx.settings, &ctx.opts)?;
    snapshot(&ctx.cfg, &ctx.dir, "eval")?;
    report.write(&ctx.dir.join("report.jsonl"))?;
    let mut table = report.to_table();
    if ctx.model.has_classifier() {
        let cls = classifier_report(&ctx.model, &ctx.test, &ctx.cfg.evaluation.theta_grid, ctx.cfg.eval_seed())?;
        fs::write(ctx.dir.join("classifier.json"), serde_json::to_string_pretty(&cls)?)?;
        table.push('\n');
        table.push_str(&cls.to_table());
    }
    fs::write(ctx.dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_sweep(args: &EvalArgs) -> Result<()> {
    let ctx = eval_context(args, "sweep")?;
    let table: SweepTable =
        n_inactive_sweep(&ctx.model, &ctx.test, 1, &ctx.cfg.evaluation.n_inactive, &ctx.settings, &ctx.opts)?;
    snapshot(&ctx.cfg, &ctx.dir, "sweep")?;
    let csv = table.to_csv();
    fs::write(ctx.dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_compare(reports: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let loaded = reports.iter().map(|p| EvalReport::read(p)).collect::<Result<Vec<_>>>()?;
    let table = compare_reports(&loaded)?;
    if let Some(path) = out {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &table)?;
    }
    print!("{table}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Train(c) => cmd_train(c),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare { reports, out } => cmd_compare(reports, out.as_deref()),
    }
}

/// Entry point of the `tse` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
