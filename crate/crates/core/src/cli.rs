//! Command-line front end: `texswap <subcommand>`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::datasets::{build_biased_dataset, write_digit_source, DatasetKind, DatasetManifest, Split};
use crate::downstream::{render_chart, run_debias_experiment, ArmSpec, ExperimentReport, REPORT_CHART};
use crate::error::{Error, IoContext};
use crate::trainer::{build_augmented_dataset, train_translator, AblationMode};

/// Texture translation between bias groups and debiasing experiments.
#[derive(Debug, Parser)]
#[command(name = "texswap", version)]
#[command(after_help = "Config keys can be overridden with TEXSWAP_<SECTION>__<KEY>=value, \
e.g. TEXSWAP_TRANSLATOR__STEPS=500.\nExit codes: 0 success, 1 runtime failure, 2 usage or config error.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a biased dataset (train/val/test manifests) from a digit source.
    BuildData(BuildDataArgs),
    /// Train the texture translator on a dataset's training split.
    TrainTranslator(TrainArgs),
    /// Translate every training image toward the other bias group.
    Augment(AugmentArgs),
    /// Train classifiers per arm and score them on the inverted test split.
    Experiment(ExperimentArgs),
    /// Re-render the chart and summary of a saved experiment report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    /// Digit source: one sub-directory per digit holding grayscale PNGs.
    #[arg(long, value_name = "DIR")]
    pub source: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Dataset layout [default: data.dataset = five_six]
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Training images per class [default: data.per_class = 500]
    #[arg(long, value_name = "N")]
    pub per_class: Option<usize>,
    /// Seed for splitting and colorization [default: data.seed = 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Render synthetic stroke digits into --source first.
    #[arg(long)]
    pub render_source: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by build-data.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Run directory for checkpoints, metrics and panels.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Loss ablation [default: translator.ablation = full]
    #[arg(long, value_enum)]
    pub ablation: Option<AblationMode>,
    /// Total training steps [default: translator.steps = 20000]
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    /// Training seed [default: translator.seed = 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Continue from this checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Translator checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Dataset directory whose training split is translated.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory of the augmented dataset.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Seed for drawing texture references [default: experiment.augment_seed = 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Dataset directory produced by build-data.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory for report.json and report.png.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Augmented arm as NAME=DIR; repeatable.
    #[arg(long = "arm", value_name = "NAME=DIR")]
    pub arms: Vec<String>,
    /// Name of the arm trained on the original split alone.
    #[arg(long, value_name = "NAME", default_value = "baseline")]
    pub baseline: String,
    /// First classifier seed; the run uses as many consecutive seeds as
    /// classifier.seeds lists [default: classifier.seeds = [0, 1, 2]]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Concurrent classifier trainings [default: experiment.jobs = 1]
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json written by experiment.
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// Directory for the re-rendered chart [default: the report's directory]
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn ensure_writable(dir: &Path, force: bool) -> CmdResult {
    let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(Failure::Usage(format!(
            "{} is not empty; pass --force to write into it",
            dir.display()
        )));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Usage(e.to_string()),
        other => other.into(),
    })
}

fn build_data(args: BuildDataArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(d) = args.dataset {
        cfg.data.dataset = d;
    }
    if let Some(n) = args.per_class {
        cfg.data.per_class = n;
    }
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    cfg.validate()?;
    ensure_writable(&args.out, args.common.force)?;
    if args.render_source {
        let needed = 2 * cfg.data.per_class + (cfg.data.per_class / 10).max(1);
        write_digit_source(&args.source, needed, cfg.data.seed)?;
    }
    let manifests = build_biased_dataset(
        cfg.data.dataset,
        &args.source,
        &args.out,
        cfg.data.per_class,
        cfg.data.seed,
    )?;
    cfg.echo(&args.out)?;
    for m in &manifests {
        let per_domain: Vec<usize> = (0..m.meta.num_domains)
            .map(|b| m.records.iter().filter(|r| r.b == b).count())
            .collect();
        let _ = writeln!(
            out,
            "{:<5} {:>6} images, per bias group {:?}",
            m.split,
            m.len(),
            per_domain
        );
    }
    let _ = writeln!(out, "{}", args.out.display());
    Ok(())
}

fn train(args: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(a) = args.ablation {
        cfg.translator.ablation = a;
    }
    if let Some(s) = args.steps {
        cfg.translator.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.translator.seed = s;
    }
    cfg.validate()?;
    if args.resume.is_none() {
        ensure_writable(&args.out, args.common.force)?;
    }
    let train = DatasetManifest::load(&args.data, Split::Train)?;
    let val = DatasetManifest::load(&args.data, Split::Val)?;
    cfg.echo(&args.out)?;
    let started = std::time::Instant::now();
    let outcome = train_translator(&cfg.translator, &train, &val, &args.out, args.resume.as_deref())?;
    let secs = started.elapsed().as_secs_f64();
    let _ = writeln!(
        out,
        "{} steps in {secs:.1}s, ablation {}",
        outcome.steps_run, cfg.translator.ablation
    );
    let _ = writeln!(out, "{}", outcome.checkpoint.display());
    Ok(())
}

fn augment(args: AugmentArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.experiment.augment_seed = s;
    }
    cfg.validate()?;
    ensure_writable(&args.out, args.common.force)?;
    let train = DatasetManifest::load(&args.data, Split::Train)?;
    let (augmented, _) = build_augmented_dataset(&args.checkpoint, &train, &args.out, cfg.experiment.augment_seed)?;
    cfg.echo(&args.out)?;
    let _ = writeln!(out, "{} translated images", augmented.len());
    let _ = writeln!(out, "{}", augmented.manifest_path().display());
    Ok(())
}

fn parse_arm(spec: &str) -> std::result::Result<ArmSpec, Failure> {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok(ArmSpec::augmented(name, dir)),
        _ => Err(Failure::Usage(format!("--arm expects NAME=DIR, got `{spec}`"))),
    }
}

fn experiment(args: ExperimentArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        let n = cfg.classifier.seeds.len() as u64;
        cfg.classifier.seeds = (s..s + n).collect();
    }
    if let Some(j) = args.jobs {
        cfg.experiment.jobs = j;
    }
    cfg.validate()?;
    let mut arms = vec![ArmSpec::baseline(&args.baseline)];
    for spec in &args.arms {
        arms.push(parse_arm(spec)?);
    }
    for arm in &arms {
        if let Some(dir) = &arm.augmented {
            if !dir.join(Split::Train.as_str()).is_dir() {
                return Err(Failure::Runtime(format!(
                    "arm {}: no augmented training split under {}",
                    arm.name,
                    dir.display()
                )));
            }
        }
    }
    ensure_writable(&args.out, args.common.force)?;
    let report = run_debias_experiment(&args.data, &arms, &cfg.classifier, cfg.experiment.jobs)?;
    cfg.echo(&args.out)?;
    let path = report.save(&args.out)?;
    let _ = write!(out, "{}", report.summary());
    let _ = writeln!(out, "{}", path.display());
    Ok(())
}

fn report(args: ReportArgs, out: &mut dyn Write) -> CmdResult {
    let report = ExperimentReport::load(&args.report)?;
    let dir = match args.out {
        Some(d) => d,
        None => args.report.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir).at(&dir)?;
    let chart = dir.join(REPORT_CHART);
    render_chart(&report).save(&chart).map_err(|source| Error::Image {
        path: chart.clone(),
        source,
    })?;
    let _ = write!(out, "{}", report.summary());
    let _ = writeln!(out, "{}", args.report.display());
    Ok(())
}

/// Parse `args` (including the program name), run the subcommand and return
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::BuildData(a) => build_data(a, out),
        Command::TrainTranslator(a) => train(a, out),
        Command::Augment(a) => augment(a, out),
        Command::Experiment(a) => experiment(a, out),
        Command::Report(a) => report(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}
