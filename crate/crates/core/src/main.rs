use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use ecg_liver::gbdt::ModelDocument;
use ecg_liver::ingest::{harmonize, parse_cohort_file, read_labeled_cohort, SourceTag};
use ecg_liver::metrics::write_roc_csv;
use ecg_liver::pipeline::{
    evaluate_rows, explain_cohort_rows, labeled_cohort_bytes, run_pipeline, test_rows, train_target, write_artifact,
    Preset, RunConfig,
};
use ecg_liver::schema::{LabeledCohort, TargetCode};
use ecg_liver::splits::{assign_folds, write_folds, FoldPlan};
use ecg_liver::synth::{generate, SynthSpec};

/// Liver disease classification from ECG features.
#[derive(Debug, Parser)]
#[command(name = "ecgliver", version)]
struct Cli {
    /// Run seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run config (TOML). Without it a synthetic default is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    MimicLike,
    EcgViewLike,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Internal,
    External,
}

impl From<SourceArg> for SourceTag {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Internal => SourceTag::Internal,
            SourceArg::External => SourceTag::External,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq)]
enum SplitArg {
    /// The test fold of a split cohort.
    Test,
    /// Every record (external validation).
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort file (<out>/cohort.csv).
    Synth {
        #[arg(long, value_enum, conflicts_with = "spec")]
        preset: Option<PresetArg>,
        /// Synthetic spec file (TOML).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Parse and harmonize a cohort file into <out>/labeled.csv.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "internal")]
        source: SourceArg,
        /// Comma-separated target codes (default: config targets).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
    },
    /// Assign stratified folds: <out>/folds.csv and <out>/labeled.csv.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        n_folds: Option<usize>,
    },
    /// Train one target on a split cohort.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: String,
    },
    /// Evaluate a model: AUROC, bootstrap interval and ROC points.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "internal")]
        source: SourceArg,
    },
    /// TreeSHAP attributions and beeswarm export.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// The full experiment described by the config.
    Run,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::synthetic(100_000, 0),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read_labeled(path: &Path) -> Result<LabeledCohort> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_labeled_cohort(std::io::BufReader::new(f))?)
}

fn read_model(path: &Path) -> Result<ModelDocument> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ModelDocument::from_json(&text)?)
}

fn rows_for(cohort: &LabeledCohort, split: SplitArg) -> Result<Vec<usize>> {
    match split {
        SplitArg::All => Ok((0..cohort.len()).collect()),
        SplitArg::Test => {
            if cohort.n_folds < 3 {
                bail!("cohort has no folds; run `split` first or use --split all");
            }
            test_rows(cohort)
        }
    }
}

fn json(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn execute(cli: &Cli) -> Result<i32> {
    let out = &cli.out;
    match &cli.command {
        Command::Synth { preset, spec, n } => {
            let mut s = match (preset, spec) {
                (_, Some(path)) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    SynthSpec::from_toml(&text)?
                }
                (Some(PresetArg::EcgViewLike), None) => Preset::EcgViewLike.spec(100_000, 0),
                _ => Preset::MimicLike.spec(100_000, 0),
            };
            if let Some(n) = n {
                s.n_samples = *n;
            }
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let cohort = generate(&s)?;
            let mut bytes = Vec::new();
            cohort.write_csv(&mut bytes)?;
            write_artifact(out, "cohort.csv", &bytes)?;
            write_artifact(out, "synth_spec.toml", s.to_toml().as_bytes())?;
            for (t, code) in cohort.targets.iter().enumerate() {
                info!("{code}: prevalence {:.4}", cohort.prevalence(t));
            }
            info!("wrote {} records to {}", cohort.len(), out.join("cohort.csv").display());
        }
        Command::Ingest { input, source, targets } => {
            let cfg = load_config(cli)?;
            let targets = if targets.is_empty() {
                cfg.targets.clone()
            } else {
                targets.iter().map(|t| TargetCode::new(t)).collect::<Result<_, _>>()?
            };
            let f = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
            let tag = SourceTag::from(*source);
            let parsed = parse_cohort_file(std::io::BufReader::new(f), tag)?;
            let h = harmonize(&parsed.records, tag, &targets)?;
            write_artifact(out, "labeled.csv", &labeled_cohort_bytes(&h.cohort)?)?;
            let mut wtr = csv::Writer::from_writer(Vec::new());
            wtr.write_record(["stage", "row", "record_id", "reason"])?;
            for (stage, r) in parsed
                .rejections
                .iter()
                .map(|r| ("parse", r))
                .chain(h.rejections.iter().map(|r| ("harmonize", r)))
            {
                wtr.write_record([
                    stage,
                    &r.row.to_string(),
                    r.record_id.as_deref().unwrap_or(""),
                    &r.reason,
                ])?;
            }
            write_artifact(out, "rejections.csv", &wtr.into_inner()?)?;
            info!(
                "{} records kept, {} rejected, {} out-of-range values set missing",
                h.cohort.len(),
                parsed.rejections.len() + h.rejections.len(),
                h.range_log.total()
            );
        }
        Command::Split { input, n_folds } => {
            let cfg = load_config(cli)?;
            let cohort = read_labeled(input)?;
            let plan = FoldPlan::new(n_folds.unwrap_or(cfg.n_folds), cfg.fold_seed())?;
            let a = assign_folds(&cohort, &plan)?;
            let cohort = cohort.with_folds(a.fold_of, plan.n_folds)?;
            let mut folds = Vec::new();
            write_folds(&cohort.record_ids, &cohort.fold_of, &mut folds)?;
            write_artifact(out, "folds.csv", &folds)?;
            write_artifact(out, "labeled.csv", &labeled_cohort_bytes(&cohort)?)?;
            info!("{} folds over {} strata", plan.n_folds, a.n_strata);
        }
        Command::Train { input, target } => {
            let cfg = load_config(cli)?;
            let target = TargetCode::new(target)?;
            let cohort = read_labeled(input)?;
            if cohort.n_folds < 3 {
                bail!("cohort has no folds; run `split` first");
            }
            let (model, history) = train_target(&cohort, &target, &cfg.train)?;
            let doc = ModelDocument::new(&target, &cfg.train, &model, &cohort.schema);
            write_artifact(out, &format!("targets/{target}/model.json"), doc.to_json()?.as_bytes())?;
            write_artifact(out, &format!("targets/{target}/history.json"), &json(&history)?)?;
            info!(
                "{target}: {} trees, best validation AUROC {:.4}",
                model.trees.len(),
                history.best_val_auroc
            );
        }
        Command::Eval {
            model,
            input,
            split,
            source,
        } => {
            let cfg = load_config(cli)?;
            let doc = read_model(model)?;
            let ensemble = doc.ensemble()?;
            let cohort = read_labeled(input)?;
            let rows = rows_for(&cohort, *split)?;
            let tag = SourceTag::from(*source);
            let seed = cfg.bootstrap_seed(&doc.target, tag);
            let report = evaluate_rows(
                &ensemble,
                &cohort,
                &rows,
                &doc.target,
                tag,
                cfg.bootstrap_iterations,
                seed,
            )?;
            let dir = format!("targets/{}", doc.target);
            write_artifact(out, &format!("{dir}/eval_{tag}.json"), &json(&report)?)?;
            let mut roc = Vec::new();
            write_roc_csv(&report.roc_points, &mut roc)?;
            write_artifact(out, &format!("{dir}/roc_{tag}.csv"), &roc)?;
            info!(
                "{} ({tag}): AUROC {:.4} [{:.4}, {:.4}], prevalence {:.4}",
                doc.target, report.auroc, report.interval_95.0, report.interval_95.1, report.prevalence
            );
        }
        Command::Explain { model, input, split } => {
            let doc = read_model(model)?;
            let ensemble = doc.ensemble()?;
            let cohort = read_labeled(input)?;
            let rows = rows_for(&cohort, *split)?;
            let ex = explain_cohort_rows(&ensemble, &cohort, &rows, &doc.target)?;
            let dir = format!("targets/{}", doc.target);
            write_artifact(out, &format!("{dir}/beeswarm.csv"), &ex.beeswarm_csv)?;
            write_artifact(out, &format!("{dir}/shap_ranking.csv"), &ex.ranking_csv)?;
            for r in ex.ranking.iter().take(5) {
                info!(
                    "{}: #{} {} (mean |SHAP| {:.4})",
                    doc.target, r.rank, r.feature, r.mean_abs_shap
                );
            }
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let manifest = run_pipeline(&cfg, out, cli.jobs)?;
            for t in &manifest.targets {
                match (&t.internal, &t.error) {
                    (Some(r), _) => info!("{}: internal AUROC {:.4}", t.target, r.auroc),
                    (None, Some(e)) => error!("{}: {e}", t.target),
                    (None, None) => {}
                }
            }
            info!("manifest written to {}", out.join("manifest.json").display());
            return Ok(manifest.exit_code());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if !matches!(cli.command, Command::Run) && cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            error!("{e}");
        }
    }
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
