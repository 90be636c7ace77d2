//! End-to-end orchestration: cohorts → folds → one model per target →
//! internal/external evaluation → attributions, with a run manifest.
//!
//! Output layout under the run directory:
//!
//! ```text
//! manifest.json
//! folds.csv
//! data/internal_cohort.csv        (synthetic sources only)
//! data/external_cohort.csv
//! targets/<code>/model.json
//! targets/<code>/history.json
//! targets/<code>/eval_internal.json, roc_internal.csv
//! targets/<code>/eval_external.json, roc_external.csv
//! targets/<code>/beeswarm.csv, shap_ranking.csv
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gbdt::{train, Dataset, ModelDocument, TrainHistory, TrainParams, TreeEnsemble};
use crate::ingest::{harmonize, parse_cohort_file, write_labeled_cohort, Harmonized, SourceTag};
use crate::metrics::{evaluate, write_roc_csv, EvalReport, DEFAULT_BOOTSTRAP_ITERATIONS};
use crate::rng::{mix64, stream_seed};
use crate::schema::{FeatureSchema, LabeledCohort, TargetCode};
use crate::shap::{explain_rows, shap_summary, write_beeswarm_csv, write_ranking_csv, FeatureImportance};
use crate::splits::{assign_folds, write_folds, FoldPlan, DEFAULT_N_FOLDS};
use crate::synth::{generate, SynthSpec};

pub const TOOL_NAME: &str = "ecgliver";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    MimicLike,
    EcgViewLike,
}

impl Preset {
    pub fn spec(self, n_samples: usize, seed: u64) -> SynthSpec {
        match self {
            Preset::MimicLike => SynthSpec::mimic_like(n_samples, seed),
            Preset::EcgViewLike => SynthSpec::ecg_view_like(n_samples, seed),
        }
    }
}

/// Where a cohort comes from: a cohort file, a synthetic preset, or a
/// synthetic spec file. Exactly one of `path`, `preset`, `spec` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CohortSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    /// Overrides the synthetic sample count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    /// Overrides the synthetic seed (otherwise derived from the run seed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CohortSource {
    pub fn preset(preset: Preset, n_samples: usize) -> Self {
        Self {
            preset: Some(preset),
            n_samples: Some(n_samples),
            ..Self::default()
        }
    }

    fn check(&self, which: &str) -> Result<()> {
        let set = [self.path.is_some(), self.preset.is_some(), self.spec.is_some()];
        if set.iter().filter(|&&b| b).count() != 1 {
            bail!("{which} cohort: set exactly one of path, preset, spec");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExplainSplit {
    /// The internal test fold.
    #[default]
    InternalTest,
    /// The whole external cohort.
    External,
}

fn default_n_folds() -> usize {
    DEFAULT_N_FOLDS
}

fn default_targets() -> Vec<TargetCode> {
    TargetCode::canonical_set()
}

fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_folds")]
    pub n_folds: usize,
    #[serde(default = "default_targets")]
    pub targets: Vec<TargetCode>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_iterations: usize,
    #[serde(default)]
    pub explain: ExplainSplit,
    pub internal: CohortSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<CohortSource>,
    #[serde(default)]
    pub train: TrainParams,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Synthetic internal and external cohorts of `n_samples` each.
    pub fn synthetic(n_samples: usize, seed: u64) -> Self {
        Self {
            seed,
            n_folds: DEFAULT_N_FOLDS,
            targets: default_targets(),
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            explain: ExplainSplit::InternalTest,
            internal: CohortSource::preset(Preset::MimicLike, n_samples),
            external: Some(CohortSource::preset(Preset::EcgViewLike, n_samples)),
            train: TrainParams::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).context("parsing run config")?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.internal.check("internal")?;
        if let Some(e) = &self.external {
            e.check("external")?;
        }
        if self.targets.is_empty() {
            bail!("no targets configured");
        }
        if self.bootstrap_iterations == 0 {
            bail!("bootstrap_iterations must be positive");
        }
        FoldPlan::new(self.n_folds, 0)?;
        self.train.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the serialized config.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn fold_seed(&self) -> u64 {
        stream_seed(self.seed, 1)
    }

    fn synth_seed(&self, tag: SourceTag) -> u64 {
        stream_seed(self.seed, if tag == SourceTag::Internal { 2 } else { 3 })
    }

    /// Bootstrap seed for one target on one dataset.
    pub fn bootstrap_seed(&self, target: &TargetCode, tag: SourceTag) -> u64 {
        let code = target.as_str().bytes().fold(0u64, |h, b| mix64(h ^ b as u64));
        stream_seed(self.seed, code ^ if tag == SourceTag::Internal { 0 } else { 1 })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// Writes `bytes` to `root/rel`, creating parent directories.
pub fn write_artifact(root: &Path, rel: &str, bytes: &[u8]) -> Result<ArtifactRef> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(ArtifactRef {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub source: SourceTag,
    /// Input cohort file (or the generated one for synthetic sources).
    pub file: ArtifactRef,
    pub synthetic: bool,
    pub n_records: usize,
    pub n_rejected: usize,
    pub n_out_of_range: usize,
    /// Target code → prevalence.
    pub prevalence: BTreeMap<String, f64>,
}

pub struct LoadedCohort {
    pub cohort: LabeledCohort,
    pub summary: CohortSummary,
}

fn summarize(h: &Harmonized, n_rejected_parse: usize, file: ArtifactRef, synthetic: bool) -> CohortSummary {
    CohortSummary {
        source: h.source,
        file,
        synthetic,
        n_records: h.cohort.len(),
        n_rejected: n_rejected_parse + h.rejections.len(),
        n_out_of_range: h.range_log.total(),
        prevalence: h
            .cohort
            .targets
            .iter()
            .enumerate()
            .map(|(t, c)| (c.to_string(), h.cohort.prevalence(t)))
            .collect(),
    }
}

/// Loads or generates one cohort and derives labels for `cfg.targets`.
/// Generated cohorts are written to `out/data/<tag>_cohort.csv`.
pub fn load_cohort(cfg: &RunConfig, source: &CohortSource, tag: SourceTag, out: &Path) -> Result<LoadedCohort> {
    let synth_spec = if let Some(preset) = source.preset {
        Some(preset.spec(
            source.n_samples.unwrap_or(100_000),
            source.seed.unwrap_or_else(|| cfg.synth_seed(tag)),
        ))
    } else if let Some(spec) = &source.spec {
        let path = cfg.resolve(spec);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = SynthSpec::from_toml(&text)?;
        if let Some(n) = source.n_samples {
            s.n_samples = n;
        }
        if let Some(seed) = source.seed {
            s.seed = seed;
        }
        Some(s)
    } else {
        None
    };

    if let Some(spec) = synth_spec {
        let synth = generate(&spec)?;
        let mut bytes = Vec::new();
        synth.write_csv(&mut bytes)?;
        let file = write_artifact(out, &format!("data/{tag}_cohort.csv"), &bytes)?;
        let h = harmonize(&synth.records, tag, &cfg.targets)?;
        let summary = summarize(&h, 0, file, true);
        return Ok(LoadedCohort {
            cohort: h.cohort,
            summary,
        });
    }

    let path = cfg.resolve(source.path.as_ref().expect("checked source"));
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_cohort_file(bytes.as_slice(), tag)?;
    let h = harmonize(&parsed.records, tag, &cfg.targets)?;
    let file = ArtifactRef {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    let summary = summarize(&h, parsed.rejections.len(), file, false);
    Ok(LoadedCohort {
        cohort: h.cohort,
        summary,
    })
}

/// Trains one target on the training folds with early stopping on the
/// validation fold.
pub fn train_target(
    cohort: &LabeledCohort,
    target: &TargetCode,
    params: &TrainParams,
) -> Result<(TreeEnsemble, TrainHistory)> {
    let t = cohort
        .target_index(target)
        .with_context(|| format!("cohort has no labels for {target}"))?;
    let plan = FoldPlan::new(cohort.n_folds, 0)?;
    let train_rows = cohort.rows_in_folds(&plan.train_folds());
    let val_rows = cohort.rows_in_folds(&[plan.val_fold()]);
    let tr = Dataset::from_cohort(cohort, &train_rows, t);
    let va = Dataset::from_cohort(cohort, &val_rows, t);
    Ok(train(&tr, &va, target, &cohort.schema, params)?)
}

/// Rows of the internal test fold.
pub fn test_rows(cohort: &LabeledCohort) -> Result<Vec<usize>> {
    let plan = FoldPlan::new(cohort.n_folds, 0)?;
    Ok(cohort.rows_in_folds(&[plan.test_fold()]))
}

pub fn evaluate_rows(
    model: &TreeEnsemble,
    cohort: &LabeledCohort,
    rows: &[usize],
    target: &TargetCode,
    tag: SourceTag,
    n_iter: usize,
    seed: u64,
) -> Result<EvalReport> {
    let t = cohort
        .target_index(target)
        .with_context(|| format!("cohort has no labels for {target}"))?;
    let scores = model.predict_cohort(cohort, rows)?;
    let labels: Vec<bool> = rows.iter().map(|&i| cohort.labels.get(i, t)).collect();
    evaluate(target, tag, &scores, &labels, n_iter, seed).with_context(|| format!("{target}: {tag} evaluation"))
}

pub struct Explanation {
    pub beeswarm_csv: Vec<u8>,
    pub ranking_csv: Vec<u8>,
    pub ranking: Vec<FeatureImportance>,
}

pub fn explain_cohort_rows(
    model: &TreeEnsemble,
    cohort: &LabeledCohort,
    rows: &[usize],
    target: &TargetCode,
) -> Result<Explanation> {
    model.check_schema(&cohort.schema)?;
    let dense: Vec<Vec<f64>> = rows.iter().map(|&i| cohort.samples[i].to_dense().to_vec()).collect();
    let matrix = explain_rows(model, &dense, target)?;
    let names = cohort.schema.names();
    let summary = shap_summary(&matrix, &dense, &names)?;
    let ids: Vec<String> = rows.iter().map(|&i| cohort.record_ids[i].clone()).collect();
    let beeswarm_csv = csv_bytes(|b| Ok(write_beeswarm_csv(target, &ids, &summary, b)?))?;
    let ranking_csv = csv_bytes(|b| Ok(write_ranking_csv(&summary, b)?))?;
    Ok(Explanation {
        beeswarm_csv,
        ranking_csv,
        ranking: summary.ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub target: TargetCode,
    pub status: TargetStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub internal: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<EvalReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub shap_ranking: Vec<FeatureImportance>,
    /// Artifact name → file reference.
    pub artifacts: BTreeMap<String, ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub fold_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub load_secs: f64,
    pub split_secs: f64,
    /// Target code → seconds spent on that target.
    pub targets_secs: BTreeMap<String, f64>,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seeds: Seeds,
    pub n_folds: usize,
    pub schema_fingerprint: String,
    pub internal: CohortSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external: Option<CohortSummary>,
    pub folds: ArtifactRef,
    pub targets: Vec<TargetEntry>,
    /// Wall-clock only; the one part of the manifest that varies between
    /// identical runs.
    pub timings: Timings,
}

impl RunManifest {
    pub fn n_failed(&self) -> usize {
        self.targets.iter().filter(|t| t.status == TargetStatus::Failed).count()
    }

    /// 0 when every target succeeded, 2 when at least one failed.
    pub fn exit_code(&self) -> i32 {
        if self.n_failed() == 0 {
            0
        } else {
            2
        }
    }

    /// Checks that every referenced artifact under `root` exists with the
    /// recorded digest.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let mut refs = vec![&self.folds];
        for c in std::iter::once(&self.internal).chain(self.external.as_ref()) {
            if c.synthetic {
                refs.push(&c.file);
            }
        }
        refs.extend(self.targets.iter().flat_map(|t| t.artifacts.values()));
        for r in refs {
            let bytes = fs::read(root.join(&r.path)).with_context(|| format!("missing artifact {}", r.path))?;
            if sha256_hex(&bytes) != r.sha256 {
                bail!("digest mismatch for {}", r.path);
            }
        }
        Ok(())
    }
}

struct RunContext<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    internal: &'a LabeledCohort,
    external: Option<&'a LabeledCohort>,
}

fn run_target(ctx: &RunContext<'_>, target: &TargetCode, entry: &mut TargetEntry) -> Result<()> {
    let cfg = ctx.cfg;
    let dir = format!("targets/{target}");
    let (model, history) = train_target(ctx.internal, target, &cfg.train)?;
    entry.n_trees = Some(model.trees.len());
    entry.best_val_auroc = Some(history.best_val_auroc);
    let doc = ModelDocument::new(target, &cfg.train, &model, &ctx.internal.schema);
    entry.artifacts.insert(
        "model".into(),
        write_artifact(ctx.out, &format!("{dir}/model.json"), doc.to_json()?.as_bytes())?,
    );
    entry.artifacts.insert(
        "history".into(),
        write_artifact(ctx.out, &format!("{dir}/history.json"), &json_bytes(&history)?)?,
    );

    let test = test_rows(ctx.internal)?;
    let mut evals = vec![(SourceTag::Internal, ctx.internal, test.clone())];
    if let Some(ext) = ctx.external {
        evals.push((SourceTag::External, ext, (0..ext.len()).collect()));
    }
    for (tag, cohort, rows) in &evals {
        let report = evaluate_rows(
            &model,
            cohort,
            rows,
            target,
            *tag,
            cfg.bootstrap_iterations,
            cfg.bootstrap_seed(target, *tag),
        )?;
        entry.artifacts.insert(
            format!("eval_{tag}"),
            write_artifact(ctx.out, &format!("{dir}/eval_{tag}.json"), &json_bytes(&report)?)?,
        );
        let roc = csv_bytes(|b| Ok(write_roc_csv(&report.roc_points, b)?))?;
        entry.artifacts.insert(
            format!("roc_{tag}"),
            write_artifact(ctx.out, &format!("{dir}/roc_{tag}.csv"), &roc)?,
        );
        match tag {
            SourceTag::Internal => entry.internal = Some(report),
            SourceTag::External => entry.external = Some(report),
        }
    }

    let (cohort, rows) = match (cfg.explain, ctx.external) {
        (ExplainSplit::External, Some(ext)) => (ext, (0..ext.len()).collect()),
        (ExplainSplit::External, None) => bail!("explain = \"external\" needs an external cohort"),
        (ExplainSplit::InternalTest, _) => (ctx.internal, test),
    };
    let ex = explain_cohort_rows(&model, cohort, &rows, target)?;
    entry.artifacts.insert(
        "beeswarm".into(),
        write_artifact(ctx.out, &format!("{dir}/beeswarm.csv"), &ex.beeswarm_csv)?,
    );
    entry.artifacts.insert(
        "shap_ranking".into(),
        write_artifact(ctx.out, &format!("{dir}/shap_ranking.csv"), &ex.ranking_csv)?,
    );
    entry.shap_ranking = ex.ranking;
    Ok(())
}

/// Runs the whole experiment into `out` using at most `jobs` worker
/// threads (0 = all cores). Per-target failures are recorded in the
/// manifest; only cohort or fold errors abort the run.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunManifest> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    pool.install(|| run_in_pool(cfg, out))
}

fn run_in_pool(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let internal = load_cohort(cfg, &cfg.internal, SourceTag::Internal, out)?;
    let external = match &cfg.external {
        Some(src) => Some(load_cohort(cfg, src, SourceTag::External, out)?),
        None => None,
    };
    let load_secs = start.elapsed().as_secs_f64();
    info!(
        "loaded internal cohort ({} records){}",
        internal.summary.n_records,
        external
            .as_ref()
            .map(|e| format!(" and external cohort ({} records)", e.summary.n_records))
            .unwrap_or_default()
    );

    let split_start = Instant::now();
    let plan = FoldPlan::new(cfg.n_folds, cfg.fold_seed())?;
    let assignment = assign_folds(&internal.cohort, &plan)?;
    let cohort = internal.cohort.with_folds(assignment.fold_of, plan.n_folds)?;
    let folds_csv = csv_bytes(|b| Ok(write_folds(&cohort.record_ids, &cohort.fold_of, b)?))?;
    let folds = write_artifact(out, "folds.csv", &folds_csv)?;
    let split_secs = split_start.elapsed().as_secs_f64();
    info!("assigned {} folds over {} strata", plan.n_folds, assignment.n_strata);

    let ctx = RunContext {
        cfg,
        out,
        internal: &cohort,
        external: external.as_ref().map(|e| &e.cohort),
    };
    let results: Vec<(TargetEntry, f64)> = cfg
        .targets
        .par_iter()
        .map(|target| {
            let t0 = Instant::now();
            let mut entry = TargetEntry {
                target: target.clone(),
                status: TargetStatus::Ok,
                error: None,
                n_trees: None,
                best_val_auroc: None,
                internal: None,
                external: None,
                shap_ranking: Vec::new(),
                artifacts: BTreeMap::new(),
            };
            if let Err(e) = run_target(&ctx, target, &mut entry) {
                warn!("{target}: {e:#}");
                entry.status = TargetStatus::Failed;
                entry.error = Some(format!("{e:#}"));
            } else {
                info!(
                    "{target}: internal AUROC {:.4}{}",
                    entry.internal.as_ref().map_or(f64::NAN, |r| r.auroc),
                    entry
                        .external
                        .as_ref()
                        .map(|r| format!(", external AUROC {:.4}", r.auroc))
                        .unwrap_or_default()
                );
            }
            (entry, t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut timings = Timings {
        load_secs,
        split_secs,
        ..Timings::default()
    };
    let mut targets = Vec::with_capacity(results.len());
    for (entry, secs) in results {
        timings.targets_secs.insert(entry.target.to_string(), secs);
        targets.push(entry);
    }
    timings.total_secs = start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        tool: TOOL_NAME.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_digest: cfg.digest(),
        seeds: Seeds {
            seed: cfg.seed,
            fold_seed: plan.seed,
        },
        n_folds: plan.n_folds,
        schema_fingerprint: FeatureSchema::canonical().fingerprint(),
        internal: internal.summary,
        external: external.map(|e| e.summary),
        folds,
        targets,
        timings,
    };
    write_artifact(out, "manifest.json", &json_bytes(&manifest)?)?;
    Ok(manifest)
}

/// Writes a labeled cohort (features, labels, folds) to bytes.
pub fn labeled_cohort_bytes(cohort: &LabeledCohort) -> Result<Vec<u8>> {
    csv_bytes(|b| Ok(write_labeled_cohort(cohort, b)?))
}
