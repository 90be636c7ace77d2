//! Synthetic cohorts with Table-1-like marginals and planted label models.
//!
//! Each continuous feature is drawn from a two-parameter family fixed by
//! its median and IQR, clamped to a plausible range (clamping keeps the
//! quartiles) and rounded to 0.1. Labels follow a planted logistic model
//! per target, `logit = intercept + Σ β_f z_f` with
//! `z_f = (x_f − reference_median_f) / reference_iqr_f` and
//! `z_sex = sex − 0.5`; a missing feature contributes zero.
//!
//! Hierarchical targets are drawn top-down: a child is only drawn for
//! samples whose parent is positive, with probability
//! `p_child / p_parent`, so its marginal is exactly `sigmoid(logit_child)`
//! whenever that does not exceed the parent's probability.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::SynthError;
use crate::gbdt::sigmoid;
use crate::ingest::{write_cohort_file, RawRecord};
use crate::metrics::auroc;
use crate::rng::{stream_rng, stream_seed};
use crate::schema::{Feature, LabelMatrix, TargetCode};

/// Rows per generator stream.
pub const BLOCK_SIZE: usize = 4096;

/// Comorbidity codes sprinkled independently of the planted labels.
const NOISE_CODES: [&str; 10] = [
    "I10", "E11.9", "N17.9", "J18.9", "I48.91", "E78.5", "K74.60", "K76.0", "F10.20", "I50.9",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Scale `IQR / (2 ln 3)`.
    #[default]
    Logistic,
    /// Standard deviation `IQR / (2 Φ⁻¹(0.75))`.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMarginal {
    pub feature: Feature,
    pub median: f64,
    pub iqr: f64,
    #[serde(default)]
    pub family: Family,
    #[serde(default)]
    pub missing_rate: f64,
    /// Inclusive clamp range; must contain both quartiles.
    pub clamp: [f64; 2],
    /// Standardization center for the planted logits (defaults to `median`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_median: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_iqr: Option<f64>,
}

impl FeatureMarginal {
    fn quantile(&self, u: f64) -> f64 {
        match self.family {
            Family::Logistic => {
                let scale = self.iqr / (2.0 * 3f64.ln());
                self.median + scale * (u / (1.0 - u)).ln()
            }
            Family::Normal => {
                let n = Normal::standard();
                let sd = self.iqr / (2.0 * n.inverse_cdf(0.75));
                self.median + sd * n.inverse_cdf(u)
            }
        }
    }

    fn center(&self) -> f64 {
        self.reference_median.unwrap_or(self.median)
    }

    fn spread(&self) -> f64 {
        self.reference_iqr.unwrap_or(self.iqr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub code: TargetCode,
    pub intercept: f64,
    /// Feature name → coefficient per reference IQR (per unit for `sex`).
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
    pub female_share: f64,
    /// Probability that each comorbidity noise code is attached to a record.
    #[serde(default)]
    pub noise_code_rate: f64,
    /// The nine continuous features (eight ECG measurements and age).
    pub features: Vec<FeatureMarginal>,
    pub targets: Vec<PlantedModel>,
    /// Optional Gaussian-copula correlation over `features`, in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
}

fn default_id_prefix() -> String {
    "S".into()
}

/// Internal cohort marginals (median, IQR) in canonical feature order.
pub const MIMIC_LIKE_MARGINALS: [(Feature, f64, f64); 9] = [
    (Feature::RrInterval, 769.0, 264.0),
    (Feature::PrInterval, 158.0, 38.0),
    (Feature::QrsDuration, 94.0, 23.0),
    (Feature::QtInterval, 394.0, 68.0),
    (Feature::QtcInterval, 447.0, 47.0),
    (Feature::PAxis, 51.0, 32.0),
    (Feature::QrsAxis, 13.0, 61.0),
    (Feature::TAxis, 42.0, 58.0),
    (Feature::Age, 66.0, 25.0),
];

/// External cohort marginals (median, IQR) in canonical feature order.
pub const ECG_VIEW_LIKE_MARGINALS: [(Feature, f64, f64); 9] = [
    (Feature::RrInterval, 857.0, 227.0),
    (Feature::PrInterval, 158.0, 28.0),
    (Feature::QrsDuration, 90.0, 14.0),
    (Feature::QtInterval, 392.0, 48.0),
    (Feature::QtcInterval, 421.0, 37.0),
    (Feature::PAxis, 53.0, 28.0),
    (Feature::QrsAxis, 48.0, 49.0),
    (Feature::TAxis, 44.0, 33.0),
    (Feature::Age, 52.0, 25.0),
];

pub const MIMIC_LIKE_FEMALE_SHARE: f64 = 0.4850;
pub const ECG_VIEW_LIKE_FEMALE_SHARE: f64 = 0.4844;

fn default_clamp(feature: Feature) -> [f64; 2] {
    match feature {
        Feature::RrInterval => [250.0, 2500.0],
        Feature::PrInterval => [60.0, 400.0],
        Feature::QrsDuration => [40.0, 250.0],
        Feature::QtInterval => [200.0, 700.0],
        Feature::QtcInterval => [300.0, 700.0],
        Feature::PAxis | Feature::QrsAxis | Feature::TAxis => [-180.0, 180.0],
        Feature::Age => [18.0, 100.0],
        Feature::Sex => [0.0, 1.0],
    }
}

fn default_missing_rate(feature: Feature) -> f64 {
    match feature {
        Feature::PrInterval | Feature::PAxis => 0.01,
        _ => 0.0,
    }
}

fn coefficients(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

/// Planted models for the six canonical targets. QTc, age and sex carry
/// most of the signal; the K72 family leans on RR and T axis in the
/// opposite direction to K70 and is harder to predict.
fn default_targets(intercepts: [f64; 6]) -> Vec<PlantedModel> {
    let k70 = coefficients(&[
        ("qtc_interval", 1.35),
        ("age", -1.15),
        ("sex", 0.85),
        ("t_axis", -0.25),
        ("rr_interval", 0.2),
    ]);
    let k72 = coefficients(&[
        ("qtc_interval", 1.05),
        ("age", -0.85),
        ("sex", 0.65),
        ("t_axis", 0.3),
        ("rr_interval", -0.3),
    ]);
    TargetCode::canonical_set()
        .into_iter()
        .zip(intercepts)
        .map(|(code, intercept)| PlantedModel {
            coefficients: if code.as_str().starts_with("K70") {
                k70.clone()
            } else {
                k72.clone()
            },
            code,
            intercept,
        })
        .collect()
}

fn preset(
    marginals: &[(Feature, f64, f64); 9],
    female_share: f64,
    intercepts: [f64; 6],
    id_prefix: &str,
    n_samples: usize,
    seed: u64,
) -> SynthSpec {
    let features = marginals
        .iter()
        .zip(MIMIC_LIKE_MARGINALS.iter())
        .map(|(&(feature, median, iqr), &(_, ref_median, ref_iqr))| FeatureMarginal {
            feature,
            median,
            iqr,
            family: Family::Logistic,
            missing_rate: default_missing_rate(feature),
            clamp: default_clamp(feature),
            reference_median: Some(ref_median),
            reference_iqr: Some(ref_iqr),
        })
        .collect();
    SynthSpec {
        n_samples,
        seed,
        id_prefix: id_prefix.to_string(),
        female_share,
        noise_code_rate: 0.08,
        features,
        targets: default_targets(intercepts),
        correlation: None,
    }
}

impl SynthSpec {
    /// Internal-style cohort; prevalences ≈ 0.7–2.2%.
    pub fn mimic_like(n_samples: usize, seed: u64) -> Self {
        preset(
            &MIMIC_LIKE_MARGINALS,
            MIMIC_LIKE_FEMALE_SHARE,
            [-4.85, -5.36, -5.84, -4.81, -5.2, -5.72],
            "M",
            n_samples,
            seed,
        )
    }

    /// External-style cohort with the same planted effects (standardized
    /// on the internal marginals) and roughly tenfold lower prevalences.
    pub fn ecg_view_like(n_samples: usize, seed: u64) -> Self {
        preset(
            &ECG_VIEW_LIKE_MARGINALS,
            ECG_VIEW_LIKE_FEMALE_SHARE,
            [-5.78, -6.31, -7.02, -6.82, -7.74, -8.43],
            "E",
            n_samples,
            seed,
        )
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }

    pub fn target_codes(&self) -> Vec<TargetCode> {
        self.targets.iter().map(|t| t.code.clone()).collect()
    }

    /// Index of the nearest ancestor of each target among the spec targets.
    fn parents(&self) -> Vec<Option<usize>> {
        self.targets
            .iter()
            .map(|t| {
                self.targets
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.code != t.code && t.code.implies(&p.code))
                    .max_by_key(|(_, p)| p.code.as_str().len())
                    .map(|(i, _)| i)
            })
            .collect()
    }

    /// Targets ordered so that every parent precedes its children.
    fn draw_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.targets.len()).collect();
        order.sort_by_key(|&i| (self.targets[i].code.as_str().len(), i));
        order
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.female_share) {
            return bad("female_share must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.noise_code_rate) {
            return bad("noise_code_rate must lie in [0, 1]".into());
        }
        let mut expected: Vec<Feature> = Feature::ALL.iter().copied().filter(|&f| f != Feature::Sex).collect();
        let mut got: Vec<Feature> = self.features.iter().map(|m| m.feature).collect();
        expected.sort();
        got.sort();
        if got != expected {
            return bad("features must list each ECG measurement and age exactly once".into());
        }
        for m in &self.features {
            let name = m.feature.name();
            if !(m.iqr > 0.0 && m.iqr.is_finite()) || !m.median.is_finite() {
                return bad(format!("{name}: median must be finite and IQR positive"));
            }
            if !(0.0..1.0).contains(&m.missing_rate) {
                return bad(format!("{name}: missing_rate must lie in [0, 1)"));
            }
            if m.feature == Feature::Age && m.missing_rate > 0.0 {
                return bad("age cannot be missing".into());
            }
            if !(m.spread() > 0.0) {
                return bad(format!("{name}: reference IQR must be positive"));
            }
            let (q1, q3) = (m.quantile(0.25), m.quantile(0.75));
            if !(m.clamp[0] < q1 && q3 < m.clamp[1]) {
                return bad(format!("{name}: clamp range must contain both quartiles"));
            }
        }
        for t in &self.targets {
            for (name, beta) in &t.coefficients {
                if Feature::from_name(name).is_none() {
                    return bad(format!("{}: unknown feature {name:?}", t.code));
                }
                if !beta.is_finite() {
                    return bad(format!("{}: coefficient for {name} is not finite", t.code));
                }
            }
            if !t.intercept.is_finite() {
                return bad(format!("{}: intercept is not finite", t.code));
            }
        }
        let codes = self.target_codes();
        for (i, c) in codes.iter().enumerate() {
            if codes[..i].contains(c) {
                return bad(format!("duplicate target {c}"));
            }
        }
        for (i, parent) in self.parents().into_iter().enumerate() {
            if let Some(p) = parent {
                if self.targets[i].intercept > self.targets[p].intercept {
                    return Err(SynthError::InfeasibleHierarchy {
                        child: self.targets[i].code.clone(),
                        parent: self.targets[p].code.clone(),
                    });
                }
            }
        }
        if let Some(r) = &self.correlation {
            cholesky(r, self.features.len())?;
        }
        Ok(())
    }
}

/// Lower Cholesky factor of a correlation matrix.
fn cholesky(r: &[Vec<f64>], n: usize) -> Result<nalgebra::DMatrix<f64>, SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidSpec(format!("correlation: {m}")));
    if r.len() != n || r.iter().any(|row| row.len() != n) {
        return bad("matrix must match the feature count");
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| r[i][j]);
    for i in 0..n {
        if m[(i, i)] != 1.0 {
            return bad("diagonal must be 1");
        }
        for j in 0..i {
            if m[(i, j)] != m[(j, i)] || m[(i, j)].abs() > 1.0 {
                return bad("matrix must be symmetric with entries in [-1, 1]");
            }
        }
    }
    match m.cholesky() {
        Some(c) => Ok(c.l()),
        None => bad("matrix is not positive definite"),
    }
}

/// Generated cohort with the labels and true logits behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub records: Vec<RawRecord>,
    pub targets: Vec<TargetCode>,
    pub labels: LabelMatrix,
    /// `logits[t][i]`: planted logit of target `t` for record `i`.
    pub logits: Vec<Vec<f64>>,
}

impl SynthCohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prevalence(&self, target: usize) -> f64 {
        self.labels.positives(target) as f64 / self.len() as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SynthError> {
        Ok(write_cohort_file(&self.records, writer)?)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SynthError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// Compiled view of a validated spec.
struct Plan<'a> {
    spec: &'a SynthSpec,
    /// Canonical feature index of each marginal.
    columns: Vec<usize>,
    /// Dense coefficient rows over the canonical features.
    betas: Vec<[f64; 10]>,
    parents: Vec<Option<usize>>,
    order: Vec<usize>,
    chol: Option<nalgebra::DMatrix<f64>>,
    codes: Vec<String>,
}

impl<'a> Plan<'a> {
    fn new(spec: &'a SynthSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let betas = spec
            .targets
            .iter()
            .map(|t| {
                let mut b = [0.0; 10];
                for (name, beta) in &t.coefficients {
                    b[Feature::from_name(name).expect("validated").index()] = *beta;
                }
                b
            })
            .collect();
        let chol = match &spec.correlation {
            Some(r) => Some(cholesky(r, spec.features.len())?),
            None => None,
        };
        let codes = spec
            .targets
            .iter()
            .map(|t| emitted_code(&t.code, &spec.targets))
            .collect();
        Ok(Self {
            spec,
            columns: spec.features.iter().map(|m| m.feature.index()).collect(),
            betas,
            parents: spec.parents(),
            order: spec.draw_order(),
            chol,
            codes,
        })
    }

    fn uniforms(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let k = self.spec.features.len();
        match &self.chol {
            None => (0..k).map(|_| rng.sample(Open01)).collect(),
            Some(l) => {
                let z = nalgebra::DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let n = Normal::standard();
                (l * z)
                    .iter()
                    .map(|&v| n.cdf(v).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
                    .collect()
            }
        }
    }

    fn row(&self, index: usize, rng: &mut ChaCha8Rng) -> (RawRecord, Vec<bool>, Vec<f64>) {
        let spec = self.spec;
        let u = self.uniforms(rng);
        let mut dense = [None; 10];
        let mut z = [0.0; 10];
        for (k, m) in spec.features.iter().enumerate() {
            let x = m.quantile(u[k]).clamp(m.clamp[0], m.clamp[1]);
            let x = (x * 10.0).round() / 10.0;
            let missing = m.missing_rate > 0.0 && rng.random::<f64>() < m.missing_rate;
            if !missing {
                dense[self.columns[k]] = Some(x);
                z[self.columns[k]] = (x - m.center()) / m.spread();
            }
        }
        let female = rng.random::<f64>() < spec.female_share;
        let sex = if female { 0.0 } else { 1.0 };
        z[Feature::Sex.index()] = sex - 0.5;

        let n_t = spec.targets.len();
        let logits: Vec<f64> = (0..n_t)
            .map(|t| spec.targets[t].intercept + self.betas[t].iter().zip(&z).map(|(b, z)| b * z).sum::<f64>())
            .collect();
        let draws: Vec<f64> = (0..n_t).map(|_| rng.random::<f64>()).collect();
        let mut prob = vec![0.0; n_t];
        let mut labels = vec![false; n_t];
        for &t in &self.order {
            let p = sigmoid(logits[t]);
            match self.parents[t] {
                None => {
                    prob[t] = p;
                    labels[t] = draws[t] < p;
                }
                Some(parent) => {
                    prob[t] = p.min(prob[parent]);
                    labels[t] = labels[parent] && prob[parent] > 0.0 && draws[t] < prob[t] / prob[parent];
                }
            }
        }

        let mut icd_codes: Vec<String> = (0..n_t)
            .filter(|&t| labels[t] && !(0..n_t).any(|c| self.parents[c] == Some(t) && labels[c]))
            .map(|t| self.codes[t].clone())
            .collect();
        for code in NOISE_CODES {
            if rng.random::<f64>() < spec.noise_code_rate {
                icd_codes.push(code.to_string());
            }
        }

        let ecg = std::array::from_fn(|k| dense[Feature::ECG[k].index()]);
        let record = RawRecord {
            record_id: format!("{}{:07}", spec.id_prefix, index),
            age: dense[Feature::Age.index()].expect("age is never missing"),
            sex: if female { "F" } else { "M" }.to_string(),
            ecg,
            icd_codes,
        };
        (record, labels, logits)
    }
}

/// Dotted code recorded for a sample whose deepest positive target is
/// `code`: a three-character code gains a fourth character that no other
/// spec target starts with, so the label is carried only by prefix.
fn emitted_code(code: &TargetCode, targets: &[PlantedModel]) -> String {
    let c = code.as_str();
    let clashes = |candidate: &str| {
        targets
            .iter()
            .map(|t| t.code.as_str())
            .any(|other| !c.starts_with(other) && (candidate.starts_with(other) || other.starts_with(candidate)))
    };
    let full = if c.len() >= 5 {
        c.to_string()
    } else {
        ['1', '0', '2', '3', '4', '5', '6', '7', '8', '9']
            .iter()
            .map(|d| format!("{c}{d}"))
            .find(|cand| !clashes(cand))
            .unwrap_or_else(|| c.to_string())
    };
    if full.len() > 3 {
        format!("{}.{}", &full[..3], &full[3..])
    } else {
        full
    }
}

type DrawnRow = (RawRecord, Vec<bool>, Vec<f64>);

/// Draws `spec.n_samples` records. Rows are generated in blocks of
/// [`BLOCK_SIZE`], block `b` from stream `b` of `spec.seed`, so the output
/// does not depend on thread scheduling.
pub fn generate(spec: &SynthSpec) -> Result<SynthCohort, SynthError> {
    let plan = Plan::new(spec)?;
    let n = spec.n_samples;
    let n_blocks = n.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Vec<DrawnRow>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(spec.seed, b as u64);
            (b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n))
                .map(|i| plan.row(i, &mut rng))
                .collect()
        })
        .collect();

    let n_t = spec.targets.len();
    let mut records = Vec::with_capacity(n);
    let mut labels = LabelMatrix::zeros(n, n_t);
    let mut logits = vec![Vec::with_capacity(n); n_t];
    for (i, (rec, lab, lg)) in blocks.into_iter().flatten().enumerate() {
        records.push(rec);
        labels.row_mut(i).copy_from_slice(&lab);
        for (t, v) in lg.into_iter().enumerate() {
            logits[t].push(v);
        }
    }
    Ok(SynthCohort {
        records,
        targets: spec.target_codes(),
        labels,
        logits,
    })
}

/// AUROC of the planted logit on a fresh draw of `n` samples. A
/// single-class draw is redrawn once with a derived seed.
pub fn oracle_bayes_auroc(spec: &SynthSpec, target: &TargetCode, n: usize) -> Result<f64, SynthError> {
    let t = spec
        .targets
        .iter()
        .position(|m| &m.code == target)
        .ok_or_else(|| SynthError::InvalidSpec(format!("no planted model for {target}")))?;
    for attempt in 0..2u64 {
        let mut s = spec.clone();
        s.n_samples = n;
        if attempt > 0 {
            s.seed = stream_seed(spec.seed, 0x0dac1e);
        }
        let cohort = generate(&s)?;
        let labels = cohort.labels.column(t);
        if labels.iter().any(|&y| y) && labels.iter().any(|&y| !y) {
            return Ok(auroc(&cohort.logits[t], &labels)?);
        }
    }
    Err(SynthError::DegenerateDraw(target.clone()))
}
