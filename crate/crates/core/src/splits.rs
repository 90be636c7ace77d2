//! Deterministic stratified fold assignment for the 18:1:1
//! train/validation/test protocol.
//!
//! Samples are grouped by (label bits, age quartile, sex). Each stratum is
//! shuffled with a generator seeded from the plan seed and the stratum key,
//! then dealt round-robin across folds. The dealing position carries over
//! from one stratum to the next, so fold sizes differ by at most one.
//! Strata smaller than the fold count are pooled into a fallback stratum
//! keyed by (any positive label, sex); inside the pool samples are grouped
//! by their original key after shuffling so each sub-group is still dealt
//! contiguously.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SplitError;
use crate::metrics::quantile_sorted;
use crate::rng::{mix64, stream_seed};
use crate::schema::{Feature, LabeledCohort};

pub const DEFAULT_N_FOLDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
}

impl FoldPlan {
    /// `n_folds - 2` training folds, then one validation and one test fold.
    pub fn new(n_folds: usize, seed: u64) -> Result<Self, SplitError> {
        if n_folds < 3 {
            return Err(SplitError::TooFewFolds(n_folds));
        }
        Ok(Self { n_folds, seed })
    }

    /// 20 folds: 0..=17 train, 18 validation, 19 test.
    pub fn standard(seed: u64) -> Self {
        Self {
            n_folds: DEFAULT_N_FOLDS,
            seed,
        }
    }

    pub fn train_folds(&self) -> Vec<usize> {
        (0..self.n_folds - 2).collect()
    }

    pub fn val_fold(&self) -> usize {
        self.n_folds - 2
    }

    pub fn test_fold(&self) -> usize {
        self.n_folds - 1
    }
}

/// Empirical age quartile boundaries (linear interpolation between order
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeQuartiles(pub [f64; 3]);

impl AgeQuartiles {
    pub fn from_cohort(cohort: &LabeledCohort) -> Self {
        let ages: Vec<f64> = cohort.samples.iter().filter_map(|v| v.get(Feature::Age)).collect();
        Self::from_values(&ages)
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self([
            quantile_sorted(&sorted, 0.25),
            quantile_sorted(&sorted, 0.5),
            quantile_sorted(&sorted, 0.75),
        ])
    }

    /// Number of boundaries strictly below `age`, in 0..=3.
    pub fn index(&self, age: f64) -> u8 {
        self.0.iter().filter(|&&b| age > b).count() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub labels: Vec<bool>,
    pub age_quartile: u8,
    pub sex: u8,
}

impl StratumKey {
    pub fn label_string(&self) -> String {
        self.labels.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    fn hash64(&self) -> u64 {
        let mut h = mix64(self.labels.len() as u64);
        for &b in &self.labels {
            h = mix64(h ^ b as u64);
        }
        h = mix64(h ^ ((self.age_quartile as u64) << 8));
        mix64(h ^ ((self.sex as u64) << 16))
    }
}

pub fn stratum_key(labels: &[bool], age: f64, sex: f64, quartiles: &AgeQuartiles) -> StratumKey {
    StratumKey {
        labels: labels.to_vec(),
        age_quartile: quartiles.index(age),
        sex: (sex >= 0.5) as u8,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Stratum {
    Full(StratumKey),
    Fallback { any_positive: bool, sex: u8 },
}

impl Stratum {
    fn hash64(&self) -> u64 {
        match self {
            Stratum::Full(k) => k.hash64(),
            Stratum::Fallback { any_positive, sex } => {
                mix64(0xfa11_bac4 ^ ((*any_positive as u64) << 1) ^ ((*sex as u64) << 2))
            }
        }
    }
}

/// Per-sample stratum keys for a cohort.
pub fn cohort_keys(cohort: &LabeledCohort) -> Vec<StratumKey> {
    let quartiles = AgeQuartiles::from_cohort(cohort);
    (0..cohort.len())
        .map(|i| {
            let v = &cohort.samples[i];
            stratum_key(
                cohort.labels.row(i),
                v.get(Feature::Age).unwrap_or(f64::NAN),
                v.get(Feature::Sex).unwrap_or(0.0),
                &quartiles,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    /// Number of strata that were dealt (after fallback pooling).
    pub n_strata: usize,
}

pub fn assign_folds(cohort: &LabeledCohort, plan: &FoldPlan) -> Result<FoldAssignment, SplitError> {
    if cohort.is_empty() {
        return Err(SplitError::EmptyCohort);
    }
    if plan.n_folds < 2 {
        return Err(SplitError::TooFewFolds(plan.n_folds));
    }
    let keys = cohort_keys(cohort);

    let mut by_key: BTreeMap<&StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_key.entry(k).or_default().push(i);
    }
    let mut strata: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    for (key, members) in by_key {
        let stratum = if members.len() < plan.n_folds {
            Stratum::Fallback {
                any_positive: key.labels.iter().any(|&b| b),
                sex: key.sex,
            }
        } else {
            Stratum::Full(key.clone())
        };
        strata.entry(stratum).or_default().extend(members);
    }

    let n_strata = strata.len();
    let mut fold_of = vec![0usize; cohort.len()];
    let mut next = 0usize;
    for (stratum, mut members) in strata {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(plan.seed, stratum.hash64()));
        members.shuffle(&mut rng);
        if matches!(stratum, Stratum::Fallback { .. }) {
            members.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        }
        for i in members {
            fold_of[i] = next % plan.n_folds;
            next += 1;
        }
    }
    Ok(FoldAssignment { fold_of, n_strata })
}

/// Two-column export: record_id, fold_index.
pub fn write_folds<W: Write>(record_ids: &[String], fold_of: &[usize], writer: W) -> Result<(), SplitError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["record_id", "fold_index"])?;
    for (id, f) in record_ids.iter().zip(fold_of) {
        wtr.write_record([id.as_str(), &f.to_string()])?;
    }
    wtr.flush().map_err(|e| SplitError::FoldFile(e.to_string()))?;
    Ok(())
}

/// Reads a fold export and aligns it with `record_ids`.
pub fn read_folds<R: Read>(reader: R, record_ids: &[String]) -> Result<Vec<usize>, SplitError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?;
    if header.iter().collect::<Vec<_>>() != ["record_id", "fold_index"] {
        return Err(SplitError::FoldFile(format!("unexpected header {header:?}")));
    }
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let fold = rec[1]
            .parse::<usize>()
            .map_err(|_| SplitError::FoldFile(format!("bad fold index {:?}", &rec[1])))?;
        map.insert(rec[0].to_string(), fold);
    }
    record_ids
        .iter()
        .map(|id| {
            map.get(id)
                .copied()
                .ok_or_else(|| SplitError::FoldFile(format!("no fold for record {id:?}")))
        })
        .collect()
}
