//! AUROC, ROC curves and percentile-bootstrap intervals.
//!
//! AUROC is the Mann–Whitney statistic with ties counted one half. It is
//! accumulated in integers (twice the concordant count plus the tied count)
//! and divided once, so the result does not depend on summation order.

use std::io::Write;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::ingest::SourceTag;
use crate::rng::stream_rng;
use crate::schema::TargetCode;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1000;
/// Redraws allowed for a single-class resample before it is skipped.
pub const MAX_REDRAWS: usize = 100;

/// Quantile of an ascending slice by linear interpolation at `q·(n-1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass { n_pos, n_neg });
    }
    Ok((n_pos, n_neg))
}

/// Samples sorted by ascending score, split into runs of equal score.
struct Ranked {
    order: Vec<usize>,
    /// `groups[k]..groups[k + 1]` indexes `order` for the k-th tie group.
    groups: Vec<usize>,
}

impl Ranked {
    fn new(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut groups = vec![0];
        for k in 1..order.len() {
            if scores[order[k]] != scores[order[k - 1]] {
                groups.push(k);
            }
        }
        groups.push(order.len());
        Self { order, groups }
    }

    fn group_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.groups.windows(2).map(|w| w[0]..w[1])
    }

    /// AUROC with each sample weighted by an integer multiplicity.
    /// `None` when the weighted sample is single-class.
    fn weighted_auroc(&self, labels: &[bool], weight: impl Fn(usize) -> u64) -> Option<f64> {
        let mut neg_below: u128 = 0;
        let mut twice_concordant: u128 = 0;
        let mut ties: u128 = 0;
        let mut total_pos: u128 = 0;
        for range in self.group_ranges() {
            let (mut p, mut n) = (0u128, 0u128);
            for &i in &self.order[range] {
                let w = weight(i) as u128;
                if labels[i] {
                    p += w;
                } else {
                    n += w;
                }
            }
            twice_concordant += 2 * p * neg_below;
            ties += p * n;
            neg_below += n;
            total_pos += p;
        }
        if total_pos == 0 || neg_below == 0 {
            return None;
        }
        Some((twice_concordant + ties) as f64 / (2 * total_pos * neg_below) as f64)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    check_inputs(scores, labels)?;
    Ok(Ranked::new(scores)
        .weighted_auroc(labels, |_| 1)
        .expect("both classes present"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC staircase from (0,0) to (1,1), one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, MetricsError> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let ranked = Ranked::new(scores);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let ranges: Vec<_> = ranked.group_ranges().collect();
    for range in ranges.into_iter().rev() {
        for &i in &ranked.order[range] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_iter: usize,
    /// Resamples that contributed an AUROC.
    pub n_valid: usize,
    /// Single-class resamples that were redrawn.
    pub n_redrawn: usize,
    /// Iterations abandoned after [`MAX_REDRAWS`] single-class redraws.
    pub n_skipped: usize,
    pub seed: u64,
}

/// Percentile bootstrap interval of the AUROC. Iteration `i` draws from its
/// own stream of `seed`, so the result does not depend on thread count.
pub fn bootstrap_auroc_interval(
    scores: &[f64],
    labels: &[bool],
    n_iter: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapInterval, MetricsError> {
    check_inputs(scores, labels)?;
    let n = scores.len();
    let ranked = Ranked::new(scores);

    let outcomes: Vec<(Option<f64>, usize)> = (0..n_iter)
        .into_par_iter()
        .map(|it| {
            let mut rng = stream_rng(seed, it as u64);
            let mut counts = vec![0u32; n];
            for attempt in 0..=MAX_REDRAWS {
                counts.iter_mut().for_each(|c| *c = 0);
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                if let Some(a) = ranked.weighted_auroc(labels, |i| counts[i] as u64) {
                    return (Some(a), attempt);
                }
            }
            (None, MAX_REDRAWS + 1)
        })
        .collect();

    let n_redrawn = outcomes.iter().map(|(_, r)| r).sum();
    let mut values: Vec<f64> = outcomes.iter().filter_map(|(a, _)| *a).collect();
    let n_skipped = n_iter - values.len();
    if values.is_empty() {
        return Err(MetricsError::AllResamplesDegenerate);
    }
    if n_skipped > 0 {
        warn!("bootstrap: {n_skipped} of {n_iter} resamples skipped as single-class");
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        lo: quantile_sorted(&values, tail),
        hi: quantile_sorted(&values, 1.0 - tail),
        level,
        n_iter,
        n_valid: values.len(),
        n_redrawn,
        n_skipped,
        seed,
    })
}

/// Per-target evaluation of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: TargetCode,
    pub dataset_tag: SourceTag,
    pub auroc: f64,
    pub interval_95: (f64, f64),
    pub n_pos: usize,
    pub n_neg: usize,
    pub prevalence: f64,
    pub bootstrap: BootstrapInterval,
    pub roc_points: Vec<RocPoint>,
}

pub fn evaluate(
    target: &TargetCode,
    dataset_tag: SourceTag,
    scores: &[f64],
    labels: &[bool],
    n_iter: usize,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let auc = auroc(scores, labels)?;
    let bootstrap = bootstrap_auroc_interval(scores, labels, n_iter, 0.95, seed)?;
    Ok(EvalReport {
        target: target.clone(),
        dataset_tag,
        auroc: auc,
        interval_95: (bootstrap.lo, bootstrap.hi),
        n_pos,
        n_neg,
        prevalence: n_pos as f64 / (n_pos + n_neg) as f64,
        bootstrap,
        roc_points: roc_curve(scores, labels)?,
    })
}

/// Two-column `fpr,tpr` file for plotting.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["fpr", "tpr"])?;
    for p in points {
        wtr.write_record([p.fpr.to_string(), p.tpr.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
