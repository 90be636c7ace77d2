//! Exact greedy split search.
//!
//! Candidate thresholds sit between consecutive distinct present values of
//! a feature; a sample goes left when `value < threshold`. Every threshold
//! is scored twice, once per default direction for missing values. Scan
//! order is (feature, threshold, default_left = true, false) and only a
//! strictly larger gain replaces the incumbent, which yields the tie-break
//! lowest feature, then lowest threshold, then left default.

use serde::{Deserialize, Serialize};

use super::data::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub l2_reg: f64,
    pub min_split_gain: f64,
    pub min_child_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
    pub right_grad: f64,
    pub right_hess: f64,
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, params: &SplitParams) -> f64 {
    let lambda = params.l2_reg;
    let g = gl + gr;
    let h = hl + hr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - params.min_split_gain
}

/// Midpoint between two distinct floats that still routes `lo` left and
/// `hi` right under `x < threshold`.
pub(crate) fn threshold_between(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo && mid <= hi {
        mid
    } else {
        hi
    }
}

/// Gradient/hessian sums of a node, split into present and missing parts
/// for one feature.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeSums {
    pub grad: f64,
    pub hess: f64,
    pub missing_grad: f64,
    pub missing_hess: f64,
}

/// Scans one feature. `sorted_rows` are the node's present rows in
/// ascending value order. Updates `best` only on strictly larger gain.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_feature(
    feature: usize,
    column: &[f64],
    sorted_rows: &[u32],
    grad: &[f64],
    hess: &[f64],
    sums: NodeSums,
    params: &SplitParams,
    best: &mut Option<SplitCandidate>,
) {
    let mut gl = 0.0;
    let mut hl = 0.0;
    for k in 0..sorted_rows.len().saturating_sub(1) {
        let r = sorted_rows[k] as usize;
        gl += grad[r];
        hl += hess[r];
        let v = column[r];
        let next = column[sorted_rows[k + 1] as usize];
        if next == v {
            continue;
        }
        let threshold = threshold_between(v, next);
        for default_left in [true, false] {
            let (cl_g, cl_h) = if default_left {
                (gl + sums.missing_grad, hl + sums.missing_hess)
            } else {
                (gl, hl)
            };
            let cr_g = sums.grad - cl_g;
            let cr_h = sums.hess - cl_h;
            if cl_h < params.min_child_weight || cr_h < params.min_child_weight {
                continue;
            }
            let gain = split_gain(cl_g, cl_h, cr_g, cr_h, params);
            let better = match best {
                Some(b) => gain > b.gain,
                None => gain > 0.0,
            };
            if better {
                *best = Some(SplitCandidate {
                    feature,
                    threshold,
                    default_left,
                    gain,
                    left_grad: cl_g,
                    left_hess: cl_h,
                    right_grad: cr_g,
                    right_hess: cr_h,
                });
            }
        }
    }
}

pub(crate) fn node_sums(column: &[f64], rows: &[u32], grad: &[f64], hess: &[f64], total: (f64, f64)) -> NodeSums {
    let (mut mg, mut mh) = (0.0, 0.0);
    for &r in rows {
        let r = r as usize;
        if column[r].is_nan() {
            mg += grad[r];
            mh += hess[r];
        }
    }
    NodeSums {
        grad: total.0,
        hess: total.1,
        missing_grad: mg,
        missing_hess: mh,
    }
}

pub(crate) fn totals(rows: &[u32], grad: &[f64], hess: &[f64]) -> (f64, f64) {
    rows.iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]))
}

/// Best split of the node made of `rows` (indices into `features`), or
/// `None` when no candidate has positive gain with both children meeting
/// `min_child_weight`.
pub fn find_best_split(
    features: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &SplitParams,
) -> Option<SplitCandidate> {
    let mut node_rows: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    node_rows.sort_unstable();
    let total = totals(&node_rows, grad, hess);
    let mut member = vec![false; features.n_rows()];
    for &r in &node_rows {
        member[r as usize] = true;
    }
    let mut best = None;
    for f in 0..features.n_features() {
        let sorted: Vec<u32> = features
            .sorted(f)
            .iter()
            .copied()
            .filter(|&r| member[r as usize])
            .collect();
        let sums = node_sums(features.column(f), &node_rows, grad, hess, total);
        scan_feature(f, features.column(f), &sorted, grad, hess, sums, params, &mut best);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_REG: SplitParams = SplitParams {
        l2_reg: 0.0,
        min_split_gain: 0.0,
        min_child_weight: 0.0,
    };

    #[test]
    fn constant_feature_has_no_split() {
        let m = FeatureMatrix::from_rows(&[[1.0], [1.0], [1.0]], 1);
        let g = [0.5, -0.5, 0.5];
        let h = [0.25; 3];
        assert!(find_best_split(&m, &g, &h, &[0, 1, 2], &NO_REG).is_none());
    }

    #[test]
    fn two_samples_formula() {
        let m = FeatureMatrix::from_rows(&[[0.0], [1.0]], 1);
        let (g0, h0) = (0.5, 0.25);
        let (g1, h1) = (-0.5, 0.25);
        let best = find_best_split(&m, &[g0, g1], &[h0, h1], &[0, 1], &NO_REG).unwrap();
        let expected = 0.5 * (g0 * g0 / h0 + g1 * g1 / h1 - (g0 + g1) * (g0 + g1) / (h0 + h1));
        assert_eq!(best.gain, expected);
        assert_eq!(best.threshold, 0.5);
        assert_eq!(best.feature, 0);
        // No missing values: both directions tie, left default wins.
        assert!(best.default_left);
    }

    #[test]
    fn min_child_weight_excludes_candidates() {
        let m = FeatureMatrix::from_rows(&[[0.0], [1.0]], 1);
        let params = SplitParams {
            min_child_weight: 0.3,
            ..NO_REG
        };
        assert!(find_best_split(&m, &[0.5, -0.5], &[0.25, 0.25], &[0, 1], &params).is_none());
    }

    #[test]
    fn missing_values_pick_a_direction() {
        // Missing rows carry negative gradients like the high-value rows.
        let nan = f64::NAN;
        let m = FeatureMatrix::from_rows(&[[0.0], [0.1], [1.0], [1.1], [nan], [nan]], 1);
        let g = [0.5, 0.5, -0.5, -0.5, -0.5, -0.5];
        let h = [0.25; 6];
        let best = find_best_split(&m, &g, &h, &[0, 1, 2, 3, 4, 5], &NO_REG).unwrap();
        assert!(!best.default_left);
        assert_eq!(best.threshold, 0.55);
    }

    #[test]
    fn threshold_between_adjacent_floats() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let t = threshold_between(lo, hi);
        assert!(lo < t && t <= hi);
    }
}
