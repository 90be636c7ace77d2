//! Exact path-dependent TreeSHAP, a brute-force Shapley oracle and
//! beeswarm-style summaries.
//!
//! Absent features are marginalized with node covers: at a split on an
//! absent feature both children are visited, weighted by their share of the
//! parent's cover. Attributions are in margin (log-odds) units. A missing
//! input value is routed by the node's default direction and still counts
//! as a present feature.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ShapError;
use crate::gbdt::{Node, Tree, TreeEnsemble};
use crate::schema::TargetCode;

/// Upper bound on features for [`brute_force_shap`].
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * (depth + 1) as f64 / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].pweight = path[i].pweight * (depth + 1) as f64 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * (depth + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            total += path[i].pweight / (zero * (depth - i) as f64 / (depth + 1) as f64);
        }
    }
    total
}

fn goes_left(row: &[f64], feature: usize, threshold: f64, default_left: bool) -> bool {
    let x = row[feature];
    if x.is_nan() {
        default_left
    } else {
        x < threshold
    }
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend_path(&mut path, zero_fraction, one_fraction, feature);
    match tree.nodes()[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_path_sum(&path, i);
                let el = path[i];
                let f = el.feature.expect("non-root path element has a feature");
                phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
            }
        }
        Node::Split {
            feature: split_feature,
            threshold,
            default_left,
            left,
            right,
            cover,
        } => {
            let (hot, cold) = if goes_left(row, split_feature, threshold, default_left) {
                (left, right)
            } else {
                (right, left)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(split_feature)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            let nodes = tree.nodes();
            recurse(
                tree,
                row,
                phi,
                hot,
                path.clone(),
                incoming_zero * nodes[hot].cover() / cover,
                incoming_one,
                Some(split_feature),
            );
            recurse(
                tree,
                row,
                phi,
                cold,
                path,
                incoming_zero * nodes[cold].cover() / cover,
                0.0,
                Some(split_feature),
            );
        }
    }
}

/// Cover-weighted expected leaf value of a tree.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(nodes: &[Node], i: usize) -> f64 {
        match nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split { left, right, cover, .. } => {
                nodes[left].cover() / cover * go(nodes, left) + nodes[right].cover() / cover * go(nodes, right)
            }
        }
    }
    go(tree.nodes(), 0)
}

/// Fails on the first node whose cover is not strictly positive.
pub fn check_covers(ensemble: &TreeEnsemble) -> Result<(), ShapError> {
    for (t, tree) in ensemble.trees.iter().enumerate() {
        if let Some(node) = tree
            .nodes()
            .iter()
            .position(|n| !(n.cover() > 0.0 && n.cover().is_finite()))
        {
            return Err(ShapError::ZeroCover { tree: t, node });
        }
    }
    Ok(())
}

/// `base_score + Σ_t E[tree_t]`.
pub fn base_value(ensemble: &TreeEnsemble) -> f64 {
    ensemble
        .trees
        .iter()
        .fold(ensemble.base_score, |acc, t| acc + expected_value(t))
}

fn tree_shap_unchecked(ensemble: &TreeEnsemble, row: &[f64]) -> Vec<f64> {
    let m = ensemble.n_features;
    let mut total = vec![0.0; m];
    let mut phi = vec![0.0; m];
    for tree in &ensemble.trees {
        phi.iter_mut().for_each(|p| *p = 0.0);
        recurse(tree, row, &mut phi, 0, Vec::with_capacity(16), 1.0, 1.0, None);
        for (t, p) in total.iter_mut().zip(&phi) {
            *t += p;
        }
    }
    total
}

/// Per-feature attributions for a dense row (NaN = missing) and the base
/// value. Per-tree attributions are summed in tree order.
pub fn tree_shap(ensemble: &TreeEnsemble, row: &[f64]) -> Result<(Vec<f64>, f64), ShapError> {
    if row.len() != ensemble.n_features {
        return Err(ShapError::WidthMismatch {
            expected: ensemble.n_features,
            got: row.len(),
        });
    }
    check_covers(ensemble)?;
    Ok((tree_shap_unchecked(ensemble, row), base_value(ensemble)))
}

/// Ensemble value with features outside `mask` marginalized by cover.
fn coalition_value(ensemble: &TreeEnsemble, row: &[f64], mask: u32) -> f64 {
    fn go(nodes: &[Node], i: usize, row: &[f64], mask: u32) -> f64 {
        match nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
                cover,
            } => {
                if mask & (1 << feature) != 0 {
                    let next = if goes_left(row, feature, threshold, default_left) {
                        left
                    } else {
                        right
                    };
                    go(nodes, next, row, mask)
                } else {
                    nodes[left].cover() / cover * go(nodes, left, row, mask)
                        + nodes[right].cover() / cover * go(nodes, right, row, mask)
                }
            }
        }
    }
    ensemble
        .trees
        .iter()
        .fold(ensemble.base_score, |acc, t| acc + go(t.nodes(), 0, row, mask))
}

/// Exact Shapley values by enumerating all feature subsets. Test oracle for
/// [`tree_shap`]; exponential in the number of features.
pub fn brute_force_shap(ensemble: &TreeEnsemble, row: &[f64]) -> Result<Vec<f64>, ShapError> {
    let m = ensemble.n_features;
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(ShapError::TooManyFeatures {
            max: BRUTE_FORCE_MAX_FEATURES,
            got: m,
        });
    }
    if row.len() != m {
        return Err(ShapError::WidthMismatch {
            expected: m,
            got: row.len(),
        });
    }
    check_covers(ensemble)?;
    let values: Vec<f64> = (0..1u32 << m)
        .map(|mask| coalition_value(ensemble, row, mask))
        .collect();
    let factorial = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let weight: Vec<f64> = (0..m)
        .map(|s| factorial(s) * factorial(m - s - 1) / factorial(m))
        .collect();
    Ok((0..m)
        .map(|j| {
            let bit = 1u32 << j;
            (0..1u32 << m)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]))
                .sum()
        })
        .collect())
}

/// Samples × features attributions sharing one base value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionMatrix {
    pub target: TargetCode,
    pub schema_fingerprint: String,
    pub base_value: f64,
    pub values: Vec<Vec<f64>>,
}

impl AttributionMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.len()
    }
}

/// TreeSHAP for each dense row, in parallel.
pub fn explain_rows(
    ensemble: &TreeEnsemble,
    rows: &[Vec<f64>],
    target: &TargetCode,
) -> Result<AttributionMatrix, ShapError> {
    check_covers(ensemble)?;
    if let Some(r) = rows.iter().find(|r| r.len() != ensemble.n_features) {
        return Err(ShapError::WidthMismatch {
            expected: ensemble.n_features,
            got: r.len(),
        });
    }
    let values = rows.par_iter().map(|r| tree_shap_unchecked(ensemble, r)).collect();
    Ok(AttributionMatrix {
        target: target.clone(),
        schema_fingerprint: ensemble.schema_fingerprint.clone(),
        base_value: base_value(ensemble),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub feature_index: usize,
    /// 1-based.
    pub rank: usize,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeeswarmRow {
    pub sample: usize,
    pub feature: String,
    pub rank: usize,
    pub shap_value: f64,
    pub feature_value: Option<f64>,
    /// Mid-rank percentile (0–100) of the value among present values of
    /// the same feature in the explained samples.
    pub feature_percentile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapSummary {
    pub ranking: Vec<FeatureImportance>,
    pub rows: Vec<BeeswarmRow>,
}

impl ShapSummary {
    pub fn rank_of(&self, feature: &str) -> Option<usize> {
        self.ranking.iter().find(|r| r.feature == feature).map(|r| r.rank)
    }
}

/// Ranks features by mean |φ| (descending, ties by feature index) and
/// lays out one beeswarm row per sample and feature, grouped by rank.
pub fn shap_summary(
    matrix: &AttributionMatrix,
    feature_values: &[Vec<f64>],
    feature_names: &[&str],
) -> Result<ShapSummary, ShapError> {
    let n = matrix.n_samples();
    if n == 0 {
        return Err(ShapError::Empty);
    }
    let m = feature_names.len();
    if feature_values.len() != n || matrix.values.iter().any(|r| r.len() != m) {
        return Err(ShapError::WidthMismatch {
            expected: m,
            got: matrix.values[0].len(),
        });
    }
    let means: Vec<f64> = (0..m)
        .map(|j| matrix.values.iter().map(|r| r[j].abs()).sum::<f64>() / n as f64)
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let ranking: Vec<FeatureImportance> = order
        .iter()
        .enumerate()
        .map(|(r, &j)| FeatureImportance {
            feature: feature_names[j].to_string(),
            feature_index: j,
            rank: r + 1,
            mean_abs_shap: means[j],
        })
        .collect();

    let mut rows = Vec::with_capacity(n * m);
    for imp in &ranking {
        let j = imp.feature_index;
        let mut present: Vec<f64> = feature_values.iter().map(|r| r[j]).filter(|v| !v.is_nan()).collect();
        present.sort_by(f64::total_cmp);
        for (i, values) in feature_values.iter().enumerate() {
            let v = values[j];
            let (feature_value, feature_percentile) = if v.is_nan() {
                (None, None)
            } else {
                let below = present.partition_point(|&p| p < v);
                let equal = present.partition_point(|&p| p <= v) - below;
                let pct = 100.0 * (below as f64 + 0.5 * equal as f64) / present.len() as f64;
                (Some(v), Some(pct))
            };
            rows.push(BeeswarmRow {
                sample: i,
                feature: imp.feature.clone(),
                rank: imp.rank,
                shap_value: matrix.values[i][j],
                feature_value,
                feature_percentile,
            });
        }
    }
    Ok(ShapSummary { ranking, rows })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns: target, record_id, feature, rank, shap_value, feature_value,
/// feature_percentile.
pub fn write_beeswarm_csv<W: Write>(
    target: &TargetCode,
    record_ids: &[String],
    summary: &ShapSummary,
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "target",
        "record_id",
        "feature",
        "rank",
        "shap_value",
        "feature_value",
        "feature_percentile",
    ])?;
    for r in &summary.rows {
        wtr.write_record([
            target.as_str(),
            record_ids[r.sample].as_str(),
            r.feature.as_str(),
            &r.rank.to_string(),
            &r.shap_value.to_string(),
            &opt(r.feature_value),
            &opt(r.feature_percentile),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Columns: feature, rank, mean_abs_shap.
pub fn write_ranking_csv<W: Write>(summary: &ShapSummary, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "rank", "mean_abs_shap"])?;
    for r in &summary.ranking {
        wtr.write_record([r.feature.as_str(), &r.rank.to_string(), &r.mean_abs_shap.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ensemble(base: f64, n_features: usize, trees: Vec<Tree>) -> TreeEnsemble {
        TreeEnsemble {
            base_score: base,
            trees,
            n_features,
            schema_fingerprint: "test".into(),
        }
    }

    fn stump(feature: usize, threshold: f64, cl: f64, cr: f64, vl: f64, vr: f64) -> Tree {
        Tree::from_nodes(vec![
            Node::Split {
                feature,
                threshold,
                default_left: true,
                left: 1,
                right: 2,
                cover: cl + cr,
            },
            Node::Leaf { value: vl, cover: cl },
            Node::Leaf { value: vr, cover: cr },
        ])
        .unwrap()
    }

    #[test]
    fn single_leaf_has_no_attribution() {
        let e = ensemble(-2.0, 3, vec![Tree::leaf(0.7, 5.0)]);
        let (phi, base) = tree_shap(&e, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(phi, vec![0.0; 3]);
        assert_eq!(base, -2.0 + 0.7);
        assert_eq!(brute_force_shap(&e, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn one_split_closed_form() {
        // Cover ratio c = 3/4 to the left; x goes left.
        let (vl, vr) = (1.5, -0.5);
        let c = 0.75;
        let e = ensemble(0.0, 3, vec![stump(1, 10.0, 3.0, 1.0, vl, vr)]);
        let x = [0.0, 5.0, 0.0];
        let (phi, base) = tree_shap(&e, &x).unwrap();
        let expected = vl - (c * vl + (1.0 - c) * vr);
        assert!((phi[1] - expected).abs() < 1e-15);
        assert_eq!(phi[0], 0.0);
        assert_eq!(phi[2], 0.0);
        assert!((base - (c * vl + (1.0 - c) * vr)).abs() < 1e-15);
        let bf = brute_force_shap(&e, &x).unwrap();
        assert!((bf[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicated_features_get_equal_attributions() {
        // Symmetric tree: split on f0 then f1 with mirrored structure.
        let tree = Tree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                default_left: true,
                left: 1,
                right: 4,
                cover: 4.0,
            },
            Node::Split {
                feature: 1,
                threshold: 0.5,
                default_left: true,
                left: 2,
                right: 3,
                cover: 2.0,
            },
            Node::Leaf { value: 0.0, cover: 1.0 },
            Node::Leaf { value: 1.0, cover: 1.0 },
            Node::Split {
                feature: 1,
                threshold: 0.5,
                default_left: true,
                left: 5,
                right: 6,
                cover: 2.0,
            },
            Node::Leaf { value: 1.0, cover: 1.0 },
            Node::Leaf { value: 2.0, cover: 1.0 },
        ])
        .unwrap();
        let e = ensemble(0.0, 2, vec![tree]);
        let bf = brute_force_shap(&e, &[1.0, 1.0]).unwrap();
        assert_eq!(bf[0], bf[1]);
        let (ts, _) = tree_shap(&e, &[1.0, 1.0]).unwrap();
        assert!((ts[0] - ts[1]).abs() < 1e-15);
    }

    #[test]
    fn repeated_feature_on_path() {
        let tree = Tree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 5.0,
                default_left: false,
                left: 1,
                right: 4,
                cover: 10.0,
            },
            Node::Split {
                feature: 0,
                threshold: 2.0,
                default_left: true,
                left: 2,
                right: 3,
                cover: 6.0,
            },
            Node::Leaf {
                value: -1.0,
                cover: 2.0,
            },
            Node::Leaf { value: 0.5, cover: 4.0 },
            Node::Split {
                feature: 1,
                threshold: 0.0,
                default_left: true,
                left: 5,
                right: 6,
                cover: 4.0,
            },
            Node::Leaf { value: 2.0, cover: 1.0 },
            Node::Leaf { value: 3.0, cover: 3.0 },
        ])
        .unwrap();
        let e = ensemble(0.1, 2, vec![tree]);
        for x in [[1.0, -1.0], [3.0, 1.0], [7.0, -1.0], [f64::NAN, 1.0], [1.0, f64::NAN]] {
            let (ts, base) = tree_shap(&e, &x).unwrap();
            let bf = brute_force_shap(&e, &x).unwrap();
            for j in 0..2 {
                assert!((ts[j] - bf[j]).abs() < 1e-12, "x={x:?} j={j}");
            }
            let sum: f64 = ts.iter().sum();
            assert!((base + sum - e.predict_margin_row(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_cover_is_rejected() {
        let e = ensemble(0.0, 1, vec![stump(0, 1.0, 0.0, 1.0, 1.0, 2.0)]);
        assert!(matches!(
            tree_shap(&e, &[0.0]),
            Err(ShapError::ZeroCover { tree: 0, node: 1 })
        ));
    }

    #[test]
    fn brute_force_refuses_wide_models() {
        let e = ensemble(0.0, 16, vec![Tree::leaf(1.0, 1.0)]);
        assert!(matches!(
            brute_force_shap(&e, &[0.0; 16]),
            Err(ShapError::TooManyFeatures { .. })
        ));
    }

    #[test]
    fn additive_across_trees() {
        let a = stump(0, 1.0, 2.0, 3.0, 0.3, -0.7);
        let b = stump(1, 0.0, 1.0, 1.0, 0.2, 0.9);
        let x = [0.5, 2.0];
        let (pa, _) = tree_shap(&ensemble(0.0, 2, vec![a.clone()]), &x).unwrap();
        let (pb, _) = tree_shap(&ensemble(0.0, 2, vec![b.clone()]), &x).unwrap();
        let (pab, _) = tree_shap(&ensemble(0.0, 2, vec![a, b]), &x).unwrap();
        for j in 0..2 {
            assert_eq!(pab[j], pa[j] + pb[j]);
        }
    }

    fn matrix(values: Vec<Vec<f64>>) -> AttributionMatrix {
        AttributionMatrix {
            target: TargetCode::new("K70").unwrap(),
            schema_fingerprint: "test".into(),
            base_value: 0.0,
            values,
        }
    }

    #[test]
    fn zero_matrix_ranks_in_schema_order() {
        let s = shap_summary(&matrix(vec![vec![0.0; 3]; 4]), &vec![vec![1.0; 3]; 4], &["a", "b", "c"]).unwrap();
        let names: Vec<_> = s.ranking.iter().map(|r| r.feature.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(s.ranking.iter().all(|r| r.mean_abs_shap == 0.0));
        assert_eq!(s.rows.len(), 12);
    }

    #[test]
    fn single_sample_mean_is_abs_value() {
        let s = shap_summary(
            &matrix(vec![vec![-0.4, 0.1, 0.25]]),
            &[vec![1.0, f64::NAN, 3.0]],
            &["a", "b", "c"],
        )
        .unwrap();
        assert_eq!(s.ranking[0].feature, "a");
        assert_eq!(s.ranking[0].mean_abs_shap, 0.4);
        assert_eq!(s.ranking[1].feature, "c");
        assert_eq!(s.rank_of("b"), Some(3));
        let b_row = s.rows.iter().find(|r| r.feature == "b").unwrap();
        assert_eq!(b_row.feature_value, None);
        assert_eq!(b_row.feature_percentile, None);
    }

    #[test]
    fn percentiles_are_mid_rank() {
        let vals = vec![vec![1.0], vec![2.0], vec![2.0], vec![3.0]];
        let s = shap_summary(&matrix(vec![vec![0.1]; 4]), &vals, &["a"]).unwrap();
        let pct: Vec<f64> = s.rows.iter().map(|r| r.feature_percentile.unwrap()).collect();
        assert_eq!(pct, vec![12.5, 50.0, 50.0, 87.5]);
    }

    #[test]
    fn empty_matrix_errors() {
        assert!(matches!(
            shap_summary(&matrix(vec![]), &[], &["a"]),
            Err(ShapError::Empty)
        ));
    }
}
