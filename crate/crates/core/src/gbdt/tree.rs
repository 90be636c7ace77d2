use serde::{Deserialize, Serialize};

use super::data::FeatureMatrix;
use super::split::{node_sums, scan_feature, totals, SplitParams};
use super::train::TrainParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match *self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Binary regression tree stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from preorder nodes, checking child links.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = *n {
                if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(format!("node {i}: bad child link"));
                }
            }
        }
        Ok(Self { nodes })
    }

    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, cover }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Index of the leaf reached by `value_of(feature)`; NaN follows the
    /// node's default direction.
    pub fn route(&self, value_of: impl Fn(usize) -> f64) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let x = value_of(feature);
                    let go_left = if x.is_nan() { default_left } else { x < threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.route(|f| row[f])] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn features_used(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Largest |cover(parent) − (cover(left) + cover(right))| over splits.
    pub fn max_cover_imbalance(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split { left, right, cover, .. } => {
                    Some((cover - (self.nodes[left].cover() + self.nodes[right].cover())).abs())
                }
                Node::Leaf { .. } => None,
            })
            .fold(0.0, f64::max)
    }
}

struct Grower<'a> {
    features: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TrainParams,
    split: SplitParams,
    nodes: Vec<Node>,
    goes_left: Vec<bool>,
}

impl Grower<'_> {
    fn leaf(&mut self, grad: f64, hess: f64) -> usize {
        let value = -self.params.learning_rate * grad / (hess + self.params.l2_reg);
        self.nodes.push(Node::Leaf { value, cover: hess });
        self.nodes.len() - 1
    }

    /// `rows` ascending; `sorted[f]` holds the node's present rows for
    /// feature `f` in value order.
    fn grow(&mut self, rows: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let total = totals(&rows, self.grad, self.hess);
        if depth >= self.params.max_depth {
            return self.leaf(total.0, total.1);
        }
        let mut best = None;
        for (f, sorted_f) in sorted.iter().enumerate() {
            let column = self.features.column(f);
            let sums = node_sums(column, &rows, self.grad, self.hess, total);
            scan_feature(f, column, sorted_f, self.grad, self.hess, sums, &self.split, &mut best);
        }
        let Some(best) = best else {
            return self.leaf(total.0, total.1);
        };

        let column = self.features.column(best.feature);
        for &r in &rows {
            let x = column[r as usize];
            self.goes_left[r as usize] = if x.is_nan() {
                best.default_left
            } else {
                x < best.threshold
            };
        }
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| self.goes_left[r as usize]);
        let mut left_sorted = Vec::with_capacity(sorted.len());
        let mut right_sorted = Vec::with_capacity(sorted.len());
        for s in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = s.into_iter().partition(|&r| self.goes_left[r as usize]);
            left_sorted.push(l);
            right_sorted.push(r);
        }

        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
        let left = self.grow(left_rows, left_sorted, depth + 1);
        let right = self.grow(right_rows, right_sorted, depth + 1);
        let cover = self.nodes[left].cover() + self.nodes[right].cover();
        self.nodes[me] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            default_left: best.default_left,
            left,
            right,
            cover,
        };
        me
    }
}

/// Grows one tree on all rows of `features`. Leaf values are already
/// scaled by the learning rate; split covers are the sum of their
/// children's covers.
pub fn grow_tree(features: &FeatureMatrix, grad: &[f64], hess: &[f64], params: &TrainParams) -> Tree {
    assert_eq!(grad.len(), features.n_rows());
    assert_eq!(hess.len(), features.n_rows());
    let mut grower = Grower {
        features,
        grad,
        hess,
        params,
        split: params.split_params(),
        nodes: Vec::new(),
        goes_left: vec![false; features.n_rows()],
    };
    let rows: Vec<u32> = (0..features.n_rows() as u32).collect();
    let sorted: Vec<Vec<u32>> = (0..features.n_features())
        .map(|f| features.sorted(f).to_vec())
        .collect();
    grower.grow(rows, sorted, 0);
    Tree { nodes: grower.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::loss::logistic_grad_hess;

    fn params(max_depth: usize) -> TrainParams {
        TrainParams {
            max_depth,
            ..TrainParams::default()
        }
    }

    #[test]
    fn depth_zero_is_single_leaf() {
        let m = FeatureMatrix::from_rows(&[[0.0], [1.0], [2.0]], 1);
        let g = [0.5, -0.5, 0.5];
        let h = [0.25; 3];
        let p = params(0);
        let t = grow_tree(&m, &g, &h, &p);
        assert_eq!(t.nodes().len(), 1);
        let expected = -p.learning_rate * 0.5 / (0.75 + p.l2_reg);
        assert_eq!(t.predict_row(&[0.0]), expected);
        assert_eq!(t.root().cover(), 0.75);
    }

    #[test]
    fn pure_node_stays_leaf() {
        let m = FeatureMatrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]], 1);
        let (g, h) = logistic_grad_hess(0.0, true);
        let t = grow_tree(
            &m,
            &[g; 4],
            &[h; 4],
            &TrainParams {
                min_child_weight: 0.0,
                ..params(3)
            },
        );
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn planted_step_gives_depth_one_split() {
        // Feature 1 is a step at 5; feature 0 is noise with a weaker split.
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [((i * 7) % 10) as f64, i as f64]).collect();
        let labels: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        let (g, h): (Vec<f64>, Vec<f64>) = labels.iter().map(|&y| logistic_grad_hess(0.0, y)).unzip();
        let m = FeatureMatrix::from_rows(&rows, 2);
        let p = TrainParams {
            min_child_weight: 0.0,
            l2_reg: 0.0,
            ..params(1)
        };
        let t = grow_tree(&m, &g, &h, &p);
        assert_eq!(t.depth(), 1);
        match *t.root() {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 1);
                assert_eq!(threshold, 4.5);
            }
            Node::Leaf { .. } => panic!("expected a split"),
        }
    }

    #[test]
    fn covers_are_conserved() {
        let rows: Vec<[f64; 3]> = (0..200)
            .map(|i| {
                [
                    (i % 13) as f64,
                    ((i * 31) % 17) as f64,
                    if i % 5 == 0 { f64::NAN } else { (i % 7) as f64 },
                ]
            })
            .collect();
        let labels: Vec<bool> = (0..200).map(|i| (i % 13 + i % 7) > 9).collect();
        let (g, h): (Vec<f64>, Vec<f64>) = labels.iter().map(|&y| logistic_grad_hess(0.3, y)).unzip();
        let t = grow_tree(
            &FeatureMatrix::from_rows(&rows, 3),
            &g,
            &h,
            &TrainParams {
                min_child_weight: 0.1,
                ..params(4)
            },
        );
        assert!(t.depth() <= 4);
        assert!(t.nodes().len() > 3);
        assert_eq!(t.max_cover_imbalance(), 0.0);
        assert!(t.nodes().iter().all(|n| n.cover() > 0.0));
    }
}
