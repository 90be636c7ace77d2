use serde::{Deserialize, Serialize};

use super::loss::sigmoid;
use super::train::TrainParams;
use super::tree::{Node, Tree};
use crate::error::GbdtError;
use crate::schema::{FeatureSchema, FeatureVector, LabeledCohort, TargetCode};

pub const MODEL_FORMAT: &str = "ecg-liver-gbdt";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Additive tree model: `margin(x) = base_score + Σ_t tree_t(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub schema_fingerprint: String,
}

impl TreeEnsemble {
    pub fn new(base_score: f64, n_features: usize, schema_fingerprint: String) -> Self {
        Self {
            base_score,
            trees: Vec::new(),
            n_features,
            schema_fingerprint,
        }
    }

    pub fn for_schema(base_score: f64, schema: &FeatureSchema) -> Self {
        Self::new(base_score, schema.len(), schema.fingerprint())
    }

    /// Margin of a dense row (NaN = missing). Trees are added in order
    /// starting from the base score.
    pub fn predict_margin_row(&self, row: &[f64]) -> f64 {
        let mut margin = self.base_score;
        for t in &self.trees {
            margin += t.predict_row(row);
        }
        margin
    }

    pub fn predict_margin(&self, x: &FeatureVector) -> f64 {
        self.predict_margin_row(&x.to_dense())
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.predict_margin(x))
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), GbdtError> {
        let data = schema.fingerprint();
        if data != self.schema_fingerprint {
            return Err(GbdtError::SchemaMismatch {
                model: self.schema_fingerprint.clone(),
                data,
            });
        }
        Ok(())
    }

    /// Margins for the given cohort rows after checking the schema.
    pub fn predict_cohort(&self, cohort: &LabeledCohort, rows: &[usize]) -> Result<Vec<f64>, GbdtError> {
        use rayon::prelude::*;
        self.check_schema(&cohort.schema)?;
        Ok(rows
            .par_iter()
            .map(|&i| self.predict_margin(&cohort.samples[i]))
            .collect())
    }

    /// Keeps the first `n` trees.
    pub fn truncate(&mut self, n: usize) {
        self.trees.truncate(n);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EncodedNode {
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

/// Versioned JSON model dump. Trees are preorder node lists: a split is
/// followed by its whole left subtree, then its right subtree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub target: TargetCode,
    pub schema_fingerprint: String,
    pub feature_names: Vec<String>,
    pub params: TrainParams,
    pub base_score: f64,
    trees: Vec<Vec<EncodedNode>>,
}

fn encode_tree(tree: &Tree) -> Vec<EncodedNode> {
    fn go(nodes: &[Node], i: usize, out: &mut Vec<EncodedNode>) {
        match nodes[i] {
            Node::Leaf { value, cover } => out.push(EncodedNode::Leaf { value, cover }),
            Node::Split {
                feature,
                threshold,
                default_left,
                left,
                right,
                cover,
            } => {
                out.push(EncodedNode::Split {
                    feature,
                    threshold,
                    default_left,
                    cover,
                });
                go(nodes, left, out);
                go(nodes, right, out);
            }
        }
    }
    let mut out = Vec::with_capacity(tree.nodes().len());
    go(tree.nodes(), 0, &mut out);
    out
}

fn decode_tree(encoded: &[EncodedNode], n_features: usize) -> Result<Tree, GbdtError> {
    fn go(enc: &[EncodedNode], pos: &mut usize, n_features: usize, out: &mut Vec<Node>) -> Result<usize, GbdtError> {
        let node = enc
            .get(*pos)
            .ok_or_else(|| GbdtError::Malformed("truncated preorder tree".into()))?
            .clone();
        *pos += 1;
        let me = out.len();
        match node {
            EncodedNode::Leaf { value, cover } => out.push(Node::Leaf { value, cover }),
            EncodedNode::Split {
                feature,
                threshold,
                default_left,
                cover,
            } => {
                if feature >= n_features {
                    return Err(GbdtError::Malformed(format!("feature index {feature} out of range")));
                }
                out.push(Node::Leaf { value: 0.0, cover: 0.0 });
                let left = go(enc, pos, n_features, out)?;
                let right = go(enc, pos, n_features, out)?;
                out[me] = Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    cover,
                };
            }
        }
        Ok(me)
    }
    let mut pos = 0;
    let mut nodes = Vec::with_capacity(encoded.len());
    go(encoded, &mut pos, n_features, &mut nodes)?;
    if pos != encoded.len() {
        return Err(GbdtError::Malformed("trailing nodes after tree".into()));
    }
    Tree::from_nodes(nodes).map_err(GbdtError::Malformed)
}

impl ModelDocument {
    pub fn new(target: &TargetCode, params: &TrainParams, ensemble: &TreeEnsemble, schema: &FeatureSchema) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            target: target.clone(),
            schema_fingerprint: ensemble.schema_fingerprint.clone(),
            feature_names: schema.names().iter().map(|s| s.to_string()).collect(),
            params: params.clone(),
            base_score: ensemble.base_score,
            trees: ensemble.trees.iter().map(encode_tree).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, GbdtError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, GbdtError> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_FORMAT_VERSION {
            return Err(GbdtError::Malformed(format!(
                "unsupported model format {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc)
    }

    pub fn ensemble(&self) -> Result<TreeEnsemble, GbdtError> {
        let n_features = self.feature_names.len();
        let trees = self
            .trees
            .iter()
            .map(|t| decode_tree(t, n_features))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TreeEnsemble {
            base_score: self.base_score,
            trees,
            n_features,
            schema_fingerprint: self.schema_fingerprint.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Feature;

    fn stump(feature: usize, threshold: f64, default_left: bool, l: f64, r: f64) -> Tree {
        Tree::from_nodes(vec![
            Node::Split {
                feature,
                threshold,
                default_left,
                left: 1,
                right: 2,
                cover: 3.0,
            },
            Node::Leaf { value: l, cover: 1.0 },
            Node::Leaf { value: r, cover: 2.0 },
        ])
        .unwrap()
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let e = TreeEnsemble::for_schema(-3.2, &FeatureSchema::canonical());
        let mut x = FeatureVector::default();
        assert_eq!(e.predict_margin(&x), -3.2);
        x.set(Feature::Age, Some(50.0));
        assert_eq!(e.predict_margin(&x), -3.2);
    }

    #[test]
    fn all_missing_routes_by_default() {
        let mut e = TreeEnsemble::for_schema(0.0, &FeatureSchema::canonical());
        e.trees.push(stump(4, 450.0, true, 1.0, -1.0));
        e.trees.push(stump(8, 60.0, false, 0.25, 0.5));
        let x = FeatureVector::default();
        assert_eq!(e.predict_margin(&x), 1.5);
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let schema = FeatureSchema::canonical();
        let mut e = TreeEnsemble::for_schema(-3.811_097_651_234_5, &schema);
        e.trees.push(stump(4, 447.123_456_789_012_3, true, 0.1 + 0.2, -1e-17));
        e.trees.push(
            Tree::from_nodes(vec![
                Node::Split {
                    feature: 8,
                    threshold: 66.5,
                    default_left: false,
                    left: 1,
                    right: 4,
                    cover: 10.0,
                },
                Node::Split {
                    feature: 0,
                    threshold: 700.0,
                    default_left: true,
                    left: 2,
                    right: 3,
                    cover: 4.0,
                },
                Node::Leaf {
                    value: 1.0 / 3.0,
                    cover: 1.5,
                },
                Node::Leaf {
                    value: -2.0 / 7.0,
                    cover: 2.5,
                },
                Node::Leaf {
                    value: std::f64::consts::PI,
                    cover: 6.0,
                },
            ])
            .unwrap(),
        );
        let t = TargetCode::new("K70").unwrap();
        let doc = ModelDocument::new(&t, &TrainParams::default(), &e, &schema);
        let json = doc.to_json().unwrap();
        let back = ModelDocument::from_json(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.ensemble().unwrap(), e);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let mut e = TreeEnsemble::for_schema(0.0, &FeatureSchema::canonical());
        e.schema_fingerprint = "deadbeef".into();
        assert!(matches!(
            e.check_schema(&FeatureSchema::canonical()),
            Err(GbdtError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn malformed_tree_is_rejected() {
        let doc = r#"{"format":"ecg-liver-gbdt","version":1,"target":"K70","schema_fingerprint":"x",
            "feature_names":["a"],"params":{"max_depth":6,"n_rounds_max":500,"learning_rate":0.1,"l2_reg":1.0,
            "min_split_gain":0.0,"min_child_weight":1.0,"patience":10,"seed":0},"base_score":0.0,
            "trees":[[{"split":{"feature":0,"threshold":1.0,"default_left":true,"cover":1.0}},{"leaf":{"value":1.0,"cover":1.0}}]]}"#;
        let d = ModelDocument::from_json(doc).unwrap();
        assert!(matches!(d.ensemble(), Err(GbdtError::Malformed(_))));
    }
}
