//! Second-order gradient boosting of regression trees for binary
//! classification with logistic loss.
//!
//! Splits are found by exact greedy search over pre-sorted feature values.
//! Missing values (NaN in dense rows) follow a per-node default direction
//! chosen during split search. Boosting stops early on validation AUROC.

mod data;
mod ensemble;
mod loss;
mod split;
mod train;
mod tree;

pub use data::{Dataset, FeatureMatrix};
pub use ensemble::{ModelDocument, TreeEnsemble, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use loss::{log_loss, logistic_grad_hess, sigmoid, HESSIAN_FLOOR};
pub use split::{find_best_split, split_gain, SplitCandidate, SplitParams};
pub use train::{base_score_for, train, RoundRecord, TrainHistory, TrainParams};
pub use tree::{grow_tree, Node, Tree};
