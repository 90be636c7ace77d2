//! ECG-feature based liver disease classification.
//!
//! The pipeline reads cohort files of pre-extracted ECG measurements plus
//! age and sex, derives one binary label per ICD-10-CM target by prefix
//! matching, assigns stratified 18:1:1 folds, trains one boosted tree
//! model per target with early stopping on validation AUROC, reports
//! bootstrap AUROC intervals and explains predictions with exact
//! path-dependent TreeSHAP.

pub mod error;
pub mod gbdt;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod schema;
pub mod shap;
pub mod splits;
pub mod synth;
