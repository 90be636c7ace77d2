use thiserror::Error;

use crate::schema::TargetCode;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid target code {0:?}: expected one letter followed by digits")]
    InvalidTarget(String),
    #[error("cohort columns have mismatched lengths")]
    LengthMismatch,
    #[error("fold index {fold} out of range for {n_folds} folds")]
    FoldOutOfRange { fold: usize, n_folds: usize },
    #[error("record {record_id}: {child} is positive but {parent} is not")]
    HierarchyViolation {
        record_id: String,
        child: TargetCode,
        parent: TargetCode,
    },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("duplicate record_id {record_id:?} at row {row}")]
    DuplicateId { record_id: String, row: usize },
    #[error("invalid ICD code {0:?}")]
    InvalidCode(String),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("cannot split an empty cohort")]
    EmptyCohort,
    #[error("fold plan needs at least 3 folds for train/validation/test roles, got {0}")]
    TooFewFolds(usize),
    #[error("fold file: {0}")]
    FoldFile(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AUROC needs at least one positive and one negative (got {n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("every bootstrap resample was single-class")]
    AllResamplesDegenerate,
}

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("target {target}: validation set has a single class ({n_pos} positive, {n_neg} negative)")]
    DegenerateValidation {
        target: TargetCode,
        n_pos: usize,
        n_neg: usize,
    },
    #[error("target {target}: empty {which} set")]
    EmptySet { target: TargetCode, which: &'static str },
    #[error("invalid training parameter: {0}")]
    InvalidParams(String),
    #[error("schema fingerprint mismatch: model {model}, data {data}")]
    SchemaMismatch { model: String, data: String },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("tree {tree}, node {node}: zero cover")]
    ZeroCover { tree: usize, node: usize },
    #[error("brute-force Shapley supports at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("input has {got} features, model expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("attribution matrix is empty")]
    Empty,
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible hierarchy: {child} prevalence exceeds parent {parent}")]
    InfeasibleHierarchy { child: TargetCode, parent: TargetCode },
    #[error("label draw for {0} is single-class after redraw")]
    DegenerateDraw(TargetCode),
    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
