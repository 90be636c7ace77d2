use log::debug;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::ensemble::TreeEnsemble;
use super::loss::{log_loss, logistic_grad_hess};
use super::split::SplitParams;
use super::tree::grow_tree;
use crate::error::GbdtError;
use crate::metrics::auroc;
use crate::schema::{FeatureSchema, TargetCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub max_depth: usize,
    pub n_rounds_max: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub min_split_gain: f64,
    pub min_child_weight: f64,
    /// Rounds without validation AUROC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            n_rounds_max: 500,
            learning_rate: 0.1,
            l2_reg: 1.0,
            min_split_gain: 0.0,
            min_child_weight: 1.0,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainParams {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidParams(m.to_string()));
        if self.n_rounds_max == 0 {
            return bad("n_rounds_max must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_reg >= 0.0) || !(self.min_split_gain >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("l2_reg, min_split_gain and min_child_weight must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }

    pub fn split_params(&self) -> SplitParams {
        SplitParams {
            l2_reg: self.l2_reg,
            min_split_gain: self.min_split_gain,
            min_child_weight: self.min_child_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based: the ensemble holds `round` trees after this round.
    pub round: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rounds: Vec<RoundRecord>,
    /// Number of trees kept.
    pub best_round: usize,
    pub best_val_auroc: f64,
    pub stopped_early: bool,
}

/// Log-odds of the training prevalence, clamped to `[1e-6, 1 - 1e-6]`.
pub fn base_score_for(labels: &[bool]) -> f64 {
    let p = labels.iter().filter(|&&y| y).count() as f64 / labels.len().max(1) as f64;
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Boosts trees on `train`, monitoring AUROC on `val` after every round.
/// Stops after `patience` rounds without strict improvement and returns
/// the ensemble truncated to the best round.
pub fn train(
    train: &Dataset,
    val: &Dataset,
    target: &TargetCode,
    schema: &FeatureSchema,
    params: &TrainParams,
) -> Result<(TreeEnsemble, TrainHistory), GbdtError> {
    params.validate()?;
    if train.is_empty() {
        return Err(GbdtError::EmptySet {
            target: target.clone(),
            which: "training",
        });
    }
    if val.is_empty() {
        return Err(GbdtError::EmptySet {
            target: target.clone(),
            which: "validation",
        });
    }
    let val_pos = val.n_pos();
    if val_pos == 0 || val_pos == val.len() {
        return Err(GbdtError::DegenerateValidation {
            target: target.clone(),
            n_pos: val_pos,
            n_neg: val.len() - val_pos,
        });
    }
    if train.features.n_features() != schema.len() || val.features.n_features() != schema.len() {
        return Err(GbdtError::InvalidParams("dataset width differs from schema".into()));
    }

    let base = base_score_for(&train.labels);
    let mut ensemble = TreeEnsemble::for_schema(base, schema);
    let mut train_margin = vec![base; train.len()];
    let mut val_margin = vec![base; val.len()];
    let mut grad = vec![0.0; train.len()];
    let mut hess = vec![0.0; train.len()];
    let val_rows: Vec<Vec<f64>> = (0..val.len()).map(|i| val.features.row(i)).collect();
    let train_rows: Vec<Vec<f64>> = (0..train.len()).map(|i| train.features.row(i)).collect();

    let mut history = TrainHistory {
        rounds: Vec::new(),
        best_round: 0,
        best_val_auroc: f64::NEG_INFINITY,
        stopped_early: false,
    };
    for round in 1..=params.n_rounds_max {
        for i in 0..train.len() {
            (grad[i], hess[i]) = logistic_grad_hess(train_margin[i], train.labels[i]);
        }
        let tree = grow_tree(&train.features, &grad, &hess, params);
        for (m, row) in train_margin.iter_mut().zip(&train_rows) {
            *m += tree.predict_row(row);
        }
        for (m, row) in val_margin.iter_mut().zip(&val_rows) {
            *m += tree.predict_row(row);
        }
        ensemble.trees.push(tree);

        let train_loss = train_margin
            .iter()
            .zip(&train.labels)
            .map(|(&m, &y)| log_loss(m, y))
            .sum::<f64>()
            / train.len() as f64;
        let val_auroc = auroc(&val_margin, &val.labels)?;
        history.rounds.push(RoundRecord {
            round,
            train_loss,
            val_auroc,
        });
        if val_auroc > history.best_val_auroc {
            history.best_val_auroc = val_auroc;
            history.best_round = round;
        } else if round - history.best_round >= params.patience {
            history.stopped_early = true;
            break;
        }
    }
    debug!(
        "{target}: best round {} of {} (val AUROC {:.4})",
        history.best_round,
        history.rounds.len(),
        history.best_val_auroc
    );
    ensemble.truncate(history.best_round);
    Ok((ensemble, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::data::FeatureMatrix;
    use crate::schema::N_FEATURES;

    fn dataset(rows: Vec<[f64; N_FEATURES]>, labels: Vec<bool>) -> Dataset {
        Dataset::new(FeatureMatrix::from_rows(&rows, N_FEATURES), labels)
    }

    fn row(x: f64) -> [f64; N_FEATURES] {
        let mut r = [f64::NAN; N_FEATURES];
        r[4] = x;
        r[8] = 50.0;
        r[9] = 1.0;
        r
    }

    #[test]
    fn degenerate_validation_names_target() {
        let tr = dataset(vec![row(1.0), row(2.0)], vec![false, true]);
        let va = dataset(vec![row(1.0), row(2.0)], vec![false, false]);
        let t = TargetCode::new("K729").unwrap();
        let err = train(&tr, &va, &t, &FeatureSchema::canonical(), &TrainParams::default()).unwrap_err();
        assert!(err.to_string().contains("K729"));
    }

    #[test]
    fn base_score_is_prevalence_log_odds() {
        let b = base_score_for(&[true, false, false, false]);
        assert!((b - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(base_score_for(&[false; 3]), (1e-6f64 / (1.0 - 1e-6)).ln());
    }

    #[test]
    fn separable_data_reaches_perfect_auroc_and_stops() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let tr = dataset(
            xs.iter().map(|&x| row(x)).collect(),
            xs.iter().map(|&x| x >= 100.0).collect(),
        );
        let vx: Vec<f64> = (0..50).map(|i| i as f64 * 4.0 + 0.5).collect();
        let va = dataset(
            vx.iter().map(|&x| row(x)).collect(),
            vx.iter().map(|&x| x >= 100.0).collect(),
        );
        let params = TrainParams::default();
        let (model, hist) = train(
            &tr,
            &va,
            &TargetCode::new("K70").unwrap(),
            &FeatureSchema::canonical(),
            &params,
        )
        .unwrap();
        assert_eq!(hist.best_val_auroc, 1.0);
        assert!(hist.stopped_early);
        assert_eq!(hist.rounds.len(), hist.best_round + params.patience);
        assert_eq!(model.trees.len(), hist.best_round);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = TrainParams {
            patience: 0,
            ..TrainParams::default()
        };
        assert!(p.validate().is_err());
        let p = TrainParams {
            learning_rate: -0.1,
            ..TrainParams::default()
        };
        assert!(p.validate().is_err());
    }
}
