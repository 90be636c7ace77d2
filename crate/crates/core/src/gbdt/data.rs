use crate::schema::{FeatureVector, LabeledCohort};

/// Column-major feature table with NaN for missing values and, per
/// feature, the row indices of present values sorted by (value, row).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
}

impl FeatureMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n_rows), "ragged columns");
        assert!(n_rows <= u32::MAX as usize);
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).filter(|&i| !col[i as usize].is_nan()).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self {
            n_rows,
            columns,
            sorted,
        }
    }

    /// Dense rows (NaN = missing), all of the same width.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], n_features: usize) -> Self {
        let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n_features, "row width");
            for (c, &v) in columns.iter_mut().zip(r) {
                c.push(v);
            }
        }
        Self::from_columns(columns)
    }

    pub fn from_vectors(vectors: &[FeatureVector]) -> Self {
        let rows: Vec<_> = vectors.iter().map(FeatureVector::to_dense).collect();
        Self::from_rows(&rows, crate::schema::N_FEATURES)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn sorted(&self, feature: usize) -> &[u32] {
        &self.sorted[feature]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }
}

/// Feature matrix with binary labels for one target.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<bool>) -> Self {
        assert_eq!(features.n_rows(), labels.len(), "labels/rows length");
        Self { features, labels }
    }

    /// Rows `rows` of `cohort`, labeled by target column `target`.
    pub fn from_cohort(cohort: &LabeledCohort, rows: &[usize], target: usize) -> Self {
        let vectors: Vec<FeatureVector> = rows.iter().map(|&i| cohort.samples[i]).collect();
        let labels = rows.iter().map(|&i| cohort.labels.get(i, target)).collect();
        Self::new(FeatureMatrix::from_vectors(&vectors), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}
