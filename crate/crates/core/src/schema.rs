//! Feature schema, per-patient feature vectors, ICD target codes and the
//! labeled cohort that every downstream stage consumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SchemaError;

/// Number of features in the canonical schema.
pub const N_FEATURES: usize = 10;

/// Canonical feature order. The discriminant is the column index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    RrInterval = 0,
    PrInterval = 1,
    QrsDuration = 2,
    QtInterval = 3,
    QtcInterval = 4,
    PAxis = 5,
    QrsAxis = 6,
    TAxis = 7,
    Age = 8,
    Sex = 9,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::RrInterval,
        Feature::PrInterval,
        Feature::QrsDuration,
        Feature::QtInterval,
        Feature::QtcInterval,
        Feature::PAxis,
        Feature::QrsAxis,
        Feature::TAxis,
        Feature::Age,
        Feature::Sex,
    ];

    /// The eight ECG measurements, in file column order.
    pub const ECG: [Feature; 8] = [
        Feature::RrInterval,
        Feature::PrInterval,
        Feature::QrsDuration,
        Feature::QtInterval,
        Feature::QtcInterval,
        Feature::PAxis,
        Feature::QrsAxis,
        Feature::TAxis,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::RrInterval => "rr_interval",
            Feature::PrInterval => "pr_interval",
            Feature::QrsDuration => "qrs_duration",
            Feature::QtInterval => "qt_interval",
            Feature::QtcInterval => "qtc_interval",
            Feature::PAxis => "p_axis",
            Feature::QrsAxis => "qrs_axis",
            Feature::TAxis => "t_axis",
            Feature::Age => "age",
            Feature::Sex => "sex",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Milliseconds,
    Degrees,
    Years,
    Dimensionless,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub feature: Feature,
    pub kind: FeatureKind,
    pub unit: Unit,
    /// Closed interval of accepted values.
    pub plausible_range: (f64, f64),
}

impl FeatureDescriptor {
    pub fn name(&self) -> &'static str {
        self.feature.name()
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.plausible_range.0 && value <= self.plausible_range.1
    }

    pub fn is_required(&self) -> bool {
        matches!(self.feature, Feature::Age | Feature::Sex)
    }
}

/// Ordered feature descriptors shared by every cohort and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    descriptors: Vec<FeatureDescriptor>,
}

const DURATION_RANGE: (f64, f64) = (0.0, 4000.0);
const AXIS_RANGE: (f64, f64) = (-180.0, 360.0);
const AGE_RANGE: (f64, f64) = (18.0, 120.0);

impl FeatureSchema {
    /// The ten-feature schema: eight ECG measurements, age and sex.
    pub fn canonical() -> Self {
        let descriptors = Feature::ALL
            .iter()
            .map(|&feature| {
                let (kind, unit, plausible_range) = match feature {
                    Feature::RrInterval
                    | Feature::PrInterval
                    | Feature::QrsDuration
                    | Feature::QtInterval
                    | Feature::QtcInterval => (FeatureKind::Continuous, Unit::Milliseconds, DURATION_RANGE),
                    Feature::PAxis | Feature::QrsAxis | Feature::TAxis => {
                        (FeatureKind::Continuous, Unit::Degrees, AXIS_RANGE)
                    }
                    Feature::Age => (FeatureKind::Continuous, Unit::Years, AGE_RANGE),
                    Feature::Sex => (FeatureKind::Binary, Unit::Dimensionless, (0.0, 1.0)),
                };
                FeatureDescriptor {
                    feature,
                    kind,
                    unit,
                    plausible_range,
                }
            })
            .collect();
        Self { descriptors }
    }

    pub fn descriptors(&self) -> &[FeatureDescriptor] {
        &self.descriptors
    }

    pub fn descriptor(&self, feature: Feature) -> &FeatureDescriptor {
        &self.descriptors[feature.index()]
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.descriptors.iter().map(|d| d.name()).collect()
    }

    /// Hex SHA-256 over the ordered (name, kind, unit, range) tuples.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for d in &self.descriptors {
            hasher.update(
                format!(
                    "{}|{:?}|{:?}|{:?}|{:?};",
                    d.name(),
                    d.kind,
                    d.unit,
                    d.plausible_range.0,
                    d.plausible_range.1
                )
                .as_bytes(),
            );
        }
        hex::encode(hasher.finalize())
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::canonical()
    }
}

/// One patient record aligned to the canonical schema; `None` is missing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector(pub [Option<f64>; N_FEATURES]);

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.0[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: Option<f64>) {
        self.0[feature.index()] = value;
    }

    pub fn values(&self) -> &[Option<f64>; N_FEATURES] {
        &self.0
    }

    /// Dense row with NaN standing in for missing values.
    pub fn to_dense(&self) -> [f64; N_FEATURES] {
        self.0.map(|v| v.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationRule {
    /// A required field (age or sex) is absent.
    Required,
    BelowRange,
    AboveRange,
    /// NaN or infinite value.
    NotFinite,
}

impl fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationRule::Required => "required field missing",
            ViolationRule::BelowRange => "below plausible range",
            ViolationRule::AboveRange => "above plausible range",
            ViolationRule::NotFinite => "not finite",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub feature: Feature,
    pub value: Option<f64>,
    pub rule: ViolationRule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value {
            Some(v) => write!(f, "{}={}: {}", self.feature, v, self.rule),
            None => write!(f, "{}: {}", self.feature, self.rule),
        }
    }
}

/// Lists every range or required-field violation in `v`. Empty means valid.
pub fn validate_vector(v: &FeatureVector, schema: &FeatureSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    for d in schema.descriptors() {
        let value = v.get(d.feature);
        match value {
            None if d.is_required() => out.push(Violation {
                feature: d.feature,
                value: None,
                rule: ViolationRule::Required,
            }),
            None => {}
            Some(x) if !x.is_finite() => out.push(Violation {
                feature: d.feature,
                value,
                rule: ViolationRule::NotFinite,
            }),
            Some(x) if x < d.plausible_range.0 => out.push(Violation {
                feature: d.feature,
                value,
                rule: ViolationRule::BelowRange,
            }),
            Some(x) if x > d.plausible_range.1 => out.push(Violation {
                feature: d.feature,
                value,
                rule: ViolationRule::AboveRange,
            }),
            Some(x) if d.kind == FeatureKind::Binary && x != 0.0 && x != 1.0 => out.push(Violation {
                feature: d.feature,
                value,
                rule: ViolationRule::AboveRange,
            }),
            Some(_) => {}
        }
    }
    out
}

/// A normalized ICD-10-CM code used as a prediction target: one letter
/// followed by digits, no dot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TargetCode(String);

impl TargetCode {
    pub fn new(code: &str) -> Result<Self, SchemaError> {
        let mut chars = code.chars();
        let ok = matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
            && code.len() >= 2
            && chars.all(|c| c.is_ascii_digit());
        if ok {
            Ok(Self(code.to_string()))
        } else {
            Err(SchemaError::InvalidTarget(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when every code carrying `self` also carries `other`
    /// (e.g. K7030 implies K703 and K70).
    pub fn implies(&self, other: &TargetCode) -> bool {
        self.0.starts_with(&other.0)
    }

    pub fn description(&self) -> &'static str {
        match self.0.as_str() {
            "K70" => "Alcoholic liver disease",
            "K703" => "Alcoholic cirrhosis of liver",
            "K7030" => "Alcoholic cirrhosis of liver without ascites",
            "K72" => "Hepatic failure, not elsewhere classified",
            "K729" => "Hepatic failure, unspecified",
            "K7290" => "Hepatic failure, unspecified without coma",
            _ => "",
        }
    }

    /// The six liver-disease targets in experiment order.
    pub fn canonical_set() -> Vec<TargetCode> {
        ["K70", "K703", "K7030", "K72", "K729", "K7290"]
            .iter()
            .map(|c| TargetCode(c.to_string()))
            .collect()
    }
}

impl fmt::Display for TargetCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for TargetCode {
    type Err = SchemaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TargetCode::new(s)
    }
}

impl TryFrom<String> for TargetCode {
    type Error = SchemaError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        TargetCode::new(&s)
    }
}

impl From<TargetCode> for String {
    fn from(t: TargetCode) -> String {
        t.0
    }
}

/// Dense samples × targets binary matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMatrix {
    n_targets: usize,
    bits: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(n_samples: usize, n_targets: usize) -> Self {
        Self {
            n_targets,
            bits: vec![false; n_samples * n_targets],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>], n_targets: usize) -> Self {
        let mut m = Self::zeros(rows.len(), n_targets);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n_targets, "label row width");
            m.row_mut(i).copy_from_slice(row);
        }
        m
    }

    pub fn n_samples(&self) -> usize {
        self.bits.len().checked_div(self.n_targets).unwrap_or(0)
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn get(&self, sample: usize, target: usize) -> bool {
        self.bits[sample * self.n_targets + target]
    }

    pub fn set(&mut self, sample: usize, target: usize, value: bool) {
        self.bits[sample * self.n_targets + target] = value;
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.bits[sample * self.n_targets..(sample + 1) * self.n_targets]
    }

    pub fn row_mut(&mut self, sample: usize) -> &mut [bool] {
        &mut self.bits[sample * self.n_targets..(sample + 1) * self.n_targets]
    }

    pub fn column(&self, target: usize) -> Vec<bool> {
        (0..self.n_samples()).map(|i| self.get(i, target)).collect()
    }

    pub fn positives(&self, target: usize) -> usize {
        (0..self.n_samples()).filter(|&i| self.get(i, target)).count()
    }
}

/// Feature table plus label matrix and fold assignment. Before splitting,
/// every sample sits in fold 0 of a single fold.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCohort {
    pub schema: FeatureSchema,
    pub record_ids: Vec<String>,
    pub samples: Vec<FeatureVector>,
    pub labels: LabelMatrix,
    pub targets: Vec<TargetCode>,
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
}

impl LabeledCohort {
    pub fn new(
        schema: FeatureSchema,
        record_ids: Vec<String>,
        samples: Vec<FeatureVector>,
        labels: LabelMatrix,
        targets: Vec<TargetCode>,
    ) -> Result<Self, SchemaError> {
        let n = samples.len();
        let cohort = Self {
            schema,
            record_ids,
            samples,
            labels,
            targets,
            fold_of: vec![0; n],
            n_folds: 1,
        };
        cohort.check()?;
        Ok(cohort)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn target_index(&self, code: &TargetCode) -> Option<usize> {
        self.targets.iter().position(|t| t == code)
    }

    pub fn with_folds(mut self, fold_of: Vec<usize>, n_folds: usize) -> Result<Self, SchemaError> {
        self.fold_of = fold_of;
        self.n_folds = n_folds;
        self.check()?;
        Ok(self)
    }

    /// Indices of samples whose fold is in `folds`.
    pub fn rows_in_folds(&self, folds: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| folds.contains(&self.fold_of[i])).collect()
    }

    pub fn prevalence(&self, target: usize) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.positives(target) as f64 / self.len() as f64
    }

    /// Structural invariants: aligned lengths, fold range, and prefix
    /// consistency of labels between nested targets.
    pub fn check(&self) -> Result<(), SchemaError> {
        let n = self.samples.len();
        if self.record_ids.len() != n
            || self.fold_of.len() != n
            || (self.labels.n_targets() > 0 && self.labels.n_samples() != n)
        {
            return Err(SchemaError::LengthMismatch);
        }
        if self.labels.n_targets() != self.targets.len() {
            return Err(SchemaError::LengthMismatch);
        }
        if let Some(&f) = self.fold_of.iter().find(|&&f| f >= self.n_folds) {
            return Err(SchemaError::FoldOutOfRange {
                fold: f,
                n_folds: self.n_folds,
            });
        }
        for (c, child) in self.targets.iter().enumerate() {
            for (p, parent) in self.targets.iter().enumerate() {
                if c == p || !child.implies(parent) {
                    continue;
                }
                if let Some(i) = (0..n).find(|&i| self.labels.get(i, c) && !self.labels.get(i, p)) {
                    return Err(SchemaError::HierarchyViolation {
                        record_id: self.record_ids[i].clone(),
                        child: child.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_medians() -> FeatureVector {
        let mut v = FeatureVector::default();
        for (f, x) in [
            (Feature::RrInterval, 769.0),
            (Feature::PrInterval, 158.0),
            (Feature::QrsDuration, 94.0),
            (Feature::QtInterval, 394.0),
            (Feature::QtcInterval, 447.0),
            (Feature::PAxis, 51.0),
            (Feature::QrsAxis, 13.0),
            (Feature::TAxis, 42.0),
            (Feature::Age, 66.0),
            (Feature::Sex, 1.0),
        ] {
            v.set(f, Some(x));
        }
        v
    }

    #[test]
    fn canonical_schema_order_and_uniqueness() {
        let s = FeatureSchema::canonical();
        assert_eq!(
            s.names(),
            vec![
                "rr_interval",
                "pr_interval",
                "qrs_duration",
                "qt_interval",
                "qtc_interval",
                "p_axis",
                "qrs_axis",
                "t_axis",
                "age",
                "sex"
            ]
        );
        let mut names = s.names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), N_FEATURES);
        assert_eq!(s.descriptor(Feature::Sex).kind, FeatureKind::Binary);
        assert_eq!(s.descriptor(Feature::TAxis).unit, Unit::Degrees);
    }

    #[test]
    fn table1_medians_validate_clean() {
        let s = FeatureSchema::canonical();
        assert!(validate_vector(&table1_medians(), &s).is_empty());
    }

    #[test]
    fn missing_age_is_one_violation() {
        let s = FeatureSchema::canonical();
        let mut v = table1_medians();
        v.set(Feature::Age, None);
        let errs = validate_vector(&v, &s);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].feature, Feature::Age);
        assert_eq!(errs[0].rule, ViolationRule::Required);
    }

    #[test]
    fn negative_qtc_is_below_range() {
        let s = FeatureSchema::canonical();
        let mut v = table1_medians();
        v.set(Feature::QtcInterval, Some(-5.0));
        let errs = validate_vector(&v, &s);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].feature, Feature::QtcInterval);
        assert_eq!(errs[0].rule, ViolationRule::BelowRange);
    }

    #[test]
    fn missing_ecg_field_is_allowed() {
        let s = FeatureSchema::canonical();
        let mut v = table1_medians();
        v.set(Feature::PAxis, None);
        assert!(validate_vector(&v, &s).is_empty());
    }

    #[test]
    fn target_codes() {
        assert!(TargetCode::new("K7030").is_ok());
        assert!(TargetCode::new("K70.30").is_err());
        assert!(TargetCode::new("k70").is_err());
        assert!(TargetCode::new("K").is_err());
        let k7030 = TargetCode::new("K7030").unwrap();
        let k70 = TargetCode::new("K70").unwrap();
        assert!(k7030.implies(&k70));
        assert!(!k70.implies(&k7030));
        assert_eq!(TargetCode::canonical_set().len(), 6);
    }

    #[test]
    fn fingerprint_is_stable_and_order_sensitive() {
        let a = FeatureSchema::canonical();
        assert_eq!(a.fingerprint(), FeatureSchema::canonical().fingerprint());
        let mut b = a.clone();
        b.descriptors.swap(0, 1);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn cohort_rejects_hierarchy_violation() {
        let targets = vec![TargetCode::new("K70").unwrap(), TargetCode::new("K703").unwrap()];
        let labels = LabelMatrix::from_rows(&[vec![false, true]], 2);
        let err = LabeledCohort::new(
            FeatureSchema::canonical(),
            vec!["r1".into()],
            vec![FeatureVector::default()],
            labels,
            targets,
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::HierarchyViolation { .. }));
    }
}
