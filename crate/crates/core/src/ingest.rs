//! Cohort file parsing, ICD normalization, prefix label derivation and
//! harmonization of raw records into the canonical schema.
//!
//! Cohort file layout (UTF-8, comma separated, header required):
//!
//! ```text
//! record_id,age,sex,rr_interval,pr_interval,qrs_duration,qt_interval,qtc_interval,p_axis,qrs_axis,t_axis,icd_codes
//! ```
//!
//! `icd_codes` is a semicolon-joined list that may be empty. Missing numeric
//! cells are empty strings.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::schema::{Feature, FeatureSchema, FeatureVector, LabelMatrix, LabeledCohort, TargetCode, N_FEATURES};

pub const COHORT_COLUMNS: [&str; 12] = [
    "record_id",
    "age",
    "sex",
    "rr_interval",
    "pr_interval",
    "qrs_duration",
    "qt_interval",
    "qtc_interval",
    "p_axis",
    "qrs_axis",
    "t_axis",
    "icd_codes",
];

/// Which cohort a file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    /// Training and internal evaluation cohort.
    Internal,
    /// Independent external validation cohort.
    External,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::Internal => "internal",
            SourceTag::External => "external",
        })
    }
}

impl std::str::FromStr for SourceTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(SourceTag::Internal),
            "external" => Ok(SourceTag::External),
            other => Err(format!("unknown source tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub record_id: String,
    pub age: f64,
    pub sex: String,
    /// ECG measurements in [`Feature::ECG`] order.
    pub ecg: [Option<f64>; 8],
    pub icd_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowRejection {
    /// 1-based data row number (header excluded), or 0 when the rejection
    /// happened after parsing.
    pub row: usize,
    pub record_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedCohort {
    pub source: SourceTag,
    pub records: Vec<RawRecord>,
    pub rejections: Vec<RowRejection>,
}

impl ParsedCohort {
    pub fn total_rows(&self) -> usize {
        self.records.len() + self.rejections.len()
    }
}

fn parse_optional(cell: &str) -> Result<Option<f64>, ()> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

fn parse_row(row: &csv::StringRecord) -> Result<RawRecord, String> {
    if row.len() != COHORT_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", COHORT_COLUMNS.len(), row.len()));
    }
    let record_id = row[0].trim().to_string();
    if record_id.is_empty() {
        return Err("empty record_id".into());
    }
    let age = match parse_optional(&row[1]) {
        Ok(Some(a)) => a,
        Ok(None) => return Err("missing required value age".into()),
        Err(()) => return Err("unparseable value in age".into()),
    };
    let sex = row[2].trim().to_string();
    let mut ecg = [None; 8];
    for (k, slot) in ecg.iter_mut().enumerate() {
        *slot = parse_optional(&row[3 + k]).map_err(|_| format!("unparseable value in {}", COHORT_COLUMNS[3 + k]))?;
    }
    let icd_codes = row[11]
        .split(';')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect();
    Ok(RawRecord {
        record_id,
        age,
        sex,
        ecg,
        icd_codes,
    })
}

/// Parses a cohort file. Malformed rows are rejected individually with
/// their row number; a malformed header or a duplicated `record_id` is fatal.
pub fn parse_cohort_file<R: Read>(reader: R, source: SourceTag) -> Result<ParsedCohort, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| IngestError::Header(e.to_string()))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != COHORT_COLUMNS {
        return Err(IngestError::Header(format!(
            "expected columns {:?}, found {:?}",
            COHORT_COLUMNS, names
        )));
    }

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut seen = HashSet::new();
    for (i, result) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match result {
            Ok(r) => r,
            Err(e) => {
                rejections.push(RowRejection {
                    row: row_no,
                    record_id: None,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let id = row.get(0).map(|s| s.trim().to_string()).unwrap_or_default();
        if !id.is_empty() && !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId {
                record_id: id,
                row: row_no,
            });
        }
        match parse_row(&row) {
            Ok(rec) => records.push(rec),
            Err(reason) => {
                debug!("{source} row {row_no}: rejected ({reason})");
                rejections.push(RowRejection {
                    row: row_no,
                    record_id: (!id.is_empty()).then_some(id),
                    reason,
                });
            }
        }
    }
    if !rejections.is_empty() {
        warn!(
            "{source}: {} of {} rows rejected",
            rejections.len(),
            records.len() + rejections.len()
        );
    }
    Ok(ParsedCohort {
        source,
        records,
        rejections,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records in the cohort file layout. Numbers use the shortest
/// representation that parses back to the same `f64`.
pub fn write_cohort_file<W: Write>(records: &[RawRecord], writer: W) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COHORT_COLUMNS)?;
    for r in records {
        let mut row: Vec<String> = Vec::with_capacity(COHORT_COLUMNS.len());
        row.push(r.record_id.clone());
        row.push(r.age.to_string());
        row.push(r.sex.clone());
        row.extend(r.ecg.iter().map(|v| fmt_opt(*v)));
        row.push(r.icd_codes.join(";"));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Uppercases, strips dots and surrounding whitespace: `" k70.30 "` → `"K7030"`.
pub fn normalize_icd(raw: &str) -> Result<String, IngestError> {
    let code: String = raw
        .trim()
        .chars()
        .filter(|&c| c != '.')
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let mut chars = code.chars();
    let valid = matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && code.len() >= 2
        && chars.all(|c| c.is_ascii_alphanumeric());
    if valid {
        Ok(code)
    } else {
        Err(IngestError::InvalidCode(raw.to_string()))
    }
}

/// `label(i, t) = 1` iff some normalized code of sample `i` starts with
/// target `t`.
pub fn derive_labels<S: AsRef<str>>(codes: &[Vec<S>], targets: &[TargetCode]) -> LabelMatrix {
    let mut labels = LabelMatrix::zeros(codes.len(), targets.len());
    for (i, sample_codes) in codes.iter().enumerate() {
        for (t, target) in targets.iter().enumerate() {
            let hit = sample_codes.iter().any(|c| c.as_ref().starts_with(target.as_str()));
            labels.set(i, t, hit);
        }
    }
    labels
}

/// Maps the accepted sex tokens onto 0 = female, 1 = male.
pub fn map_sex(token: &str) -> Option<f64> {
    match token.trim().to_ascii_lowercase().as_str() {
        "f" | "female" | "0" => Some(0.0),
        "m" | "male" | "1" => Some(1.0),
        _ => None,
    }
}

/// Per-feature count of values replaced by missing because they fell
/// outside the plausible range.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RangeLog {
    pub out_of_range: [usize; N_FEATURES],
}

impl RangeLog {
    pub fn total(&self) -> usize {
        self.out_of_range.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Harmonized {
    pub source: SourceTag,
    pub cohort: LabeledCohort,
    pub rejections: Vec<RowRejection>,
    pub range_log: RangeLog,
}

/// Builds canonical feature vectors and labels. Out-of-range ECG values
/// become missing; an unmappable sex token, an out-of-range age or an
/// invalid ICD code rejects the record.
pub fn harmonize(records: &[RawRecord], source: SourceTag, targets: &[TargetCode]) -> Result<Harmonized, IngestError> {
    let schema = FeatureSchema::canonical();
    let mut range_log = RangeLog::default();
    let mut rejections = Vec::new();
    let mut ids = Vec::with_capacity(records.len());
    let mut samples = Vec::with_capacity(records.len());
    let mut codes: Vec<Vec<String>> = Vec::with_capacity(records.len());

    'records: for rec in records {
        let reject = |reason: String| RowRejection {
            row: 0,
            record_id: Some(rec.record_id.clone()),
            reason,
        };
        let Some(sex) = map_sex(&rec.sex) else {
            rejections.push(reject(format!("unmappable sex token {:?}", rec.sex)));
            continue;
        };
        if !schema.descriptor(Feature::Age).contains(rec.age) {
            rejections.push(reject(format!("age {} outside plausible range", rec.age)));
            continue;
        }
        let mut normalized = Vec::with_capacity(rec.icd_codes.len());
        for raw in &rec.icd_codes {
            match normalize_icd(raw) {
                Ok(c) => normalized.push(c),
                Err(_) => {
                    rejections.push(reject(format!("invalid ICD code {raw:?}")));
                    continue 'records;
                }
            }
        }

        let mut v = FeatureVector::default();
        for (k, &feature) in Feature::ECG.iter().enumerate() {
            let value = rec.ecg[k].filter(|&x| {
                let ok = schema.descriptor(feature).contains(x);
                if !ok {
                    range_log.out_of_range[feature.index()] += 1;
                }
                ok
            });
            v.set(feature, value);
        }
        v.set(Feature::Age, Some(rec.age));
        v.set(Feature::Sex, Some(sex));

        ids.push(rec.record_id.clone());
        samples.push(v);
        codes.push(normalized);
    }

    if range_log.total() > 0 {
        warn!("{source}: {} out-of-range ECG values set to missing", range_log.total());
    }
    let labels = derive_labels(&codes, targets);
    let cohort = LabeledCohort::new(schema, ids, samples, labels, targets.to_vec())?;
    Ok(Harmonized {
        source,
        cohort,
        rejections,
        range_log,
    })
}

fn label_column(t: &TargetCode) -> String {
    format!("label_{t}")
}

/// Serializes a labeled cohort: record_id, the ten features, one label
/// column per target, fold and fold count.
pub fn write_labeled_cohort<W: Write>(cohort: &LabeledCohort, writer: W) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["record_id".into()];
    header.extend(cohort.schema.names().iter().map(|s| s.to_string()));
    header.extend(cohort.targets.iter().map(label_column));
    header.push("fold".into());
    header.push("n_folds".into());
    wtr.write_record(&header)?;
    for i in 0..cohort.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(cohort.record_ids[i].clone());
        row.extend(cohort.samples[i].values().iter().map(|v| fmt_opt(*v)));
        row.extend(
            cohort
                .labels
                .row(i)
                .iter()
                .map(|&b| if b { "1".to_string() } else { "0".to_string() }),
        );
        row.push(cohort.fold_of[i].to_string());
        row.push(cohort.n_folds.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_labeled_cohort<R: Read>(reader: R) -> Result<LabeledCohort, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let schema = FeatureSchema::canonical();
    let names = schema.names();
    let n_cols = header.len();
    if n_cols < 1 + N_FEATURES + 2
        || &header[0] != "record_id"
        || (0..N_FEATURES).any(|k| header[1 + k] != *names[k])
        || &header[n_cols - 2] != "fold"
        || &header[n_cols - 1] != "n_folds"
    {
        return Err(IngestError::Header(format!(
            "unexpected labeled cohort header {header:?}"
        )));
    }
    let targets = header
        .iter()
        .skip(1 + N_FEATURES)
        .take(n_cols - 3 - N_FEATURES)
        .map(|h| {
            h.strip_prefix("label_")
                .ok_or_else(|| IngestError::Header(format!("bad label column {h:?}")))
                .and_then(|c| Ok(TargetCode::new(c)?))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ids = Vec::new();
    let mut samples = Vec::new();
    let mut label_rows = Vec::new();
    let mut folds = Vec::new();
    let mut n_folds = 1;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |reason: &str| IngestError::Row {
            row,
            reason: reason.to_string(),
        };
        ids.push(rec[0].to_string());
        let mut v = FeatureVector::default();
        for k in 0..N_FEATURES {
            v.0[k] = parse_optional(&rec[1 + k]).map_err(|_| bad("unparseable value"))?;
        }
        samples.push(v);
        let labels = (0..targets.len())
            .map(|t| match &rec[1 + N_FEATURES + t] {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad("label must be 0 or 1")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        label_rows.push(labels);
        folds.push(rec[n_cols - 2].parse::<usize>().map_err(|_| bad("bad fold"))?);
        n_folds = rec[n_cols - 1].parse::<usize>().map_err(|_| bad("bad n_folds"))?;
    }
    let labels = LabelMatrix::from_rows(&label_rows, targets.len());
    let cohort = LabeledCohort::new(schema, ids, samples, labels, targets)?;
    Ok(cohort.with_folds(folds, n_folds)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "record_id,age,sex,rr_interval,pr_interval,qrs_duration,qt_interval,qtc_interval,p_axis,qrs_axis,t_axis,icd_codes\n";

    fn targets(codes: &[&str]) -> Vec<TargetCode> {
        codes.iter().map(|c| TargetCode::new(c).unwrap()).collect()
    }

    #[test]
    fn parses_well_formed_rows() {
        let data = format!(
            "{HEADER}a,66,F,769,158,94,394,447,51,13,42,K70.30;I10\nb,52,M,857,,90,392,421,53,48,44,\nc,70,1,700,150,100,400,450,40,20,30,K72.90\n"
        );
        let parsed = parse_cohort_file(data.as_bytes(), SourceTag::Internal).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert!(parsed.rejections.is_empty());
        assert_eq!(parsed.records[0].icd_codes, vec!["K70.30", "I10"]);
        assert_eq!(parsed.records[1].ecg[1], None);
        assert!(parsed.records[1].icd_codes.is_empty());
    }

    #[test]
    fn non_numeric_axis_rejects_row() {
        let data = format!("{HEADER}a,66,F,769,158,94,394,447,51,abc,42,\nb,52,M,857,160,90,392,421,53,48,44,\n");
        let parsed = parse_cohort_file(data.as_bytes(), SourceTag::External).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejections.len(), 1);
        assert_eq!(parsed.rejections[0].row, 1);
        assert!(parsed.rejections[0].reason.contains("unparseable value"));
        assert_eq!(parsed.total_rows(), 2);
    }

    #[test]
    fn wrong_field_count_rejects_row() {
        let data = format!("{HEADER}a,66,F,769\n");
        let parsed = parse_cohort_file(data.as_bytes(), SourceTag::Internal).unwrap();
        assert_eq!(parsed.rejections.len(), 1);
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let data = format!("{HEADER}a,66,F,769,158,94,394,447,51,13,42,\na,52,M,857,160,90,392,421,53,48,44,\n");
        let err = parse_cohort_file(data.as_bytes(), SourceTag::Internal).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateId { row: 2, .. }));
    }

    #[test]
    fn bad_header_is_fatal() {
        let data = "id,age\n1,2\n";
        assert!(matches!(
            parse_cohort_file(data.as_bytes(), SourceTag::Internal),
            Err(IngestError::Header(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_icd("K70.30").unwrap(), "K7030");
        assert_eq!(normalize_icd("k729").unwrap(), "K729");
        assert_eq!(normalize_icd("  k70.30 ").unwrap(), "K7030");
        assert!(normalize_icd("7030").is_err());
        assert!(normalize_icd("").is_err());
        assert!(normalize_icd("K70-30").is_err());
    }

    #[test]
    fn derive_labels_examples() {
        let t = targets(&["K70", "K703", "K7030"]);
        let m = derive_labels(&[vec!["K7030"]], &t);
        assert_eq!(m.row(0), &[true, true, true]);

        let m = derive_labels(&[vec!["K72"]], &targets(&["K7290"]));
        assert_eq!(m.row(0), &[false]);

        // K701 starts with K70 but not K703; I10 matches neither.
        let m = derive_labels(&[vec!["K701", "I10"]], &targets(&["K70", "K703"]));
        assert_eq!(m.row(0), &[true, false]);
    }

    fn record(id: &str, sex: &str, pr: Option<f64>) -> RawRecord {
        RawRecord {
            record_id: id.into(),
            age: 60.0,
            sex: sex.into(),
            ecg: [
                Some(800.0),
                pr,
                Some(90.0),
                Some(400.0),
                Some(440.0),
                Some(50.0),
                Some(10.0),
                Some(40.0),
            ],
            icd_codes: vec!["K70.30".into()],
        }
    }

    #[test]
    fn harmonize_maps_sex_and_masks_out_of_range() {
        let recs = vec![
            record("a", "F", Some(160.0)),
            record("b", "male", Some(9999.0)),
            record("c", "unknown", Some(160.0)),
        ];
        let h = harmonize(&recs, SourceTag::Internal, &TargetCode::canonical_set()).unwrap();
        assert_eq!(h.cohort.len(), 2);
        assert_eq!(h.cohort.samples[0].get(Feature::Sex), Some(0.0));
        assert_eq!(h.cohort.samples[1].get(Feature::Sex), Some(1.0));
        assert_eq!(h.cohort.samples[1].get(Feature::PrInterval), None);
        assert_eq!(h.range_log.out_of_range[Feature::PrInterval.index()], 1);
        assert_eq!(h.rejections.len(), 1);
        assert!(h.rejections[0].reason.contains("sex"));
        assert_eq!(h.cohort.labels.row(0), &[true, true, true, false, false, false]);
    }

    #[test]
    fn harmonize_is_source_independent() {
        let recs = vec![record("a", "F", Some(160.0)), record("b", "1", None)];
        let t = TargetCode::canonical_set();
        let a = harmonize(&recs, SourceTag::Internal, &t).unwrap();
        let b = harmonize(&recs, SourceTag::External, &t).unwrap();
        assert_eq!(a.cohort, b.cohort);
    }

    #[test]
    fn harmonize_rejects_invalid_code_and_age() {
        let mut bad_code = record("a", "F", None);
        bad_code.icd_codes = vec!["7030".into()];
        let mut young = record("b", "F", None);
        young.age = 12.0;
        let h = harmonize(&[bad_code, young], SourceTag::Internal, &TargetCode::canonical_set()).unwrap();
        assert!(h.cohort.is_empty());
        assert_eq!(h.rejections.len(), 2);
    }

    #[test]
    fn labeled_cohort_round_trip() {
        let recs = vec![record("a", "F", Some(160.25)), record("b", "M", None)];
        let h = harmonize(&recs, SourceTag::Internal, &TargetCode::canonical_set()).unwrap();
        let cohort = h.cohort.with_folds(vec![3, 1], 5).unwrap();
        let mut buf = Vec::new();
        write_labeled_cohort(&cohort, &mut buf).unwrap();
        let back = read_labeled_cohort(buf.as_slice()).unwrap();
        assert_eq!(back, cohort);
    }
}
