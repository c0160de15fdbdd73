//! Telemonitoring dataset: loading, validation, per-subject series, and the
//! deterministic train/validation/test split.
//!
//! The input is the UCI Parkinson's telemonitoring CSV: one header row, 22
//! columns, one record per voice session. Records are grouped per subject and
//! ordered by `test_time`; the 16 voice measures plus age and sex form the
//! 18-dimensional feature vector, and either UPDRS column can serve as the
//! regression target.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::seeding;

pub const VOICE_FEATURES: usize = 16;
pub const FEATURES: usize = 18;

/// Column names of the canonical CSV, in file order.
pub const CANONICAL_HEADER: [&str; 22] = [
    "subject#",
    "age",
    "sex",
    "test_time",
    "motor_UPDRS",
    "total_UPDRS",
    "Jitter(%)",
    "Jitter(Abs)",
    "Jitter:RAP",
    "Jitter:PPQ5",
    "Jitter:DDP",
    "Shimmer",
    "Shimmer(dB)",
    "Shimmer:APQ3",
    "Shimmer:APQ5",
    "Shimmer:APQ11",
    "Shimmer:DDA",
    "NHR",
    "HNR",
    "RPDE",
    "DFA",
    "PPE",
];

const MOTOR_RANGE: (f64, f64) = (0.0, 108.0);
const TOTAL_RANGE: (f64, f64) = (0.0, 176.0);

/// Fraction of records held out for validation and for test, each.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Minimum records a subject needs before a 6:2:2 split is meaningful.
pub const MIN_SPLIT_RECORDS: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column {column:?}")]
    MissingColumn { column: String },
    #[error("unexpected column {column:?}")]
    UnexpectedColumn { column: String },
    #[error("column {position} is {found:?}, expected {expected:?}")]
    ColumnOrder { position: usize, expected: String, found: String },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}, column {column:?}: cannot parse {value:?}")]
    ParseCell { row: usize, column: String, value: String },
    #[error("row {row}, column {column:?}: {message}")]
    InvalidValue { row: usize, column: String, message: String },
    #[error("dataset contains no records")]
    Empty,
    #[error("subject {subject_id} has {records} records; at least {min} are needed to split")]
    DegenerateSubject { subject_id: u32, records: usize, min: usize },
}

/// Which UPDRS column the experiment predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Motor,
    Total,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Motor => write!(f, "motor"),
            TargetKind::Total => write!(f, "total"),
        }
    }
}

impl FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "motor" => Ok(TargetKind::Motor),
            "total" => Ok(TargetKind::Total),
            other => Err(format!("unknown target {other:?}; expected \"motor\" or \"total\"")),
        }
    }
}

/// One voice-session record. Both UPDRS scores are kept regardless of which
/// one the experiment predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub subject_id: u32,
    pub age: u32,
    pub sex: u8,
    pub test_time: f64,
    #[serde(rename = "motor_UPDRS")]
    pub motor_updrs: f64,
    #[serde(rename = "total_UPDRS")]
    pub total_updrs: f64,
    pub voice: [f64; VOICE_FEATURES],
}

impl Record {
    /// Feature vector: the 16 voice measures in file order, then age, then
    /// sex. No scaling is applied.
    pub fn features(&self) -> [f64; FEATURES] {
        let mut out = [0.0; FEATURES];
        out[..VOICE_FEATURES].copy_from_slice(&self.voice);
        out[VOICE_FEATURES] = self.age as f64;
        out[VOICE_FEATURES + 1] = self.sex as f64;
        out
    }

    pub fn label(&self, kind: TargetKind) -> f64 {
        match kind {
            TargetKind::Motor => self.motor_updrs,
            TargetKind::Total => self.total_updrs,
        }
    }
}

/// All records of one subject, ordered by ascending `test_time` (ties keep
/// file order).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries {
    pub subject_id: u32,
    pub records: Vec<Record>,
}

///// The loaded cohort: subjects in ascending id order plus the target column
/// the experiment predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<SubjectSeries>,
    pub target_kind: TargetKind,
}

impl Dataset {
    /// Groups validated records into per-subject series. Fails on an empty
    /// record set or on any invariant violation.
    pub fn from_records(records: Vec<Record>, target_kind: TargetKind) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (i, rec) in records.iter().enumerate() {
            validate_record(rec, i + 1)?;
        }
        let mut groups: BTreeMap<u32, Vec<Record>> = BTreeMap::new();
        for rec in records {
            groups.entry(rec.subject_id).or_default().push(rec);
        }
        let subjects = groups
            .into_iter()
            .map(|(subject_id, mut records)| {
                records.sort_by(|a, b| a.test_time.total_cmp(&b.test_time));
                SubjectSeries { subject_id, records }
            })
            .collect();
        Ok(Dataset { subjects, target_kind })
    }

    pub fn subject(&self, subject_id: u32) -> Option<&SubjectSeries> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn total_records(&self) -> usize {
        self.subjects.iter().map(|s| s.records.len()).sum()
    }

    /// Serialises every record (subject order, then time order) as a JSON
    /// array. Used for test fixtures; the CSV stays the ingestion format.
    pub fn to_json(&self) -> String {
        let records: Vec<&Record> = self.subjects.iter().flat_map(|s| s.records.iter()).collect();
        serde_json::to_string_pretty(&records).expect("record serialization cannot fail")
    }

    /// Inverse of [`Dataset::to_json`].
    pub fn from_json(json: &str, target_kind: TargetKind) -> Result<Self, DatasetError> {
        let records: Vec<Record> = serde_json::from_str(json)
            .map_err(|e| DatasetError::MalformedRow { row: 0, message: e.to_string() })?;
        Dataset::from_records(records, target_kind)
    }
}

/// Index split of one subject's records: train gets the remainder after val
/// and test each take `floor(0.2 * n)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub subject_id: u32,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Loads and validates the telemonitoring CSV.
pub fn load_dataset(path: &Path, target_kind: TargetKind) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_from_reader(BufReader::new(file), target_kind)
}

fn load_from_reader<R: Read>(reader: R, target_kind: TargetKind) -> Result<Dataset, DatasetError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);

    let headers = csv
        .headers()
        .map_err(|e| DatasetError::MalformedRow { row: 0, message: e.to_string() })?
        .clone();
    check_header(&headers)?;

    let mut records = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DatasetError::MalformedRow { row: row_no, message: e.to_string() })?;
        if row.len() != CANONICAL_HEADER.len() {
            return Err(DatasetError::MalformedRow {
                row: row_no,
                message: format!("expected {} fields, found {}", CANONICAL_HEADER.len(), row.len()),
            });
        }
        let rec = parse_row(&row, row_no)?;
        validate_record(&rec, row_no)?;
        records.push(rec);
    }
    Dataset::from_records(records, target_kind)
}

fn check_header(headers: &csv::StringRecord) -> Result<(), DatasetError> {
    let actual: Vec<String> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let h = h.trim();
            // A UTF-8 BOM can precede the first column name.
            if i == 0 { h.trim_start_matches('\u{feff}') } else { h }.to_string()
        })
        .collect();

    for expected in CANONICAL_HEADER {
        if !actual.iter().any(|a| a == expected) {
            return Err(DatasetError::MissingColumn { column: expected.to_string() });
        }
    }
    for (i, name) in actual.iter().enumerate() {
        if !CANONICAL_HEADER.contains(&name.as_str()) {
            return Err(DatasetError::UnexpectedColumn { column: name.clone() });
        }
        if actual[..i].contains(name) {
            return Err(DatasetError::UnexpectedColumn { column: name.clone() });
        }
    }
    for (i, (found, expected)) in actual.iter().zip(CANONICAL_HEADER).enumerate() {
        if found != expected {
            return Err(DatasetError::ColumnOrder {
                position: i + 1,
                expected: expected.to_string(),
                found: found.clone(),
            });
        }
    }
    Ok(())
}

fn parse_row(row: &csv::StringRecord, row_no: usize) -> Result<Record, DatasetError> {
    let cell = |i: usize| row.get(i).unwrap_or("").trim();
    let parse_int = |i: usize| -> Result<u32, DatasetError> {
        cell(i).parse::<u32>().map_err(|_| DatasetError::ParseCell {
            row: row_no,
            column: CANONICAL_HEADER[i].to_string(),
            value: cell(i).to_string(),
        })
    };
    let parse_float = |i: usize| -> Result<f64, DatasetError> {
        cell(i).parse::<f64>().map_err(|_| DatasetError::ParseCell {
            row: row_no,
            column: CANONICAL_HEADER[i].to_string(),
            value: cell(i).to_string(),
        })
    };

    let subject_id = parse_int(0)?;
    let age = parse_int(1)?;
    let sex_raw = parse_int(2)?;
    let test_time = parse_float(3)?;
    let motor_updrs = parse_float(4)?;
    let total_updrs = parse_float(5)?;
    let mut voice = [0.0; VOICE_FEATURES];
    for (v, slot) in voice.iter_mut().enumerate() {
        *slot = parse_float(6 + v)?;
    }
    let sex = u8::try_from(sex_raw).unwrap_or(u8::MAX);
    Ok(Record { subject_id, age, sex, test_time, motor_updrs, total_updrs, voice })
}

fn validate_record(rec: &Record, row_no: usize) -> Result<(), DatasetError> {
    let invalid = |column: &str, message: String| DatasetError::InvalidValue {
        row: row_no,
        column: column.to_string(),
        message,
    };
    if rec.subject_id == 0 {
        return Err(invalid("subject#", "subject ids start at 1".to_string()));
    }
    if rec.sex > 1 {
        return Err(invalid("sex", format!("expected 0 or 1, found {}", rec.sex)));
    }
    if !rec.test_time.is_finite() {
        return Err(invalid("test_time", "value must be finite".to_string()));
    }
    if !rec.motor_updrs.is_finite() || rec.motor_updrs < MOTOR_RANGE.0 || rec.motor_updrs > MOTOR_RANGE.1 {
        return Err(invalid(
            "motor_UPDRS",
            format!("{} is outside [{}, {}]", rec.motor_updrs, MOTOR_RANGE.0, MOTOR_RANGE.1),
        ));
    }
    if !rec.total_updrs.is_finite() || rec.total_updrs < TOTAL_RANGE.0 || rec.total_updrs > TOTAL_RANGE.1 {
        return Err(invalid(
            "total_UPDRS",
            format!("{} is outside [{}, {}]", rec.total_updrs, TOTAL_RANGE.0, TOTAL_RANGE.1),
        ));
    }
    for (v, value) in rec.voice.iter().enumerate() {
        if !value.is_finite() {
            return Err(invalid(CANONICAL_HEADER[6 + v], "value must be finite".to_string()));
        }
    }
    Ok(())
}

/// Splits one subject's records into train/validation/test index lists.
///
/// Validation and test each hold `floor(0.2 * n)` records; train keeps the
/// remainder. The partition is a pure function of (subject id, record count,
/// seed): the same inputs always yield the same index lists, and the three
/// lists are disjoint, sorted, and jointly exhaustive.
pub fn make_target_split(subject: &SubjectSeries, seed: u64) -> Result<TargetSplit, DatasetError> {
    let n = subject.records.len();
    if n < MIN_SPLIT_RECORDS {
        return Err(DatasetError::DegenerateSubject {
            subject_id: subject.subject_id,
            records: n,
            min: MIN_SPLIT_RECORDS,
        });
    }
    let n_val = n / 5;
    let n_test = n / 5;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(&[
        seed,
        seeding::TAG_SPLIT,
        u64::from(subject.subject_id),
        n as u64,
    ]));
    order.shuffle(&mut rng);

    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut val_idx: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test_idx: Vec<usize> = order[n_train + n_val..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok(TargetSplit {
        subject_id: subject.subject_id,
        seed,
        ratios: (1.0 - 2.0 * HOLDOUT_FRACTION, HOLDOUT_FRACTION, HOLDOUT_FRACTION),
        train_idx,
        val_idx,
        test_idx,
    })
}

/// Builds the feature matrix and label vector for `records` in order.
pub fn feature_matrix(records: &[Record], kind: TargetKind) -> (Matrix, Vec<f64>) {
    let mut x = Matrix::with_capacity(FEATURES, records.len());
    let mut y = Vec::with_capacity(records.len());
    for rec in records {
        x.push_row(&rec.features());
        y.push(rec.label(kind));
    }
    (x, y)
}
