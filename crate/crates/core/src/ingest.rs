//! Loading pre-extracted admission tables and applying the cohort funnel.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{csv_io, format_number, Dataset, FeatureKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnType {
    Numeric,
    Categorical,
    Binary,
    CodeSet,
}

/// Which columns carry the per-admission metadata the filters need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Roles {
    pub subject_id: String,
    pub admission_id: String,
    pub age: String,
    pub stay_hours: String,
    pub admission_count: String,
    pub diagnosis_codes: String,
    pub label: String,
}

impl Default for Roles {
    fn default() -> Self {
        Self {
            subject_id: "subject_id".into(),
            admission_id: "hadm_id".into(),
            age: "age".into(),
            stay_hours: "icu_los_hours".into(),
            admission_count: "admission_count".into(),
            diagnosis_codes: "icd9_codes".into(),
            label: "aki".into(),
        }
    }
}

impl Roles {
    /// Columns that are bookkeeping rather than patient measurements. Age is
    /// both a filter input and a feature, so it is not listed here.
    fn non_feature(&self) -> [&str; 6] {
        [
            &self.subject_id,
            &self.admission_id,
            &self.stay_hours,
            &self.admission_count,
            &self.diagnosis_codes,
            &self.label,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: IndexMap<String, ColumnType>,
    #[serde(default)]
    pub roles: Roles,
}

impl TableSchema {
    /// Accepts either `{"columns": {...}, "roles": {...}}` or a bare
    /// `{name: type}` mapping.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Full(TableSchema),
            Bare(IndexMap<String, ColumnType>),
        }
        match serde_json::from_str::<Repr>(text)? {
            Repr::Full(s) => Ok(s),
            Repr::Bare(columns) => Ok(TableSchema {
                columns,
                roles: Roles::default(),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Numeric(f64),
    Binary(bool),
    Categorical(String),
    Codes(BTreeSet<String>),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Numeric(v) => Some(*v),
            Cell::Binary(b) => Some(f64::from(u8::from(*b))),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Missing => String::new(),
            Cell::Numeric(v) => format_number(*v),
            Cell::Binary(b) => u8::from(*b).to_string(),
            Cell::Categorical(s) => s.clone(),
            Cell::Codes(c) => c.iter().cloned().collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPatientTable {
    pub columns: Vec<String>,
    pub types: Vec<ColumnType>,
    pub rows: Vec<Vec<Cell>>,
    pub roles: Roles,
    /// Non-empty cells that failed to parse as their declared type.
    pub coerced_cells: usize,
}

impl RawPatientTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn feature_columns(&self) -> Vec<usize> {
        let skip = self.roles.non_feature();
        (0..self.columns.len())
            .filter(|&c| !skip.contains(&self.columns[c].as_str()))
            .collect()
    }

    fn with_rows(&self, keep: &[bool]) -> RawPatientTable {
        RawPatientTable {
            columns: self.columns.clone(),
            types: self.types.clone(),
            rows: self
                .rows
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
            roles: self.roles.clone(),
            coerced_cells: self.coerced_cells,
        }
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema {
            columns: self
                .columns
                .iter()
                .cloned()
                .zip(self.types.iter().copied())
                .collect(),
            roles: self.roles.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Numeric and binary measurement columns become features; the label role
    /// becomes the outcome. Categorical columns are not encoded and are skipped.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let label_col = self
            .column_index(&self.roles.label)
            .ok_or_else(|| Error::Schema(format!("label column `{}` missing", self.roles.label)))?;
        let mut cols = Vec::new();
        for c in self.feature_columns() {
            match self.types[c] {
                ColumnType::Numeric => cols.push((c, FeatureKind::Continuous)),
                ColumnType::Binary => cols.push((c, FeatureKind::Binary)),
                ColumnType::Categorical | ColumnType::CodeSet => {
                    log::info!(
                        "column `{}` is not numeric; not used as a feature",
                        self.columns[c]
                    )
                }
            }
        }
        let mut values = Vec::with_capacity(self.rows.len() * cols.len());
        let mut missing = Vec::with_capacity(values.capacity());
        let mut labels = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, _) in &cols {
                match row[c].as_f64() {
                    Some(v) => {
                        values.push(v);
                        missing.push(false);
                    }
                    None => {
                        values.push(f64::NAN);
                        missing.push(true);
                    }
                }
            }
            labels.push(match row[label_col].as_f64() {
                Some(0.0) => 0,
                Some(1.0) => 1,
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: label is missing or not binary"
                    )))
                }
            });
        }
        Ok(Dataset::from_parts(
            values,
            missing,
            labels,
            cols.iter().map(|&(c, _)| self.columns[c].clone()).collect(),
            cols.iter().map(|&(_, k)| k).collect(),
        )?
        .with_label_name(self.roles.label.clone()))
    }
}

/// Reads a comma-separated file whose header must name exactly the schema's columns.
pub fn load_table(path: &Path, schema: &TableSchema) -> Result<RawPatientTable> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    for name in schema.columns.keys() {
        if !header.contains(name) {
            return Err(Error::Schema(format!(
                "header lacks declared column `{name}`"
            )));
        }
    }
    let mut seen = HashSet::new();
    for h in &header {
        if !schema.columns.contains_key(h) {
            return Err(Error::Schema(format!(
                "header column `{h}` is not declared"
            )));
        }
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("header repeats column `{h}`")));
        }
    }
    let types: Vec<ColumnType> = header.iter().map(|h| schema.columns[h]).collect();
    let subject_col = header.iter().position(|h| *h == schema.roles.subject_id);
    let admission_col = header.iter().position(|h| *h == schema.roles.admission_id);

    let mut rows = Vec::new();
    let mut coerced = 0usize;
    let mut keys = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let mut row = Vec::with_capacity(header.len());
        for (c, raw) in rec.iter().enumerate() {
            let (cell, was_coerced) = parse_cell(raw, types[c]);
            if was_coerced {
                coerced += 1;
                warn!(
                    "row {i}, column `{}`: `{raw}` is not a valid {:?}; marked missing",
                    header[c], types[c]
                );
            }
            row.push(cell);
        }
        if let (Some(s), Some(a)) = (subject_col, admission_col) {
            let key = (rec[s].trim().to_string(), rec[a].trim().to_string());
            if !keys.insert(key.clone()) {
                return Err(Error::DuplicateKey {
                    subject: key.0,
                    admission: key.1,
                    row: i,
                });
            }
        }
        rows.push(row);
    }
    Ok(RawPatientTable {
        columns: header,
        types,
        rows,
        roles: schema.roles.clone(),
        coerced_cells: coerced,
    })
}

fn parse_cell(raw: &str, ty: ColumnType) -> (Cell, bool) {
    let s = raw.trim();
    if s.is_empty() {
        return (Cell::Missing, false);
    }
    match ty {
        ColumnType::Numeric => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => (Cell::Numeric(v), false),
            _ => (Cell::Missing, true),
        },
        ColumnType::Binary => match s.to_ascii_lowercase().as_str() {
            "1" | "1.0" | "true" | "yes" => (Cell::Binary(true), false),
            "0" | "0.0" | "false" | "no" => (Cell::Binary(false), false),
            _ => (Cell::Missing, true),
        },
        ColumnType::Categorical => (Cell::Categorical(s.to_string()), false),
        ColumnType::CodeSet => {
            let codes: BTreeSet<String> = s
                .split([';', '|', ' '])
                .map(normalize_code)
                .filter(|c| !c.is_empty())
                .collect();
            if codes.is_empty() {
                (Cell::Missing, false)
            } else {
                (Cell::Codes(codes), false)
            }
        }
    }
}

/// ICD codes are compared without dots or surrounding whitespace ("995.91" == "99591").
pub fn normalize_code(code: &str) -> String {
    code.trim().chars().filter(|c| *c != '.').collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortFilterSpec {
    pub diagnosis_codes: BTreeSet<String>,
    /// Inclusive, in years.
    pub age_range: (f64, f64),
    pub min_stay_hours: f64,
    pub max_admissions: u32,
    /// Rows whose missing fraction exceeds this are dropped.
    pub max_row_missing_fraction: f64,
}

impl Default for CohortFilterSpec {
    fn default() -> Self {
        Self {
            diagnosis_codes: ["99591", "99592", "78552"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            age_range: (18.0, 89.0),
            min_stay_hours: 48.0,
            max_admissions: 1,
            max_row_missing_fraction: 0.20,
        }
    }
}

impl CohortFilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.diagnosis_codes.is_empty() {
            return Err(Error::Config("diagnosis code set is empty".into()));
        }
        let (lo, hi) = self.age_range;
        if !(lo <= hi) {
            return Err(Error::Config(format!("age range [{lo}, {hi}] is inverted")));
        }
        if !(0.0..=1.0).contains(&self.max_row_missing_fraction) {
            return Err(Error::Config(
                "row missingness cap must lie in [0, 1]".into(),
            ));
        }
        if self.max_admissions == 0 {
            return Err(Error::Config("max_admissions must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStep {
    pub name: String,
    pub rows_before: usize,
    pub rows_after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLog {
    pub steps: Vec<FilterStep>,
}

impl FilterLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,rows_before,rows_after,excluded\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.name,
                s.rows_before,
                s.rows_after,
                s.rows_before - s.rows_after
            ));
        }
        out
    }
}

/// Fraction of feature cells that are missing, per row.
pub fn row_missingness(table: &RawPatientTable) -> Vec<f64> {
    let mut cols = table.feature_columns();
    if cols.is_empty() {
        cols = (0..table.columns.len()).collect();
    }
    let denom = cols.len().max(1) as f64;
    table
        .rows
        .iter()
        .map(|row| cols.iter().filter(|&&c| row[c].is_missing()).count() as f64 / denom)
        .collect()
}

/// Applies, in order: diagnosis-code membership, age range, admission count,
/// minimum stay and row missingness. A row with a missing filter input fails
/// that filter.
pub fn apply_cohort_filters(
    table: &RawPatientTable,
    spec: &CohortFilterSpec,
) -> Result<(RawPatientTable, FilterLog)> {
    spec.validate()?;
    let roles = &table.roles;
    let codes: HashSet<String> = spec
        .diagnosis_codes
        .iter()
        .map(|c| normalize_code(c))
        .collect();

    // Admissions are counted per subject over the whole input.
    let subject_col = table.column_index(&roles.subject_id);
    let count_col = table.column_index(&roles.admission_count);
    let mut per_subject: HashMap<String, u32> = HashMap::new();
    if let Some(s) = subject_col {
        for row in &table.rows {
            *per_subject.entry(subject_key(&row[s])).or_default() += 1;
        }
    }
    let admissions = |row: &[Cell]| -> Option<u32> {
        let from_rows = subject_col.map(|s| per_subject[&subject_key(&row[s])]);
        let declared = match count_col {
            Some(c) => Some(row[c].as_f64()?.max(0.0) as u32),
            None => None,
        };
        Some(from_rows.into_iter().chain(declared).max().unwrap_or(1))
    };

    let code_col = table.column_index(&roles.diagnosis_codes);
    let age_col = table.column_index(&roles.age);
    let stay_col = table.column_index(&roles.stay_hours);
    let missingness = row_missingness(table);

    type Rule<'a> = Box<dyn Fn(usize, &[Cell]) -> bool + 'a>;
    let rules: Vec<(&str, Rule)> = vec![
        (
            "diagnosis_codes",
            Box::new(|_, row: &[Cell]| match code_col.map(|c| &row[c]) {
                Some(Cell::Codes(set)) => set.iter().any(|c| codes.contains(c)),
                Some(Cell::Categorical(s)) => codes.contains(&normalize_code(s)),
                Some(Cell::Numeric(v)) => codes.contains(&format_number(*v)),
                _ => false,
            }),
        ),
        (
            "age_range",
            Box::new(|_, row: &[Cell]| {
                age_col
                    .and_then(|c| row[c].as_f64())
                    .is_some_and(|a| a >= spec.age_range.0 && a <= spec.age_range.1)
            }),
        ),
        (
            "single_admission",
            Box::new(|_, row: &[Cell]| admissions(row).is_some_and(|n| n <= spec.max_admissions)),
        ),
        (
            "min_stay",
            Box::new(|_, row: &[Cell]| {
                stay_col
                    .and_then(|c| row[c].as_f64())
                    .is_some_and(|h| h >= spec.min_stay_hours)
            }),
        ),
        (
            "row_missingness",
            Box::new(|i, _: &[Cell]| missingness[i] <= spec.max_row_missing_fraction),
        ),
    ];

    let mut keep = vec![true; table.n_rows()];
    let mut log = FilterLog::default();
    for (name, rule) in &rules {
        let before = keep.iter().filter(|&&k| k).count();
        for (i, row) in table.rows.iter().enumerate() {
            if keep[i] && !rule(i, row) {
                keep[i] = false;
            }
        }
        let after = keep.iter().filter(|&&k| k).count();
        log.steps.push(FilterStep {
            name: name.to_string(),
            rows_before: before,
            rows_after: after,
        });
    }
    Ok((table.with_rows(&keep), log))
}

fn subject_key(cell: &Cell) -> String {
    match cell {
        Cell::Missing => String::new(),
        other => other.render(),
    }
}
