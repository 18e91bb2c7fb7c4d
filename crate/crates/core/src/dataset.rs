//! The numeric table that flows between pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LABEL: &str = "aki";
const SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// Row-major feature matrix with binary labels and a missingness mask.
///
/// Missing cells hold `NaN` in `values`; the mask is authoritative.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_rows: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    synthetic: Vec<bool>,
    label_name: String,
}

// Missing cells compare equal regardless of their stored value.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.missing == other.missing
            && self.labels == other.labels
            && self.feature_names == other.feature_names
            && self.feature_kinds == other.feature_kinds
            && self.synthetic == other.synthetic
            && self.label_name == other.label_name
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.missing)
                .all(|((a, b), &m)| m || a == b)
    }
}

impl Dataset {
    /// Builds a dataset from complete rows. `NaN` cells are treated as missing.
    pub fn from_rows(
        rows: &[Vec<f64>],
        labels: Vec<u8>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
    ) -> Result<Self> {
        let p = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} values, expected {p}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Self::from_parts(values, missing, labels, feature_names, feature_kinds)
    }

    pub fn from_parts(
        mut values: Vec<f64>,
        missing: Vec<bool>,
        labels: Vec<u8>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
    ) -> Result<Self> {
        let p = feature_names.len();
        let n = labels.len();
        if feature_kinds.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: feature_kinds.len(),
            });
        }
        if values.len() != n * p || missing.len() != n * p {
            return Err(Error::InvalidInput(format!(
                "matrix has {} cells, expected {n}x{p}",
                values.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::InvalidInput(format!("label {bad} is not binary")));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate feature name `{name}`"
                )));
            }
        }
        for (idx, (v, m)) in values.iter_mut().zip(&missing).enumerate() {
            if *m {
                *v = f64::NAN;
                continue;
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite observed cell at {idx}"
                )));
            }
            if feature_kinds[idx % p] == FeatureKind::Binary && *v != 0.0 && *v != 1.0 {
                return Err(Error::InvalidInput(format!(
                    "binary feature `{}` has value {v}",
                    feature_names[idx % p]
                )));
            }
        }
        Ok(Self {
            n_rows: n,
            values,
            missing,
            synthetic: vec![false; n],
            labels,
            feature_names,
            feature_kinds,
            label_name: DEFAULT_LABEL.to_string(),
        })
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = name.into();
        self
    }

    pub fn with_synthetic(mut self, synthetic: Vec<bool>) -> Result<Self> {
        if synthetic.len() != self.n_rows {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows,
                actual: synthetic.len(),
            });
        }
        self.synthetic = synthetic;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn synthetic(&self) -> &[bool] {
        &self.synthetic
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features() + j]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[i * self.n_features() + j]
    }

    pub(crate) fn set_value(&mut self, i: usize, j: usize, v: f64) {
        let p = self.n_features();
        self.values[i * p + j] = v;
        self.missing[i * p + j] = false;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.value(i, j)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.n_rows - pos, pos)
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let p = self.n_features();
        let mut values = Vec::with_capacity(idx.len() * p);
        let mut missing = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            values.extend_from_slice(self.row(i));
            missing.extend_from_slice(&self.missing[i * p..(i + 1) * p]);
        }
        Dataset {
            n_rows: idx.len(),
            values,
            missing,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            synthetic: idx.iter().map(|&i| self.synthetic[i]).collect(),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            label_name: self.label_name.clone(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Dataset {
        let p = self.n_features();
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        let mut missing = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            for &j in cols {
                values.push(self.values[i * p + j]);
                missing.push(self.missing[i * p + j]);
            }
        }
        Dataset {
            n_rows: self.n_rows,
            values,
            missing,
            labels: self.labels.clone(),
            synthetic: self.synthetic.clone(),
            feature_names: cols
                .iter()
                .map(|&j| self.feature_names[j].clone())
                .collect(),
            feature_kinds: cols.iter().map(|&j| self.feature_kinds[j]).collect(),
            label_name: self.label_name.clone(),
        }
    }

    /// Appends rows of a dataset with the same schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.feature_names != self.feature_names || other.feature_kinds != self.feature_kinds {
            return Err(Error::Schema(
                "cannot concatenate datasets with different features".into(),
            ));
        }
        let mut out = self.clone();
        out.n_rows += other.n_rows;
        out.values.extend_from_slice(&other.values);
        out.missing.extend_from_slice(&other.missing);
        out.labels.extend_from_slice(&other.labels);
        out.synthetic.extend_from_slice(&other.synthetic);
        Ok(out)
    }

    /// Writes the delimited table and its JSON sidecar (`<stem>.meta.json`).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.label_name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows {
            record.clear();
            for j in 0..self.n_features() {
                if self.is_missing(i, j) {
                    record.push(String::new());
                } else {
                    record.push(format_number(self.value(i, j)));
                }
            }
            record.push(self.labels[i].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let sidecar = Sidecar {
            format_version: SIDECAR_VERSION,
            label: self.label_name.clone(),
            features: self
                .feature_names
                .iter()
                .zip(&self.feature_kinds)
                .map(|(name, kind)| SidecarFeature {
                    name: name.clone(),
                    kind: *kind,
                })
                .collect(),
            synthetic_rows: (0..self.n_rows).filter(|&i| self.synthetic[i]).collect(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(sidecar_path(path), json + "\n").map_err(|e| Error::io(sidecar_path(path), e))
    }

    /// Reads a table written by [`Dataset::write`]. Without a sidecar, the last
    /// column named `aki` is the label and columns observed only as 0/1 are binary.
    pub fn read(path: &Path) -> Result<Dataset> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let side_path = sidecar_path(path);
        let sidecar: Option<Sidecar> = if side_path.exists() {
            let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        let label_name = sidecar
            .as_ref()
            .map(|s| s.label.clone())
            .unwrap_or_else(|| DEFAULT_LABEL.to_string());

        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let label_col = header
            .iter()
            .position(|h| *h == label_name)
            .ok_or_else(|| Error::Schema(format!("label column `{label_name}` not found")))?;
        let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_col).collect();
        let names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();
        if let Some(s) = &sidecar {
            let declared: Vec<&str> = s.features.iter().map(|f| f.name.as_str()).collect();
            let found: Vec<&str> = names.iter().map(String::as_str).collect();
            if declared != found {
                return Err(Error::Schema(format!(
                    "sidecar features {declared:?} do not match header {found:?}"
                )));
            }
        }

        let mut values = Vec::new();
        let mut missing = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for &c in &feature_cols {
                let cell = rec.get(c).unwrap_or("").trim();
                if cell.is_empty() {
                    values.push(f64::NAN);
                    missing.push(true);
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::InvalidInput(format!("row {row}: `{cell}` is not numeric"))
                    })?;
                    values.push(v);
                    missing.push(false);
                }
            }
            let label = rec.get(label_col).unwrap_or("").trim();
            labels.push(match label {
                "0" | "0.0" => 0,
                "1" | "1.0" => 1,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {row}: label `{other}` is not binary"
                    )))
                }
            });
        }

        let p = names.len();
        let kinds = match &sidecar {
            Some(s) => s.features.iter().map(|f| f.kind).collect(),
            None => (0..p)
                .map(|j| {
                    let binary = values
                        .iter()
                        .skip(j)
                        .step_by(p)
                        .all(|v| v.is_nan() || *v == 0.0 || *v == 1.0);
                    if binary {
                        FeatureKind::Binary
                    } else {
                        FeatureKind::Continuous
                    }
                })
                .collect(),
        };
        let n = labels.len();
        let mut d =
            Dataset::from_parts(values, missing, labels, names, kinds)?.with_label_name(label_name);
        if let Some(s) = sidecar {
            let mut synthetic = vec![false; n];
            for i in s.synthetic_rows {
                if i >= n {
                    return Err(Error::Schema(format!("synthetic row {i} out of range")));
                }
                synthetic[i] = true;
            }
            d.synthetic = synthetic;
        }
        Ok(d)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    label: String,
    features: Vec<SidecarFeature>,
    #[serde(default)]
    synthetic_rows: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarFeature {
    name: String,
    kind: FeatureKind,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

/// Per-feature mean and standard deviation, used to put features on a common scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of a complete dataset. Zero-variance features get
    /// SD 1 so they map to a constant 0.
    pub fn fit(d: &Dataset) -> Self {
        let n = d.n_rows().max(1) as f64;
        let p = d.n_features();
        let mut means = vec![0.0; p];
        for row in d.rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut sds = vec![0.0; p];
        for row in d.rows() {
            for j in 0..p {
                sds[j] += (row[j] - means[j]).powi(2);
            }
        }
        for sd in &mut sds {
            *sd = (*sd / n).sqrt();
            if !(*sd > 1e-12) {
                *sd = 1.0;
            }
        }
        Self { means, sds }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            x.iter()
                .zip(self.means.iter().zip(&self.sds))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.transform_into(x, &mut out);
        out
    }

    /// Standardized copy of every row, row-major.
    pub fn transform_dataset(&self, d: &Dataset) -> Vec<Vec<f64>> {
        d.rows().map(|r| self.transform(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_rows(
            &[vec![1.0, 0.0], vec![f64::NAN, 1.0], vec![3.5, 1.0]],
            vec![0, 1, 1],
            vec!["a".into(), "b".into()],
            vec![FeatureKind::Continuous, FeatureKind::Binary],
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_binary_values_in_binary_feature() {
        let err = Dataset::from_rows(
            &[vec![0.5]],
            vec![0],
            vec!["b".into()],
            vec![FeatureKind::Binary],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_duplicate_names_and_bad_labels() {
        let kinds = vec![FeatureKind::Continuous; 2];
        assert!(Dataset::from_rows(
            &[vec![1.0, 2.0]],
            vec![0],
            vec!["a".into(), "a".into()],
            kinds.clone()
        )
        .is_err());
        assert!(Dataset::from_rows(
            &[vec![1.0, 2.0]],
            vec![2],
            vec!["a".into(), "b".into()],
            kinds
        )
        .is_err());
    }

    #[test]
    fn csv_round_trip_keeps_missing_and_synthetic_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = toy().with_synthetic(vec![false, false, true]).unwrap();
        d.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back.n_rows(), 3);
        assert!(back.is_missing(1, 0));
        assert_eq!(back.synthetic(), &[false, false, true]);
        assert_eq!(back.feature_kinds(), d.feature_kinds());
        assert_eq!(back.value(2, 0), 3.5);
    }

    #[test]
    fn standardizer_maps_constant_feature_to_zero() {
        let d = Dataset::from_rows(
            &[vec![2.0, 1.0], vec![2.0, 3.0]],
            vec![0, 1],
            vec!["c".into(), "x".into()],
            vec![FeatureKind::Continuous; 2],
        )
        .unwrap();
        let s = Standardizer::fit(&d);
        assert_eq!(s.transform(&[2.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(s.transform(&[2.0, 3.0]), vec![0.0, 1.0]);
    }
}
