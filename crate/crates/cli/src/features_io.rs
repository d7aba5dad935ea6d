//! Feature CSVs (one column per feature plus `label`) and their JSON sidecar.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use wlclass_core::features::FeaturePipeline;
use wlclass_core::{Error, Result};

/// Shared by the train and test CSVs of one `featurize` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub source_sha256: String,
    pub pipeline: FeaturePipeline,
}

pub struct FeatureTable {
    pub names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

pub fn csv_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let p = |s: &str| crate::run_manifest::beside(prefix, s);
    (p(".train.csv"), p(".test.csv"), p(".meta.json"))
}

/// The sidecar for a CSV written by `featurize`.
pub fn meta_path(csv: &Path) -> PathBuf {
    let s = csv.to_string_lossy();
    for suffix in [".train.csv", ".test.csv"] {
        if let Some(prefix) = s.strip_suffix(suffix) {
            return PathBuf::from(format!("{prefix}.meta.json"));
        }
    }
    crate::run_manifest::beside(csv, ".meta.json")
}

pub fn write_table(names: &[String], x: &Array2<f64>, y: &[usize]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for (row, label) in x.rows().into_iter().zip(y) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_table(bytes: &[u8]) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::SchemaMismatch("feature CSV has no label column".into()))?;
    if label_col + 1 != headers.len() {
        return Err(Error::SchemaMismatch("label must be the last column".into()));
    }
    let names: Vec<String> = headers.iter().take(label_col).map(String::from).collect();
    let mut values = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            if j == label_col {
                y.push(field.trim().parse::<usize>().map_err(|_| {
                    Error::SchemaMismatch(format!("row {}: label {field:?} is not a class index", i + 1))
                })?);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::SchemaMismatch(format!("row {}: {field:?} is not a number", i + 1))
                })?;
                if !v.is_finite() {
                    return Err(Error::DegenerateInput(format!("row {}: non-finite feature", i + 1)));
                }
                values.push(v);
            }
        }
    }
    let x = Array2::from_shape_vec((y.len(), names.len()), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(FeatureTable { names, x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn table_round_trip_is_exact() {
        let x = array![[0.1, 1e-300], [-3.5, 1.0 / 3.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        let bytes = write_table(&names, &x, &[1, 0]).unwrap();
        let t = read_table(&bytes).unwrap();
        assert_eq!(t.x, x);
        assert_eq!(t.y, vec![1, 0]);
        assert_eq!(t.names, names);
        assert!(read_table(b"a,b\n1,2\n").is_err());
    }

    #[test]
    fn sidecar_naming() {
        assert_eq!(meta_path(Path::new("out/f.train.csv")), PathBuf::from("out/f.meta.json"));
        assert_eq!(meta_path(Path::new("x.csv")), PathBuf::from("x.csv.meta.json"));
    }
}
