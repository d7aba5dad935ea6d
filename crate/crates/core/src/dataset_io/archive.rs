use std::fs;
use std::path::Path;

use ndarray::Array3;

use super::npy::{self, ArrayData, NpyArray};
use super::zip::{self, ZipMember};
use crate::error::{Error, Result};
use crate::taxonomy::{GPU_SENSORS, MAX_LABEL, N_GPU_SENSORS};

/// Member keys of a challenge archive, in the order they are written.
pub const ARCHIVE_KEYS: [&str; 6] = [
    "X_train",
    "y_train",
    "model_train",
    "X_test",
    "y_test",
    "model_test",
];

/// Label numbering found in the source archive. Labels are always held
/// 0-based in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelConvention {
    #[default]
    ZeroBased,
    OneBased,
}

/// A windowed train/test split: `trials × samples × 7` tensors with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeDataset {
    pub x_train: Array3<f64>,
    pub y_train: Vec<usize>,
    pub x_test: Array3<f64>,
    pub y_test: Vec<usize>,
    /// Class names indexed by label.
    pub class_names: Vec<String>,
    pub label_convention: LabelConvention,
}

impl ChallengeDataset {
    pub fn sensor_order(&self) -> &'static [&'static str; N_GPU_SENSORS] {
        &GPU_SENSORS
    }

    pub fn samples(&self) -> usize {
        self.x_train.shape()[1]
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (tr, te) = (self.x_train.shape(), self.x_test.shape());
        if tr[1] != te[1] {
            return Err(Error::ShapeMismatch(format!(
                "train has {} samples per trial, test has {}",
                tr[1], te[1]
            )));
        }
        if tr[2] != N_GPU_SENSORS || te[2] != N_GPU_SENSORS {
            return Err(Error::ShapeMismatch(format!(
                "expected {N_GPU_SENSORS} sensors, found {} / {}",
                tr[2], te[2]
            )));
        }
        if self.y_train.len() != tr[0] || self.y_test.len() != te[0] {
            return Err(Error::ShapeMismatch(format!(
                "label counts {}/{} do not match trial counts {}/{}",
                self.y_train.len(),
                self.y_test.len(),
                tr[0],
                te[0]
            )));
        }
        let max = (self.class_names.len().min(MAX_LABEL + 1) as i64) - 1;
        for &y in self.y_train.iter().chain(&self.y_test) {
            if y as i64 > max {
                return Err(Error::LabelOutOfRange {
                    label: y as i64,
                    max,
                });
            }
        }
        if self.x_train.iter().chain(self.x_test.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite sensor value".into()));
        }
        Ok(())
    }
}

pub fn read_challenge_archive(path: impl AsRef<Path>) -> Result<ChallengeDataset> {
    let bytes = fs::read(path)?;
    read_challenge_archive_bytes(&bytes)
}

/// Parses an archive held in memory.
pub fn read_challenge_archive_bytes(bytes: &[u8]) -> Result<ChallengeDataset> {
    let members = zip::read_members(bytes)?;
    let find = |key: &str| -> Result<&ZipMember> {
        let file = format!("{key}.npy");
        members
            .iter()
            .find(|m| m.name == file || m.name == key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    };
    let mut parsed = Vec::with_capacity(ARCHIVE_KEYS.len());
    for key in ARCHIVE_KEYS {
        parsed.push(find(key)?);
    }
    let mut arrays = Vec::with_capacity(ARCHIVE_KEYS.len());
    for (key, member) in ARCHIVE_KEYS.iter().zip(parsed) {
        arrays.push((*key, npy::read_array(&member.data)?));
    }
    let mut it = arrays.into_iter();
    let mut next = || it.next().expect("six keys");
    let x_train = tensor(next())?;
    let y_train = labels(next())?;
    let model_train = names(next())?;
    let x_test = tensor(next())?;
    let y_test = labels(next())?;
    let model_test = names(next())?;

    let (class_names, convention, offset) =
        resolve_names(&y_train, &model_train, &y_test, &model_test)?;
    let shift = |ys: Vec<i64>| -> Result<Vec<usize>> {
        ys.into_iter()
            .map(|y| {
                let y0 = y - offset;
                if y0 < 0 || y0 as usize >= class_names.len() || y0 as usize > MAX_LABEL {
                    Err(Error::LabelOutOfRange {
                        label: y,
                        max: (class_names.len().min(MAX_LABEL + 1) as i64) - 1 + offset,
                    })
                } else {
                    Ok(y0 as usize)
                }
            })
            .collect()
    };
    let dataset = ChallengeDataset {
        y_train: shift(y_train)?,
        y_test: shift(y_test)?,
        x_train,
        x_test,
        class_names,
        label_convention: convention,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn tensor((key, arr): (&str, NpyArray)) -> Result<Array3<f64>> {
    let found = format!("{:?}", arr.descriptor.element_type);
    let shape = arr.shape().to_vec();
    match arr.data {
        ArrayData::Float(values) => {
            if shape.len() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "{key} must be 3-D, found shape {shape:?}"
                )));
            }
            Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
                .map_err(|e| Error::ShapeMismatch(format!("{key}: {e}")))
        }
        _ => Err(Error::DtypeMismatch {
            key: key.to_string(),
            expected: "float32 or float64",
            found,
        }),
    }
}

fn labels((key, arr): (&str, NpyArray)) -> Result<Vec<i64>> {
    let found = format!("{:?}", arr.descriptor.element_type);
    if arr.shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{key} must be 1-D, found shape {:?}",
            arr.shape()
        )));
    }
    match arr.data {
        ArrayData::Int(values) => Ok(values),
        _ => Err(Error::DtypeMismatch {
            key: key.to_string(),
            expected: "int32 or int64",
            found,
        }),
    }
}

fn names((key, arr): (&str, NpyArray)) -> Result<Vec<String>> {
    let found = format!("{:?}", arr.descriptor.element_type);
    if arr.shape().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{key} must be 1-D, found shape {:?}",
            arr.shape()
        )));
    }
    match arr.data {
        ArrayData::Str(values) => Ok(values),
        _ => Err(Error::DtypeMismatch {
            key: key.to_string(),
            expected: "string",
            found,
        }),
    }
}

/// Works out the label → name table and the label base.
///
/// Two layouts occur: a name table indexed by label (identical for both
/// splits, which is what the writer produces), or one name per trial.
fn resolve_names(
    y_train: &[i64],
    model_train: &[String],
    y_test: &[i64],
    model_test: &[String],
) -> Result<(Vec<String>, LabelConvention, i64)> {
    let all = || y_train.iter().chain(y_test).copied();
    if let Some(&neg) = all().find(|&y| y < 0).as_ref() {
        return Err(Error::LabelOutOfRange {
            label: neg,
            max: MAX_LABEL as i64,
        });
    }
    let has_zero = all().any(|y| y == 0);
    let max_label = all().max();

    if model_train == model_test {
        let table = model_train.to_vec();
        let one_based = !has_zero && max_label == Some(table.len() as i64);
        let (conv, offset) = if one_based {
            (LabelConvention::OneBased, 1)
        } else {
            (LabelConvention::ZeroBased, 0)
        };
        return Ok((table, conv, offset));
    }

    if model_train.len() != y_train.len() || model_test.len() != y_test.len() {
        return Err(Error::ShapeMismatch(format!(
            "name arrays ({}, {}) are neither a shared table nor per-trial ({}, {})",
            model_train.len(),
            model_test.len(),
            y_train.len(),
            y_test.len()
        )));
    }
    let mut map: std::collections::BTreeMap<i64, &String> = Default::default();
    for (y, name) in y_train
        .iter()
        .zip(model_train)
        .chain(y_test.iter().zip(model_test))
    {
        match map.get(y) {
            Some(prev) if !prev.eq_ignore_ascii_case(name) => {
                return Err(Error::ShapeMismatch(format!(
                    "label {y} maps to both {prev:?} and {name:?}"
                )))
            }
            Some(_) => {}
            None => {
                map.insert(*y, name);
            }
        }
    }
    let distinct = map.len() as i64;
    let one_based = !has_zero && max_label == Some(distinct);
    let offset = i64::from(one_based);
    let size = max_label.map_or(0, |m| (m - offset + 1) as usize);
    if size > MAX_LABEL + 1 {
        return Err(Error::LabelOutOfRange {
            label: max_label.unwrap_or(0),
            max: MAX_LABEL as i64 + offset,
        });
    }
    let table = (0..size)
        .map(|i| {
            map.get(&(i as i64 + offset))
                .map_or_else(|| format!("class_{i}"), |s| (*s).clone())
        })
        .collect();
    let conv = if one_based {
        LabelConvention::OneBased
    } else {
        LabelConvention::ZeroBased
    };
    Ok((table, conv, offset))
}

pub fn write_challenge_archive(dataset: &ChallengeDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = write_challenge_archive_bytes(dataset)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Serializes a dataset; labels are written 0-based and both name arrays
/// hold the full class table.
pub fn write_challenge_archive_bytes(dataset: &ChallengeDataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let x = |t: &Array3<f64>| -> Vec<u8> {
        let shape = t.shape().to_vec();
        let values: Vec<f64> = t.iter().copied().collect();
        npy::write_f64(&shape, &values)
    };
    let y = |ys: &[usize]| -> Vec<u8> {
        npy::write_i64(&ys.iter().map(|&v| v as i64).collect::<Vec<_>>())
    };
    let names = npy::write_strings(&dataset.class_names);
    let payloads = [
        x(&dataset.x_train),
        y(&dataset.y_train),
        names.clone(),
        x(&dataset.x_test),
        y(&dataset.y_test),
        names,
    ];
    let members: Vec<ZipMember> = ARCHIVE_KEYS
        .iter()
        .zip(payloads)
        .map(|(k, data)| ZipMember {
            name: format!("{k}.npy"),
            data,
        })
        .collect();
    zip::write_members(&members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn random_dataset(n_train: usize, n_test: usize, samples: usize, seed: u64) -> ChallengeDataset {
        let mut rng = seed::rng(seed);
        let mut x = |n: usize| {
            Array3::from_shape_fn((n, samples, 7), |_| rng.random_range(-50.0..50.0))
        };
        let x_train = x(n_train);
        let x_test = x(n_test);
        let mut rng = seed::rng(seed + 1);
        ChallengeDataset {
            x_train,
            x_test,
            y_train: (0..n_train).map(|_| rng.random_range(0..3)).collect(),
            y_test: (0..n_test).map(|_| rng.random_range(0..3)).collect(),
            class_names: vec!["VGG16".into(), "PNA".into(), "U3-64".into()],
            label_convention: LabelConvention::ZeroBased,
        }
    }

    fn members_of(ds: &ChallengeDataset) -> Vec<ZipMember> {
        zip::read_members(&write_challenge_archive_bytes(ds).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_ten_trials() {
        let ds = random_dataset(10, 4, 540, 1);
        let bytes = write_challenge_archive_bytes(&ds).unwrap();
        let back = read_challenge_archive_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = ChallengeDataset {
            x_train: Array3::zeros((0, 540, 7)),
            y_train: vec![],
            x_test: Array3::zeros((0, 540, 7)),
            y_test: vec![],
            class_names: vec![],
            label_convention: LabelConvention::ZeroBased,
        };
        let back = read_challenge_archive_bytes(&write_challenge_archive_bytes(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.x_train.shape(), &[0, 540, 7]);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let ds = random_dataset(5, 2, 540, 9);
        let first = write_challenge_archive_bytes(&ds).unwrap();
        let back = read_challenge_archive_bytes(&first).unwrap();
        let second = write_challenge_archive_bytes(&back).unwrap();
        assert_eq!(seed::sha256_hex(&first), seed::sha256_hex(&second));
    }

    #[test]
    fn header_records_seven_sensors() {
        let ds = random_dataset(3, 1, 540, 2);
        let m = members_of(&ds);
        let (desc, _) = npy::parse_array_header(&m[0].data).unwrap();
        assert_eq!(desc.shape, vec![3, 540, 7]);
        assert_eq!(*desc.shape.last().unwrap(), 7);
    }

    #[test]
    fn missing_model_test_is_reported() {
        let ds = random_dataset(3, 1, 8, 3);
        let mut m = members_of(&ds);
        m.retain(|x| x.name != "model_test.npy");
        let bytes = zip::write_members(&m).unwrap();
        match read_challenge_archive_bytes(&bytes) {
            Err(Error::MissingKey(k)) => assert_eq!(k, "model_test"),
            other => panic!("expected MissingKey, got {other:?}"),
        }
    }

    #[test]
    fn integer_tensor_is_a_dtype_mismatch() {
        let ds = random_dataset(2, 1, 4, 4);
        let mut m = members_of(&ds);
        m[0].data = npy::write_i64(&[1, 2, 3]);
        let bytes = zip::write_members(&m).unwrap();
        assert!(matches!(
            read_challenge_archive_bytes(&bytes),
            Err(Error::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn wrong_sensor_count_is_a_shape_mismatch() {
        let ds = random_dataset(2, 1, 4, 5);
        let mut m = members_of(&ds);
        m[0].data = npy::write_f64(&[2, 4, 6], &[0.0; 48]);
        let bytes = zip::write_members(&m).unwrap();
        assert!(matches!(
            read_challenge_archive_bytes(&bytes),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let ds = random_dataset(2, 1, 4, 6);
        let mut m = members_of(&ds);
        m[1].data = npy::write_i64(&[0, 7]);
        let bytes = zip::write_members(&m).unwrap();
        assert!(matches!(
            read_challenge_archive_bytes(&bytes),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn per_trial_one_based_names_are_normalized() {
        let ds = random_dataset(3, 2, 4, 7);
        let mut m = members_of(&ds);
        m[1].data = npy::write_i64(&[1, 2, 1]);
        m[2].data = npy::write_strings(&["Bert".into(), "PNA".into(), "bert".into()]);
        m[4].data = npy::write_i64(&[2, 2]);
        m[5].data = npy::write_strings(&["PNA".into(), "PNA".into()]);
        let bytes = zip::write_members(&m).unwrap();
        let back = read_challenge_archive_bytes(&bytes).unwrap();
        assert_eq!(back.label_convention, LabelConvention::OneBased);
        assert_eq!(back.y_train, vec![0, 1, 0]);
        assert_eq!(back.y_test, vec![1, 1]);
        assert_eq!(back.class_names, vec!["Bert".to_string(), "PNA".to_string()]);
    }

    #[test]
    fn inconsistent_per_trial_names_are_rejected() {
        let ds = random_dataset(2, 1, 4, 8);
        let mut m = members_of(&ds);
        m[1].data = npy::write_i64(&[0, 0]);
        m[2].data = npy::write_strings(&["Bert".into(), "PNA".into()]);
        m[4].data = npy::write_i64(&[0]);
        m[5].data = npy::write_strings(&["Bert".into()]);
        let bytes = zip::write_members(&m).unwrap();
        assert!(matches!(
            read_challenge_archive_bytes(&bytes),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
