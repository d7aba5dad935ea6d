//! Versioned model container.
//!
//! Layout: `WLC1`, a little-endian u16 format version, a u16 section count,
//! then sections of `tag (4 bytes) | length (u64 LE) | payload`. The `PROV`
//! section holds provenance as JSON and `MODL` the trained model as JSON.
//! Unknown sections are skipped on read.

use serde::{Deserialize, Serialize};

use super::{ModelFamily, ModelParams, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;

pub const MAGIC: &[u8; 4] = b"WLC1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub tool_version: String,
    pub family: ModelFamily,
    /// sha256 of the training input (archive or feature file).
    pub dataset_hash: String,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Standardizer and reduction, when the model was trained from raw trials.
    pub pipeline: Option<FeaturePipeline>,
    pub seed: u64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub provenance: ModelProvenance,
    pub model: TrainedModel,
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn write_model_file(file: &ModelFile) -> Result<Vec<u8>> {
    let prov = serde_json::to_vec(&file.provenance)?;
    let model = serde_json::to_vec(&file.model)?;
    let mut out = Vec::with_capacity(prov.len() + model.len() + 40);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    section(&mut out, b"PROV", &prov);
    section(&mut out, b"MODL", &model);
    Ok(out)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn read_model_file(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a model file (bad magic)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported model format version {version}")));
    }
    let count = u16::from_le_bytes([bytes[6], bytes[7]]);
    let mut pos = 8usize;
    let (mut prov, mut model) = (None, None);
    for _ in 0..count {
        let header = bytes.get(pos..pos + 12).ok_or_else(|| bad("truncated section header"))?;
        let tag: [u8; 4] = header[..4].try_into().expect("4 bytes");
        let len = u64::from_le_bytes(header[4..12].try_into().expect("8 bytes"));
        let start = pos + 12;
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| start.checked_add(l))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated section payload"))?;
        let payload = &bytes[start..end];
        match &tag {
            b"PROV" => prov = Some(serde_json::from_slice::<ModelProvenance>(payload).map_err(|e| bad(format!("provenance: {e}")))?),
            b"MODL" => model = Some(serde_json::from_slice::<TrainedModel>(payload).map_err(|e| bad(format!("model: {e}")))?),
            _ => log::debug!("skipping unknown section {:?}", String::from_utf8_lossy(&tag)),
        }
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last section"));
    }
    let provenance = prov.ok_or_else(|| bad("missing PROV section"))?;
    let model = model.ok_or_else(|| bad("missing MODL section"))?;
    if provenance.family != model.family() {
        return Err(bad("provenance family does not match model"));
    }
    Ok(ModelFile { provenance, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{train, GbtParams};
    use ndarray::array;

    fn sample(params: ModelParams) -> ModelFile {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.1, 0.9], [0.9, 0.2]];
        let y = [0, 1, 0, 1];
        let model = train(x.view(), &y, 2, &params).unwrap();
        ModelFile {
            provenance: ModelProvenance {
                tool_version: "test".into(),
                family: params.family(),
                dataset_hash: "00".into(),
                class_names: vec!["a".into(), "b".into()],
                feature_names: vec!["f0".into(), "f1".into()],
                pipeline: None,
                seed: 1,
                params,
            },
            model,
        }
    }

    #[test]
    fn round_trips_every_family() {
        for family in [ModelFamily::Rf, ModelFamily::Svm, ModelFamily::Gbt] {
            let f = sample(ModelParams::defaults(family).with_seed(3));
            let bytes = write_model_file(&f).unwrap();
            assert_eq!(&bytes[..4], b"WLC1");
            let back = read_model_file(&bytes).unwrap();
            assert_eq!(back, f);
            assert_eq!(write_model_file(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn infinite_gamma_survives() {
        let f = sample(ModelParams::Gbt(GbtParams { gamma: f64::INFINITY, rounds: 2, ..Default::default() }));
        let back = read_model_file(&write_model_file(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn corrupt_files_are_typed_errors() {
        let bytes = write_model_file(&sample(ModelParams::defaults(ModelFamily::Rf))).unwrap();
        assert!(matches!(read_model_file(b"PK\x03\x04"), Err(Error::ModelFormat(_))));
        for cut in [5, 9, 20, bytes.len() - 1] {
            assert!(matches!(read_model_file(&bytes[..cut]), Err(Error::ModelFormat(_))), "{cut}");
        }
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(read_model_file(&v), Err(Error::ModelFormat(_))));
    }
}
