//! Standardization and the two per-trial reductions: sensor Gram/covariance
//! upper triangle, and flatten-then-PCA.

mod covariance;
mod pca;
mod standardize;

pub use covariance::{
    covariance_feature_names, covariance_features, covariance_matrix, upper_triangle_pairs,
    CovarianceFeatures, CovarianceOptions,
};
pub use pca::{fit_pca, flatten_tensor, flatten_trial, PcaModel};
pub use standardize::{apply_standardizer, fit_standardizer, Standardized, Standardizer};

use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::GPU_SENSORS;

/// A reduction before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reduction {
    Covariance(CovarianceOptions),
    Pca { k: usize },
}

impl Reduction {
    pub fn label(&self) -> String {
        match self {
            Reduction::Covariance(o) => {
                let mut s = "cov".to_string();
                if o.center_per_trial {
                    s.push_str("+center");
                }
                if o.unbiased_scale {
                    s.push_str("+unbiased");
                }
                s
            }
            Reduction::Pca { k } => format!("pca{k}"),
        }
    }
}

/// A reduction after fitting on standardized training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedReduction {
    Covariance(CovarianceOptions),
    Pca(PcaModel),
}

impl FittedReduction {
    pub fn fit(reduction: &Reduction, train: &Standardized) -> Result<Self> {
        Ok(match reduction {
            Reduction::Covariance(o) => FittedReduction::Covariance(*o),
            Reduction::Pca { k } => {
                FittedReduction::Pca(fit_pca(flatten_tensor(train.view())?.view(), *k)?)
            }
        })
    }

    pub fn transform(&self, data: &Standardized) -> Result<FeatureMatrix> {
        let (values, names, id) = match self {
            FittedReduction::Covariance(o) => {
                let m = data.view().shape()[2];
                let sensors: Vec<String> = if m == GPU_SENSORS.len() {
                    GPU_SENSORS.iter().map(|s| s.to_string()).collect()
                } else {
                    (0..m).map(|j| format!("s{j}")).collect()
                };
                (
                    covariance_matrix(data.view(), o)?,
                    covariance_feature_names(&sensors),
                    Reduction::Covariance(*o).label(),
                )
            }
            FittedReduction::Pca(model) => {
                let flat = flatten_tensor(data.view())?;
                (
                    model.project(flat.view())?,
                    (1..=model.k).map(|i| format!("pc{i}")).collect(),
                    format!("pca{}", model.k),
                )
            }
        };
        Ok(FeatureMatrix {
            data: values,
            feature_names: names,
            provenance: FeatureProvenance {
                standardizer_id: data.standardizer_id().to_string(),
                reduction: id,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProvenance {
    pub standardizer_id: String,
    pub reduction: String,
}

/// Trials × features, produced only from standardized data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub feature_names: Vec<String>,
    pub provenance: FeatureProvenance,
}

/// Standardizer plus fitted reduction: raw windows in, features out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub standardizer: Standardizer,
    pub reduction: FittedReduction,
}

impl FeaturePipeline {
    /// Fits both stages on training windows only.
    pub fn fit(x_train: ArrayView3<f64>, reduction: &Reduction) -> Result<Self> {
        let standardizer = fit_standardizer(x_train)?;
        let train = apply_standardizer(&standardizer, x_train)?;
        let reduction = FittedReduction::fit(reduction, &train)?;
        Ok(FeaturePipeline {
            standardizer,
            reduction,
        })
    }

    pub fn transform(&self, x: ArrayView3<f64>) -> Result<FeatureMatrix> {
        let data = apply_standardizer(&self.standardizer, x)?;
        self.reduction.transform(&data)
    }

    pub fn feature_count(&self) -> usize {
        match &self.reduction {
            FittedReduction::Covariance(_) => {
                let m = self.standardizer.means.len();
                m * (m + 1) / 2
            }
            FittedReduction::Pca(p) => p.k,
        }
    }
}

pub(crate) fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    Ok(())
}
