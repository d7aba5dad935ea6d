//! Random forests, one-vs-rest SVMs and gradient-boosted trees behind a
//! common training and prediction interface.

pub mod forest;
pub mod gbt;
pub mod model_file;
pub mod svm;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{train_forest, ForestParams, RandomForest};
pub use gbt::{feature_importance_report, train_gbt, GbtModel, GbtParams, ImportanceEntry, RegNode, RegTree};
pub use model_file::{read_model_file, write_model_file, ModelFile, ModelProvenance};
pub use svm::{train_svm_binary, train_svm_multiclass, Kernel, KernelSpec, SvmBinary, SvmEnsemble, SvmParams};
pub use tree::{train_tree, DecisionTree, TreeNode, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Rf,
    Svm,
    Gbt,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Rf => "rf",
            ModelFamily::Svm => "svm",
            ModelFamily::Gbt => "gbt",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "forest" => Ok(ModelFamily::Rf),
            "svm" => Ok(ModelFamily::Svm),
            "gbt" | "xgboost" => Ok(ModelFamily::Gbt),
            other => Err(Error::InvalidArgument(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Rf(ForestParams),
    Svm(SvmParams),
    Gbt(GbtParams),
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("{name} must be a non-negative integer, got {v}")))
    }
}

impl ModelParams {
    pub fn defaults(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Rf => ModelParams::Rf(ForestParams::default()),
            ModelFamily::Svm => ModelParams::Svm(SvmParams::default()),
            ModelFamily::Gbt => ModelParams::Gbt(GbtParams::default()),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            ModelParams::Rf(_) => ModelFamily::Rf,
            ModelParams::Svm(_) => ModelFamily::Svm,
            ModelParams::Gbt(_) => ModelFamily::Gbt,
        }
    }

    /// Returns a copy with one named hyperparameter replaced.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = *self;
        let unknown = || {
            Error::InvalidArgument(format!("{} has no hyperparameter {name:?}", self.family()))
        };
        match &mut out {
            ModelParams::Rf(p) => match name {
                "n_trees" => p.n_trees = as_count(name, value)?,
                "max_depth" => p.max_depth = Some(as_count(name, value)?).filter(|&d| d > 0),
                "min_leaf" => p.min_leaf = as_count(name, value)?,
                "max_features" => p.max_features = Some(as_count(name, value)?).filter(|&d| d > 0),
                "seed" => p.seed = as_count(name, value)? as u64,
                _ => return Err(unknown()),
            },
            ModelParams::Svm(p) => match name {
                "c" | "C" => p.c = value,
                "gamma" => p.kernel = KernelSpec::Rbf { gamma: Some(value) },
                "tol" => p.tol = value,
                "max_iter" => p.max_iter = as_count(name, value)?,
                _ => return Err(unknown()),
            },
            ModelParams::Gbt(p) => match name {
                "rounds" => p.rounds = as_count(name, value)?,
                "learning_rate" | "eta" => p.learning_rate = value,
                "max_depth" => p.max_depth = as_count(name, value)?,
                "gamma" => p.gamma = value,
                "alpha" => p.alpha = value,
                "lambda" => p.lambda = value,
                "min_child_weight" => p.min_child_weight = value,
                _ => return Err(unknown()),
            },
        }
        Ok(out)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match *self {
            ModelParams::Rf(p) => ModelParams::Rf(ForestParams { seed, ..p }),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrainedModel {
    Rf(RandomForest),
    Svm(SvmEnsemble),
    Gbt(GbtModel),
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            TrainedModel::Rf(_) => ModelFamily::Rf,
            TrainedModel::Svm(_) => ModelFamily::Svm,
            TrainedModel::Gbt(_) => ModelFamily::Gbt,
        }
    }

    pub fn feature_count(&self) -> usize {
        match self {
            TrainedModel::Rf(m) => m.feature_count,
            TrainedModel::Svm(m) => m.feature_count,
            TrainedModel::Gbt(m) => m.feature_count,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            TrainedModel::Rf(m) => m.class_count,
            TrainedModel::Svm(m) => m.class_count,
            TrainedModel::Gbt(m) => m.class_count,
        }
    }

    /// False only for SVMs whose solver hit the iteration cap.
    pub fn converged(&self) -> bool {
        match self {
            TrainedModel::Svm(m) => m.converged(),
            _ => true,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Rf(m) => m.predict(x),
            TrainedModel::Svm(m) => m.predict(x),
            TrainedModel::Gbt(m) => m.predict(x),
        }
    }
}

pub fn train(x: ArrayView2<f64>, y: &[usize], class_count: usize, params: &ModelParams) -> Result<TrainedModel> {
    Ok(match params {
        ModelParams::Rf(p) => TrainedModel::Rf(train_forest(x, y, class_count, p)?),
        ModelParams::Svm(p) => TrainedModel::Svm(train_svm_multiclass(x, y, class_count, p)?),
        ModelParams::Gbt(p) => TrainedModel::Gbt(train_gbt(x, y, class_count, p)?),
    })
}

/// Serde adapter for floats that may be infinite, which JSON cannot hold
/// as numbers.
pub(crate) mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_per_family() {
        let rf = ModelParams::defaults(ModelFamily::Rf).with("n_trees", 250.0).unwrap();
        assert!(matches!(rf, ModelParams::Rf(ForestParams { n_trees: 250, .. })));
        let svm = ModelParams::defaults(ModelFamily::Svm).with("C", 10.0).unwrap();
        assert!(matches!(svm, ModelParams::Svm(SvmParams { c, .. }) if c == 10.0));
        assert!(ModelParams::defaults(ModelFamily::Gbt).with("n_trees", 1.0).is_err());
        assert!(ModelParams::defaults(ModelFamily::Rf).with("n_trees", 2.5).is_err());
        assert_eq!("XGBoost".parse::<ModelFamily>().unwrap(), ModelFamily::Gbt);
    }
}
