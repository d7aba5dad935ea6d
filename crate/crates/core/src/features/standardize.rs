use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Per-sensor affine scaling fitted on training windows, pooled over
/// trials and time steps. Population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Sensors with (numerically) zero spread; they standardize to 0.
    pub constant: Vec<bool>,
    pub n_samples: usize,
}

impl Standardizer {
    pub fn identity(m: usize) -> Self {
        Standardizer {
            means: vec![0.0; m],
            stds: vec![1.0; m],
            constant: vec![false; m],
            n_samples: 0,
        }
    }

    /// Content hash used in provenance records.
    pub fn id(&self) -> String {
        let mut bytes = Vec::with_capacity(self.means.len() * 16);
        for (m, s) in self.means.iter().zip(&self.stds) {
            bytes.extend_from_slice(&m.to_le_bytes());
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        seed::sha256_hex(&bytes)[..16].to_string()
    }
}

/// A tensor that has been through a [`Standardizer`]. Reductions accept only
/// this type, so raw telemetry cannot reach them by accident.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    data: Array3<f64>,
    standardizer_id: String,
}

impl Standardized {
    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn standardizer_id(&self) -> &str {
        &self.standardizer_id
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }
}

pub fn fit_standardizer(x: ArrayView3<f64>) -> Result<Standardizer> {
    let (trials, samples, m) = x.dim();
    let n = trials * samples;
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 samples to standardize, found {n}"
        )));
    }
    super::check_finite(x.iter().copied())?;
    let flat = x.to_shape((n, m)).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let means: Vec<f64> = flat
        .axis_iter(Axis(1))
        .map(|col| col.sum() / n as f64)
        .collect();
    let stds: Vec<f64> = flat
        .axis_iter(Axis(1))
        .zip(&means)
        .map(|(col, &mu)| (col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64).sqrt())
        .collect();
    let constant = stds
        .iter()
        .zip(&means)
        .map(|(&s, &mu)| s <= 1e-12 * (1.0 + mu.abs()))
        .collect();
    Ok(Standardizer {
        means,
        stds,
        constant,
        n_samples: n,
    })
}

pub fn apply_standardizer(std: &Standardizer, x: ArrayView3<f64>) -> Result<Standardized> {
    let m = x.shape()[2];
    if m != std.means.len() {
        return Err(Error::ShapeMismatch(format!(
            "tensor has {m} sensors, standardizer was fitted on {}",
            std.means.len()
        )));
    }
    let mut out = x.to_owned();
    for mut lane in out.lanes_mut(Axis(2)) {
        for (j, v) in lane.iter_mut().enumerate() {
            *v = if std.constant[j] {
                0.0
            } else {
                (*v - std.means[j]) / std.stds[j]
            };
        }
    }
    Ok(Standardized {
        data: out,
        standardizer_id: std.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn constant_sensor_is_flagged() {
        let x = Array3::from_shape_fn((3, 4, 2), |(t, s, j)| if j == 0 { 5.0 } else { (t + s) as f64 });
        let st = fit_standardizer(x.view()).unwrap();
        assert_eq!(st.means[0], 5.0);
        assert!(st.constant[0]);
        assert!(!st.constant[1]);
        let out = apply_standardizer(&st, x.view()).unwrap().into_inner();
        assert!(out.index_axis(Axis(2), 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn population_convention() {
        // 2 trials x 2 samples, values {0, 2}: mean 1, population std 1
        let x = Array3::from_shape_vec((2, 2, 1), vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        let st = fit_standardizer(x.view()).unwrap();
        assert_eq!(st.means, vec![1.0]);
        assert_eq!(st.stds, vec![1.0]);
    }

    #[test]
    fn fitting_data_standardizes_to_zero_mean_unit_std() {
        let mut rng = seed::rng(5);
        let x = Array3::from_shape_fn((20, 30, 7), |(_, _, j)| {
            100.0 * j as f64 + (j + 1) as f64 * rng.random_range(-3.0..3.0)
        });
        let st = fit_standardizer(x.view()).unwrap();
        let out = apply_standardizer(&st, x.view()).unwrap().into_inner();
        let n = 600.0;
        for j in 0..7 {
            let ch = out.index_axis(Axis(2), j);
            let mu = ch.sum() / n;
            let sd = (ch.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mu.abs() <= 1e-9, "mean {mu}");
            assert!((sd - 1.0).abs() <= 1e-9, "std {sd}");
        }
    }

    #[test]
    fn identity_leaves_input_unchanged() {
        let x = Array3::from_shape_fn((2, 3, 7), |(a, b, c)| (a * 100 + b * 10 + c) as f64 - 7.5);
        let out = apply_standardizer(&Standardizer::identity(7), x.view()).unwrap();
        assert_eq!(out.view(), x.view());
    }

    #[test]
    fn scalar_spot_check() {
        let st = Standardizer {
            means: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            stds: vec![2.0, 4.0, 0.5, 1.0, 10.0, 3.0, 1.0],
            constant: vec![false, false, false, false, false, false, true],
            n_samples: 10,
        };
        let x = Array3::from_shape_vec((1, 1, 7), vec![3.0, 0.0, 4.0, 4.0, 25.0, 0.0, 99.0]).unwrap();
        let out = apply_standardizer(&st, x.view()).unwrap().into_inner();
        let expected = [1.0, -0.5, 2.0, 0.0, 2.0, -2.0, 0.0];
        for (got, want) in out.iter().zip(expected) {
            assert_eq!(*got, want);
        }
    }

    #[test]
    fn errors() {
        let tiny = Array3::<f64>::zeros((1, 1, 7));
        assert!(matches!(fit_standardizer(tiny.view()), Err(Error::DegenerateInput(_))));
        let x = Array3::<f64>::zeros((1, 1, 6));
        assert!(matches!(
            apply_standardizer(&Standardizer::identity(7), x.view()),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
