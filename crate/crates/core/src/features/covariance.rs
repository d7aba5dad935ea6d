use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CovarianceOptions {
    /// Subtract each trial's own column means before forming `MᵀM`.
    #[serde(default)]
    pub center_per_trial: bool,
    /// Divide by `n - 1`.
    #[serde(default)]
    pub unbiased_scale: bool,
}

/// Upper triangle of a trial's `m × m` sensor Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFeatures {
    pub values: Vec<f64>,
    /// `(i, j)` with `i <= j` for each position, row-major.
    pub index_map: Vec<(usize, usize)>,
}

pub fn upper_triangle_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
}

pub fn covariance_feature_names<S: AsRef<str>>(sensors: &[S]) -> Vec<String> {
    upper_triangle_pairs(sensors.len())
        .into_iter()
        .map(|(i, j)| format!("cov({},{})", sensors[i].as_ref(), sensors[j].as_ref()))
        .collect()
}

fn gram_upper(trial: ArrayView2<f64>, opts: &CovarianceOptions, out: &mut [f64]) {
    let (n, m) = trial.dim();
    let centers: Vec<f64> = if opts.center_per_trial && n > 0 {
        trial.axis_iter(Axis(1)).map(|c| c.sum() / n as f64).collect()
    } else {
        vec![0.0; m]
    };
    let scale = if opts.unbiased_scale && n > 1 {
        1.0 / (n - 1) as f64
    } else {
        1.0
    };
    let mut k = 0;
    for i in 0..m {
        for j in i..m {
            let mut acc = 0.0;
            for s in 0..n {
                acc += (trial[[s, i]] - centers[i]) * (trial[[s, j]] - centers[j]);
            }
            out[k] = acc * scale;
            k += 1;
        }
    }
}

/// `MᵀM` upper triangle of one `samples × sensors` trial.
pub fn covariance_features(trial: ArrayView2<f64>, opts: &CovarianceOptions) -> CovarianceFeatures {
    let m = trial.ncols();
    let mut values = vec![0.0; m * (m + 1) / 2];
    gram_upper(trial, opts, &mut values);
    CovarianceFeatures {
        values,
        index_map: upper_triangle_pairs(m),
    }
}

/// Stacks the covariance features of every trial into a `trials × m(m+1)/2`
/// matrix.
pub fn covariance_matrix(x: ArrayView3<f64>, opts: &CovarianceOptions) -> Result<Array2<f64>> {
    let (trials, _, m) = x.dim();
    super::check_finite(x.iter().copied())?;
    let d = m * (m + 1) / 2;
    let mut out = Array2::zeros((trials, d));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut row, trial)| {
            let row = row.as_slice_mut().expect("standard layout");
            gram_upper(trial, opts, row);
        });
    if d == 0 && trials > 0 {
        return Err(Error::ShapeMismatch("trials have no sensors".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn zero_trial_gives_zero_features() {
        let f = covariance_features(Array2::zeros((540, 7)).view(), &Default::default());
        assert_eq!(f.values, vec![0.0; 28]);
        assert_eq!(f.index_map.len(), 28);
        assert_eq!(f.index_map[0], (0, 0));
        assert_eq!(f.index_map[7], (1, 1));
        assert_eq!(f.index_map[27], (6, 6));
    }

    #[test]
    fn small_gram_by_hand() {
        // [[1,2],[3,4],[5,6]]: 1+9+25, 2+12+30, 4+16+36
        let f = covariance_features(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]].view(), &Default::default());
        assert_eq!(f.values, vec![35.0, 44.0, 56.0]);
    }

    #[test]
    fn centered_and_unbiased_variant_is_sample_covariance() {
        let opts = CovarianceOptions {
            center_per_trial: true,
            unbiased_scale: true,
        };
        let f = covariance_features(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]].view(), &opts);
        assert_eq!(f.values, vec![4.0, 4.0, 4.0]);
    }

    fn trial_strategy() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, usize, f64)> {
        (1usize..30, 1usize..8).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(-100.0f64..100.0, n * m),
                Just(n),
                Just(m),
                0usize..m,
                -5.0f64..5.0,
            )
                .prop_map(|(v, n, m, j, c)| {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.reverse();
                    perm.rotate_left(n / 3);
                    (Array2::from_shape_vec((n, m), v).unwrap(), perm, j, c)
                })
        })
    }

    proptest! {
        #[test]
        fn length_is_triangular((t, _, _, _) in trial_strategy()) {
            let m = t.ncols();
            prop_assert_eq!(covariance_features(t.view(), &Default::default()).values.len(), m * (m + 1) / 2);
        }

        #[test]
        fn row_permutation_invariant((t, perm, _, _) in trial_strategy()) {
            let permuted = t.select(Axis(0), &perm);
            let a = covariance_features(t.view(), &Default::default()).values;
            let b = covariance_features(permuted.view(), &Default::default()).values;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn scaling_law((t, _, j, c) in trial_strategy()) {
            let mut scaled = t.clone();
            scaled.column_mut(j).mapv_inplace(|v| v * c);
            let base = covariance_features(t.view(), &Default::default());
            let out = covariance_features(scaled.view(), &Default::default()).values;
            for (k, &(a, b)) in base.index_map.iter().enumerate() {
                let factor = match (a == j, b == j) {
                    (true, true) => c * c,
                    (false, false) => 1.0,
                    _ => c,
                };
                let want = base.values[k] * factor;
                prop_assert!((out[k] - want).abs() <= 1e-9 * (1.0 + want.abs()));
            }
        }
    }
}
