use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal axes of flattened trials, from a thin SVD of the centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Array2<f64>,
    /// Sample-covariance eigenvalues of the kept axes, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance of the fitting data.
    pub total_variance: f64,
    pub k: usize,
    /// Fewer than `k` nonzero singular values; trailing variances are 0.
    pub rank_deficient: bool,
}

/// Row-major flattening: element `(s, j)` lands at `s * m + j`.
pub fn flatten_trial(trial: ArrayView2<f64>) -> Vec<f64> {
    trial.iter().copied().collect()
}

/// `trials × samples × m` to `trials × (samples · m)`.
pub fn flatten_tensor(x: ArrayView3<f64>) -> Result<Array2<f64>> {
    let (t, s, m) = x.dim();
    x.to_shape((t, s * m))
        .map(|v| v.to_owned())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))
}

pub fn fit_pca(x: ArrayView2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if k == 0 || k > n || k > d {
        return Err(Error::InvalidArgument(format!(
            "PCA needs 1 <= k <= min(trials, columns); k={k}, trials={n}, columns={d}"
        )));
    }
    if n < 2 {
        return Err(Error::DegenerateInput("PCA needs at least 2 rows".into()));
    }
    super::check_finite(x.iter().copied())?;
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;

    let slice: Vec<f64> = centered.iter().copied().collect();
    let svd = DMatrix::from_row_slice(n, d, &slice).svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NoConvergence("SVD did not produce right singular vectors".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let s_max = order.first().map_or(0.0, |&i| sv[i]);
    let tol = s_max * (n.max(d) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let rank_deficient = rank < k;
    if rank_deficient {
        log::warn!("PCA: only {rank} nonzero singular values for k={k}");
    }

    let mut components = Array2::zeros((k, d));
    let mut explained_variance = Vec::with_capacity(k);
    for (row, &i) in order.iter().take(k).enumerate() {
        let mut comp: Vec<f64> = v_t.row(i).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = comp
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (j, &v)| if v.abs() > bv { (j, v.abs()) } else { (bi, bv) })
            .0;
        if comp[pivot] < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        components.row_mut(row).assign(&Array1::from(comp));
        let var = if row < rank { sv[i] * sv[i] / (n - 1) as f64 } else { 0.0 };
        explained_variance.push(var);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        k,
        rank_deficient,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(X − mean) · componentsᵀ`.
    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} columns, PCA was fitted on {}",
                x.ncols(),
                self.dim()
            )));
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    /// Maps scores back to the original space.
    pub fn reconstruct(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        scores.dot(&self.components) + &self.mean
    }

    /// The model restricted to its leading `k` axes.
    pub fn truncate(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.k {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-component PCA to {k}",
                self.k
            )));
        }
        let nonzero = self.explained_variance[..k].iter().filter(|&&v| v > 0.0).count();
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components.slice(ndarray::s![..k, ..]).to_owned(),
            explained_variance: self.explained_variance[..k].to_vec(),
            total_variance: self.total_variance,
            k,
            rank_deficient: nonzero < k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use rand::Rng;

    fn random(n: usize, d: usize, s: u64) -> Array2<f64> {
        let mut rng = seed::rng(s);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn flatten_orders_rows() {
        assert_eq!(flatten_trial(array![[1.0, 2.0], [3.0, 4.0]].view()), vec![1.0, 2.0, 3.0, 4.0]);
        let one = array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]];
        assert_eq!(flatten_trial(one.view()), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let t = ndarray::Array3::<f64>::zeros((2, 540, 7));
        assert_eq!(flatten_tensor(t.view()).unwrap().shape(), &[2, 3780]);
        let t = ndarray::Array3::from_shape_fn((1, 3, 2), |(_, s, j)| (s * 10 + j) as f64);
        let f = flatten_tensor(t.view()).unwrap();
        // (s, j) at 2s + j
        assert_eq!(f[[0, 2 * 2 + 1]], 21.0);
    }

    #[test]
    fn points_on_a_line_have_one_component() {
        let x = Array2::from_shape_fn((12, 3), |(i, j)| (i as f64 - 3.0) * [1.0, -2.0, 0.5][j] + [4.0, 1.0, -1.0][j]);
        let m = fit_pca(x.view(), 1).unwrap();
        assert!((m.explained_variance[0] - m.total_variance).abs() <= 1e-10 * m.total_variance);
        let back = m.reconstruct(m.project(x.view()).unwrap().view());
        let resid = (&back - &x).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(resid <= 1e-10, "residual {resid}");
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let x = random(50, 10, 1);
        let m = fit_pca(x.view(), 10).unwrap();
        let back = m.reconstruct(m.project(x.view()).unwrap().view());
        let resid = (&back - &x).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(resid <= 1e-8);
        let gram = m.components.dot(&m.components.t());
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() <= 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let kept: f64 = m.explained_variance.iter().sum();
        assert!((kept - m.total_variance).abs() <= 1e-6 * m.total_variance);
    }

    #[test]
    fn mean_projects_to_zero() {
        let x = random(20, 6, 2);
        let m = fit_pca(x.view(), 3).unwrap();
        let mean = m.mean.clone().insert_axis(Axis(0));
        let p = m.project(mean.view()).unwrap();
        assert!(p.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn projection_is_dot_products() {
        let x = random(15, 5, 3);
        let m = fit_pca(x.view(), 2).unwrap();
        let p = m.project(x.view()).unwrap();
        for c in 0..2 {
            let mut acc = 0.0;
            for j in 0..5 {
                acc += (x[[4, j]] - m.mean[j]) * m.components[[c, j]];
            }
            assert!((p[[4, c]] - acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let x = Array2::from_shape_fn((10, 4), |(i, j)| (i * (j + 1)) as f64);
        let m = fit_pca(x.view(), 3).unwrap();
        assert!(m.rank_deficient);
        assert_eq!(m.explained_variance[1], 0.0);
        assert_eq!(m.explained_variance[2], 0.0);
    }

    #[test]
    fn truncation_keeps_leading_axes() {
        let x = random(40, 8, 4);
        let full = fit_pca(x.view(), 6).unwrap();
        let small = fit_pca(x.view(), 3).unwrap();
        let cut = full.truncate(3).unwrap();
        assert_eq!(cut.explained_variance.len(), 3);
        for (a, b) in cut.explained_variance.iter().zip(&small.explained_variance) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(full.truncate(7).is_err());
    }

    #[test]
    fn bad_k_and_width() {
        let x = random(5, 4, 5);
        assert!(fit_pca(x.view(), 0).is_err());
        assert!(fit_pca(x.view(), 6).is_err());
        let m = fit_pca(x.view(), 2).unwrap();
        assert!(matches!(m.project(random(2, 3, 6).view()), Err(Error::ShapeMismatch(_))));
    }
}
