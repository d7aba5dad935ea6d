//! Soft-margin SVMs trained by sequential minimal optimization.
//!
//! The working-set selection uses second-order information (maximal violating
//! pair refined by the largest objective decrease), and the analytic
//! two-variable update clips to the box `[0, C]` while keeping `Σ αᵢyᵢ`
//! fixed.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::check_width;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// Full kernel matrices are precomputed up to this many rows.
const FULL_KERNEL_LIMIT: usize = 4096;
const CACHE_BUDGET_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Kernel choice before the data is seen; `Rbf { gamma: None }` resolves to
/// `1 / (d · var(X))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: Option<f64> },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf { gamma: None }
    }
}

impl KernelSpec {
    pub fn resolve(&self, x: ArrayView2<f64>) -> Kernel {
        match *self {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Rbf { gamma: Some(g) } => Kernel::Rbf { gamma: g },
            KernelSpec::Rbf { gamma: None } => {
                let n = x.len() as f64;
                let var = if n > 0.0 {
                    let mean = x.sum() / n;
                    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
                } else {
                    0.0
                };
                let scale = x.ncols() as f64 * var;
                let gamma = if scale > 0.0 { 1.0 / scale } else { 1.0 };
                Kernel::Rbf { gamma }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: KernelSpec,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: KernelSpec::default(),
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

/// A binary machine over the training rows it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmBinary {
    /// One multiplier per training row.
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    pub kernel: Kernel,
    pub c: f64,
    /// Dual objective `Σα − ½ΣΣ αᵢαⱼyᵢyⱼK`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmBinary {
    pub fn decision(&self, x_train: ArrayView2<f64>, row: ArrayView1<f64>) -> f64 {
        self.support_indices
            .iter()
            .map(|&i| self.alphas[i] * self.labels[i] * self.kernel.eval(x_train.row(i), row))
            .sum::<f64>()
            + self.bias
    }
}

/// Kernel rows on demand: either fully precomputed or through an LRU cache.
enum KernelRows<'a> {
    Full(Arc<Vec<Arc<[f64]>>>),
    Cached {
        x: ArrayView2<'a, f64>,
        kernel: Kernel,
        rows: HashMap<usize, (Arc<[f64]>, u64)>,
        capacity: usize,
        clock: u64,
    },
}

fn compute_row(x: ArrayView2<f64>, kernel: &Kernel, i: usize) -> Arc<[f64]> {
    let xi = x.row(i);
    x.rows().into_iter().map(|r| kernel.eval(xi, r)).collect()
}

fn full_kernel(x: ArrayView2<f64>, kernel: &Kernel) -> Arc<Vec<Arc<[f64]>>> {
    Arc::new(
        (0..x.nrows())
            .into_par_iter()
            .map(|i| compute_row(x, kernel, i))
            .collect(),
    )
}

impl<'a> KernelRows<'a> {
    fn cached(x: ArrayView2<'a, f64>, kernel: Kernel, concurrent: usize) -> Self {
        let per_row = x.nrows().max(1) * 8;
        let capacity = (CACHE_BUDGET_BYTES / per_row / concurrent.max(1)).max(2);
        KernelRows::Cached {
            x,
            kernel,
            rows: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    fn row(&mut self, i: usize) -> Arc<[f64]> {
        match self {
            KernelRows::Full(rows) => rows[i].clone(),
            KernelRows::Cached {
                x,
                kernel,
                rows,
                capacity,
                clock,
            } => {
                *clock += 1;
                if let Some((r, stamp)) = rows.get_mut(&i) {
                    *stamp = *clock;
                    return r.clone();
                }
                if rows.len() >= *capacity {
                    let oldest = rows
                        .iter()
                        .min_by_key(|(_, (_, s))| *s)
                        .map(|(&k, _)| k)
                        .expect("cache is non-empty");
                    rows.remove(&oldest);
                }
                let r = compute_row(*x, kernel, i);
                rows.insert(i, (r.clone(), *clock));
                r
            }
        }
    }
}

/// Trains one machine on labels `y ∈ {−1, +1}`.
pub fn train_svm_binary(x: ArrayView2<f64>, y: &[f64], params: &SvmParams) -> Result<SvmBinary> {
    let kernel = params.kernel.resolve(x);
    let rows = if x.nrows() <= FULL_KERNEL_LIMIT {
        KernelRows::Full(full_kernel(x, &kernel))
    } else {
        KernelRows::cached(x, kernel, 1)
    };
    solve(x, y, kernel, params, rows)
}

fn validate(x: ArrayView2<f64>, y: &[f64], params: &SvmParams) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("binary labels must be -1 or +1".into()));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::InvalidArgument("binary problem needs both signs".into()));
    }
    Ok(())
}

fn solve(
    x: ArrayView2<f64>,
    y: &[f64],
    kernel: Kernel,
    params: &SvmParams,
    mut rows: KernelRows,
) -> Result<SvmBinary> {
    validate(x, y, params)?;
    let n = y.len();
    let c = params.c;
    let qd: Vec<f64> = (0..n).map(|i| kernel.eval(x.row(i), x.row(i))).collect();
    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        // maximal violating index i
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let ki = rows.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_drop = f64::INFINITY;
        for t in 0..n {
            let (eligible, g_side) = if y[t] > 0.0 {
                (!lower(alpha[t]), grad[t])
            } else {
                (!upper(alpha[t]), -grad[t])
            };
            if !eligible {
                continue;
            }
            if g_side >= gmax2 {
                gmax2 = g_side;
            }
            let grad_diff = gmax + g_side;
            if grad_diff > 0.0 {
                let quad = qd[i] + qd[t] - 2.0 * ki[t];
                let drop = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if drop <= best_drop {
                    best_drop = drop;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < params.tol {
            converged = true;
            break;
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;
        let kj = rows.row(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without meeting tol {}", params.tol);
    }

    // bias from free multipliers, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    let objective = -0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(SvmBinary {
        support_indices: (0..n).filter(|&t| alpha[t] > 0.0).collect(),
        alphas: alpha,
        labels: y.to_vec(),
        bias: -rho,
        kernel,
        c,
        objective,
        iterations,
        converged,
    })
}

/// One machine of a one-vs-rest ensemble, referencing the shared
/// support-vector pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmMachine {
    pub support: Vec<usize>,
    /// `αᵢyᵢ` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmEnsemble {
    pub kernel: Kernel,
    pub c: f64,
    pub vectors: Array2<f64>,
    pub machines: Vec<SvmMachine>,
    pub feature_count: usize,
    pub class_count: usize,
}

/// One-vs-rest training. With two classes a single machine is trained and
/// mirrored so both machines describe the same boundary.
pub fn train_svm_multiclass(
    x: ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    params: &SvmParams,
) -> Result<SvmEnsemble> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if class_count < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut counts = vec![0usize; class_count];
    for &c in y {
        if c >= class_count {
            return Err(Error::InvalidArgument(format!("label {c} >= class count {class_count}")));
        }
        counts[c] += 1;
    }
    if let Some(absent) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ClassAbsent(absent));
    }
    let kernel = params.kernel.resolve(x);
    let shared = (x.nrows() <= FULL_KERNEL_LIMIT).then(|| full_kernel(x, &kernel));
    let trained = if class_count == 2 { 1 } else { class_count };
    let concurrent = rayon::current_num_threads().min(trained);
    let binaries: Vec<SvmBinary> = (0..trained)
        .into_par_iter()
        .map(|class| {
            let signs: Vec<f64> = y.iter().map(|&c| if c == class { 1.0 } else { -1.0 }).collect();
            let rows = match &shared {
                Some(k) => KernelRows::Full(k.clone()),
                None => KernelRows::cached(x, kernel, concurrent),
            };
            solve(x, &signs, kernel, params, rows)
        })
        .collect::<Result<_>>()?;

    // pool every support vector once, in training-row order
    let mut in_pool = vec![usize::MAX; x.nrows()];
    let mut pool_rows = Vec::new();
    for b in &binaries {
        for &i in &b.support_indices {
            in_pool[i] = 0;
        }
    }
    for (i, slot) in in_pool.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = pool_rows.len();
            pool_rows.push(i);
        }
    }
    let d = x.ncols();
    let mut vectors = Array2::zeros((pool_rows.len(), d));
    for (p, &i) in pool_rows.iter().enumerate() {
        vectors.row_mut(p).assign(&x.row(i));
    }
    let mut machines: Vec<SvmMachine> = binaries
        .iter()
        .map(|b| SvmMachine {
            support: b.support_indices.iter().map(|&i| in_pool[i]).collect(),
            coef: b.support_indices.iter().map(|&i| b.alphas[i] * b.labels[i]).collect(),
            bias: b.bias,
            objective: b.objective,
            iterations: b.iterations,
            converged: b.converged,
        })
        .collect();
    if class_count == 2 {
        let m = &machines[0];
        let mirrored = SvmMachine {
            coef: m.coef.iter().map(|v| -v).collect(),
            bias: -m.bias,
            ..m.clone()
        };
        machines.push(mirrored);
    }
    Ok(SvmEnsemble {
        kernel,
        c: params.c,
        vectors,
        machines,
        feature_count: d,
        class_count,
    })
}

impl SvmEnsemble {
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    pub fn decision_values(&self, row: ArrayView1<f64>) -> Vec<f64> {
        let k: Vec<f64> = self
            .vectors
            .rows()
            .into_iter()
            .map(|v| self.kernel.eval(v, row))
            .collect();
        self.machines
            .iter()
            .map(|m| m.support.iter().zip(&m.coef).map(|(&p, c)| c * k[p]).sum::<f64>() + m.bias)
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_width(x, self.feature_count)?;
        Ok(x.outer_iter()
            .into_par_iter()
            .map(|r| argmax_f64(&self.decision_values(r)))
            .collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_f64(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;
    use rand::Rng as _;

    fn linear(c: f64) -> SvmParams {
        SvmParams { c, kernel: KernelSpec::Linear, tol: 1e-8, ..Default::default() }
    }

    #[test]
    fn symmetric_pair_has_boundary_at_zero() {
        let x = array![[-1.0], [1.0]];
        let m = train_svm_binary(x.view(), &[-1.0, 1.0], &linear(1e6)).unwrap();
        assert!(m.converged);
        assert!(m.bias.abs() < 1e-9);
        // w = Σ αᵢyᵢxᵢ = 1, margin 2/|w| = 2
        let w: f64 = (0..2).map(|i| m.alphas[i] * m.labels[i] * x[[i, 0]]).sum();
        assert!((w - 1.0).abs() < 1e-9);
        assert!((2.0 / w - 2.0).abs() < 1e-9);
        assert!((m.objective - 0.5).abs() < 1e-9);
    }

    /// Brute force over a fine grid of (α₁, α₂) with α₃, α₄ fixed by the
    /// equality constraint where possible.
    #[test]
    fn four_point_objective_matches_grid_search() {
        let x = array![[0.0, 0.0], [1.0, 0.5], [3.0, 3.0], [2.5, 4.0]];
        let y = [-1.0, -1.0, 1.0, 1.0];
        let c = 1.0;
        let m = train_svm_binary(x.view(), &y, &linear(c)).unwrap();
        let k = |i: usize, j: usize| x.row(i).dot(&x.row(j));
        let dual = |a: &[f64; 4]| {
            let mut s: f64 = a.iter().sum();
            for i in 0..4 {
                for j in 0..4 {
                    s -= 0.5 * a[i] * a[j] * y[i] * y[j] * k(i, j);
                }
            }
            s
        };
        let steps = 200;
        let mut best = f64::NEG_INFINITY;
        for a0 in 0..=steps {
            for a1 in 0..=steps {
                for a2 in 0..=steps {
                    let (a0, a1, a2) = (
                        c * a0 as f64 / steps as f64,
                        c * a1 as f64 / steps as f64,
                        c * a2 as f64 / steps as f64,
                    );
                    let a3 = a0 + a1 - a2;
                    if (0.0..=c).contains(&a3) {
                        best = best.max(dual(&[a0, a1, a2, a3]));
                    }
                }
            }
        }
        assert!(m.objective >= best - 1e-9);
        assert!(m.objective - best < 1e-4, "{} vs {best}", m.objective);
    }

    #[test]
    fn constraints_hold() {
        let mut rng = seed::rng(11);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..40).map(|i| if x[[i, 0]] + 0.3 * x[[i, 1]] > 0.1 { 1.0 } else { -1.0 }).collect();
        for c in [0.1, 1.0, 10.0] {
            let p = SvmParams { c, tol: 1e-6, ..Default::default() };
            let m = train_svm_binary(x.view(), &y, &p).unwrap();
            assert!(m.converged);
            assert!(m.alphas.iter().all(|&a| (0.0..=c).contains(&a)));
            let eq: f64 = m.alphas.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(eq.abs() < 1e-10, "{eq}");
        }
    }

    #[test]
    fn blobs_are_separated_one_vs_rest() {
        let mut rng = seed::rng(2);
        let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
        let y: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((90, 2), |(i, j)| centers[y[i]][j] + rng.random_range(-0.5..0.5));
        let e = train_svm_multiclass(x.view(), &y, 3, &SvmParams::default()).unwrap();
        assert_eq!(e.machines.len(), 3);
        assert_eq!(e.predict(x.view()).unwrap(), y);
        // nearest centroid agrees on the blob means
        let means = Array2::from_shape_fn((3, 2), |(c, j)| centers[c][j]);
        assert_eq!(e.predict(means.view()).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn two_classes_share_one_boundary() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let y = [0, 0, 1, 1];
        let p = SvmParams { kernel: KernelSpec::Linear, ..Default::default() };
        let e = train_svm_multiclass(x.view(), &y, 2, &p).unwrap();
        let b = train_svm_binary(x.view(), &[1.0, 1.0, -1.0, -1.0], &p).unwrap();
        for r in x.rows() {
            let dv = e.decision_values(r);
            assert!((dv[0] + dv[1]).abs() < 1e-12);
            assert!((dv[0] - b.decision(x.view(), r)).abs() < 1e-12);
        }
        assert_eq!(e.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn absent_class_is_reported() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            train_svm_multiclass(x.view(), &[0, 2], 3, &SvmParams::default()),
            Err(Error::ClassAbsent(1))
        ));
    }

    #[test]
    fn iteration_cap_flags_nonconvergence() {
        let mut rng = seed::rng(5);
        let x = Array2::from_shape_fn((30, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = SvmParams { max_iter: 1, tol: 1e-9, ..Default::default() };
        let m = train_svm_binary(x.view(), &y, &p).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
    }

    #[test]
    fn cached_rows_match_full_kernel() {
        let mut rng = seed::rng(8);
        let x = Array2::from_shape_fn((25, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..25).map(|i| if x[[i, 2]] > 0.0 { 1.0 } else { -1.0 }).collect();
        let p = SvmParams { tol: 1e-6, ..Default::default() };
        let k = p.kernel.resolve(x.view());
        let full = solve(x.view(), &y, k, &p, KernelRows::Full(full_kernel(x.view(), &k))).unwrap();
        let mut cache = KernelRows::cached(x.view(), k, 1);
        if let KernelRows::Cached { capacity, .. } = &mut cache {
            *capacity = 3;
        }
        let cached = solve(x.view(), &y, k, &p, cache).unwrap();
        assert_eq!(full.alphas, cached.alphas);
    }

    #[test]
    fn constant_shift_leaves_argmax() {
        let v = [0.3, 1.2, 1.2, -4.0];
        let shifted: Vec<f64> = v.iter().map(|x| x + 17.0).collect();
        assert_eq!(argmax_f64(&v), argmax_f64(&shifted));
        assert_eq!(argmax_f64(&v), 1);
    }
}
