//! Synthetic GPU telemetry whose classes differ mainly in sensor correlation.
//!
//! Each sample is `mean + job_offset + scale ⊙ (L z + noise ε)`, where `L` is
//! the Cholesky factor of the class correlation matrix and `z`, `ε` are
//! standard normal. Memory sensors are emitted as a complementary pair
//! against a fixed device total, and readings are clipped to physical ranges.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{RawTrial, SensorKind};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::taxonomy::{self, N_GPU_SENSORS};

/// Typical reading per sensor, in `GPU_SENSORS` order.
pub const BASE_MEAN: [f64; N_GPU_SENSORS] = [55.0, 40.0, 20000.0, 12768.0, 60.0, 65.0, 180.0];
/// Per-sensor spread around the mean.
pub const BASE_SCALE: [f64; N_GPU_SENSORS] = [15.0, 10.0, 1500.0, 1500.0, 4.0, 4.0, 35.0];
const MEM_FREE: usize = 2;
const MEM_USED: usize = 3;
const PERCENT_SENSORS: [usize; 2] = [0, 1];
/// Minimum pairwise Frobenius distance between class correlations.
pub const MIN_CORRELATION_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClassSpec {
    /// Taxonomy label written to the trials.
    pub class_index: usize,
    pub class_name: String,
    pub mean_profile: Vec<f64>,
    pub correlation: Array2<f64>,
    /// Per-sensor standard deviation.
    pub noise_scale: Vec<f64>,
    /// Inclusive bounds on samples per trial.
    pub length_range: (usize, usize),
    pub job_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub classes: Vec<SynthClassSpec>,
    pub seed: u64,
    /// Weight of independent per-sensor noise added to the correlated signal.
    pub noise: f64,
    /// Std of the per-job mean offset, in units of the sensor scale.
    pub job_jitter: f64,
    pub memory_total_mib: f64,
    /// Emit `memory_free = total − memory_used` instead of an independent draw.
    pub complementary_memory: bool,
    /// Fraction of jobs that run on two GPUs (two trials per job).
    pub multi_gpu_fraction: f64,
    /// Leading samples drawn from a class-independent distribution.
    pub warmup_samples: usize,
    pub sample_rate_hz: f64,
}

impl SynthCorpusSpec {
    pub fn new(classes: Vec<SynthClassSpec>, seed: u64) -> Self {
        SynthCorpusSpec {
            classes,
            seed,
            noise: 0.3,
            job_jitter: 0.3,
            memory_total_mib: 32768.0,
            complementary_memory: true,
            multi_gpu_fraction: 0.1,
            warmup_samples: 0,
            sample_rate_hz: 9.0,
        }
    }

    pub fn total_jobs(&self) -> usize {
        self.classes.iter().map(|c| c.job_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.class_name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate class {:?}", c.class_name)));
            }
            if c.mean_profile.len() != N_GPU_SENSORS
                || c.noise_scale.len() != N_GPU_SENSORS
                || c.correlation.dim() != (N_GPU_SENSORS, N_GPU_SENSORS)
            {
                return Err(Error::ShapeMismatch(format!("class {:?} must describe 7 sensors", c.class_name)));
            }
            let (lo, hi) = c.length_range;
            if lo == 0 || lo > hi {
                return Err(Error::InvalidArgument(format!("bad length range {lo}..={hi}")));
            }
            cholesky(&c.correlation)?;
        }
        if !(self.noise >= 0.0 && self.job_jitter >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_gpu_fraction) {
            return Err(Error::InvalidArgument("multi-GPU fraction must lie in [0, 1]".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor, or `NotPositiveDefinite`.
pub fn cholesky(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let symmetric = (0..n).all(|i| (0..n).all(|j| (m[[i, j]] - m[[j, i]]).abs() <= 1e-12));
    if !symmetric || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric and finite".into()));
    }
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let l = dm
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?
        .l();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| l[(i, j)]))
}

/// A random correlation matrix: a Haar-ish rotation of an exponentially
/// decaying spectrum with the given decay rate, rescaled to unit diagonal.
pub fn random_correlation(m: usize, decay: f64, rng: &mut Rng) -> Array2<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let denom = (m.max(2) - 1) as f64;
    let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(m, |j, _| (-decay * j as f64 / denom).exp()));
    let s = &q * lambda * q.transpose();
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            1.0
        } else {
            s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt()
        }
    })
}

fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `count` correlation matrices with distinct spectra, redrawn until every
/// pair is at least `MIN_CORRELATION_DISTANCE` apart.
pub fn class_correlations(count: usize, seed_value: u64) -> Result<Vec<Array2<f64>>> {
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(count);
    for c in 0..count {
        let mut rng = seed::rng(seed::derive_index(seed_value, "synth/correlation", c as u64));
        let decay = 1.0 + 4.0 * (c as f64 + 0.5) / count.max(1) as f64;
        let mut attempts = 0;
        loop {
            let r = random_correlation(N_GPU_SENSORS, decay, &mut rng);
            if out.iter().all(|o| frobenius(o, &r) > MIN_CORRELATION_DISTANCE) {
                out.push(r);
                break;
            }
            attempts += 1;
            if attempts >= 1000 {
                return Err(Error::InvalidArgument(format!(
                    "could not place correlation {c} at distance > {MIN_CORRELATION_DISTANCE}"
                )));
            }
        }
    }
    Ok(out)
}

/// Jobs per class after scaling, never fewer than three.
pub fn scaled_job_count(count: u32, scale: f64) -> usize {
    ((count as f64 * scale).round() as usize).max(3)
}

fn build_spec(members: &[(usize, usize)], seed_value: u64) -> Result<SynthCorpusSpec> {
    let correlations = class_correlations(members.len(), seed_value)?;
    let classes = members
        .iter()
        .zip(correlations)
        .enumerate()
        .map(|(c, (&(label, jobs), correlation))| {
            let mut rng = seed::rng(seed::derive_index(seed_value, "synth/mean", c as u64));
            let mean_profile = (0..N_GPU_SENSORS)
                .map(|j| BASE_MEAN[j] + 0.1 * BASE_SCALE[j] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SynthClassSpec {
                class_index: label,
                class_name: taxonomy::CLASSES[label].name.to_string(),
                mean_profile,
                correlation,
                noise_scale: BASE_SCALE.to_vec(),
                length_range: (600, 1500),
                job_count: jobs,
            }
        })
        .collect();
    Ok(SynthCorpusSpec::new(classes, seed_value))
}

/// All 26 taxonomy classes with job counts proportional to the labelled
/// corpus, multiplied by `scale`.
pub fn default_26_class_spec(seed_value: u64, scale: f64) -> Result<SynthCorpusSpec> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let members: Vec<(usize, usize)> = taxonomy::CLASSES
        .iter()
        .enumerate()
        .map(|(i, c)| (i, scaled_job_count(c.job_count, scale)))
        .collect();
    build_spec(&members, seed_value)
}

/// One class from each of four families (VGG16, ResNet50, U3-32, Bert),
/// `100 · scale` jobs each.
pub fn four_class_spec(seed_value: u64, scale: f64) -> Result<SynthCorpusSpec> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let members: Vec<(usize, usize)> = ["VGG16", "ResNet50", "U3-32", "Bert"]
        .iter()
        .map(|n| (taxonomy::class_index(n).expect("known class"), scaled_job_count(100, scale)))
        .collect();
    build_spec(&members, seed_value)
}

struct Profile<'a> {
    mean: &'a [f64],
    chol: &'a Array2<f64>,
}

fn draw_sample(
    p: &Profile,
    offset: &[f64],
    scale: &[f64],
    noise: f64,
    rng: &mut Rng,
    out: &mut [f64],
) {
    let m = out.len();
    let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..m {
        let mut signal = 0.0;
        for k in 0..=i {
            signal += p.chol[[i, k]] * z[k];
        }
        let eps: f64 = rng.sample(StandardNormal);
        out[i] = p.mean[i] + offset[i] + scale[i] * (signal + noise * eps);
    }
}

fn clip(row: &mut [f64], spec: &SynthCorpusSpec) {
    for &j in &PERCENT_SENSORS {
        row[j] = row[j].clamp(0.0, 100.0);
    }
    for v in row.iter_mut() {
        *v = v.max(0.0);
    }
    if spec.complementary_memory {
        row[MEM_USED] = row[MEM_USED].min(spec.memory_total_mib);
        row[MEM_FREE] = spec.memory_total_mib - row[MEM_USED];
    }
}

struct JobPlan {
    class: usize,
    global: usize,
}

/// Generates every trial of the corpus in canonical (class, job) order.
pub fn generate_corpus(spec: &SynthCorpusSpec) -> Result<Vec<RawTrial>> {
    spec.validate()?;
    let factors: Vec<Array2<f64>> = spec
        .classes
        .iter()
        .map(|c| cholesky(&c.correlation))
        .collect::<Result<_>>()?;
    let warmup_corr = {
        let mut rng = seed::rng(seed::derive(spec.seed, "synth/warmup"));
        random_correlation(N_GPU_SENSORS, 2.0, &mut rng)
    };
    let warmup_chol = cholesky(&warmup_corr)?;
    let mut plans = Vec::with_capacity(spec.total_jobs());
    for (class, c) in spec.classes.iter().enumerate() {
        for _ in 0..c.job_count {
            plans.push(JobPlan { class, global: plans.len() });
        }
    }
    let per_job: Vec<Vec<RawTrial>> = plans
        .par_iter()
        .map(|plan| {
            let c = &spec.classes[plan.class];
            let mut rng = seed::rng(seed::derive_index(spec.seed, "synth/job", plan.global as u64));
            let gpus = if rng.random_bool(spec.multi_gpu_fraction) { 2 } else { 1 };
            let job_id = format!("{}", 100_000 + plan.global);
            let node = format!("node{:03}", plan.global % 480);
            let offset: Vec<f64> = (0..N_GPU_SENSORS)
                .map(|j| spec.job_jitter * c.noise_scale[j] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = rng.random_range(c.length_range.0..=c.length_range.1);
            let class_profile = Profile { mean: &c.mean_profile, chol: &factors[plan.class] };
            let warm_profile = Profile { mean: &BASE_MEAN, chol: &warmup_chol };
            let no_offset = [0.0; N_GPU_SENSORS];
            let t0 = 1.6e9 + plan.global as f64 * 1e5;
            (0..gpus)
                .map(|g| {
                    let mut series = Array2::zeros((n, N_GPU_SENSORS));
                    for (i, mut row) in series.rows_mut().into_iter().enumerate() {
                        let row = row.as_slice_mut().expect("row-major");
                        if i < spec.warmup_samples {
                            draw_sample(&warm_profile, &no_offset, &BASE_SCALE, spec.noise, &mut rng, row);
                        } else {
                            draw_sample(&class_profile, &offset, &c.noise_scale, spec.noise, &mut rng, row);
                        }
                        clip(row, spec);
                    }
                    RawTrial {
                        job_id: job_id.clone(),
                        node: node.clone(),
                        gpu_index: Some(g),
                        label: Some(c.class_index),
                        sensor_kind: SensorKind::Gpu,
                        timestamps: (0..n).map(|i| t0 + i as f64 / spec.sample_rate_hz).collect(),
                        series,
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_job.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn sample_corr(x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows() as f64;
        let m = x.ncols();
        let means: Vec<f64> = (0..m).map(|j| x.column(j).sum() / n).collect();
        let cov = Array2::from_shape_fn((m, m), |(a, b)| {
            x.column(a).iter().zip(x.column(b)).map(|(u, v)| (u - means[a]) * (v - means[b])).sum::<f64>() / n
        });
        Array2::from_shape_fn((m, m), |(a, b)| cov[[a, b]] / (cov[[a, a]] * cov[[b, b]]).sqrt())
    }

    fn one_class(correlation: Array2<f64>, n: usize, jobs: usize) -> SynthCorpusSpec {
        let class = SynthClassSpec {
            class_index: 0,
            class_name: "VGG11".into(),
            mean_profile: BASE_MEAN.to_vec(),
            correlation,
            noise_scale: BASE_SCALE.to_vec(),
            length_range: (n, n),
            job_count: jobs,
        };
        let mut s = SynthCorpusSpec::new(vec![class], 5);
        s.noise = 0.0;
        s.job_jitter = 0.0;
        s.complementary_memory = false;
        s.multi_gpu_fraction = 0.0;
        s
    }

    #[test]
    fn identity_correlation_gives_independent_sensors() {
        let t = generate_corpus(&one_class(Array2::eye(7), 5000, 1)).unwrap();
        let r = sample_corr(&t[0].series);
        for a in 0..7 {
            for b in 0..7 {
                if a != b {
                    assert!(r[[a, b]].abs() < 0.1, "{a},{b}: {}", r[[a, b]]);
                }
            }
        }
    }

    #[test]
    fn sample_correlation_tracks_spec() {
        let corr = class_correlations(3, 21).unwrap().remove(2);
        let t = generate_corpus(&one_class(corr.clone(), 10_000, 1)).unwrap();
        let r = sample_corr(&t[0].series);
        for (a, b) in r.iter().zip(corr.iter()) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }

    #[test]
    fn bookkeeping_and_physical_ranges() {
        let mut s = four_class_spec(1, 0.1).unwrap();
        s.classes.truncate(2);
        s.multi_gpu_fraction = 0.0;
        for c in &mut s.classes {
            c.job_count = 10;
            c.length_range = (600, 700);
        }
        let trials = generate_corpus(&s).unwrap();
        assert_eq!(trials.len(), 20);
        let labels: Vec<usize> = trials.iter().map(|t| t.label.unwrap()).collect();
        assert!(labels[..10].iter().all(|&l| l == s.classes[0].class_index));
        assert!(labels[10..].iter().all(|&l| l == s.classes[1].class_index));
        for t in &trials {
            assert!((600..=700).contains(&t.n_samples()));
            for row in t.series.rows() {
                assert!((0.0..=100.0).contains(&row[0]) && (0.0..=100.0).contains(&row[1]));
                assert_eq!(row[MEM_FREE] + row[MEM_USED], 32768.0);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
            assert!(t.timestamps.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let s = four_class_spec(9, 0.05).unwrap();
        assert_eq!(generate_corpus(&s).unwrap(), generate_corpus(&s).unwrap());
        let other = four_class_spec(10, 0.05).unwrap();
        assert_ne!(generate_corpus(&s).unwrap()[0].series, generate_corpus(&other).unwrap()[0].series);
    }

    #[test]
    fn default_spec_shape() {
        let s = default_26_class_spec(0, 0.1).unwrap();
        assert_eq!(s.classes.len(), 26);
        let unet: usize = s
            .classes
            .iter()
            .filter(|c| taxonomy::CLASSES[c.class_index].family == taxonomy::Family::UNet)
            .map(|c| c.job_count)
            .sum();
        assert!((unet as i64 - 143).abs() <= 5, "{unet}");
        let pna = s.classes.iter().find(|c| c.class_name == "PNA").unwrap();
        assert_eq!(pna.job_count, 3);
        for (i, a) in s.classes.iter().enumerate() {
            cholesky(&a.correlation).unwrap();
            for b in &s.classes[i + 1..] {
                assert!(frobenius(&a.correlation, &b.correlation) > MIN_CORRELATION_DISTANCE);
            }
        }
    }

    #[test]
    fn indefinite_correlation_is_rejected() {
        let mut c = Array2::eye(7);
        c[[0, 1]] = 1.5;
        c[[1, 0]] = 1.5;
        assert!(matches!(generate_corpus(&one_class(c, 600, 1)), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn warmup_prefix_is_shared_across_classes() {
        let mut s = four_class_spec(2, 0.03).unwrap();
        s.warmup_samples = 50;
        let trials = generate_corpus(&s).unwrap();
        // same distribution in the prefix: compare pooled means across classes
        let mean_prefix = |label: usize| {
            let rows: Vec<f64> = trials
                .iter()
                .filter(|t| t.label == Some(label))
                .flat_map(|t| t.series.slice(ndarray::s![..50, 6]).to_vec())
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        let a = mean_prefix(s.classes[0].class_index);
        let b = mean_prefix(s.classes[1].class_index);
        assert!((a - b).abs() < 10.0, "{a} {b}");
    }
}
