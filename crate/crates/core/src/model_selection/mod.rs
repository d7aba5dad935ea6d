//! Stratified k-fold cross-validation, grid search with per-fold refitting of
//! the feature pipeline, test-set evaluation and the results-table driver.

mod evaluate;
mod reproduce;

pub use evaluate::{accuracy, evaluate, evaluate_predictions, ClassMetrics, EvalReport, ReportProvenance};
pub use reproduce::{
    parse_manifest, reproduce_table, CellOutcome, ReproduceOptions, ReproductionReport, TableRow,
    GBT_DATASET, GBT_PUBLISHED_ACCURACY, PUBLISHED_TABLE, TABLE_COLUMNS, TABLE_DATASETS,
};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, ModelFamily, ModelParams, TrainedModel};
use crate::error::{Error, Result};
use crate::features::{FeaturePipeline, FittedReduction, Reduction};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Stratified folds: each class is shuffled and dealt round-robin, with the
/// dealing position carried over from one class to the next so fold sizes
/// stay within one of each other.
pub fn kfold_indices(n: usize, k: usize, labels: &[usize], seed_value: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::BadK { k, n });
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut assignment = vec![0usize; n];
    let mut next = 0;
    for (&class, members) in by_class.iter_mut() {
        if members.len() < k {
            log::warn!(
                "class {class} has {} rows, fewer than {k} folds; some folds will not contain it",
                members.len()
            );
        }
        let mut rng = seed::rng(seed::derive_index(seed_value, "kfold/class", class as u64));
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| Fold {
            train: (0..n).filter(|&i| assignment[i] != f).collect(),
            validation: (0..n).filter(|&i| assignment[i] == f).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: ModelFamily,
    /// Values for every hyperparameter not in the grid.
    pub base: ModelParams,
    /// Hyperparameter name and candidate values, in declaration order.
    pub grid: Vec<(String, Vec<f64>)>,
    pub reductions: Vec<Reduction>,
    pub folds: usize,
    pub seed: u64,
}

impl GridSpec {
    /// The search used for the results table: C for SVMs, tree count for
    /// forests, gamma/alpha/lambda for boosting.
    pub fn baseline(family: ModelFamily, reductions: Vec<Reduction>, seed_value: u64) -> Self {
        let (grid, folds): (Vec<(String, Vec<f64>)>, usize) = match family {
            ModelFamily::Svm => (vec![("C".into(), vec![0.1, 1.0, 10.0])], 10),
            ModelFamily::Rf => (vec![("n_trees".into(), vec![50.0, 100.0, 250.0])], 10),
            ModelFamily::Gbt => (
                vec![
                    ("gamma".into(), vec![0.0, 0.5]),
                    ("alpha".into(), vec![0.0, 0.5]),
                    ("lambda".into(), vec![1.0, 5.0]),
                ],
                5,
            ),
        };
        GridSpec {
            family,
            base: ModelParams::defaults(family),
            grid,
            reductions,
            folds,
            seed: seed_value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::BadK { k: self.folds, n: 0 });
        }
        if self.reductions.is_empty() || self.grid.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidArgument("every grid list must be non-empty".into()));
        }
        if self.base.family() != self.family {
            return Err(Error::InvalidArgument("base parameters belong to another family".into()));
        }
        Ok(())
    }

    /// Cells in declaration order: reductions outermost, then
    /// hyperparameters with the last one varying fastest.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        self.validate()?;
        let mut combos: Vec<Vec<(String, f64)>> = vec![Vec::new()];
        for (name, values) in &self.grid {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |&v| {
                        let mut c = c.clone();
                        c.push((name.clone(), v));
                        c
                    })
                })
                .collect();
        }
        let mut cells = Vec::new();
        for reduction in &self.reductions {
            for combo in &combos {
                let mut params = self.base;
                for (name, v) in combo {
                    params = params.with(name, *v)?;
                }
                cells.push(GridCell {
                    index: cells.len(),
                    reduction: *reduction,
                    overrides: combo.clone(),
                    params: params.with_seed(seed::derive(self.seed, "model")),
                });
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub reduction: Reduction,
    pub overrides: Vec<(String, f64)>,
    pub params: ModelParams,
}

impl GridCell {
    pub fn label(&self) -> String {
        let mut s = self.reduction.label();
        for (name, v) in &self.overrides {
            s.push_str(&format!(" {name}={v}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    /// Validation accuracy per fold, as a fraction.
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub cells: Vec<CellResult>,
    pub best_cell: usize,
    /// Standardizer identity fitted inside each fold.
    pub fold_standardizers: Vec<String>,
    pub pipeline: FeaturePipeline,
    pub model: TrainedModel,
    pub params: ModelParams,
}

impl CvResult {
    pub fn best(&self) -> &CellResult {
        &self.cells[self.best_cell]
    }
}

fn pca_fit_k(reductions: &[Reduction]) -> Option<usize> {
    reductions
        .iter()
        .filter_map(|r| match r {
            Reduction::Pca { k } => Some(*k),
            _ => None,
        })
        .max()
}

/// Fits one pipeline per distinct reduction on `x_fit`; PCA is fitted once
/// at the largest requested `k` and truncated for the smaller ones.
fn fit_pipelines(x_fit: ArrayView3<f64>, reductions: &[Reduction]) -> Result<Vec<FeaturePipeline>> {
    let standardizer = crate::features::fit_standardizer(x_fit)?;
    let pca = match pca_fit_k(reductions) {
        Some(k) => {
            let data = crate::features::apply_standardizer(&standardizer, x_fit)?;
            match FittedReduction::fit(&Reduction::Pca { k }, &data)? {
                FittedReduction::Pca(p) => Some(p),
                FittedReduction::Covariance(_) => unreachable!("fitted a PCA reduction"),
            }
        }
        None => None,
    };
    reductions
        .iter()
        .map(|r| {
            let reduction = match r {
                Reduction::Covariance(o) => FittedReduction::Covariance(*o),
                Reduction::Pca { k } => FittedReduction::Pca(pca.as_ref().expect("fitted above").truncate(*k)?),
            };
            Ok(FeaturePipeline {
                standardizer: standardizer.clone(),
                reduction,
            })
        })
        .collect()
}

fn select_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

fn fraction_correct(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// Evaluates every grid cell with k-fold cross-validation on raw windows
/// `x` (trials × samples × sensors), then refits the best cell on all rows.
pub fn grid_search(x: ArrayView3<f64>, y: &[usize], class_count: usize, spec: &GridSpec) -> Result<CvResult> {
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} trials", y.len())));
    }
    let cells = spec.cells()?;
    let folds = kfold_indices(n, spec.folds, y, seed::derive(spec.seed, "cv/folds"))?;

    // features[fold][reduction] = (train, validation); folds run one at a
    // time so only one training subset is materialized
    let mut features: Vec<Vec<(Array2<f64>, Array2<f64>)>> = Vec::with_capacity(folds.len());
    let mut fold_standardizers = Vec::with_capacity(folds.len());
    for (f, fold) in folds.iter().enumerate() {
        let subset = x.select(Axis(0), &fold.train);
        let pipelines = fit_pipelines(subset.view(), &spec.reductions).map_err(|e| Error::GridCell {
            cell: format!("fold {f} pipeline"),
            source: Box::new(e),
        })?;
        drop(subset);
        fold_standardizers.push(pipelines[0].standardizer.id());
        let per_reduction = pipelines
            .iter()
            .map(|p| {
                let all = p.transform(x)?.data;
                Ok((select_rows(&all, &fold.train), select_rows(&all, &fold.validation)))
            })
            .collect::<Result<Vec<_>>>()?;
        features.push(per_reduction);
    }

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let cell = &cells[c];
            let r = spec.reductions.iter().position(|r| *r == cell.reduction).expect("cell reduction");
            let (train, val) = &features[f][r];
            let y_train: Vec<usize> = folds[f].train.iter().map(|&i| y[i]).collect();
            let y_val: Vec<usize> = folds[f].validation.iter().map(|&i| y[i]).collect();
            let annotate = |e: Error| Error::GridCell {
                cell: format!("{} fold {f}", cell.label()),
                source: Box::new(e),
            };
            let model = classifiers::train(train.view(), &y_train, class_count, &cell.params).map_err(annotate)?;
            if !model.converged() {
                log::warn!("cell {} fold {f}: solver hit its iteration cap", cell.label());
            }
            let pred = model.predict(val.view()).map_err(annotate)?;
            Ok(fraction_correct(&pred, &y_val))
        })
        .collect::<Result<_>>()?;

    let k = folds.len();
    let results: Vec<CellResult> = cells
        .into_iter()
        .enumerate()
        .map(|(c, cell)| {
            let acc = scores[c * k..(c + 1) * k].to_vec();
            let mean = acc.iter().sum::<f64>() / k as f64;
            let var = acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
            CellResult { cell, fold_accuracy: acc, mean, std: var.sqrt() }
        })
        .collect();
    let mut best_cell = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean > results[best_cell].mean {
            best_cell = i;
        }
    }
    let best = &results[best_cell].cell;
    let annotate = |e: Error| Error::GridCell {
        cell: format!("{} refit", best.label()),
        source: Box::new(e),
    };
    let pipeline = FeaturePipeline::fit(x, &best.reduction).map_err(annotate)?;
    let train = pipeline.transform(x).map_err(annotate)?;
    let model = classifiers::train(train.data.view(), y, class_count, &best.params).map_err(annotate)?;
    let params = best.params;
    Ok(CvResult {
        cells: results,
        best_cell,
        fold_standardizers,
        pipeline,
        model,
        params,
    })
}
