//! Random forests of CART trees with bootstrap sampling and majority vote.

use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{argmax_u32, check_width, train_tree_on, DecisionTree, TreeParams};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means floor(sqrt(d)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub feature_count: usize,
    pub class_count: usize,
    pub params: ForestParams,
    /// Out-of-bag accuracy in [0, 1], when every row was out of bag at least once.
    pub oob_accuracy: Option<f64>,
}

pub fn train_forest(
    x: ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    params: &ForestParams,
) -> Result<RandomForest> {
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("forest needs at least one tree".into()));
    }
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let d = x.ncols();
    let max_features = params
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: Some(max_features),
    };
    let grown: Vec<(DecisionTree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive_index(params.seed, "tree", i as u64));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            for &r in &rows {
                in_bag[r] = true;
            }
            train_tree_on(x, y, class_count, &rows, &tree_params, &mut rng).map(|t| (t, in_bag))
        })
        .collect::<Result<_>>()?;

    let oob_accuracy = if params.bootstrap {
        let mut correct = 0usize;
        let mut counted = 0usize;
        for i in 0..n {
            let row = x.row(i).to_vec();
            let mut votes = vec![0u32; class_count];
            let mut any = false;
            for (t, in_bag) in &grown {
                if !in_bag[i] {
                    votes[t.predict_row(&row)] += 1;
                    any = true;
                }
            }
            if any {
                counted += 1;
                correct += usize::from(argmax_u32(&votes) == y[i]);
            }
        }
        (counted == n).then(|| correct as f64 / n as f64)
    } else {
        None
    };

    Ok(RandomForest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        feature_count: d,
        class_count,
        params: *params,
        oob_accuracy,
    })
}

impl RandomForest {
    pub fn votes_row(&self, row: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.class_count];
        for t in &self.trees {
            votes[t.predict_row(row)] += 1;
        }
        votes
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_width(x, self.feature_count)?;
        Ok(x.outer_iter()
            .into_par_iter()
            .map(|r| argmax_u32(&self.votes_row(&r.to_vec())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn blobs(n: usize, seed_value: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = seed::rng(seed_value);
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((n, 4), |(i, j)| {
            let c = y[i] as f64;
            if j < 2 { 3.0 * c + rng.random_range(-1.0..1.0) } else { rng.random_range(-1.0..1.0) }
        });
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(150, 1);
        let f = train_forest(x.view(), &y, 3, &ForestParams { n_trees: 25, ..Default::default() }).unwrap();
        let (xt, yt) = blobs(90, 2);
        let p = f.predict(xt.view()).unwrap();
        let acc = p.iter().zip(&yt).filter(|(a, b)| a == b).count() as f64 / 90.0;
        assert!(acc > 0.95, "{acc}");
        assert!(f.oob_accuracy.unwrap() > 0.9);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = blobs(60, 5);
        let p = ForestParams { n_trees: 10, seed: 77, ..Default::default() };
        let a = train_forest(x.view(), &y, 3, &p).unwrap();
        let b = train_forest(x.view(), &y, 3, &p).unwrap();
        assert_eq!(a, b);
        let c = train_forest(x.view(), &y, 3, &ForestParams { seed: 78, ..p }).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn vote_ties_go_to_lowest_class() {
        assert_eq!(argmax_u32(&[2, 3, 3]), 1);
        assert_eq!(argmax_u32(&[0, 0]), 0);
    }

    #[test]
    fn zero_trees_rejected() {
        let (x, y) = blobs(10, 0);
        let p = ForestParams { n_trees: 0, ..Default::default() };
        assert!(matches!(train_forest(x.view(), &y, 3, &p), Err(Error::InvalidArgument(_))));
    }
}
