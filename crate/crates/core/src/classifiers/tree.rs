//! CART classification trees: Gini impurity, exhaustive midpoint thresholds.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Training rows per class that reached this leaf.
    Leaf { histogram: Vec<u32> },
}

/// A tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub feature_count: usize,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            max_features: None,
        }
    }
}

/// Index of the largest count; ties go to the lowest class.
pub(crate) fn argmax_u32(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl DecisionTree {
    pub fn leaf(&self, row: &[f64]) -> &[u32] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { histogram } => return histogram,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        argmax_u32(self.leaf(row))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_width(x, self.feature_count)?;
        Ok(x.rows()
            .into_iter()
            .map(|r| self.predict_row(&r.to_vec()))
            .collect())
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn split_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .count()
    }
}

pub(crate) fn check_width(x: ArrayView2<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected && x.nrows() > 0 {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, model expects {expected}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Trains a tree on all rows of `x`.
pub fn train_tree(
    x: ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    train_tree_on(x, y, class_count, &rows, params, rng)
}

/// Trains a tree on the given row indices (repeats allowed, as in a
/// bootstrap sample).
pub fn train_tree_on(
    x: ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<DecisionTree> {
    if x.nrows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= class_count) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} >= class count {class_count}"
        )));
    }
    let d = x.ncols();
    // column-major copy for cache-friendly scans
    let columns: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let mut builder = Builder {
        columns: &columns,
        y,
        class_count,
        params,
        nodes: Vec::new(),
        features: (0..d).collect(),
        scratch: Vec::with_capacity(rows.len()),
    };
    let mut work = rows.to_vec();
    builder.grow(&mut work, rng);
    Ok(DecisionTree {
        nodes: builder.nodes,
        feature_count: d,
        class_count,
    })
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [usize],
    class_count: usize,
    params: &'a TreeParams,
    nodes: Vec<TreeNode>,
    features: Vec<usize>,
    scratch: Vec<(f64, usize)>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    /// Σ n_side − Σ c²/n_side; smaller is purer.
    impurity: f64,
}

impl Builder<'_> {
    fn histogram(&self, rows: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.class_count];
        for &r in rows {
            h[self.y[r]] += 1;
        }
        h
    }

    /// Iterative depth-first growth; `rows` is partitioned in place.
    fn grow(&mut self, rows: &mut [usize], rng: &mut Rng) {
        // (range start, range end, depth, parent slot to patch)
        let mut stack: Vec<(usize, usize, usize, Option<(usize, bool)>)> =
            vec![(0, rows.len(), 0, None)];
        while let Some((lo, hi, depth, parent)) = stack.pop() {
            let node_rows = &mut rows[lo..hi];
            let hist = self.histogram(node_rows);
            let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
            let size_ok = node_rows.len() >= 2 * self.params.min_leaf.max(1);
            let split = if !pure && depth_ok && size_ok {
                self.best_split(node_rows, &hist, rng)
            } else {
                None
            };
            let id = self.nodes.len();
            if let Some((slot, is_left)) = parent {
                if let TreeNode::Split { left, right, .. } = &mut self.nodes[slot] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            match split {
                None => self.nodes.push(TreeNode::Leaf { histogram: hist }),
                Some(c) => {
                    let col = &self.columns[c.feature];
                    let mut mid = 0;
                    for i in 0..node_rows.len() {
                        if col[node_rows[i]] <= c.threshold {
                            node_rows.swap(i, mid);
                            mid += 1;
                        }
                    }
                    self.nodes.push(TreeNode::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    // right first so the left subtree is laid out first
                    stack.push((lo + mid, hi, depth + 1, Some((id, false))));
                    stack.push((lo, lo + mid, depth + 1, Some((id, true))));
                }
            }
        }
    }

    fn best_split(&mut self, rows: &[usize], hist: &[u32], rng: &mut Rng) -> Option<Candidate> {
        let d = self.columns.len();
        let wanted = self.params.max_features.unwrap_or(d).clamp(1, d);
        if wanted < d {
            self.features.shuffle(rng);
        } else {
            self.features.sort_unstable();
        }
        let mut best: Option<Candidate> = None;
        let mut evaluated = 0;
        for fi in 0..d {
            // keep drawing past constant features until `wanted` real ones
            if evaluated >= wanted {
                break;
            }
            let f = self.features[fi];
            let col = &self.columns[f];
            self.scratch.clear();
            self.scratch.extend(rows.iter().map(|&r| (col[r], self.y[r])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[self.scratch.len() - 1].0 {
                continue;
            }
            evaluated += 1;
            if let Some(c) = scan(&self.scratch, hist, self.params.min_leaf.max(1)) {
                let better = best.as_ref().is_none_or(|b| c.1 < b.impurity);
                if better {
                    best = Some(Candidate {
                        feature: f,
                        threshold: c.0,
                        impurity: c.1,
                    });
                }
            }
        }
        best
    }
}

/// Best threshold over one sorted feature: `(threshold, impurity)`.
fn scan(sorted: &[(f64, usize)], hist: &[u32], min_leaf: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let mut left = vec![0u32; hist.len()];
    let mut right = hist.to_vec();
    let mut left_sq: f64 = 0.0;
    let mut right_sq: f64 = hist.iter().map(|&c| (c as f64).powi(2)).sum();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let c = sorted[i].1;
        let (l, r) = (left[c] as f64, right[c] as f64);
        left_sq += 2.0 * l + 1.0;
        right_sq -= 2.0 * r - 1.0;
        left[c] += 1;
        right[c] -= 1;
        let (a, b) = (sorted[i].0, sorted[i + 1].0);
        if a == b {
            continue;
        }
        let nl = (i + 1) as f64;
        let nr = (n - i - 1) as f64;
        if (i + 1) < min_leaf || (n - i - 1) < min_leaf {
            continue;
        }
        let impurity = (nl - left_sq / nl) + (nr - right_sq / nr);
        if best.is_none_or(|(_, bi)| impurity < bi) {
            let mut t = a + (b - a) / 2.0;
            if t >= b || t < a {
                t = a;
            }
            best = Some((t, impurity));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    fn fit(x: &Array2<f64>, y: &[usize], classes: usize) -> DecisionTree {
        train_tree(x.view(), y, classes, &TreeParams::default(), &mut seed::rng(0)).unwrap()
    }

    /// Weighted Gini of every midpoint split, computed directly.
    fn gini_oracle(xs: &[f64], ys: &[usize], classes: usize) -> (f64, f64) {
        let gini = |idx: &[usize]| -> f64 {
            let n = idx.len() as f64;
            let mut g = 1.0;
            for c in 0..classes {
                let p = idx.iter().filter(|&&i| ys[i] == c).count() as f64 / n;
                g -= p * p;
            }
            g
        };
        let mut vals = xs.to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut best = (f64::NAN, f64::INFINITY);
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] <= t).collect();
            let r: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] > t).collect();
            let imp = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / xs.len() as f64;
            if imp < best.1 {
                best = (t, imp);
            }
        }
        best
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let t = fit(&array![[1.0], [2.0], [3.0]], &[2, 2, 2], 3);
        assert_eq!(t.nodes, vec![TreeNode::Leaf { histogram: vec![0, 0, 3] }]);
    }

    #[test]
    fn one_dimensional_root_threshold() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0, 0, 1, 1];
        let (t_oracle, _) = gini_oracle(&xs, &ys, 2);
        assert_eq!(t_oracle, 2.5);
        let t = fit(&Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap(), &ys, 2);
        match &t.nodes[0] {
            TreeNode::Split { threshold, feature, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, t_oracle);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn root_split_matches_gini_oracle_on_random_data() {
        let mut rng = seed::rng(9);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..25).map(|_| rng.random_range(0..10) as f64).collect();
            let ys: Vec<usize> = (0..25).map(|_| rng.random_range(0..3)).collect();
            if ys.iter().all(|&c| c == ys[0]) {
                continue;
            }
            let (t_oracle, _) = gini_oracle(&xs, &ys, 3);
            let t = fit(&Array2::from_shape_vec((25, 1), xs).unwrap(), &ys, 3);
            if let TreeNode::Split { threshold, .. } = &t.nodes[0] {
                assert_eq!(*threshold, t_oracle);
            }
        }
    }

    #[test]
    fn xor_is_learned_at_depth_two() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [0, 1, 1, 0];
        let t = fit(&x, &y, 2);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn fully_grown_tree_memorizes_and_routes_consistently() {
        let mut rng = seed::rng(3);
        let x = Array2::from_shape_fn((60, 3), |_| rng.random_range(-5.0..5.0));
        let y: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let t = fit(&x, &y, 4);
        assert_eq!(t.predict(x.view()).unwrap(), y);
        // every training row routed left satisfies x[f] <= threshold
        fn check(t: &DecisionTree, at: usize, rows: Vec<usize>, x: &Array2<f64>, total: &mut u32) {
            match &t.nodes[at] {
                TreeNode::Split { feature, threshold, left, right } => {
                    assert!(threshold.is_finite());
                    let (l, r): (Vec<_>, Vec<_>) = rows.into_iter().partition(|&i| x[[i, *feature]] <= *threshold);
                    check(t, *left, l, x, total);
                    check(t, *right, r, x, total);
                }
                TreeNode::Leaf { histogram } => {
                    assert_eq!(histogram.iter().sum::<u32>() as usize, rows.len());
                    *total += histogram.iter().sum::<u32>();
                }
            }
        }
        let mut total = 0;
        check(&t, 0, (0..60).collect(), &x, &mut total);
        assert_eq!(total, 60);
    }

    #[test]
    fn depth_and_leaf_limits() {
        let mut rng = seed::rng(4);
        let x = Array2::from_shape_fn((80, 2), |_| rng.random_range(0.0..1.0));
        let y: Vec<usize> = (0..80).map(|i| (i * 7) % 3).collect();
        let params = TreeParams { max_depth: Some(2), min_leaf: 5, max_features: None };
        let t = train_tree(x.view(), &y, 3, &params, &mut seed::rng(1)).unwrap();
        assert!(t.depth() <= 2);
        for n in &t.nodes {
            if let TreeNode::Leaf { histogram } = n {
                assert!(histogram.iter().sum::<u32>() >= 5);
            }
        }
    }

    #[test]
    fn empty_and_mismatched_input() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            train_tree(x.view(), &[], 2, &TreeParams::default(), &mut seed::rng(0)),
            Err(Error::EmptyInput)
        ));
        let t = fit(&array![[0.0], [1.0]], &[0, 1], 2);
        assert!(matches!(t.predict(array![[0.0, 1.0]].view()), Err(Error::ShapeMismatch(_))));
        assert!(t.predict(Array2::zeros((0, 1)).view()).unwrap().is_empty());
    }
}
