//! Regularized gradient-boosted regression trees with a softmax objective.
//!
//! Trees are grown level by level with an exact greedy search over presorted
//! feature columns. Splits are scored with second-order statistics and an
//! ℓ1/ℓ2 leaf penalty; a split is kept only when its loss reduction exceeds
//! `gamma`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nonfinite;
use super::svm::argmax_f64;
use super::tree::check_width;
use crate::error::{Error, Result};

const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum loss reduction for a split; may be infinite.
    #[serde(with = "nonfinite")]
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub base_score: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            rounds: 40,
            learning_rate: 0.3,
            max_depth: 6,
            gamma: 0.0,
            alpha: 0.0,
            lambda: 1.0,
            min_child_weight: 1.0,
            base_score: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Loss reduction of the split, before subtracting `gamma`.
        gain: f64,
        grad: f64,
        hess: f64,
    },
    Leaf { weight: f64, grad: f64, hess: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if row[*feature] <= *threshold { *left } else { *right },
                RegNode::Leaf { weight, .. } => return *weight,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            RegNode::Leaf { weight, grad, hess } => Some((*weight, *grad, *hess)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub split_count: u32,
    pub total_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// `rounds[r][k]` is the tree for class `k` added in round `r`.
    pub rounds: Vec<Vec<RegTree>>,
    pub params: GbtParams,
    pub feature_count: usize,
    pub class_count: usize,
    pub feature_importance: Vec<FeatureImportance>,
    /// Mean training log-loss after each round.
    pub train_log_loss: Vec<f64>,
}

pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

pub fn leaf_weight(g: f64, h: f64, p: &GbtParams) -> f64 {
    let denom = h + p.lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    -soft_threshold(g, p.alpha) / denom
}

fn score(g: f64, h: f64, p: &GbtParams) -> f64 {
    let denom = h + p.lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    soft_threshold(g, p.alpha).powi(2) / denom
}

fn validate(p: &GbtParams) -> Result<()> {
    if p.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
    if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    if !finite_nonneg(p.alpha) || !finite_nonneg(p.lambda) || !finite_nonneg(p.min_child_weight) {
        return Err(Error::InvalidArgument("alpha, lambda and min_child_weight must be finite and non-negative".into()));
    }
    if p.gamma.is_nan() || p.gamma < 0.0 {
        return Err(Error::InvalidArgument("gamma must be non-negative".into()));
    }
    Ok(())
}

pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_loss(scores: &Array2<f64>, y: &[usize]) -> f64 {
    let total: f64 = scores
        .rows()
        .into_iter()
        .zip(y)
        .map(|(s, &c)| {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - s[c]
        })
        .sum();
    total / y.len() as f64
}

pub fn train_gbt(
    x: ArrayView2<f64>,
    y: &[usize],
    class_count: usize,
    params: &GbtParams,
) -> Result<GbtModel> {
    validate(params)?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows but {} labels", y.len())));
    }
    if class_count < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= class_count) {
        return Err(Error::InvalidArgument(format!("label {bad} >= class count {class_count}")));
    }
    crate::features::check_finite(x.iter().copied())?;

    let columns: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let sorted: Vec<Vec<u32>> = columns
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut scores = Array2::from_elem((n, class_count), params.base_score);
    let mut rounds = Vec::with_capacity(params.rounds);
    let mut importance = vec![FeatureImportance::default(); d];
    let mut losses = Vec::with_capacity(params.rounds);
    let mut prob = Array2::<f64>::zeros((n, class_count));
    for _ in 0..params.rounds {
        for (s, mut p) in scores.rows().into_iter().zip(prob.rows_mut()) {
            softmax_into(s.as_slice().expect("row-major"), p.as_slice_mut().expect("row-major"));
        }
        let trees: Vec<RegTree> = (0..class_count)
            .into_par_iter()
            .map(|k| {
                let mut g = Vec::with_capacity(n);
                let mut h = Vec::with_capacity(n);
                for i in 0..n {
                    let p = prob[[i, k]];
                    g.push(p - f64::from(u8::from(y[i] == k)));
                    h.push((2.0 * p * (1.0 - p)).max(MIN_HESSIAN));
                }
                grow(&columns, &sorted, &g, &h, params)
            })
            .collect();
        for tree in &trees {
            for node in &tree.nodes {
                if let RegNode::Split { feature, gain, .. } = node {
                    importance[*feature].split_count += 1;
                    importance[*feature].total_gain += gain;
                }
            }
        }
        for (i, mut s) in scores.rows_mut().into_iter().enumerate() {
            let row: Vec<f64> = (0..d).map(|j| columns[j][i]).collect();
            for (k, t) in trees.iter().enumerate() {
                s[k] += params.learning_rate * t.predict_row(&row);
            }
        }
        losses.push(log_loss(&scores, y));
        rounds.push(trees);
    }
    Ok(GbtModel {
        rounds,
        params: *params,
        feature_count: d,
        class_count,
        feature_importance: importance,
        train_log_loss: losses,
    })
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one regression tree on gradient/hessian pairs.
fn grow(columns: &[Vec<f64>], sorted: &[Vec<u32>], g: &[f64], h: &[f64], p: &GbtParams) -> RegTree {
    const DONE: u32 = u32::MAX;
    let n = g.len();
    let mut nodes = vec![RegNode::Leaf {
        weight: 0.0,
        grad: g.iter().sum(),
        hess: h.iter().sum(),
    }];
    // node index per row while the row sits in a node that may still split
    let mut position = vec![0u32; n];
    let mut frontier: Vec<usize> = vec![0];
    for depth in 0..=p.max_depth {
        if frontier.is_empty() {
            break;
        }
        let stats: Vec<(f64, f64)> = frontier
            .iter()
            .map(|&id| match nodes[id] {
                RegNode::Leaf { grad, hess, .. } => (grad, hess),
                RegNode::Split { .. } => unreachable!("frontier holds leaves"),
            })
            .collect();
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot[id] = s;
        }
        let best: Vec<Option<Best>> = if depth < p.max_depth && p.gamma.is_finite() {
            let per_feature: Vec<Vec<Option<Best>>> = (0..columns.len())
                .into_par_iter()
                .map(|f| scan_feature(f, &columns[f], &sorted[f], &position, &slot, &stats, g, h, p))
                .collect();
            // reduce in feature order so ties go to the lowest index
            (0..frontier.len())
                .map(|s| {
                    per_feature.iter().fold(None, |acc: Option<Best>, fb| match (acc, fb[s]) {
                        (Some(a), Some(b)) if b.gain > a.gain => Some(b),
                        (None, b) => b,
                        (a, _) => a,
                    })
                })
                .collect()
        } else {
            vec![None; frontier.len()]
        };

        let mut next = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); frontier.len()];
        for (s, &id) in frontier.iter().enumerate() {
            let (grad, hess) = stats[s];
            match best[s] {
                Some(b) if b.gain > p.gamma => {
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(RegNode::Leaf { weight: 0.0, grad: 0.0, hess: 0.0 });
                    nodes.push(RegNode::Leaf { weight: 0.0, grad: 0.0, hess: 0.0 });
                    nodes[id] = RegNode::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right,
                        gain: b.gain,
                        grad,
                        hess,
                    };
                    children[s] = (left, right);
                    next.push(left);
                    next.push(right);
                }
                _ => {
                    nodes[id] = RegNode::Leaf {
                        weight: leaf_weight(grad, hess, p),
                        grad,
                        hess,
                    };
                }
            }
        }
        // route rows and accumulate child statistics
        let mut child_stats = vec![(0.0, 0.0); nodes.len()];
        for i in 0..n {
            let at = position[i];
            if at == DONE {
                continue;
            }
            let s = slot[at as usize];
            match nodes[at as usize] {
                RegNode::Split { feature, threshold, .. } => {
                    let (l, r) = children[s];
                    let to = if columns[feature][i] <= threshold { l } else { r };
                    position[i] = to as u32;
                    child_stats[to].0 += g[i];
                    child_stats[to].1 += h[i];
                }
                RegNode::Leaf { .. } => position[i] = DONE,
            }
        }
        for &c in &next {
            nodes[c] = RegNode::Leaf {
                weight: 0.0,
                grad: child_stats[c].0,
                hess: child_stats[c].1,
            };
        }
        frontier = next;
    }
    RegTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn scan_feature(
    feature: usize,
    column: &[f64],
    order: &[u32],
    position: &[u32],
    slot: &[usize],
    stats: &[(f64, f64)],
    g: &[f64],
    h: &[f64],
    p: &GbtParams,
) -> Vec<Option<Best>> {
    let m = stats.len();
    let mut left = vec![(0.0f64, 0.0f64); m];
    let mut last = vec![f64::NAN; m];
    let mut best: Vec<Option<Best>> = vec![None; m];
    let parent: Vec<f64> = stats.iter().map(|&(gs, hs)| score(gs, hs, p)).collect();
    for &r in order {
        let r = r as usize;
        let at = position[r];
        if at == u32::MAX {
            continue;
        }
        let s = slot[at as usize];
        if s == usize::MAX {
            continue;
        }
        let v = column[r];
        let prev = last[s];
        if !prev.is_nan() && v > prev {
            let (gl, hl) = left[s];
            let (gt, ht) = stats[s];
            let (gr, hr) = (gt - gl, ht - hl);
            if hl >= p.min_child_weight && hr >= p.min_child_weight {
                let gain = 0.5 * (score(gl, hl, p) + score(gr, hr, p) - parent[s]);
                if gain.is_finite() && best[s].is_none_or(|b| gain > b.gain) {
                    let mut t = prev + (v - prev) / 2.0;
                    if t >= v || t < prev {
                        t = prev;
                    }
                    best[s] = Some(Best { gain, feature, threshold: t });
                }
            }
        }
        left[s].0 += g[r];
        left[s].1 += h[r];
        last[s] = v;
    }
    best
}

impl GbtModel {
    pub fn raw_scores(&self, row: &[f64]) -> Vec<f64> {
        let mut s = vec![self.params.base_score; self.class_count];
        for round in &self.rounds {
            for (k, t) in round.iter().enumerate() {
                s[k] += self.params.learning_rate * t.predict_row(row);
            }
        }
        s
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        check_width(x, self.feature_count)?;
        Ok(x.outer_iter()
            .into_par_iter()
            .map(|r| argmax_f64(&self.raw_scores(&r.to_vec())))
            .collect())
    }

    pub fn split_count(&self) -> usize {
        self.feature_importance.iter().map(|f| f.split_count as usize).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: usize,
    pub name: String,
    pub split_count: u32,
    pub total_gain: f64,
}

/// Features ranked by split count, then total gain, then index; unused
/// features are omitted.
pub fn feature_importance_report(model: &GbtModel, feature_names: &[String]) -> Vec<ImportanceEntry> {
    let mut out: Vec<ImportanceEntry> = model
        .feature_importance
        .iter()
        .enumerate()
        .filter(|(_, f)| f.split_count > 0)
        .map(|(i, f)| ImportanceEntry {
            feature: i,
            name: feature_names.get(i).cloned().unwrap_or_else(|| format!("f{i}")),
            split_count: f.split_count,
            total_gain: f.total_gain,
        })
        .collect();
    out.sort_by(|a, b| {
        b.split_count
            .cmp(&a.split_count)
            .then(b.total_gain.total_cmp(&a.total_gain))
            .then(a.feature.cmp(&b.feature))
    });
    out
}
