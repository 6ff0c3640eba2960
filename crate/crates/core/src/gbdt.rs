//! Gradient-boosted decision trees for binary classification.
//!
//! Second-order boosting on a weighted logistic loss with L1 soft-thresholded
//! and L2-damped leaf weights. Splits are found by exact greedy enumeration
//! over presorted feature columns. Missing values (`NaN`) are routed by a
//! default direction learned at each split.
//!
//! A sample goes left at a split when `x < threshold`, or when `x` is missing
//! and `default_left` is set. Gradient, hessian and loss sums are taken in
//! fixed point (multiples of 2^-64 held in `i128`), which makes them exact
//! and therefore independent of sample order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Probability clamp applied before computing gradients and losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub l1_alpha: f64,
    pub l2_lambda: f64,
    pub max_rounds: usize,
    pub early_stop_rounds: usize,
    /// Weight on positive samples. `None` means negatives / positives of the
    /// training labels.
    pub scale_pos_weight: Option<f64>,
    pub min_child_hessian: f64,
    pub base_logit: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.05,
            max_depth: 3,
            l1_alpha: 0.5,
            l2_lambda: 1.0,
            max_rounds: 2000,
            early_stop_rounds: 50,
            scale_pos_weight: None,
            min_child_hessian: 1e-6,
            base_logit: 0.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        for (name, v) in [
            ("l1_alpha", self.l1_alpha),
            ("l2_lambda", self.l2_lambda),
            ("min_child_hessian", self.min_child_hessian),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.max_rounds == 0 || self.early_stop_rounds == 0 {
            return bad("max_rounds and early_stop_rounds must be positive".into());
        }
        if let Some(w) = self.scale_pos_weight {
            if !(w.is_finite() && w > 0.0) {
                return bad(format!("scale_pos_weight must be positive, got {w}"));
            }
        }
        if !self.base_logit.is_finite() {
            return bad("base_logit must be finite".into());
        }
        Ok(())
    }
}

/// Negatives / positives.
pub fn compute_class_weight(labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InsufficientTrainingData(
            "training labels contain a single class".into(),
        ));
    }
    Ok(neg as f64 / pos as f64)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Gradient and hessian of the weighted logistic loss at probability `p`.
pub fn grad_hess(p: f64, y: bool, scale_pos_weight: f64) -> (f64, f64) {
    let p = clamp_prob(p);
    let (w, t) = if y { (scale_pos_weight, 1.0) } else { (1.0, 0.0) };
    (w * (p - t), w * p * (1.0 - p))
}

pub fn soft_threshold(g: f64, alpha: f64) -> f64 {
    g.signum() * (g.abs() - alpha).max(0.0)
}

/// `−soft(G, α) / (H + λ)`.
pub fn leaf_weight(g: f64, h: f64, params: &TrainParams) -> f64 {
    let denom = h + params.l2_lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    -soft_threshold(g, params.l1_alpha) / denom
}

const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0;

fn to_fixed(x: f64) -> i128 {
    (x * FIXED_SCALE).round() as i128
}

fn from_fixed(v: i128) -> f64 {
    v as f64 / FIXED_SCALE
}

fn score(g: f64, h: f64, params: &TrainParams) -> f64 {
    let denom = h + params.l2_lambda;
    if denom <= 0.0 {
        return 0.0;
    }
    let s = soft_threshold(g, params.l1_alpha);
    s * s / denom
}

/// Weighted mean logistic loss.
pub fn weighted_logloss(probs: &[f64], labels: &[bool], scale_pos_weight: f64) -> f64 {
    let mut num = 0i128;
    let mut den = 0i128;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = clamp_prob(p);
        let (w, l) = if y { (scale_pos_weight, -p.ln()) } else { (1.0, -(1.0 - p).ln()) };
        num += to_fixed(w * l);
        den += to_fixed(w);
    }
    from_fixed(num) / from_fixed(den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Logit increment, shrinkage included.
        weight: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Feature indices used by any split, in preorder.
    pub fn features(&self, out: &mut Vec<usize>) {
        if let TreeNode::Split {
            feature, left, right, ..
        } = self
        {
            out.push(*feature);
            left.features(out);
            right.features(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub params: TrainParams,
    /// Positive-class weight actually used.
    pub scale_pos_weight: f64,
    pub base_logit: f64,
    pub n_features: usize,
    /// Prediction uses `trees[..best_round]`.
    pub best_round: usize,
    pub trees: Vec<TreeNode>,
}

impl BoostedModel {
    pub fn predict_logit(&self, x: &[f64]) -> f64 {
        let mut z = self.base_logit;
        for t in &self.trees[..self.best_round] {
            z += t.predict(x);
        }
        z
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.predict_logit(x))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict_proba(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: BoostedModel = serde_json::from_str(s)?;
        if m.best_round > m.trees.len() {
            return Err(Error::InvalidParameter(format!(
                "best_round {} exceeds {} trees",
                m.best_round,
                m.trees.len()
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Per-round losses recorded during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Weighted training loss after each round.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
}

/// Column-major view of a training matrix with presorted columns.
struct Columns {
    cols: Vec<Vec<f64>>,
    /// Per feature: indices of non-missing samples sorted by (value, index).
    sorted: Vec<Vec<usize>>,
}

impl Columns {
    fn new(rows: &[Vec<f64>], n_features: usize) -> Result<Self> {
        let mut cols = vec![Vec::with_capacity(rows.len()); n_features];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    actual: r.len(),
                });
            }
            for (j, &v) in r.iter().enumerate() {
                if v.is_infinite() {
                    return Err(Error::NonFiniteFeature { row: i, column: j });
                }
                cols[j].push(v);
            }
        }
        let sorted = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<usize> = (0..c.len()).filter(|&i| !c[i].is_nan()).collect();
                idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Columns { cols, sorted })
    }
}

fn check_finite(rows: &[Vec<f64>], n_features: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                actual: r.len(),
            });
        }
        if let Some(j) = r.iter().position(|v| v.is_infinite()) {
            return Err(Error::NonFiniteFeature { row: i, column: j });
        }
    }
    Ok(())
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

struct Grower<'a> {
    data: &'a Columns,
    grad: Vec<i128>,
    hess: Vec<i128>,
    params: &'a TrainParams,
    in_node: Vec<bool>,
    buf: Vec<(f64, i128, i128)>,
}

impl<'a> Grower<'a> {
    fn new(data: &'a Columns, grad: &[f64], hess: &[f64], params: &'a TrainParams, in_node: Vec<bool>) -> Self {
        Grower {
            data,
            grad: grad.iter().map(|&g| to_fixed(g)).collect(),
            hess: hess.iter().map(|&h| to_fixed(h)).collect(),
            params,
            in_node,
            buf: Vec::new(),
        }
    }

    fn totals(&self, samples: &[usize]) -> (i128, i128) {
        samples
            .iter()
            .fold((0, 0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]))
    }

    /// Best split of the samples currently flagged in `in_node`.
    fn best_split(&mut self, samples: &[usize]) -> Option<Split> {
        let p = self.params;
        let (g_tot, h_tot) = self.totals(samples);
        let parent = score(from_fixed(g_tot), from_fixed(h_tot), p);
        let mut best: Option<Split> = None;
        for (f, order) in self.data.sorted.iter().enumerate() {
            let col = &self.data.cols[f];
            self.buf.clear();
            for &i in order {
                if self.in_node[i] {
                    self.buf.push((col[i], self.grad[i], self.hess[i]));
                }
            }
            if self.buf.len() < 2 {
                continue;
            }
            let (mut g_nm, mut h_nm) = (0, 0);
            for &(_, g, h) in &self.buf {
                g_nm += g;
                h_nm += h;
            }
            let (g_miss, h_miss) = (g_tot - g_nm, h_tot - h_nm);
            let (mut gl, mut hl) = (0, 0);
            for w in 0..self.buf.len() - 1 {
                let (v, g, h) = self.buf[w];
                gl += g;
                hl += h;
                let next = self.buf[w + 1].0;
                if next <= v {
                    continue;
                }
                let gr = g_nm - gl;
                let hr = h_nm - hl;
                for default_left in [true, false] {
                    let (gl2, hl2, gr2, hr2) = if default_left {
                        (gl + g_miss, hl + h_miss, gr, hr)
                    } else {
                        (gl, hl, gr + g_miss, hr + h_miss)
                    };
                    let (gl2, hl2, gr2, hr2) = (from_fixed(gl2), from_fixed(hl2), from_fixed(gr2), from_fixed(hr2));
                    if hl2 < p.min_child_hessian || hr2 < p.min_child_hessian {
                        continue;
                    }
                    let gain = 0.5 * (score(gl2, hl2, p) + score(gr2, hr2, p) - parent);
                    if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(Split {
                            feature: f,
                            threshold: midpoint(v, next),
                            default_left,
                            gain,
                        });
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, samples: &[usize], depth: usize) -> TreeNode {
        let (g, h) = self.totals(samples);
        let (g, h) = (from_fixed(g), from_fixed(h));
        let leaf = || TreeNode::Leaf {
            weight: self.params.learning_rate * leaf_weight(g, h, self.params),
        };
        if depth >= self.params.max_depth || samples.len() < 2 {
            return leaf();
        }
        for &i in samples {
            self.in_node[i] = true;
        }
        let split = self.best_split(samples);
        for &i in samples {
            self.in_node[i] = false;
        }
        let Some(s) = split else {
            return leaf();
        };
        let col = &self.data.cols[s.feature];
        let (left, right): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| {
            let v = col[i];
            if v.is_nan() {
                s.default_left
            } else {
                v < s.threshold
            }
        });
        TreeNode::Split {
            feature: s.feature,
            threshold: s.threshold,
            default_left: s.default_left,
            left: Box::new(self.grow(&left, depth + 1)),
            right: Box::new(self.grow(&right, depth + 1)),
        }
    }
}

/// Best split of `rows` under the given gradients, or `None`.
pub fn best_split(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &TrainParams) -> Result<Option<Split>> {
    let n_features = rows.first().map_or(0, Vec::len);
    let data = Columns::new(rows, n_features)?;
    let samples: Vec<usize> = (0..rows.len()).collect();
    let mut g = Grower::new(&data, grad, hess, params, vec![true; rows.len()]);
    Ok(g.best_split(&samples))
}

/// Fits one tree to fixed gradients.
pub fn fit_tree(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &TrainParams) -> Result<TreeNode> {
    let n_features = rows.first().map_or(0, Vec::len);
    let data = Columns::new(rows, n_features)?;
    let samples: Vec<usize> = (0..rows.len()).collect();
    let mut g = Grower::new(&data, grad, hess, params, vec![false; rows.len()]);
    Ok(g.grow(&samples, 0))
}

pub fn train(
    train_x: &[Vec<f64>],
    train_y: &[bool],
    valid_x: &[Vec<f64>],
    valid_y: &[bool],
    params: &TrainParams,
) -> Result<BoostedModel> {
    train_traced(train_x, train_y, valid_x, valid_y, params).map(|(m, _)| m)
}

/// Trains with early stopping on the validation partition and returns the
/// per-round losses alongside the model.
pub fn train_traced(
    train_x: &[Vec<f64>],
    train_y: &[bool],
    valid_x: &[Vec<f64>],
    valid_y: &[bool],
    params: &TrainParams,
) -> Result<(BoostedModel, TrainTrace)> {
    params.validate()?;
    if train_x.is_empty() || valid_x.is_empty() {
        return Err(Error::InsufficientTrainingData("empty training or validation partition".into()));
    }
    if train_x.len() != train_y.len() || valid_x.len() != valid_y.len() {
        return Err(Error::InvalidParameter("features and labels differ in length".into()));
    }
    let n_features = train_x[0].len();
    let spw = match params.scale_pos_weight {
        Some(w) => {
            compute_class_weight(train_y)?;
            w
        }
        None => compute_class_weight(train_y)?,
    };
    let data = Columns::new(train_x, n_features)?;
    check_finite(valid_x, n_features)?;

    let n = train_x.len();
    let mut f_train = vec![params.base_logit; n];
    let mut f_valid = vec![params.base_logit; valid_x.len()];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::new();
    let mut trace = TrainTrace::default();
    let mut best_loss = f64::INFINITY;
    let mut best_round = 0;
    let samples: Vec<usize> = (0..n).collect();
    let mut grower_mask = vec![false; n];

    for round in 1..=params.max_rounds {
        for i in 0..n {
            let (g, h) = grad_hess(sigmoid(f_train[i]), train_y[i], spw);
            grad[i] = g;
            hess[i] = h;
        }
        let mut grower = Grower::new(&data, &grad, &hess, params, std::mem::take(&mut grower_mask));
        let tree = grower.grow(&samples, 0);
        grower_mask = grower.in_node;
        for (f, x) in f_train.iter_mut().zip(train_x) {
            *f += tree.predict(x);
        }
        for (f, x) in f_valid.iter_mut().zip(valid_x) {
            *f += tree.predict(x);
        }
        trees.push(tree);

        let p_train: Vec<f64> = f_train.iter().map(|&z| sigmoid(z)).collect();
        let p_valid: Vec<f64> = f_valid.iter().map(|&z| sigmoid(z)).collect();
        trace.train_loss.push(weighted_logloss(&p_train, train_y, spw));
        let vl = weighted_logloss(&p_valid, valid_y, spw);
        trace.valid_loss.push(vl);
        if vl < best_loss {
            best_loss = vl;
            best_round = round;
        } else if round - best_round >= params.early_stop_rounds {
            break;
        }
    }
    log::debug!(
        "trained {} trees, best round {best_round}, valid loss {best_loss:.6}",
        trees.len()
    );
    Ok((
        BoostedModel {
            params: params.clone(),
            scale_pos_weight: spw,
            base_logit: params.base_logit,
            n_features,
            best_round,
            trees,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain() -> TrainParams {
        TrainParams {
            l1_alpha: 0.0,
            l2_lambda: 0.0,
            ..TrainParams::default()
        }
    }

    #[test]
    fn class_weight_examples() {
        let mut y = vec![false; 198];
        y.extend(vec![true; 58]);
        assert!((compute_class_weight(&y).unwrap() - 3.4138).abs() < 1e-4);
        assert_eq!(compute_class_weight(&[true, false]).unwrap(), 1.0);
        assert_eq!(compute_class_weight(&[false, false, false, true]).unwrap(), 3.0);
        assert!(compute_class_weight(&[true, true]).is_err());
    }

    #[test]
    fn grad_hess_examples() {
        assert_eq!(grad_hess(0.5, true, 1.0), (-0.5, 0.25));
        assert_eq!(grad_hess(0.5, false, 4.0), (0.5, 0.25));
        assert!(grad_hess(1.0, true, 1.0).0.abs() < 1e-6);
        assert!(grad_hess(0.0, false, 1.0).0.abs() < 1e-6);
    }

    #[test]
    fn leaf_weight_examples() {
        let p = TrainParams::default();
        assert_eq!(leaf_weight(2.0, 3.0, &p), -0.375);
        assert_eq!(leaf_weight(0.4, 3.0, &p), 0.0);
        assert_eq!(leaf_weight(-0.5, 3.0, &p), 0.0);
        assert_eq!(leaf_weight(1.0, 2.0, &plain()), -0.5);
    }

    fn stump_data() -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let y = [false, false, true, true];
        let (g, h): (Vec<f64>, Vec<f64>) = y.iter().map(|&y| grad_hess(0.5, y, 1.0)).unzip();
        (rows, g, h)
    }

    #[test]
    fn split_between_two_and_three() {
        let (rows, g, h) = stump_data();
        let s = best_split(&rows, &g, &h, &TrainParams::default()).unwrap().unwrap();
        assert_eq!(s.feature, 0);
        assert!(s.threshold > 2.0 && s.threshold < 3.0);
    }

    #[test]
    fn pure_node_has_no_split() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let (g, h): (Vec<f64>, Vec<f64>) = (0..3).map(|_| grad_hess(0.5, true, 1.0)).unzip();
        assert!(best_split(&rows, &g, &h, &TrainParams::default()).unwrap().is_none());
    }

    #[test]
    fn all_missing_feature_never_selected() {
        let (mut rows, g, h) = stump_data();
        for r in &mut rows {
            r.insert(0, f64::NAN);
        }
        let s = best_split(&rows, &g, &h, &TrainParams::default()).unwrap().unwrap();
        assert_eq!(s.feature, 1);
    }

    #[test]
    fn missing_values_learn_a_direction() {
        // Missing samples are positives, so they belong with the high side.
        let rows = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![f64::NAN], vec![f64::NAN]];
        let y = [false, false, true, true, true, true];
        let (g, h): (Vec<f64>, Vec<f64>) = y.iter().map(|&y| grad_hess(0.5, y, 1.0)).unzip();
        let s = best_split(&rows, &g, &h, &plain()).unwrap().unwrap();
        assert!(!s.default_left);
        let tree = fit_tree(&rows, &g, &h, &TrainParams { max_depth: 1, ..plain() }).unwrap();
        assert_eq!(tree.predict(&[f64::NAN]), tree.predict(&[10.0]));
    }

    #[test]
    fn tie_break_prefers_lower_feature() {
        let (rows, g, h) = stump_data();
        let dup: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[0]]).collect();
        let s = best_split(&dup, &g, &h, &TrainParams::default()).unwrap().unwrap();
        assert_eq!(s.feature, 0);
    }

    #[test]
    fn closed_form_leaves() {
        let rows = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0], vec![1.0]];
        let g = vec![0.3, -0.7, 0.2, 0.9, -0.1];
        let h = vec![0.2, 0.25, 0.1, 0.15, 0.05];
        let params = TrainParams {
            learning_rate: 1.0,
            max_depth: 1,
            l1_alpha: 0.0,
            l2_lambda: 1.0,
            ..TrainParams::default()
        };
        let tree = fit_tree(&rows, &g, &h, &params).unwrap();
        let want_left = -(0.3 + -0.7) / (0.2 + 0.25 + 1.0);
        let want_right = -(0.2 + 0.9 + -0.1) / (0.1 + 0.15 + 0.05 + 1.0);
        assert!((tree.predict(&[0.0]) - want_left).abs() < 1e-12);
        assert!((tree.predict(&[1.0]) - want_right).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_predicts_base() {
        let m = BoostedModel {
            params: TrainParams::default(),
            scale_pos_weight: 1.0,
            base_logit: 0.0,
            n_features: 1,
            best_round: 0,
            trees: vec![],
        };
        assert_eq!(m.predict_proba(&[1.0]), 0.5);
    }

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = if rng.random_bool(0.1) { f64::NAN } else { rng.random_range(-2.0..2.0) };
            let noise: f64 = rng.random_range(-1.0..1.0);
            x.push(vec![a, b, (i % 3) as f64]);
            y.push(a + 0.5 * b.max(0.0) + noise > 0.5);
        }
        (x, y)
    }

    #[test]
    fn training_loss_is_monotone_and_model_reproducible() {
        let (x, y) = toy(150, 3);
        let (vx, vy) = toy(60, 4);
        let (m1, trace) = train_traced(&x, &y, &vx, &vy, &TrainParams::default()).unwrap();
        for w in trace.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        let m2 = train(&x, &y, &vx, &vy, &TrainParams::default()).unwrap();
        assert_eq!(m1.to_json().unwrap(), m2.to_json().unwrap());
        assert!(m1.best_round <= m1.trees.len());
        assert!(m1.trees.iter().all(|t| t.depth() <= 3));
        // Early stopping contract: the run ends at most patience rounds after the best.
        assert!(m1.trees.len() <= m1.best_round + 50);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let (x, y) = toy(80, 5);
        let m = train(&x, &y, &x, &y, &TrainParams { max_rounds: 30, ..TrainParams::default() }).unwrap();
        let back = BoostedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for r in &x {
            assert_eq!(back.predict_proba(r).to_bits(), m.predict_proba(r).to_bits());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(BoostedModel::load(&path).unwrap(), m);
    }

    #[test]
    fn batch_matches_single() {
        let (x, y) = toy(80, 6);
        let m = train(&x, &y, &x, &y, &TrainParams { max_rounds: 40, ..TrainParams::default() }).unwrap();
        let batch = m.predict_batch(&x);
        for (r, p) in x.iter().zip(batch) {
            assert_eq!(m.predict_proba(r), p);
        }
    }

    #[test]
    fn infinite_features_rejected() {
        let x = vec![vec![1.0], vec![f64::INFINITY]];
        let y = vec![true, false];
        assert!(matches!(
            train(&x, &y, &x, &y, &TrainParams::default()),
            Err(Error::NonFiniteFeature { row: 1, column: 0 })
        ));
    }

    #[test]
    fn unused_columns_do_not_matter() {
        let (x, y) = toy(100, 7);
        let m = train(&x, &y, &x, &y, &TrainParams { max_rounds: 25, ..TrainParams::default() }).unwrap();
        let mut used = Vec::new();
        for t in &m.trees {
            t.features(&mut used);
        }
        for j in 0..3 {
            if used.contains(&j) {
                continue;
            }
            for r in &x {
                let mut r2 = r.clone();
                r2[j] = 1e6;
                assert_eq!(m.predict_proba(&r2), m.predict_proba(r));
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(TrainParams::default().validate().is_ok());
        for bad in [
            TrainParams { learning_rate: 0.0, ..TrainParams::default() },
            TrainParams { learning_rate: 1.5, ..TrainParams::default() },
            TrainParams { max_depth: 0, ..TrainParams::default() },
            TrainParams { l2_lambda: -1.0, ..TrainParams::default() },
            TrainParams { scale_pos_weight: Some(0.0), ..TrainParams::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Raising the positive weight never lowers a positive's fitted
        // probability when it sits in its own pure leaf.
        #[test]
        fn weight_response_is_monotone(w1 in 0.2f64..5.0, dw in 0.0f64..5.0, n_neg in 1usize..6) {
            let mut x = vec![vec![0.0]];
            let mut y = vec![true];
            for i in 0..n_neg {
                x.push(vec![1.0 + i as f64]);
                y.push(false);
            }
            let fit = |w: f64| {
                let p = TrainParams { scale_pos_weight: Some(w), max_rounds: 30, max_depth: 1, ..TrainParams::default() };
                train(&x, &y, &x, &y, &p).unwrap().predict_proba(&x[0])
            };
            prop_assert!(fit(w1 + dw) >= fit(w1));
        }

        #[test]
        fn sample_order_does_not_change_predictions(seed in 0u64..1000) {
            let (x, y) = toy(40, seed);
            let p = TrainParams { max_rounds: 15, ..TrainParams::default() };
            let m = train(&x, &y, &x, &y, &p).unwrap();
            let xr: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
            let yr: Vec<bool> = y.iter().rev().copied().collect();
            let mr = train(&xr, &yr, &xr, &yr, &p).unwrap();
            for r in &x {
                prop_assert_eq!(m.predict_proba(r), mr.predict_proba(r));
            }
        }
    }
}
