//! CART trees (Gini impurity) and bagged random forests, plus stratified
//! k-fold cross-validation. Used for both the unit-pattern and the activity
//! layer.
//!
//! Splits compare `x <= threshold` where the threshold is the largest
//! training value sent left. Because thresholds are order statistics of the
//! training data, applying any strictly increasing transform to train and
//! test features alike leaves every routing decision unchanged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub label_names: Vec<String>,
}

impl LabeledSet {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::argument(format!("{} rows but {} labels", x.len(), y.len())));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::argument(format!("label index {bad} outside vocabulary")));
        }
        if let Some(first) = x.first() {
            let d = first.len();
            if let Some(i) = x.iter().position(|r| r.len() != d) {
                return Err(Error::argument(format!("row {i} has {} features, expected {d}", x[i].len())));
            }
            if let Some(i) = x.iter().position(|r| r.iter().any(|v| v.is_nan())) {
                return Err(Error::argument(format!("row {i} contains NaN")));
            }
        }
        Ok(LabeledSet { x, y, label_names })
    }

    /// Builds the vocabulary from `vocabulary` order; every label must be in it.
    pub fn from_labels<S: AsRef<str>>(x: Vec<Vec<f64>>, labels: &[S], vocabulary: &[String]) -> Result<Self> {
        let y = labels
            .iter()
            .map(|l| {
                vocabulary
                    .iter()
                    .position(|v| v == l.as_ref())
                    .ok_or_else(|| Error::argument(format!("label {:?} not in vocabulary", l.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::new(x, y, vocabulary.to_vec())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { class_counts: Vec<usize> },
}

impl TreeNode {
    pub fn leaf_for(&self, x: &[f64]) -> &[usize] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
                TreeNode::Leaf { class_counts } => return class_counts,
            }
        }
    }

    /// Majority class of the reached leaf; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_first(self.leaf_for(x))
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    /// Equal split features and leaf counts at every position, thresholds aside.
    pub fn same_structure(&self, other: &TreeNode) -> bool {
        match (self, other) {
            (TreeNode::Leaf { class_counts: a }, TreeNode::Leaf { class_counts: b }) => a == b,
            (
                TreeNode::Split { feature: fa, left: la, right: ra, .. },
                TreeNode::Split { feature: fb, left: lb, right: rb, .. },
            ) => fa == fb && la.same_structure(lb) && ra.same_structure(rb),
            _ => false,
        }
    }
}

fn argmax_first<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌈√d⌉.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 16, min_leaf: 2, mtry: None, seed: 0 }
    }
}

impl ForestConfig {
    pub fn mtry_for(&self, d: usize) -> usize {
        self.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::argument("n_trees must be >= 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::argument("max_depth must be >= 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::argument("min_leaf must be >= 1"));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > d {
                return Err(Error::argument(format!("mtry must be in 1..={d}, got {m}")));
            }
        }
        Ok(())
    }
}

fn gini_sum(counts: &[usize], n: usize) -> f64 {
    // n * gini = n - Σ c² / n
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

struct Grower<'a> {
    data: &'a LabeledSet,
    cfg: &'a ForestConfig,
    mtry: usize,
    features: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
    // position in the sorted index list where the right side starts
    pos: usize,
}

impl Grower<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_classes()];
        for &i in idx {
            c[self.data.y[i]] += 1;
        }
        c
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> TreeNode {
        let counts = self.class_counts(idx);
        let m = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.cfg.max_depth || m < 2 * self.cfg.min_leaf {
            return TreeNode::Leaf { class_counts: counts };
        }
        let parent = gini_sum(&counts, m);
        let best = match self.best_split(idx, &counts, rng) {
            Some(b) if b.impurity < parent => b,
            _ => return TreeNode::Leaf { class_counts: counts },
        };
        let f = best.feature;
        let data = self.data;
        idx.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]).then(a.cmp(&b)));
        let (l, r) = idx.split_at_mut(best.pos);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        TreeNode::Split { feature: f, threshold: best.threshold, left: Box::new(left), right: Box::new(right) }
    }

    fn best_split(&mut self, idx: &mut [usize], counts: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        self.features.shuffle(rng);
        let m = idx.len();
        let min_leaf = self.cfg.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut scratch = idx.to_vec();
        for (tried, &f) in self.features.clone().iter().enumerate() {
            // Keep drawing past mtry only while no valid split has been seen.
            if tried >= self.mtry && best.is_some() {
                break;
            }
            let data = self.data;
            scratch.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; counts.len()];
            let mut right = counts.to_vec();
            for pos in 1..m {
                let moved = data.y[scratch[pos - 1]];
                left[moved] += 1;
                right[moved] -= 1;
                let lo = data.x[scratch[pos - 1]][f];
                let hi = data.x[scratch[pos]][f];
                if lo == hi || pos < min_leaf || m - pos < min_leaf {
                    continue;
                }
                let imp = gini_sum(&left, pos) + gini_sum(&right, m - pos);
                if best.as_ref().is_none_or(|b| imp < b.impurity) {
                    best = Some(BestSplit { feature: f, threshold: lo, impurity: imp, pos });
                }
            }
        }
        best
    }
}

/// Grows one tree on the whole of `data`.
pub fn fit_tree(data: &LabeledSet, cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> Result<TreeNode> {
    let idx: Vec<usize> = (0..data.len()).collect();
    fit_tree_on(data, idx, cfg, rng)
}

fn fit_tree_on(data: &LabeledSet, mut idx: Vec<usize>, cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> Result<TreeNode> {
    if data.is_empty() || idx.is_empty() {
        return Err(Error::argument("cannot fit a tree on an empty dataset"));
    }
    let d = data.n_features();
    cfg.validate(d)?;
    let mut g = Grower { data, cfg, mtry: cfg.mtry_for(d), features: (0..d).collect() };
    Ok(g.grow(&mut idx, 0, rng))
}

/// RNG for tree `t` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// `n` draws with replacement, the first thing each tree's RNG produces.
pub fn bootstrap_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
    pub label_names: Vec<String>,
    pub n_features: usize,
    pub config: ForestConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.label]
    }
}

pub fn fit_forest(data: &LabeledSet, cfg: &ForestConfig) -> Result<RandomForest> {
    if data.len() < 2 {
        return Err(Error::argument(format!("a forest needs at least 2 samples, got {}", data.len())));
    }
    let d = data.n_features();
    cfg.validate(d)?;
    let n = data.len();
    let grow_one = |t: usize| {
        let mut rng = tree_rng(cfg.seed, t);
        let idx = bootstrap_indices(n, &mut rng);
        fit_tree_on(data, idx, cfg, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let trees: Vec<TreeNode> = (0..cfg.n_trees).into_par_iter().map(grow_one).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let trees: Vec<TreeNode> = (0..cfg.n_trees).map(grow_one).collect::<Result<_>>()?;
    Ok(RandomForest { trees, label_names: data.label_names.clone(), n_features: d, config: *cfg })
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features {
            return Err(Error::argument(format!(
                "dimension mismatch: forest expects {}, got {}",
                self.n_features,
                x.len()
            )));
        }
        let mut votes = vec![0usize; self.label_names.len()];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        let n = self.trees.len() as f64;
        Ok(Prediction { label: argmax_first(&votes), probabilities: votes.iter().map(|&v| v as f64 / n).collect() })
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<&str> {
        Ok(&self.label_names[self.predict(x)?.label])
    }

    pub fn accuracy(&self, data: &LabeledSet) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut hit = 0;
        for (x, &y) in data.x.iter().zip(&data.y) {
            let p = self.predict(x)?;
            if self.label_names[p.label] == data.label_names[y] {
                hit += 1;
            }
        }
        Ok(hit as f64 / data.len() as f64)
    }

    /// Out-of-bag error on the data the forest was trained on. Bootstraps
    /// are re-derived from the stored seed.
    pub fn oob_error(&self, data: &LabeledSet) -> Result<f64> {
        let n = data.len();
        let mut votes = vec![vec![0usize; self.label_names.len()]; n];
        for (t, tree) in self.trees.iter().enumerate() {
            let mut rng = tree_rng(self.config.seed, t);
            let mut in_bag = vec![false; n];
            for i in bootstrap_indices(n, &mut rng) {
                in_bag[i] = true;
            }
            for i in (0..n).filter(|&i| !in_bag[i]) {
                votes[i][tree.predict(&data.x[i])] += 1;
            }
        }
        let scored: Vec<usize> = (0..n).filter(|&i| votes[i].iter().any(|&v| v > 0)).collect();
        if scored.is_empty() {
            return Err(Error::argument("no out-of-bag samples"));
        }
        let wrong = scored.iter().filter(|&&i| argmax_first(&votes[i]) != data.y[i]).count();
        Ok(wrong as f64 / scored.len() as f64)
    }
}

/// Per-class shuffled round-robin assignment of sample indices to folds.
pub fn stratified_folds(data: &LabeledSet, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::argument("cross-validation needs at least 2 folds"));
    }
    if data.len() < folds {
        return Err(Error::argument(format!("{} samples cannot fill {folds} folds", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut next = 0;
    for (c, name) in data.label_names.iter().enumerate() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.y[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::argument(format!(
                "class {name:?} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            out[next % folds].push(i);
            next += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

pub fn cross_validate(data: &LabeledSet, folds: usize, cfg: &ForestConfig) -> Result<CvReport> {
    let parts = stratified_folds(data, folds, cfg.seed)?;
    let mut fold_accuracy = Vec::with_capacity(folds);
    for (k, test) in parts.iter().enumerate() {
        let train: Vec<usize> =
            parts.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
        let forest = fit_forest(&data.subset(&train), cfg)?;
        fold_accuracy.push(forest.accuracy(&data.subset(test))?);
    }
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
    Ok(CvReport { fold_accuracy, mean_accuracy })
}
