//! Single decision trees: CART (Gini) and C4.5-style (entropy / information
//! gain) classification trees, plus the squared-error regression tree used by
//! gradient boosting.
//!
//! Both tree kinds share one grower. Each node keeps, per feature, its rows
//! sorted by feature value; a split partitions those lists stably, so sorting
//! happens once per tree rather than once per node.
//!
//! Split conventions: thresholds are midpoints between consecutive distinct
//! values, rows with `x < threshold` go left, and equal-gain candidates are
//! resolved to the lowest feature index, then the lowest threshold.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::{self, Rng};

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("class histogram is empty")]
    EmptyHistogram,
    #[error("row has {found} features, model expects {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    /// CART.
    Gini,
    /// C4.5-style information gain (plain gain, no gain ratio).
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::Count(m) => m.min(n_features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Scan every midpoint of every candidate feature.
    Exhaustive,
    /// One uniform threshold per candidate feature (extremely randomized trees).
    ExtraRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
            split_mode: SplitMode::Exhaustive,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn cart() -> Self {
        Self::default()
    }

    pub fn c45() -> Self {
        TreeParams { criterion: Criterion::Entropy, ..Self::default() }
    }

    pub fn validate(&self, n_features: usize) -> Result<(), TreeError> {
        if self.min_samples_split < 2 {
            return Err(TreeError::InvalidParams("min_samples_split must be >= 2".into()));
        }
        if let MaxFeatures::Count(m) = self.max_features {
            if m == 0 || m > n_features {
                return Err(TreeError::InvalidParams(format!(
                    "max_features={m} outside 1..={n_features}"
                )));
            }
        }
        if self.max_depth == Some(0) {
            return Err(TreeError::InvalidParams("max_depth must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Impurity
// ---------------------------------------------------------------------------

/// Impurity of a (possibly weighted) class histogram: Gini `1 - Σ f²` or
/// entropy `-Σ f log2 f` in bits.
pub fn impurity(counts: &[f64], criterion: Criterion) -> Result<f64, TreeError> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) || counts.iter().any(|&c| c < 0.0) {
        return Err(TreeError::EmptyHistogram);
    }
    Ok(weighted_impurity(counts, total, criterion) / total)
}

/// `total * impurity`, with `0 log 0 = 0`.
fn weighted_impurity(counts: &[f64], total: f64, criterion: Criterion) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini => total - counts.iter().map(|c| c * c).sum::<f64>() / total,
        Criterion::Entropy => {
            total * total.log2() - counts.iter().filter(|&&c| c > 0.0).map(|c| c * c.log2()).sum::<f64>()
        }
    }
}

// ---------------------------------------------------------------------------
// Generic grower
// ---------------------------------------------------------------------------

/// A tree node; `L` is the leaf payload (class histogram or regression value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<L> {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(L),
}

/// Walks `nodes` from the root to the leaf that receives `row`.
pub(crate) fn find_leaf<'a, L>(nodes: &'a [Node<L>], row: &[f64]) -> &'a L {
    let mut i = 0;
    loop {
        match &nodes[i] {
            Node::Split { feature, threshold, left, right } => {
                i = if row[*feature] < *threshold { *left } else { *right };
            }
            Node::Leaf(l) => return l,
        }
    }
}

/// Checks that child links point forward (so the node list is acyclic) and
/// stay in bounds.
pub(crate) fn check_links<L>(nodes: &[Node<L>], n_features: usize) -> bool {
    !nodes.is_empty()
        && nodes.iter().enumerate().all(|(i, n)| match n {
            Node::Split { feature, threshold, left, right } => {
                *feature < n_features
                    && threshold.is_finite()
                    && *left > i
                    && *right > i
                    && *left < nodes.len()
                    && *right < nodes.len()
            }
            Node::Leaf(_) => true,
        })
}

/// Target statistics a split search needs.
pub(crate) trait SplitTarget {
    type Stats: Clone;
    type Leaf;

    fn empty(&self) -> Self::Stats;
    fn push(&self, s: &mut Self::Stats, row: usize);
    fn pop(&self, s: &mut Self::Stats, row: usize);
    fn gain(&self, parent: &Self::Stats, left: &Self::Stats, right: &Self::Stats) -> f64;
    fn min_gain(&self, parent: &Self::Stats) -> f64;
    fn is_pure(&self, rows: &[usize], s: &Self::Stats) -> bool;
    fn leaf(&self, s: &Self::Stats) -> Self::Leaf;

    fn stats(&self, rows: &[usize]) -> Self::Stats {
        let mut s = self.empty();
        for &r in rows {
            self.push(&mut s, r);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

impl SplitCandidate {
    fn beats(&self, other: &Option<SplitCandidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.gain > o.gain
                    || (self.gain == o.gain
                        && (self.feature, self.threshold) < (o.feature, o.threshold))
            }
        }
    }
}

/// Midpoint of two distinct ordered values that still separates them.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a { m } else { b }
}

/// Rows of one node, sorted by value once per feature.
#[derive(Clone)]
pub(crate) struct NodeRows {
    sorted: Vec<Vec<usize>>,
}

impl NodeRows {
    pub(crate) fn new(x: &Matrix, rows: &[usize]) -> Self {
        let sorted = (0..x.cols())
            .map(|j| {
                let mut r = rows.to_vec();
                r.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
                r
            })
            .collect();
        NodeRows { sorted }
    }

    /// Sorted lists for a multiset of rows given per-row multiplicities,
    /// derived from a node holding every row exactly once.
    pub(crate) fn expand(&self, counts: &[u32]) -> Self {
        let sorted = self
            .sorted
            .iter()
            .map(|list| {
                let mut out = Vec::with_capacity(list.len());
                for &r in list {
                    for _ in 0..counts[r] {
                        out.push(r);
                    }
                }
                out
            })
            .collect();
        NodeRows { sorted }
    }

    fn rows(&self) -> &[usize] {
        &self.sorted[0]
    }

    pub(crate) fn len(&self) -> usize {
        self.sorted.first().map_or(0, Vec::len)
    }

    fn partition(self, x: &Matrix, feature: usize, threshold: f64) -> (NodeRows, NodeRows) {
        let mut left = Vec::with_capacity(self.sorted.len());
        let mut right = Vec::with_capacity(self.sorted.len());
        for list in self.sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(|&i| x.get(i, feature) < threshold);
            left.push(l);
            right.push(r);
        }
        (NodeRows { sorted: left }, NodeRows { sorted: right })
    }
}

pub(crate) struct SplitSearch<'a> {
    pub x: &'a Matrix,
    pub max_features: usize,
    pub mode: SplitMode,
}

impl SplitSearch<'_> {
    /// Best split of a node, or `None` when no candidate has positive gain.
    ///
    /// Features are visited in random order when subsampling; features that
    /// are constant within the node do not count toward `max_features`.
    pub(crate) fn find<T: SplitTarget>(
        &self,
        target: &T,
        node: &NodeRows,
        parent: &T::Stats,
        rng: &mut Rng,
    ) -> Option<SplitCandidate> {
        let d = self.x.cols();
        let mut order: Vec<usize> = (0..d).collect();
        if self.max_features < d {
            order.shuffle(rng);
        }
        let mut best: Option<SplitCandidate> = None;
        let mut visited = 0;
        for &f in &order {
            if visited == self.max_features {
                break;
            }
            let list = &node.sorted[f];
            let (lo, hi) = (self.x.get(list[0], f), self.x.get(*list.last().unwrap(), f));
            if !(lo < hi) {
                continue;
            }
            visited += 1;
            let cand = match self.mode {
                SplitMode::Exhaustive => self.scan_feature(target, list, f, parent),
                SplitMode::ExtraRandom => {
                    let t = rng.gen_range(lo..hi);
                    self.random_cut(target, list, f, t, parent)
                }
            };
            if let Some(c) = cand {
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
        best.filter(|b| b.gain > target.min_gain(parent))
    }

    fn scan_feature<T: SplitTarget>(
        &self,
        target: &T,
        list: &[usize],
        f: usize,
        parent: &T::Stats,
    ) -> Option<SplitCandidate> {
        let mut left = target.empty();
        let mut right = parent.clone();
        let mut best: Option<SplitCandidate> = None;
        for w in 0..list.len() - 1 {
            let row = list[w];
            target.push(&mut left, row);
            target.pop(&mut right, row);
            let (a, b) = (self.x.get(row, f), self.x.get(list[w + 1], f));
            if a < b {
                let c = SplitCandidate { feature: f, threshold: midpoint(a, b), gain: target.gain(parent, &left, &right) };
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn random_cut<T: SplitTarget>(
        &self,
        target: &T,
        list: &[usize],
        f: usize,
        threshold: f64,
        parent: &T::Stats,
    ) -> Option<SplitCandidate> {
        let cut = list.partition_point(|&r| self.x.get(r, f) < threshold);
        if cut == 0 || cut == list.len() {
            return None;
        }
        let left = target.stats(&list[..cut]);
        let right = target.stats(&list[cut..]);
        Some(SplitCandidate { feature: f, threshold, gain: target.gain(parent, &left, &right) })
    }
}

pub(crate) struct GrowLimits {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

/// Grows a tree depth-first with an explicit stack; nodes come out in
/// preorder (a split's left child immediately follows it).
pub(crate) fn grow<T: SplitTarget>(
    search: &SplitSearch<'_>,
    target: &T,
    root: NodeRows,
    limits: &GrowLimits,
    rng: &mut Rng,
) -> Vec<Node<T::Leaf>> {
    struct Task {
        rows: NodeRows,
        depth: usize,
        parent: Option<(usize, bool)>,
    }
    let mut nodes: Vec<Node<T::Leaf>> = Vec::new();
    let mut stack = vec![Task { rows: root, depth: 0, parent: None }];
    while let Some(task) = stack.pop() {
        let idx = nodes.len();
        if let Some((p, is_left)) = task.parent {
            if let Node::Split { left, right, .. } = &mut nodes[p] {
                if is_left {
                    *left = idx;
                } else {
                    *right = idx;
                }
            }
        }
        let stats = target.stats(task.rows.rows());
        let can_split = task.rows.len() >= limits.min_samples_split
            && limits.max_depth.is_none_or(|d| task.depth < d)
            && !target.is_pure(task.rows.rows(), &stats);
        let split = if can_split { search.find(target, &task.rows, &stats, rng) } else { None };
        match split {
            None => nodes.push(Node::Leaf(target.leaf(&stats))),
            Some(s) => {
                nodes.push(Node::Split { feature: s.feature, threshold: s.threshold, left: 0, right: 0 });
                let (l, r) = task.rows.partition(search.x, s.feature, s.threshold);
                stack.push(Task { rows: r, depth: task.depth + 1, parent: Some((idx, false)) });
                stack.push(Task { rows: l, depth: task.depth + 1, parent: Some((idx, true)) });
            }
        }
    }
    nodes
}

// ---------------------------------------------------------------------------
// Classification trees
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct ClassStats {
    counts: Vec<f64>,
    total: f64,
}

pub(crate) struct ClassTarget<'a> {
    pub labels: &'a [usize],
    pub weights: Option<&'a [f64]>,
    pub n_classes: usize,
    pub criterion: Criterion,
}

impl ClassTarget<'_> {
    #[inline]
    fn w(&self, row: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[row])
    }
}

impl SplitTarget for ClassTarget<'_> {
    type Stats = ClassStats;
    type Leaf = Vec<f64>;

    fn empty(&self) -> ClassStats {
        ClassStats { counts: vec![0.0; self.n_classes], total: 0.0 }
    }

    fn push(&self, s: &mut ClassStats, row: usize) {
        let w = self.w(row);
        s.counts[self.labels[row]] += w;
        s.total += w;
    }

    fn pop(&self, s: &mut ClassStats, row: usize) {
        let w = self.w(row);
        s.counts[self.labels[row]] -= w;
        s.total -= w;
    }

    fn gain(&self, p: &ClassStats, l: &ClassStats, r: &ClassStats) -> f64 {
        let c = self.criterion;
        (weighted_impurity(&p.counts, p.total, c)
            - weighted_impurity(&l.counts, l.total, c)
            - weighted_impurity(&r.counts, r.total, c))
            / p.total
    }

    fn min_gain(&self, _: &ClassStats) -> f64 {
        1e-12
    }

    fn is_pure(&self, _: &[usize], s: &ClassStats) -> bool {
        s.counts.iter().filter(|&&c| c > 0.0).count() <= 1
    }

    fn leaf(&self, s: &ClassStats) -> Vec<f64> {
        s.counts.clone()
    }
}

/// A fitted classification tree. Leaves hold (weighted) class histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<Node<Vec<f64>>>,
    pub n_classes: usize,
    pub n_features: usize,
}

fn check_training(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<(), TreeError> {
    if x.rows() == 0 {
        return Err(TreeError::EmptyTrainingSet);
    }
    if labels.len() != x.rows() {
        return Err(TreeError::LengthMismatch { rows: x.rows(), labels: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(TreeError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

/// Best split over all rows of `x` (unit weights).
pub fn best_split(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    params: &TreeParams,
    rng: &mut Rng,
) -> Option<SplitCandidate> {
    if x.rows() < params.min_samples_split.max(2) {
        return None;
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    let target = ClassTarget { labels, weights: None, n_classes, criterion: params.criterion };
    let search = SplitSearch { x, max_features: params.max_features.resolve(x.cols()), mode: params.split_mode };
    let node = NodeRows::new(x, &rows);
    let stats = target.stats(&rows);
    search.find(&target, &node, &stats, rng)
}

pub fn fit_tree(x: &Matrix, labels: &[usize], n_classes: usize, params: &TreeParams) -> Result<TreeModel, TreeError> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_on(x, labels, n_classes, &rows, None, params)
}

/// Fits a tree on a subset of rows (duplicates allowed, as in bootstrap
/// samples) with optional per-row sample weights indexed by row.
pub fn fit_tree_on(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    rows: &[usize],
    weights: Option<&[f64]>,
    params: &TreeParams,
) -> Result<TreeModel, TreeError> {
    if rows.is_empty() || x.rows() == 0 {
        return Err(TreeError::EmptyTrainingSet);
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= x.rows()) {
        return Err(TreeError::InvalidParams(format!("row index {r} out of range")));
    }
    fit_tree_presorted(x, labels, n_classes, NodeRows::new(x, rows), weights, params)
}

/// Like [`fit_tree_on`] but starts from presorted rows; used by the forests,
/// which sort the training matrix once and reuse it for every tree.
pub(crate) fn fit_tree_presorted(
    x: &Matrix,
    labels: &[usize],
    n_classes: usize,
    root: NodeRows,
    weights: Option<&[f64]>,
    params: &TreeParams,
) -> Result<TreeModel, TreeError> {
    check_training(x, labels, n_classes)?;
    if root.len() == 0 {
        return Err(TreeError::EmptyTrainingSet);
    }
    params.validate(x.cols())?;
    let target = ClassTarget { labels, weights, n_classes, criterion: params.criterion };
    let search = SplitSearch { x, max_features: params.max_features.resolve(x.cols()), mode: params.split_mode };
    let limits = GrowLimits { max_depth: params.max_depth, min_samples_split: params.min_samples_split };
    let mut rng = rng::seeded(params.seed);
    let nodes = grow(&search, &target, root, &limits, &mut rng);
    Ok(TreeModel { nodes, n_classes, n_features: x.cols() })
}

impl TreeModel {
    pub fn check_width(&self, row: &[f64]) -> Result<(), TreeError> {
        if row.len() != self.n_features {
            return Err(TreeError::WidthMismatch { expected: self.n_features, found: row.len() });
        }
        Ok(())
    }

    /// Raw leaf histogram reached by `row` (width unchecked).
    pub fn leaf_counts(&self, row: &[f64]) -> &[f64] {
        find_leaf(&self.nodes, row)
    }

    /// Class index of the reached leaf's majority (lowest index on ties).
    pub fn predict_class(&self, row: &[f64]) -> Result<usize, TreeError> {
        self.check_width(row)?;
        Ok(crate::argmax(self.leaf_counts(row)))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node<Vec<f64>>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Structural validity: forward links, finite thresholds, non-empty leaves.
    pub fn is_well_formed(&self) -> bool {
        check_links(&self.nodes, self.n_features)
            && self.nodes.iter().all(|n| match n {
                Node::Leaf(c) => c.len() == self.n_classes && c.iter().sum::<f64>() > 0.0,
                Node::Split { .. } => true,
            })
    }
}

/// Normalised leaf histogram for `row`.
pub fn predict_proba_tree(model: &TreeModel, row: &[f64]) -> Result<Vec<f64>, TreeError> {
    model.check_width(row)?;
    let counts = model.leaf_counts(row);
    let total: f64 = counts.iter().sum();
    Ok(counts.iter().map(|c| c / total).collect())
}

// ---------------------------------------------------------------------------
// Regression trees
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct RegStats {
    n: f64,
    sum: f64,
}

pub(crate) struct RegTarget<'a> {
    pub y: &'a [f64],
}

impl SplitTarget for RegTarget<'_> {
    type Stats = RegStats;
    type Leaf = f64;

    fn empty(&self) -> RegStats {
        RegStats { n: 0.0, sum: 0.0 }
    }

    fn push(&self, s: &mut RegStats, row: usize) {
        s.n += 1.0;
        s.sum += self.y[row];
    }

    fn pop(&self, s: &mut RegStats, row: usize) {
        s.n -= 1.0;
        s.sum -= self.y[row];
    }

    /// Decrease in mean squared error; the sum-of-squares terms cancel.
    fn gain(&self, p: &RegStats, l: &RegStats, r: &RegStats) -> f64 {
        (l.sum * l.sum / l.n + r.sum * r.sum / r.n - p.sum * p.sum / p.n) / p.n
    }

    fn min_gain(&self, _: &RegStats) -> f64 {
        1e-15
    }

    fn is_pure(&self, rows: &[usize], s: &RegStats) -> bool {
        let mean = s.sum / s.n;
        rows.iter().all(|&r| (self.y[r] - mean).abs() <= 1e-12)
    }

    fn leaf(&self, s: &RegStats) -> f64 {
        s.sum / s.n
    }
}

/// Squared-error regression tree; leaves hold the mean target of their rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node<f64>>,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        *find_leaf(&self.nodes, row)
    }

    pub fn is_well_formed(&self) -> bool {
        check_links(&self.nodes, self.n_features)
            && self.nodes.iter().all(|n| match n {
                Node::Leaf(v) => v.is_finite(),
                Node::Split { .. } => true,
            })
    }
}

/// Fits a regression tree to `y` over `rows`. The criterion field of
/// `params` is ignored.
pub fn fit_regression_tree(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<RegressionTree, TreeError> {
    if rows.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    fit_regression_tree_presorted(x, y, NodeRows::new(x, rows), params, rng)
}

pub(crate) fn fit_regression_tree_presorted(
    x: &Matrix,
    y: &[f64],
    root: NodeRows,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<RegressionTree, TreeError> {
    if x.rows() == 0 || root.len() == 0 {
        return Err(TreeError::EmptyTrainingSet);
    }
    if y.len() != x.rows() {
        return Err(TreeError::LengthMismatch { rows: x.rows(), labels: y.len() });
    }
    params.validate(x.cols())?;
    let target = RegTarget { y };
    let search = SplitSearch { x, max_features: params.max_features.resolve(x.cols()), mode: params.split_mode };
    let limits = GrowLimits { max_depth: params.max_depth, min_samples_split: params.min_samples_split };
    let nodes = grow(&search, &target, root, &limits, rng);
    Ok(RegressionTree { nodes, n_features: x.cols() })
}
