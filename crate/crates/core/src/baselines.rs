//! Random-forest and k-nearest-neighbour baselines over fixed-length feature
//! vectors (fingerprints or learned embeddings).

use crate::fingerprint::{cosine_distance, euclidean_distance, jaccard_distance, FingerprintError};
use crate::hashing::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training data is empty")]
    Empty,
    #[error("row count mismatch: {features} feature rows vs {targets} target rows")]
    RowMismatch { features: usize, targets: usize },
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("classification targets must be 0 or 1")]
    NonBinaryTarget,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("k = {k} exceeds training size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error(transparent)]
    Distance(#[from] FingerprintError),
    #[error("forest format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Classify,
    Regress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    /// Minimum (bootstrap-weighted) sample count per leaf.
    pub min_leaf: usize,
    /// Fraction of features tried per split; `None` means √F.
    pub feature_fraction: Option<f64>,
    pub bootstrap: bool,
    pub seed: u64,
    pub mode: TaskMode,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            max_depth: None,
            min_leaf: 1,
            feature_fraction: None,
            bootstrap: true,
            seed: 0,
            mode: TaskMode::Classify,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.n_trees == 0 {
            return Err(BaselineError::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(BaselineError::Config("min_leaf must be at least 1".into()));
        }
        if let Some(f) = self.feature_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(BaselineError::Config(format!("feature_fraction must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    /// Features examined per split for `n_features` inputs.
    pub fn features_per_split(&self, n_features: usize) -> usize {
        let m = match self.feature_fraction {
            Some(f) => (f * n_features as f64).ceil() as usize,
            None => (n_features as f64).sqrt().round() as usize,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A CART tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// One-vs-rest ensemble: `trees[label]` holds that label's trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_labels: usize,
    pub trees: Vec<Vec<Tree>>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    /// `samples` holds (row, bootstrap weight) pairs.
    fn grow(&mut self, samples: Vec<(usize, f64)>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let (w, wy) = samples.iter().fold((0.0, 0.0), |(w, wy), &(i, c)| (w + c, wy + c * self.y[i]));
        let mean = wy / w;
        self.nodes.push(Node::Leaf { value: mean });
        let pure = samples.iter().all(|&(i, _)| self.y[i] == self.y[samples[0].0]);
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || w < 2.0 * self.cfg.min_leaf as f64 {
            return id;
        }
        let Some(best) = self.best_split(&samples, rng) else { return id };
        let (left, right): (Vec<_>, Vec<_>) =
            samples.into_iter().partition(|&(i, _)| self.x[i][best.feature] <= best.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
        id
    }

    /// Features are drawn in random order until `mtry` non-constant ones have
    /// been scored. The score is the weighted child sum of squared
    /// deviations, which for 0/1 targets is half the weighted Gini impurity.
    fn best_split(&self, samples: &[(usize, f64)], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let n_features = self.x[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut best: Option<BestSplit> = None;
        let mut scored = 0;
        let mut col: Vec<(f64, f64, f64)> = Vec::with_capacity(samples.len());
        let min_leaf = self.cfg.min_leaf as f64;
        for t in 0..n_features {
            if scored == self.mtry {
                break;
            }
            let j = rng.random_range(t..n_features);
            order.swap(t, j);
            let f = order[t];
            col.clear();
            col.extend(samples.iter().map(|&(i, c)| (self.x[i][f], c, self.y[i])));
            let first = col[0].0;
            if col.iter().all(|e| e.0 == first) {
                continue;
            }
            scored += 1;
            col.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (tw, twy, twyy) = col.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &(_, w, y)| (a + w, b + w * y, c + w * y * y));
            let (mut lw, mut lwy, mut lwyy) = (0.0, 0.0, 0.0);
            for s in 0..col.len() - 1 {
                let (v, w, y) = col[s];
                lw += w;
                lwy += w * y;
                lwyy += w * y * y;
                let next = col[s + 1].0;
                if next == v {
                    continue;
                }
                let rw = tw - lw;
                if lw < min_leaf || rw < min_leaf {
                    continue;
                }
                let rwy = twy - lwy;
                let score = (lwyy - lwy * lwy / lw) + ((twyy - lwyy) - rwy * rwy / rw);
                if best.as_ref().is_none_or(|b| score < b.score - 1e-12) {
                    // Midpoint, falling back to the lower value if it rounds onto `next`.
                    let mid = v + (next - v) / 2.0;
                    let threshold = if mid < next { mid } else { v };
                    best = Some(BestSplit { feature: f, threshold, score });
                }
            }
        }
        let parent = {
            let (w, wy, wyy) = samples.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &(i, w)| {
                let y = self.y[i];
                (a + w, b + w * y, c + w * y * y)
            });
            wyy - wy * wy / w
        };
        best.filter(|b| b.score < parent - 1e-12)
    }
}

fn check_features(x: &[Vec<f64>]) -> Result<usize, BaselineError> {
    let Some(first) = x.first() else { return Err(BaselineError::Empty) };
    let d = first.len();
    for row in x {
        if row.len() != d {
            return Err(BaselineError::Dimension { expected: d, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite("features"));
        }
    }
    if d == 0 {
        return Err(BaselineError::Empty);
    }
    Ok(d)
}

fn fit_tree(x: &[Vec<f64>], y: Vec<f64>, cfg: &ForestConfig, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let samples: Vec<(usize, f64)> = if cfg.bootstrap {
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c as f64)).collect()
    } else {
        (0..n).map(|i| (i, 1.0)).collect()
    };
    let mut b = Builder { x, y, cfg, mtry: cfg.features_per_split(x[0].len()), nodes: Vec::new() };
    b.grow(samples, 0, &mut rng);
    Tree { nodes: b.nodes }
}

/// Fit one bagged tree ensemble per target column. `targets` are row-major;
/// in classification mode every entry must be 0 or 1. Tree `(label, t)` is
/// seeded from `(seed, label, t)`, so fitting order does not matter.
pub fn fit_random_forest(x: &[Vec<f64>], targets: &[Vec<f64>], cfg: &ForestConfig) -> Result<Forest, BaselineError> {
    cfg.validate()?;
    let n_features = check_features(x)?;
    if targets.len() != x.len() {
        return Err(BaselineError::RowMismatch { features: x.len(), targets: targets.len() });
    }
    let n_labels = targets[0].len();
    for row in targets {
        if row.len() != n_labels {
            return Err(BaselineError::Dimension { expected: n_labels, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite("targets"));
        }
        if cfg.mode == TaskMode::Classify && row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(BaselineError::NonBinaryTarget);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..n_labels).flat_map(|l| (0..cfg.n_trees).map(move |t| (l, t))).collect();
    let fitted: Vec<Tree> = jobs
        .par_iter()
        .map(|&(l, t)| {
            let y: Vec<f64> = targets.iter().map(|r| r[l]).collect();
            fit_tree(x, y, cfg, derive_seed(cfg.seed, &[l as u64, t as u64]))
        })
        .collect();
    let mut it = fitted.into_iter();
    let trees = (0..n_labels).map(|_| it.by_ref().take(cfg.n_trees).collect()).collect();
    Ok(Forest { format_version: FOREST_VERSION, config: cfg.clone(), n_features, n_labels, trees })
}

/// Classification convenience wrapper over 0/1 label rows.
pub fn fit_random_forest_labels(x: &[Vec<f64>], labels: &[Vec<u8>], cfg: &ForestConfig) -> Result<Forest, BaselineError> {
    let y: Vec<Vec<f64>> = labels.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
    fit_random_forest(x, &y, cfg)
}

impl Forest {
    /// Mean leaf estimate over each label's trees.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, BaselineError> {
        if x.len() != self.n_features {
            return Err(BaselineError::Dimension { expected: self.n_features, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFinite("query"));
        }
        Ok(self
            .trees
            .iter()
            .map(|ts| ts.iter().map(|t| t.predict(x)).sum::<f64>() / ts.len() as f64)
            .collect())
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BaselineError> {
        x.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String, BaselineError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Forest, BaselineError> {
        let f: Forest = serde_json::from_str(s)?;
        if f.format_version != FOREST_VERSION {
            return Err(BaselineError::Version { found: f.format_version, expected: FOREST_VERSION });
        }
        for tree in f.trees.iter().flatten() {
            for node in &tree.nodes {
                if let Node::Split { feature, left, right, .. } = *node {
                    if feature >= f.n_features || left >= tree.nodes.len() || right >= tree.nodes.len() {
                        return Err(BaselineError::Config("forest references an invalid node or feature".into()));
                    }
                }
            }
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Forest, BaselineError> {
        Forest::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Jaccard,
    Cosine,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64, FingerprintError> {
        match self {
            Metric::Jaccard => jaccard_distance(a, b),
            Metric::Cosine => cosine_distance(a, b),
            Metric::Euclidean => euclidean_distance(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Distance,
    Uniform,
}

/// Floor added to neighbour distances before inversion.
pub const KNN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    pub weighting: Weighting,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 20, metric: Metric::Jaccard, weighting: Weighting::Distance }
    }
}

/// Stored training set for neighbour lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub config: KnnConfig,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl KnnModel {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, config: KnnConfig) -> Result<KnnModel, BaselineError> {
        check_features(&features)?;
        if targets.len() != features.len() {
            return Err(BaselineError::RowMismatch { features: features.len(), targets: targets.len() });
        }
        if config.k == 0 || config.k > features.len() {
            return Err(BaselineError::KTooLarge { k: config.k, n: features.len() });
        }
        let width = targets[0].len();
        if let Some(r) = targets.iter().find(|r| r.len() != width) {
            return Err(BaselineError::Dimension { expected: width, got: r.len() });
        }
        Ok(KnnModel { config, features, targets })
    }

    pub fn from_labels(features: Vec<Vec<f64>>, labels: &[Vec<u8>], config: KnnConfig) -> Result<KnnModel, BaselineError> {
        let y = labels.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        KnnModel::new(features, y, config)
    }

    /// The `k` nearest rows as (row, distance), nearest first; equal
    /// distances keep the lower row index first.
    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<(usize, f64)>, BaselineError> {
        let d = self.features[0].len();
        if query.len() != d {
            return Err(BaselineError::Dimension { expected: d, got: query.len() });
        }
        let mut dist: Vec<(usize, f64)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, r)| Ok((i, self.config.metric.distance(query, r)?)))
            .collect::<Result<_, FingerprintError>>()?;
        dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dist.truncate(self.config.k);
        Ok(dist)
    }

    /// Weighted mean of neighbour targets with w = 1/(d + ε), or equal weights.
    pub fn predict(&self, query: &[f64]) -> Result<Vec<f64>, BaselineError> {
        let nn = self.neighbors(query)?;
        let width = self.targets[0].len();
        let mut out = vec![0.0; width];
        let mut total = 0.0;
        for (i, d) in nn {
            let w = match self.config.weighting {
                Weighting::Distance => 1.0 / (d + KNN_EPSILON),
                Weighting::Uniform => 1.0,
            };
            total += w;
            for (o, y) in out.iter_mut().zip(&self.targets[i]) {
                *o += w * y;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(out)
    }

    pub fn predict_all(&self, queries: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BaselineError> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

/// Forest settings scored by a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub config: ForestConfig,
    pub score: Option<f64>,
}

/// Fit every config on `train` rows and score it on `val` rows with
/// `score(predictions, val_targets)`; higher is better. Returns all points
/// and the index of the best scored one.
pub fn grid_search_rf<S>(
    x: &[Vec<f64>],
    targets: &[Vec<f64>],
    train: &[usize],
    val: &[usize],
    grid: &[ForestConfig],
    score: S,
) -> Result<(Vec<GridPoint>, Option<usize>), BaselineError>
where
    S: Fn(&[Vec<f64>], &[Vec<f64>]) -> Option<f64>,
{
    let pick = |rows: &[usize], m: &[Vec<f64>]| -> Vec<Vec<f64>> { rows.iter().map(|&i| m[i].clone()).collect() };
    let (xt, yt, xv, yv) = (pick(train, x), pick(train, targets), pick(val, x), pick(val, targets));
    let mut points = Vec::with_capacity(grid.len());
    for cfg in grid {
        let forest = fit_random_forest(&xt, &yt, cfg)?;
        let pred = forest.predict_all(&xv)?;
        points.push(GridPoint { config: cfg.clone(), score: score(&pred, &yv) });
    }
    let best = (0..points.len())
        .filter(|&i| points[i].score.is_some())
        .max_by(|&a, &b| points[a].score.unwrap().total_cmp(&points[b].score.unwrap()).then(b.cmp(&a)));
    Ok((points, best))
}
