//! Multi-label iterative stratification and k-fold assignment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("ratios must be non-negative, finite and sum to 1 (got {0:?})")]
    BadRatios(Vec<f64>),
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("stratification order must be 1 or 2, got {0}")]
    BadOrder(u8),
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{k} folds requested for {n} examples")]
    TooManyFolds { k: usize, n: usize },
    #[error("label rows have inconsistent widths")]
    RaggedLabels,
}

/// Named partition of a train/val/test assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Group index per example. For three-way splits group 0/1/2 are train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub groups: Vec<usize>,
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.ratios.len()
    }

    /// Example indices in group `g`, ascending.
    pub fn indices(&self, g: usize) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == g).collect()
    }

    /// Example indices outside group `g`, ascending.
    pub fn complement(&self, g: usize) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] != g).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_groups()];
        for &g in &self.groups {
            s[g] += 1;
        }
        s
    }

    pub fn split_of(&self, i: usize) -> Option<Split> {
        Split::ALL.get(self.groups[i]).copied()
    }
}

fn check_ratios(ratios: &[f64]) -> Result<(), SplitError> {
    let ok = !ratios.is_empty()
        && ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(SplitError::BadRatios(ratios.to_vec()))
    }
}

fn check_labels(labels: &[Vec<u8>]) -> Result<usize, SplitError> {
    let width = labels.first().map_or(0, Vec::len);
    if labels.iter().any(|r| r.len() != width) {
        return Err(SplitError::RaggedLabels);
    }
    Ok(width)
}

/// Largest-remainder apportionment of `n` examples; remainder ties go to
/// the lower group index.
pub fn capacities(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut caps: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n.saturating_sub(caps.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &g in order.iter().cycle() {
        if left == 0 {
            break;
        }
        caps[g] += 1;
        left -= 1;
    }
    caps
}

/// Label combinations of an example: single labels for order 1, unordered
/// pairs with repetition for order 2 (so single-label ratios are kept too).
fn combos(row: &[u8], order: u8) -> Vec<(u32, u32)> {
    let on: Vec<u32> = row.iter().enumerate().filter(|(_, &v)| v != 0).map(|(j, _)| j as u32).collect();
    let mut out = Vec::new();
    for (a, &i) in on.iter().enumerate() {
        if order == 1 {
            out.push((i, i));
        } else {
            for &j in &on[a..] {
                out.push((i, j));
            }
        }
    }
    out
}

fn pick<R: Rng>(tied: &[usize], rng: &mut R) -> usize {
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

/// Greedy iterative stratification. The rarest outstanding label
/// combination is handled first; each of its examples goes to the group with
/// the largest outstanding demand for that combination, then the most
/// remaining capacity, then a seeded random choice. Group sizes match
/// [`capacities`] exactly.
pub fn iterative_stratify(
    labels: &[Vec<u8>],
    ratios: &[f64],
    order: u8,
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    check_ratios(ratios)?;
    if order != 1 && order != 2 {
        return Err(SplitError::BadOrder(order));
    }
    if labels.is_empty() {
        return Err(SplitError::Empty);
    }
    check_labels(labels)?;
    let n = labels.len();
    let k = ratios.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut combo_index: HashMap<(u32, u32), usize> = HashMap::new();
    let mut combo_keys: Vec<(u32, u32)> = Vec::new();
    let mut example_combos: Vec<Vec<usize>> = Vec::with_capacity(n);
    for row in labels {
        let ids = combos(row, order)
            .into_iter()
            .map(|c| {
                *combo_index.entry(c).or_insert_with(|| {
                    combo_keys.push(c);
                    combo_keys.len() - 1
                })
            })
            .collect();
        example_combos.push(ids);
    }
    let n_combos = combo_keys.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_combos];
    for (i, ids) in example_combos.iter().enumerate() {
        for &c in ids {
            members[c].push(i);
        }
    }
    let mut remaining: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut demand: Vec<Vec<f64>> =
        ratios.iter().map(|&r| remaining.iter().map(|&m| r * m as f64).collect()).collect();
    let mut capacity = capacities(n, ratios);
    let mut groups = vec![usize::MAX; n];

    let assign = |i: usize, g: usize, groups: &mut Vec<usize>, capacity: &mut Vec<usize>, remaining: &mut Vec<usize>, demand: &mut Vec<Vec<f64>>| {
        groups[i] = g;
        capacity[g] -= 1;
        for &c in &example_combos[i] {
            remaining[c] -= 1;
            demand[g][c] -= 1.0;
        }
    };

    loop {
        // Rarest combination with unassigned members; ties by key order.
        let next = (0..n_combos)
            .filter(|&c| remaining[c] > 0)
            .min_by(|&a, &b| remaining[a].cmp(&remaining[b]).then(combo_keys[a].cmp(&combo_keys[b])));
        let Some(c) = next else { break };
        let mut todo: Vec<usize> = members[c].iter().copied().filter(|&i| groups[i] == usize::MAX).collect();
        todo.shuffle(&mut rng);
        for i in todo {
            let open: Vec<usize> = (0..k).filter(|&g| capacity[g] > 0).collect();
            let best_demand = open.iter().map(|&g| demand[g][c]).fold(f64::NEG_INFINITY, f64::max);
            let by_demand: Vec<usize> = open.iter().copied().filter(|&g| demand[g][c] == best_demand).collect();
            let best_cap = by_demand.iter().map(|&g| capacity[g]).max().unwrap_or(0);
            let tied: Vec<usize> = by_demand.into_iter().filter(|&g| capacity[g] == best_cap).collect();
            let g = pick(&tied, &mut rng);
            assign(i, g, &mut groups, &mut capacity, &mut remaining, &mut demand);
        }
    }

    let mut rest: Vec<usize> = (0..n).filter(|&i| groups[i] == usize::MAX).collect();
    rest.shuffle(&mut rng);
    for i in rest {
        let best_cap = capacity.iter().copied().max().unwrap_or(0);
        let tied: Vec<usize> = (0..k).filter(|&g| capacity[g] == best_cap && best_cap > 0).collect();
        let g = pick(&tied, &mut rng);
        assign(i, g, &mut groups, &mut capacity, &mut remaining, &mut demand);
    }

    refine(&example_combos, n_combos, &mut groups, ratios, &mut rng);
    Ok(SplitAssignment { groups, ratios: ratios.to_vec(), seed })
}

/// Candidate pairs examined per refinement round.
const REFINE_CANDIDATES: usize = 4096;

/// Size-preserving swap search on the greedy result. Each round targets the
/// worst combination and applies the swap that most lowers
/// (max deviation, sum of squared deviations); stops when no swap helps.
fn refine(example_combos: &[Vec<usize>], n_combos: usize, groups: &mut [usize], ratios: &[f64], rng: &mut ChaCha8Rng) {
    let k = ratios.len();
    let mut counts = vec![vec![0usize; k]; n_combos];
    for (i, ids) in example_combos.iter().enumerate() {
        for &c in ids {
            counts[c][groups[i]] += 1;
        }
    }
    let dev = |cnt: &[usize]| -> f64 {
        let total: usize = cnt.iter().sum();
        cnt.iter().zip(ratios).map(|(&m, r)| (m as f64 / total as f64 - r).abs()).fold(0.0, f64::max)
    };
    let mut devs: Vec<f64> = counts.iter().map(|c| dev(c)).collect();
    let mut marks = vec![false; n_combos];
    for _ in 0..4 * groups.len() {
        let mut order: Vec<usize> = (0..n_combos).collect();
        order.sort_by(|&a, &b| devs[b].total_cmp(&devs[a]).then(a.cmp(&b)));
        let Some(&worst) = order.first() else { return };
        let cur_max = devs[worst];
        let cur_sq: f64 = devs.iter().map(|d| d * d).sum();
        let total = counts[worst].iter().sum::<usize>() as f64;
        let excess: Vec<f64> = (0..k).map(|g| counts[worst][g] as f64 / total - ratios[g]).collect();
        let over = (0..k).max_by(|&a, &b| excess[a].total_cmp(&excess[b])).unwrap_or(0);
        let under = (0..k).min_by(|&a, &b| excess[a].total_cmp(&excess[b])).unwrap_or(0);
        if over == under {
            return;
        }
        let has = |i: usize| example_combos[i].contains(&worst);
        let mut from: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == over && has(i)).collect();
        let mut to: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == under && !has(i)).collect();
        from.shuffle(rng);
        to.shuffle(rng);
        let per_side = (REFINE_CANDIDATES as f64).sqrt() as usize;
        from.truncate(per_side.max(REFINE_CANDIDATES / to.len().max(1)));
        to.truncate(REFINE_CANDIDATES / from.len().max(1));

        let mut best: Option<(f64, f64, usize, usize)> = None;
        let mut trial = counts.clone();
        for &a in &from {
            for &b in &to {
                let mut affected: Vec<usize> = example_combos[a].iter().chain(&example_combos[b]).copied().collect();
                affected.sort_unstable();
                affected.dedup();
                for &c in &example_combos[a] {
                    trial[c][over] -= 1;
                    trial[c][under] += 1;
                }
                for &c in &example_combos[b] {
                    trial[c][under] -= 1;
                    trial[c][over] += 1;
                }
                let mut new_max: f64 = 0.0;
                let mut new_sq = cur_sq;
                for &c in &affected {
                    marks[c] = true;
                    let d = dev(&trial[c]);
                    new_max = new_max.max(d);
                    new_sq += d * d - devs[c] * devs[c];
                }
                if let Some(&c) = order.iter().find(|&&c| !marks[c]) {
                    new_max = new_max.max(devs[c]);
                }
                for &c in &affected {
                    marks[c] = false;
                    trial[c].clone_from(&counts[c]);
                }
                let better = new_max < cur_max - 1e-12 || (new_max <= cur_max + 1e-12 && new_sq < cur_sq - 1e-12);
                let beats_best = best.is_none_or(|(m, q, _, _)| new_max < m - 1e-12 || (new_max <= m + 1e-12 && new_sq < q));
                if better && beats_best {
                    best = Some((new_max, new_sq, a, b));
                }
            }
        }
        let Some((_, _, a, b)) = best else { return };
        for &c in &example_combos[a] {
            counts[c][over] -= 1;
            counts[c][under] += 1;
        }
        for &c in &example_combos[b] {
            counts[c][under] -= 1;
            counts[c][over] += 1;
        }
        groups[a] = under;
        groups[b] = over;
        for &c in example_combos[a].iter().chain(&example_combos[b]) {
            devs[c] = dev(&counts[c]);
        }
    }
}

/// Seeded uniform random split with the same group sizes as
/// [`iterative_stratify`].
pub fn random_split(n: usize, ratios: &[f64], seed: u64) -> Result<SplitAssignment, SplitError> {
    check_ratios(ratios)?;
    if n == 0 {
        return Err(SplitError::Empty);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![0; n];
    let mut pos = 0;
    for (g, cap) in capacities(n, ratios).into_iter().enumerate() {
        for &i in &idx[pos..pos + cap] {
            groups[i] = g;
        }
        pos += cap;
    }
    Ok(SplitAssignment { groups, ratios: ratios.to_vec(), seed })
}

/// Largest |realized − requested| proportion over every label combination of
/// the given order present in the data and every group.
pub fn stratification_deviation(labels: &[Vec<u8>], split: &SplitAssignment, order: u8) -> f64 {
    let k = split.n_groups();
    let mut counts: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (row, &g) in labels.iter().zip(&split.groups) {
        for c in combos(row, order) {
            counts.entry(c).or_insert_with(|| vec![0; k])[g] += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for per_group in counts.values() {
        let total: usize = per_group.iter().sum();
        for (g, &m) in per_group.iter().enumerate() {
            worst = worst.max((m as f64 / total as f64 - split.ratios[g]).abs());
        }
    }
    worst
}

/// Assign `n` examples to `k` folds of sizes differing by at most one,
/// stratified by second-order label combinations when labels are given.
pub fn kfold(n: usize, k: usize, labels: Option<&[Vec<u8>]>, seed: u64) -> Result<SplitAssignment, SplitError> {
    if k < 2 {
        return Err(SplitError::TooFewFolds(k));
    }
    if k > n {
        return Err(SplitError::TooManyFolds { k, n });
    }
    let ratios = vec![1.0 / k as f64; k];
    match labels {
        Some(l) => {
            if l.len() != n {
                return Err(SplitError::RaggedLabels);
            }
            iterative_stratify(l, &ratios, 2, seed)
        }
        None => random_split(n, &ratios, seed),
    }
}
