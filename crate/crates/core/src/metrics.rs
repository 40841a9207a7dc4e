//! Ranking, classification and correlation metrics with bootstrap intervals.

use crate::hashing::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("only one class present")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value")]
    NonFinite,
    #[error("all {0} bootstrap resamples were undefined")]
    AllResamplesUndefined(usize),
}

fn check_pair<T, U>(a: &[T], b: &[U]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        Err(MetricError::LengthMismatch(a.len(), b.len()))
    } else {
        Ok(())
    }
}

fn check_finite(x: &[f64]) -> Result<(), MetricError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MetricError::NonFinite)
    }
}

/// 1-based ranks with ties sharing their mean rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Mann–Whitney estimate of P(score_pos > score_neg), ties counted as 1/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_pair(scores, labels)?;
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn descending_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Step-wise area under the precision–recall curve: Σ (R_k − R_{k−1}) · P_k
/// over distinct score thresholds.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_pair(scores, labels)?;
    check_finite(scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    for g in descending_groups(scores) {
        let new_tp = g.iter().filter(|&&i| labels[i]).count();
        tp += new_tp;
        seen += g.len();
        if new_tp > 0 {
            area += (new_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn prf_counts(tp: usize, predicted: usize, positives: usize) -> Prf1 {
    let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let recall = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 { precision, recall, f1 }
}

/// Predicts positive when `score >= threshold`.
pub fn prf1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Prf1, MetricError> {
    check_pair(scores, labels)?;
    let mut tp = 0;
    let mut predicted = 0;
    for (&s, &l) in scores.iter().zip(labels) {
        if s >= threshold {
            predicted += 1;
            tp += usize::from(l);
        }
    }
    Ok(prf_counts(tp, predicted, labels.iter().filter(|&&l| l).count()))
}

/// Threshold maximizing F1. Candidates are a point just below the minimum
/// score and the midpoints between consecutive distinct scores; the lowest
/// threshold wins ties. Labels without positives get 0.5.
pub fn optimize_threshold(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_pair(scores, labels)?;
    check_finite(scores)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || scores.is_empty() {
        return Ok(0.5);
    }
    let groups = descending_groups(scores);
    // cut k predicts the first k groups positive
    let mut best = (f64::NEG_INFINITY, 0.5);
    let (mut tp, mut predicted) = (0, 0);
    let mut cuts = Vec::with_capacity(groups.len());
    for (k, g) in groups.iter().enumerate() {
        tp += g.iter().filter(|&&i| labels[i]).count();
        predicted += g.len();
        let score = scores[g[0]];
        let threshold = match groups.get(k + 1) {
            Some(next) => 0.5 * (score + scores[next[0]]),
            None => score - f64::max(1e-6, score.abs() * 1e-9),
        };
        cuts.push((threshold, prf_counts(tp, predicted, positives).f1));
    }
    // ascending thresholds so that the first maximum is the lowest
    for &(t, f1) in cuts.iter().rev() {
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// Per-label thresholds from a rows × labels score matrix and matching 0/1 labels.
pub fn optimize_thresholds(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Vec<f64>, MetricError> {
    check_pair(scores, labels)?;
    let n_labels = scores.first().map_or(0, |r| r.len());
    (0..n_labels)
        .map(|j| {
            let (s, l) = column(scores, labels, j);
            optimize_threshold(&s, &l)
        })
        .collect()
}

pub(crate) fn column(scores: &[Vec<f64>], labels: &[Vec<u8>], j: usize) -> (Vec<f64>, Vec<bool>) {
    (
        scores.iter().map(|r| r[j]).collect(),
        labels.iter().map(|r| r[j] != 0).collect(),
    )
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    check_finite(x)?;
    check_finite(y)?;
    if x.len() < 2 {
        return Err(MetricError::TooFew { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1 − SS_res / SS_tot of `pred` against `actual`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, actual)?;
    check_finite(pred)?;
    check_finite(actual)?;
    if actual.len() < 2 {
        return Err(MetricError::TooFew { need: 2, got: actual.len() });
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Number of adjacent-swap inversions needed to sort `v`, sorting it in place.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

fn tied_pairs_in_sorted(v: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..=v.len() {
        if i < v.len() && v[i] == v[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total
}

/// Kendall τ-b in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    check_finite(x)?;
    check_finite(y)?;
    let n = x.len();
    if n < 2 {
        return Err(MetricError::TooFew { need: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = (n * (n - 1) / 2) as u64;
    let (mut n1, mut n3) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for i in 1..=n {
        let same_x = i < n && x[idx[i]] == x[idx[i - 1]];
        let same_xy = same_x && y[idx[i]] == y[idx[i - 1]];
        if same_x {
            run_x += 1;
        } else {
            n1 += run_x * (run_x - 1) / 2;
            run_x = 1;
        }
        if same_xy {
            run_xy += 1;
        } else {
            n3 += run_xy * (run_xy - 1) / 2;
            run_xy = 1;
        }
    }
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tied_pairs_in_sorted(&ys);
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if denom == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let s = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok((s / denom).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub n_valid: usize,
    pub n_skipped: usize,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Resamples `n_rows` row indices with replacement `n_resamples` times and
/// reports the 2.5 and 97.5 percentiles of `metric` over the resamples where
/// it is defined. Resample `i` draws from a generator seeded by (seed, i).
pub fn bootstrap_indices<F>(n_rows: usize, n_resamples: usize, seed: u64, metric: F) -> Result<BootstrapCi, MetricError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_rows == 0 || n_resamples == 0 {
        return Err(MetricError::TooFew { need: 1, got: 0 });
    }
    let values: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            let idx: Vec<usize> = (0..n_rows).map(|_| rng.random_range(0..n_rows)).collect();
            metric(&idx)
        })
        .collect();
    let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(MetricError::AllResamplesUndefined(n_resamples));
    }
    ok.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        lo: percentile(&ok, 2.5),
        hi: percentile(&ok, 97.5),
        n_valid: ok.len(),
        n_skipped: n_resamples - ok.len(),
    })
}

/// Bootstrap interval of a single-label metric.
pub fn bootstrap_ci<F>(
    metric: F,
    scores: &[f64],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, MetricError>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, MetricError> + Sync,
{
    check_pair(scores, labels)?;
    bootstrap_indices(scores.len(), n_resamples, seed, |idx| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        metric(&s, &l).ok()
    })
}

/// Unweighted mean of a per-label metric over labels where it is defined.
pub fn mean_over_labels<F>(scores: &[Vec<f64>], labels: &[Vec<u8>], rows: &[usize], metric: F) -> Option<f64>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, MetricError>,
{
    let n_labels = labels.first().map_or(0, |r| r.len());
    let mut sum = 0.0;
    let mut count = 0;
    for j in 0..n_labels {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i][j]).collect();
        let l: Vec<bool> = rows.iter().map(|&i| labels[i][j] != 0).collect();
        if let Ok(v) = metric(&s, &l) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean AUROC over all rows and the labels where it is defined.
pub fn mean_auroc(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Option<f64> {
    let rows: Vec<usize> = (0..scores.len()).collect();
    mean_over_labels(scores, labels, &rows, auroc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanWithCi {
    pub mean: Option<f64>,
    pub ci: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_label: Vec<LabelMetrics>,
    pub auroc: MeanWithCi,
    pub auprc: MeanWithCi,
    pub precision: MeanWithCi,
    pub f1: MeanWithCi,
    pub n_resamples: usize,
    pub seed: u64,
}

impl MetricReport {
    /// Scores a prediction matrix. `thresholds` default to 0.5 per label;
    /// `n_resamples == 0` skips the bootstrap.
    pub fn compute(
        label_names: &[String],
        scores: &[Vec<f64>],
        labels: &[Vec<u8>],
        thresholds: Option<&[f64]>,
        n_resamples: usize,
        seed: u64,
    ) -> Result<MetricReport, MetricError> {
        check_pair(scores, labels)?;
        let n_labels = label_names.len();
        if scores.iter().any(|r| r.len() != n_labels)
            || labels.iter().any(|r| r.len() != n_labels)
        {
            return Err(MetricError::LengthMismatch(n_labels, scores.first().map_or(0, |r| r.len())));
        }
        let default = vec![0.5; n_labels];
        let thresholds = thresholds.unwrap_or(&default);
        check_pair(thresholds, label_names)?;

        let mut per_label = Vec::with_capacity(n_labels);
        for (j, name) in label_names.iter().enumerate() {
            let (s, l) = column(scores, labels, j);
            let p = prf1(&s, &l, thresholds[j])?;
            per_label.push(LabelMetrics {
                label: name.clone(),
                auroc: auroc(&s, &l).ok(),
                auprc: auprc(&s, &l).ok(),
                threshold: thresholds[j],
                precision: p.precision,
                recall: p.recall,
                f1: p.f1,
            });
        }
        let mean_of = |f: &dyn Fn(&LabelMetrics) -> Option<f64>| {
            let v: Vec<f64> = per_label.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        // precision and F1 only count labels with positives, like the ranking metrics
        let has_pos = |m: &LabelMetrics| m.auprc.is_some();
        let means = [
            mean_of(&|m| m.auroc),
            mean_of(&|m| m.auprc),
            mean_of(&|m| has_pos(m).then_some(m.precision)),
            mean_of(&|m| has_pos(m).then_some(m.f1)),
        ];
        let n = scores.len();
        let ci = |k: usize| -> Option<BootstrapCi> {
            if n_resamples == 0 || n == 0 {
                return None;
            }
            let f = |idx: &[usize]| match k {
                0 => mean_over_labels(scores, labels, idx, auroc),
                1 => mean_over_labels(scores, labels, idx, auprc),
                _ => {
                    let per: Vec<f64> = (0..n_labels)
                        .filter_map(|j| {
                            let s: Vec<f64> = idx.iter().map(|&i| scores[i][j]).collect();
                            let l: Vec<bool> = idx.iter().map(|&i| labels[i][j] != 0).collect();
                            l.iter().any(|&b| b).then(|| {
                                let p = prf1(&s, &l, thresholds[j]).expect("lengths checked");
                                if k == 2 {
                                    p.precision
                                } else {
                                    p.f1
                                }
                            })
                        })
                        .collect();
                    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
                }
            };
            bootstrap_indices(n, n_resamples, derive_seed(seed, &[k as u64]), f).ok()
        };
        let mk = |k: usize| MeanWithCi { mean: means[k], ci: ci(k) };
        Ok(MetricReport {
            per_label,
            auroc: mk(0),
            auprc: mk(1),
            precision: mk(2),
            f1: mk(3),
            n_resamples,
            seed,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-10;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[false, false, true]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        // single positive ranked last among 5: precision 1/5 at full recall
        let s = [0.9, 0.8, 0.7, 0.6, 0.1];
        let l = [false, false, false, false, true];
        assert!((auprc(&s, &l).unwrap() - 0.2).abs() < EPS);
        assert!((auprc(&[0.5; 4], &[true, false, false, false]).unwrap() - 0.25).abs() < EPS);
        assert_eq!(auprc(&[0.5], &[false]), Err(MetricError::NoPositives));
    }

    #[test]
    fn prf1_examples() {
        let p = prf1(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = prf1(&[0.1, 0.2], &[true, false], 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        // TP=2 FP=1 FN=1
        let p = prf1(&[0.9, 0.8, 0.7, 0.2], &[true, true, false, true], 0.5).unwrap();
        for v in [p.precision, p.recall, p.f1] {
            assert!((v - 2.0 / 3.0).abs() < EPS);
        }
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(optimize_threshold(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 0.5);
        let t = optimize_threshold(&[0.3, 0.6, 0.9], &[true, true, true]).unwrap();
        assert!(t < 0.3);
        assert_eq!(optimize_threshold(&[0.3, 0.6], &[false, false]).unwrap(), 0.5);
    }

    #[test]
    fn threshold_matches_sweep_on_six_points() {
        let s = [0.95, 0.7, 0.7, 0.4, 0.35, 0.1];
        let l = [true, false, true, true, false, false];
        let t = optimize_threshold(&s, &l).unwrap();
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let mut cands = vec![sorted[0] - 1e-6];
        cands.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let best = cands.iter().map(|&c| oracle::f1(&s, &l, c)).fold(f64::MIN, f64::max);
        let lowest = *cands.iter().find(|&&c| oracle::f1(&s, &l, c) == best).unwrap();
        assert!((t - lowest).abs() < EPS, "{t} vs {lowest}");
        assert!((oracle::f1(&s, &l, t) - best).abs() < EPS);
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 1.0).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < EPS);
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(r_squared(&x, &x).unwrap(), 1.0);
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < EPS);
        assert_eq!(kendall_tau(&x, &neg).unwrap(), -1.0);
        assert_eq!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
        assert_eq!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn bootstrap_is_reproducible_and_constant_metric_collapses() {
        let s: Vec<f64> = (0..50).map(|i| ((i * 37) % 17) as f64).collect();
        let l: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let a = bootstrap_ci(auroc, &s, &l, 1000, 7).unwrap();
        let b = bootstrap_ci(auroc, &s, &l, 1000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.hi);
        let c = bootstrap_ci(|_, _| Ok(0.3), &s, &l, 200, 1).unwrap();
        assert_eq!((c.lo, c.hi), (0.3, 0.3));
        let none = bootstrap_ci(|_, _| Err(MetricError::SingleClass), &s, &l, 10, 1);
        assert_eq!(none, Err(MetricError::AllResamplesUndefined(10)));
    }

    #[test]
    fn report_means_skip_undefined_labels() {
        let names = vec!["a".to_string(), "b".to_string()];
        let scores = vec![vec![0.9, 0.2], vec![0.1, 0.4], vec![0.8, 0.6]];
        let labels = vec![vec![1, 0], vec![0, 0], vec![1, 0]];
        let r = MetricReport::compute(&names, &scores, &labels, None, 100, 3).unwrap();
        assert_eq!(r.auroc.mean, Some(1.0));
        assert_eq!(r.per_label[1].auroc, None);
        let ci = r.auroc.ci.unwrap();
        assert!(ci.lo <= 1.0 && ci.hi <= 1.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..8).prop_map(|v| v as f64 / 4.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn ranking_metrics_match_oracles((s, l) in instance()) {
            match oracle::auroc(&s, &l) {
                Some(v) => prop_assert!((auroc(&s, &l).unwrap() - v).abs() < EPS),
                None => prop_assert!(auroc(&s, &l).is_err()),
            }
            match oracle::auprc(&s, &l) {
                Some(v) => prop_assert!((auprc(&s, &l).unwrap() - v).abs() < EPS),
                None => prop_assert!(auprc(&s, &l).is_err()),
            }
            let f = prf1(&s, &l, 0.5).unwrap().f1;
            prop_assert!((f - oracle::f1(&s, &l, 0.5)).abs() < EPS);
        }

        #[test]
        fn correlations_match_oracles(x in proptest::collection::vec(-3i32..4, 2..25), seed in 0u64..100) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| ((i as u64 * 7 + seed) % 5) as f64 - v * 0.5).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                prop_assert!((t - oracle::tau_b(&x, &y)).abs() < EPS);
            }
            if let Ok(r) = pearson_r(&x, &y) {
                prop_assert!((r - oracle::pearson(&x, &y)).abs() < 1e-9);
            }
            if let Ok(r2) = r_squared(&x, &y) {
                prop_assert!((r2 - oracle::r2(&x, &y)).abs() < EPS);
            }
        }

        #[test]
        fn auroc_monotone_invariance_and_complement(s in proptest::collection::vec(-5.0f64..5.0, 4..30), l in proptest::collection::vec(any::<bool>(), 30)) {
            let l = &l[..s.len()];
            prop_assume!(l.iter().any(|&b| b) && l.iter().any(|&b| !b));
            let a = auroc(&s, l).unwrap();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert!((auroc(&t, l).unwrap() - a).abs() < EPS);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.dedup();
            if sorted.len() == s.len() {
                prop_assert!((a + auroc(&neg, l).unwrap() - 1.0).abs() < EPS);
            }
        }

        #[test]
        fn optimized_f1_beats_half((s, l) in instance()) {
            let t = optimize_threshold(&s, &l).unwrap();
            if l.iter().any(|&b| b) {
                prop_assert!(prf1(&s, &l, t).unwrap().f1 >= prf1(&s, &l, 0.5).unwrap().f1 - EPS);
            }
        }
    }
}
