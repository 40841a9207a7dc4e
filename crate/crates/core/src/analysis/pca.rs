use super::AnalysisError;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// One unit-norm row per component.
    pub components: Vec<Vec<f64>>,
    /// Sample variance (n − 1 denominator) along each component.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl Pca {
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, AnalysisError> {
        if x.len() != self.mean.len() {
            return Err(AnalysisError::Dimension { expected: self.mean.len(), got: x.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, v), m)| c * (v - m)).sum())
            .collect())
    }
}

/// Flip so the entry of largest magnitude is positive (first such entry on ties).
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// A unit vector orthogonal to `basis`, from Gram–Schmidt on the standard basis.
fn complete_basis(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    for j in 0..d {
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        for b in basis {
            let dot: f64 = b.iter().zip(&v).map(|(p, q)| p * q).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
    vec![0.0; d]
}

/// Principal component analysis of the rows of `x`. Uses the d×d covariance
/// when d ≤ n and the n×n Gram matrix otherwise; both give the same axes.
pub fn pca(x: &[Vec<f64>], n_components: usize) -> Result<(Pca, Vec<Vec<f64>>), AnalysisError> {
    let n = x.len();
    if n < 2 {
        return Err(AnalysisError::TooFewRows(n));
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(AnalysisError::Dimension { expected: d, got: r.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(AnalysisError::Components { requested: n_components, max: n.min(d) });
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let denom = (n - 1) as f64;

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let eig = SymmetricEigen::new(xc.transpose() * &xc / denom);
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        idx.iter().map(|&k| (eig.eigenvalues[k].max(0.0), eig.eigenvectors.column(k).iter().copied().collect())).unzip()
    } else {
        let eig = SymmetricEigen::new(&xc * xc.transpose() / denom);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let mut values = Vec::with_capacity(n);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
        for &k in &idx {
            let lambda = eig.eigenvalues[k].max(0.0);
            if lambda > 1e-12 * top {
                // Map u (n-dim) to v = Xᵀu / ‖Xᵀu‖.
                let v = xc.transpose() * eig.eigenvectors.column(k);
                let norm = v.norm();
                vectors.push(v.iter().map(|e| e / norm).collect());
            } else {
                vectors.push(complete_basis(&vectors, d));
            }
            values.push(lambda);
        }
        (values, vectors)
    };
    let total: f64 = xc.iter().map(|v| v * v).sum::<f64>() / denom;
    if total <= 0.0 {
        return Err(AnalysisError::Degenerate);
    }
    let mut components: Vec<Vec<f64>> = vectors.into_iter().take(n_components).collect();
    components.iter_mut().for_each(|c| orient(c));
    let explained_variance: Vec<f64> = values.into_iter().take(n_components).collect();
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    let model = Pca { mean, components, explained_variance, explained_variance_ratio };
    let projected = x.iter().map(|r| model.transform(r)).collect::<Result<_, _>>()?;
    Ok((model, projected))
}

/// Rows whose every coordinate has |z| ≤ `max_z` (z computed per column).
pub fn z_trim_mask(points: &[Vec<f64>], max_z: f64) -> Vec<bool> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].len();
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let m = points.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = points.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
            (m, var.sqrt())
        })
        .collect();
    points
        .iter()
        .map(|r| r.iter().zip(&stats).all(|(v, (m, s))| *s == 0.0 || ((v - m) / s).abs() <= max_z))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic Jacobi eigenvalue iteration; returns (values, column vectors).
    fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for row in v.iter_mut() {
                        let (vkp, vkq) = (row[p], row[q]);
                        row[p] = c * vkp - s * vkq;
                        row[q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let values = (0..n).map(|i| a[i][i]).collect();
        let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
        (values, vectors)
    }

    fn random_matrix(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Unequal column scales keep the spectrum well separated.
        (0..n).map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect()).collect()
    }

    #[test]
    fn matches_jacobi_oracle() {
        let x = random_matrix(3, 50, 8);
        let (model, _) = pca(&x, 8).unwrap();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..8).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..8)
            .map(|a| (0..8).map(|b| x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0)).collect())
            .collect();
        let (vals, vecs) = jacobi(cov);
        let mut order: Vec<usize> = (0..8).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (k, &o) in order.iter().enumerate() {
            assert!((model.explained_variance[k] - vals[o]).abs() < 1e-10);
            let mut v = vecs[o].clone();
            orient(&mut v);
            for (a, b) in model.components[k].iter().zip(&v) {
                assert!((a - b).abs() < 1e-8, "component {k}");
            }
        }
    }

    #[test]
    fn line_in_3d_has_one_component() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| {
            let t = i as f64 * 0.7 - 2.0;
            vec![1.0 + 2.0 * t, -t, 0.5 * t]
        }).collect();
        let (model, proj) = pca(&x, 2).unwrap();
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(model.explained_variance_ratio[1].abs() < 1e-12);
        assert!(proj.iter().all(|p| p[1].abs() < 1e-12));
    }

    #[test]
    fn wide_input_uses_gram_path_consistently() {
        let x = random_matrix(4, 6, 20);
        let (wide, proj) = pca(&x, 5).unwrap();
        // d > n here, so compare the Gram-path spectrum with an explicit covariance solve.
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..20).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..20)
            .map(|a| (0..20).map(|b| x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0)).collect())
            .collect();
        let (vals, _) = jacobi(cov);
        let mut vals = vals;
        vals.sort_by(|a, b| b.total_cmp(a));
        for k in 0..5 {
            assert!((wide.explained_variance[k] - vals[k]).abs() < 1e-9);
        }
        // Full-rank projection preserves pairwise distances.
        for i in 0..6 {
            for j in 0..6 {
                let d0: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let d1: f64 = proj[i].iter().zip(&proj[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(pca(&[vec![1.0, 2.0]], 1), Err(AnalysisError::TooFewRows(1))));
        assert!(matches!(pca(&[vec![1.0], vec![1.0]], 1), Err(AnalysisError::Degenerate)));
        assert!(matches!(pca(&[vec![1.0], vec![2.0]], 2), Err(AnalysisError::Components { requested: 2, max: 1 })));
    }

    #[test]
    fn z_trim_drops_outlier() {
        let mut pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 5) as f64, (i % 7) as f64]).collect();
        pts.push(vec![100.0, 3.0]);
        let mask = z_trim_mask(&pts, 2.5);
        assert!(!mask[40]);
        assert!(mask[..40].iter().all(|&m| m));
    }

    proptest! {
        #[test]
        fn orthonormal_sorted_and_oriented(seed in any::<u64>(), n in 3usize..30, d in 2usize..7) {
            let x = random_matrix(seed, n, d);
            let k = n.min(d);
            let (model, proj) = pca(&x, k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = model.components[a].iter().zip(&model.components[b]).map(|(p, q)| p * q).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-10);
                }
                let c = &model.components[a];
                let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
                prop_assert!(big > 0.0);
            }
            prop_assert!(model.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1] - 1e-12));
            let total: f64 = model.explained_variance_ratio.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for i in 0..n {
                for j in 0..n {
                    let d0: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    let d1: f64 = proj[i].iter().zip(&proj[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    prop_assert!((d0 - d1).abs() < 1e-9 * (1.0 + d0));
                }
            }
        }
    }
}
