use super::tape::bce_term;
use super::{Tensor, TensorError};
use serde::{Deserialize, Serialize};

/// Mean weighted binary cross-entropy with logits over all entries.
/// `pos_weights` has one entry per column of `logits`.
pub fn weighted_bce(logits: &Tensor, targets: &[f64], pos_weights: &[f64]) -> Result<f64, TensorError> {
    let n = logits.cols();
    if targets.len() != logits.len() || pos_weights.len() != n {
        return Err(TensorError::Invalid("weighted_bce shape mismatch".into()));
    }
    if pos_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(TensorError::Invalid("positive weights must be finite and > 0".into()));
    }
    let total: f64 = logits
        .data()
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&z, &t))| bce_term(z, t, pos_weights[i % n]))
        .sum();
    Ok(total / logits.len().max(1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "weights", rename_all = "snake_case")]
pub enum PosWeightStrategy {
    /// n / n_pos per label, clipped to [1, 50]; labels without positives get 1.
    #[default]
    InverseFrequency,
    Uniform,
    Custom(Vec<f64>),
}

/// Positive-class weight per label from a row-major 0/1 label matrix.
pub fn pos_weights(strategy: &PosWeightStrategy, labels: &[Vec<u8>], n_tasks: usize) -> Result<Vec<f64>, TensorError> {
    match strategy {
        PosWeightStrategy::Uniform => Ok(vec![1.0; n_tasks]),
        PosWeightStrategy::Custom(w) => {
            if w.len() != n_tasks || w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(TensorError::Invalid(format!(
                    "custom weights: need {n_tasks} finite positive values, got {}",
                    w.len()
                )));
            }
            Ok(w.clone())
        }
        PosWeightStrategy::InverseFrequency => {
            let mut pos = vec![0usize; n_tasks];
            for row in labels {
                for (p, &y) in pos.iter_mut().zip(row) {
                    *p += usize::from(y != 0);
                }
            }
            let n = labels.len() as f64;
            Ok(pos
                .iter()
                .map(|&p| if p == 0 { 1.0 } else { (n / p as f64).clamp(1.0, 50.0) })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{ParamStore, Tape};

    #[test]
    fn zero_logit_gives_ln2() {
        let l = weighted_bce(&Tensor::row(vec![0.0, 0.0]), &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let l = weighted_bce(&Tensor::row(vec![800.0, -800.0]), &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(l, 0.0);
        let l = weighted_bce(&Tensor::row(vec![-800.0]), &[1.0], &[2.0]).unwrap();
        assert!((l - 1600.0).abs() < 1e-9);
        for z in [20.0, 40.0, 1e3] {
            assert!(weighted_bce(&Tensor::row(vec![z]), &[1.0], &[1.0]).unwrap() < 3e-9);
        }
    }

    #[test]
    fn positive_term_is_linear_in_weight() {
        let z = Tensor::row(vec![-0.3, 1.2]);
        let t = [1.0, 0.0];
        let a = weighted_bce(&z, &t, &[1.0, 1.0]).unwrap();
        let b = weighted_bce(&z, &t, &[2.0, 1.0]).unwrap();
        let pos_term = weighted_bce(&Tensor::row(vec![-0.3]), &[1.0], &[1.0]).unwrap() / 2.0;
        assert!((b - a - pos_term).abs() < 1e-15);
    }

    #[test]
    fn tape_and_direct_agree() {
        let store = ParamStore::new();
        let z = Tensor::from_rows(&[vec![0.5, -2.0, 3.0], vec![-0.1, 0.2, 7.0]]).unwrap();
        let t = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
        let w = [3.0, 1.0, 1.5];
        let mut tape = Tape::new(&store);
        let v = tape.input(z.clone(), true);
        let l = tape.weighted_bce(v, &t, &w).unwrap();
        assert_eq!(tape.value(l).item(), weighted_bce(&z, &t, &w).unwrap());
        let g = tape.backward(l).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut p = z.clone();
            p.data_mut()[i] += h;
            let mut m = z.clone();
            m.data_mut()[i] -= h;
            let num = (weighted_bce(&p, &t, &w).unwrap() - weighted_bce(&m, &t, &w).unwrap()) / (2.0 * h);
            assert!((g.wrt(v).unwrap().data()[i] - num).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_frequency_weights() {
        let labels = vec![vec![1, 0, 0], vec![0, 0, 1], vec![1, 0, 1], vec![0, 0, 1]];
        let w = pos_weights(&PosWeightStrategy::InverseFrequency, &labels, 3).unwrap();
        assert_eq!(w, vec![2.0, 1.0, 4.0 / 3.0]);
        let rare: Vec<Vec<u8>> = (0..200).map(|i| vec![u8::from(i == 0)]).collect();
        assert_eq!(pos_weights(&PosWeightStrategy::InverseFrequency, &rare, 1).unwrap(), vec![50.0]);
        assert!(pos_weights(&PosWeightStrategy::Custom(vec![1.0]), &labels, 3).is_err());
    }
}
