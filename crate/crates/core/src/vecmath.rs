//! Label-vector arithmetic and small dense-vector helpers. Everything here
//! works in `f64`.

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Scales a non-negative vector to unit mass.
pub fn l1_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

/// Scales a vector to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Angle between two non-zero vectors, in degrees.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let cos = dot(a, b) / (l2_norm(a) * l2_norm(b));
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// `-Σ q_c log p_c` with `p` clamped at [`PROB_FLOOR`].
pub fn soft_cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    -p.iter()
        .zip(q)
        .map(|(pc, qc)| qc * pc.clamp(PROB_FLOOR, 1.0).ln())
        .sum::<f64>()
}

/// Shannon entropy in nats; zero-mass entries contribute nothing.
pub fn entropy(q: &[f64]) -> f64 {
    -q.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Index of the maximum; ties go to the smallest index.
pub fn hard_label(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn l1_examples() {
        assert!(close(
            &l1_normalize(&[1.0, 0.0, 2.0, 0.0]).unwrap(),
            &[1.0 / 3.0, 0.0, 2.0 / 3.0, 0.0],
            1e-15
        ));
        assert_eq!(l1_normalize(&[0.25; 4]).unwrap(), vec![0.25; 4]);
        assert_eq!(l1_normalize(&[5.0]).unwrap(), vec![1.0]);
        assert!(matches!(l1_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn l2_examples() {
        assert!(close(
            &l2_normalize(&[3.0, 4.0]).unwrap(),
            &[0.6, 0.8],
            1e-15
        ));
        let unit = [0.6, 0.8];
        assert!(close(&l2_normalize(&unit).unwrap(), &unit, 1e-15));
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = [0.25; 4];
        for q in [[1.0, 0.0, 0.0, 0.0], [0.1, 0.2, 0.3, 0.4]] {
            assert!((soft_cross_entropy(&uniform, &q) - 4f64.ln()).abs() < 1e-12);
        }
        let one_hot = [0.0, 1.0, 0.0];
        assert!(soft_cross_entropy(&one_hot, &one_hot) <= 1e-11);
        assert!((soft_cross_entropy(&[0.7, 0.3], &[1.0, 0.0]) - 0.356675).abs() < 1e-6);
    }

    #[test]
    fn hard_label_examples() {
        assert_eq!(hard_label(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(hard_label(&[0.5, 0.5]), 0);
        assert_eq!(hard_label(&[0.0, 0.0, 1.0]), 2);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        assert!(close(&a, &b, 1e-15));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    fn prob_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n)
            .prop_filter_map("zero mass", |v| l1_normalize(&v).ok())
    }

    proptest! {
        #[test]
        fn normalizations_are_idempotent(v in prop::collection::vec(0.01f64..10.0, 1..12)) {
            let l1 = l1_normalize(&v).unwrap();
            prop_assert!(close(&l1_normalize(&l1).unwrap(), &l1, 1e-9));
            let l2 = l2_normalize(&v).unwrap();
            prop_assert!(close(&l2_normalize(&l2).unwrap(), &l2, 1e-9));
            prop_assert!((l2_norm(&l2) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cross_entropy_dominates_entropy((p, q) in (1usize..8).prop_flat_map(|n| (prob_vec(n), prob_vec(n)))) {
            prop_assert!(soft_cross_entropy(&p, &q) - entropy(&q) >= -1e-12);
        }

        #[test]
        fn hard_label_scale_invariant(v in prop::collection::vec(0.0f64..1.0, 1..10), s in 0.001f64..1000.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
            prop_assert_eq!(hard_label(&v), hard_label(&scaled));
        }
    }
}
