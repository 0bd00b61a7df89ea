use super::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Softmax of one row, with the row maximum subtracted before exponentiation.
pub fn stable_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |s, &e| s + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let lse = logits
        .iter()
        .fold(T::zero(), |s, &x| s + (x - max).exp())
        .ln()
        + max;
    logits.iter().map(|&x| x - lse).collect()
}

/// Applies [`stable_softmax`] to every row.
pub fn softmax_rows<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let p = stable_softmax(logits.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    out
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::Index {
            what: "class logits",
            index: label,
            len: logits.len(),
        });
    }
    let loss = -log_softmax(logits)[label];
    // Rounding can leave a tiny negative value when the label dominates.
    Ok(loss.max(T::zero()))
}

fn check_distribution<T: Scalar>(name: &str, p: &[T]) -> Result<()> {
    let sum = p.iter().fold(T::zero(), |s, &x| s + x);
    if p.iter().any(|&x| x < T::zero() || !x.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite and non-negative"));
    }
    if (sum - T::one()).abs() > T::lit(1e-9) {
        return Err(Error::invalid(name, format!("sums to {sum}, expected 1")));
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p ln(p/q)` with `0 · ln 0 = 0`. `p` is the reference
/// (teacher) distribution.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::shape(
            "kl_divergence",
            format!("p of length {}", p.len()),
            format!("q of length {}", q.len()),
        ));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    let mut kl = T::zero();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > T::zero() {
            if qi <= T::zero() {
                return Err(Error::invalid("q", "zero where p is positive"));
            }
            kl = kl + pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(stable_softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = stable_softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = stable_softmax(&[1000.0f64, 0.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        for label in 0..2 {
            let l = cross_entropy(&[0.3, 0.3], label).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert!(cross_entropy(&[50.0, 0.0, 0.0], 0).unwrap() < 1e-20);
        // 2 + ln(1 + e^-2)
        let want = 2.0 + (1.0 + (-2f64).exp()).ln();
        assert!((cross_entropy(&[1.0, -1.0], 1).unwrap() - want).abs() < 1e-14);
        assert!((want - 2.126928).abs() < 1e-6);
        assert!(matches!(cross_entropy(&[1.0, 2.0], 2), Err(Error::Index { .. })));
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let l = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let want = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let got = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.368064).abs() < 1e-6);
    }

    #[test]
    fn kl_rejects_unnormalized() {
        assert!(matches!(
            kl_divergence(&[0.6, 0.6], &[0.5, 0.5]),
            Err(Error::Validation { .. })
        ));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(row in prop::collection::vec(-1e6f64..1e6, 1..12)) {
            let p = stable_softmax(&row);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        }

        #[test]
        fn kl_is_non_negative(a in prop::collection::vec(-8f64..8.0, 2..8), shift in -3f64..3.0) {
            let p = stable_softmax(&a);
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * i as f64).collect();
            let q = stable_softmax(&b);
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
        }
    }
}
