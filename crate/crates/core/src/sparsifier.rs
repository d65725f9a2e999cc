//! Select-small masking and sparsification of non-negative vectors.
//!
//! Entries are ranked ascending by value (ties by ascending index) and the
//! longest prefix whose cumulative sum stays within the threshold is dropped.
//! The dropped energy is therefore never above the threshold, and the kept
//! energy is never below `total - threshold`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the drop budget is derived for a vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum ThresholdMode {
    /// A fixed energy budget `delta >= 0`.
    Absolute(f64),
    /// A fraction `rho` in `[0, 1]` of the vector's total energy.
    Relative(f64),
}

impl ThresholdMode {
    pub fn validate(self) -> Result<Self> {
        match self {
            ThresholdMode::Absolute(d) if d.is_finite() && d >= 0.0 => Ok(self),
            ThresholdMode::Relative(r) if (0.0..=1.0).contains(&r) => Ok(self),
            ThresholdMode::Absolute(d) => Err(Error::Contract(format!(
                "absolute threshold must be finite and >= 0, got {d}"
            ))),
            ThresholdMode::Relative(r) => Err(Error::Contract(format!(
                "relative threshold must lie in [0, 1], got {r}"
            ))),
        }
    }

    /// The drop budget for a vector whose entries sum to `total`.
    pub fn effective(self, total: f64) -> f64 {
        match self {
            ThresholdMode::Absolute(d) => d,
            ThresholdMode::Relative(r) => r * total,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            ThresholdMode::Absolute(v) | ThresholdMode::Relative(v) => v,
        }
    }

    pub fn mode_name(self) -> &'static str {
        match self {
            ThresholdMode::Absolute(_) => "absolute",
            ThresholdMode::Relative(_) => "relative",
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mode_name(), self.value())
    }
}

/// Drop mask for one non-negative vector. `mask[d]` is true when entry `d`
/// is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    pub mask: Vec<bool>,
    pub cutoff: usize,
    pub dropped_sum: f64,
    pub kept_sum: f64,
    /// Budget the mask was selected against.
    pub threshold: f64,
}

impl SparseMask {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn is_dropped(&self, index: usize) -> bool {
        self.mask[index]
    }

    /// `1 - M_d` as a float, the factor applied to kept entries.
    #[inline]
    pub fn keep_factor(&self, index: usize) -> f64 {
        if self.mask[index] {
            0.0
        } else {
            1.0
        }
    }
}

fn check_entries(x: &[f64]) -> Result<()> {
    for (i, &v) in x.iter().enumerate() {
        // -0.0 passes: it compares equal to zero.
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Contract(format!(
                "select_small expects finite non-negative entries, entry {i} is {v}"
            )));
        }
    }
    Ok(())
}

/// Builds the select-small mask of `x` for the given threshold.
pub fn select_small(x: &[f64], threshold: ThresholdMode) -> Result<SparseMask> {
    check_entries(x)?;
    let threshold = threshold.validate()?;
    let total: f64 = x.iter().sum();
    let budget = threshold.effective(total);

    let mut mask = vec![false; x.len()];
    let mut dropped_sum = 0.0;
    let cutoff = if budget >= total {
        mask.fill(true);
        dropped_sum = total;
        x.len()
    } else {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_unstable_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let mut cutoff = 0;
        for &i in &order {
            let next = dropped_sum + x[i];
            if next > budget {
                break;
            }
            dropped_sum = next;
            mask[i] = true;
            cutoff += 1;
        }
        cutoff
    };

    let kept_sum = x
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .sum();

    Ok(SparseMask {
        mask,
        cutoff,
        dropped_sum,
        kept_sum,
        threshold: budget,
    })
}

/// Zeroes the masked entries of `x`.
pub fn sparsify(x: &[f64], mask: &SparseMask) -> Result<Vec<f64>> {
    if x.len() != mask.len() {
        return Err(Error::LengthMismatch {
            expected: mask.len(),
            found: x.len(),
        });
    }
    Ok(x.iter()
        .zip(&mask.mask)
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect())
}

/// Kept energy of `e` and its gradient with the mask held fixed.
///
/// The mask is selected on `e²`; the value is `Σ e_d² (1 - M_d)` and the
/// gradient is `2 e_d (1 - M_d)`.
pub fn sparse_penalty(e: &[f64], threshold: ThresholdMode) -> Result<(f64, Vec<f64>)> {
    if let Some(bad) = e.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sparse_penalty input entry {bad}")));
    }
    let squares: Vec<f64> = e.iter().map(|v| v * v).collect();
    let mask = select_small(&squares, threshold)?;
    let value = kept_energy(&squares, &mask);
    let grad = e
        .iter()
        .enumerate()
        .map(|(d, &v)| 2.0 * v * mask.keep_factor(d))
        .collect();
    Ok((value, grad))
}

/// `Σ x_d (1 - M_d)` summed in index order.
pub fn kept_energy(x: &[f64], mask: &SparseMask) -> f64 {
    x.iter()
        .zip(&mask.mask)
        .fold(0.0, |acc, (&v, &m)| if m { acc } else { acc + v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: try every prefix length of the stably sorted vector.
    fn prefix_oracle(x: &[f64], delta: f64) -> Vec<bool> {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
        let mut best = 0;
        for s in 0..=x.len() {
            let sum: f64 = order[..s].iter().map(|&i| x[i]).sum();
            if sum <= delta {
                best = s;
            }
        }
        let mut mask = vec![false; x.len()];
        for &i in &order[..best] {
            mask[i] = true;
        }
        mask
    }

    #[test]
    fn drops_two_smallest() {
        let x = [0.05, 0.1, 0.3, 0.5];
        let m = select_small(&x, ThresholdMode::Absolute(0.2)).unwrap();
        assert_eq!(m.mask, prefix_oracle(&x, 0.2));
        assert_eq!(m.mask, [true, true, false, false]);
        assert_eq!(m.cutoff, 2);
        assert!((m.dropped_sum - 0.15).abs() < 1e-15);
        assert!((m.kept_sum - 0.8).abs() < 1e-15);
        assert_eq!(sparsify(&x, &m).unwrap(), [0.0, 0.0, 0.3, 0.5]);
    }

    #[test]
    fn zero_and_total_thresholds() {
        let x = [0.4, 1.5, 0.25, 3.0];
        let total: f64 = x.iter().sum();
        let keep = select_small(&x, ThresholdMode::Absolute(0.0)).unwrap();
        assert_eq!(keep.cutoff, 0);
        assert_eq!(keep.kept_sum, total);
        let drop = select_small(&x, ThresholdMode::Absolute(total)).unwrap();
        assert_eq!(drop.cutoff, x.len());
        assert_eq!(drop.kept_sum, 0.0);
        let rel = select_small(&x, ThresholdMode::Relative(1.0)).unwrap();
        assert_eq!(rel.cutoff, x.len());
    }

    #[test]
    fn ties_break_by_index() {
        let x = [0.1, 0.1, 0.1];
        let m = select_small(&x, ThresholdMode::Absolute(0.2)).unwrap();
        assert_eq!(m.mask, [true, true, false]);
        assert!((m.dropped_sum - 0.2).abs() < 1e-15);
    }

    #[test]
    fn identity_and_annihilation() {
        let x = [1.0, 2.0, 3.0];
        let none = select_small(&x, ThresholdMode::Absolute(0.0)).unwrap();
        assert_eq!(sparsify(&x, &none).unwrap(), x);
        let all = select_small(&x, ThresholdMode::Absolute(10.0)).unwrap();
        assert_eq!(sparsify(&x, &all).unwrap(), [0.0; 3]);
        assert!(matches!(
            sparsify(&[1.0], &all),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(select_small(&[0.1, -0.2], ThresholdMode::Absolute(0.1)).is_err());
        assert!(select_small(&[f64::NAN], ThresholdMode::Absolute(0.1)).is_err());
        assert!(select_small(&[0.1], ThresholdMode::Relative(1.5)).is_err());
        assert!(select_small(&[0.1], ThresholdMode::Absolute(-1.0)).is_err());
        assert!(sparse_penalty(&[f64::INFINITY], ThresholdMode::Absolute(0.0)).is_err());
    }

    #[test]
    fn penalty_examples() {
        let (v, g) = sparse_penalty(&[1.0, 2.0, 3.0], ThresholdMode::Absolute(1.0)).unwrap();
        assert_eq!(v, 13.0);
        assert_eq!(g, [0.0, 4.0, 6.0]);

        let e = [0.3, -1.2, 2.5];
        let (v, g) = sparse_penalty(&e, ThresholdMode::Absolute(0.0)).unwrap();
        assert_eq!(v, e.iter().map(|x| x * x).sum::<f64>());
        assert_eq!(g, e.map(|x| 2.0 * x));

        let (v, g) = sparse_penalty(&[0.0, 0.0], ThresholdMode::Absolute(0.7)).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn penalty_gradient_matches_frozen_mask_differences() {
        let e = [1.0, 2.0, 3.0];
        let (_, grad) = sparse_penalty(&e, ThresholdMode::Absolute(1.0)).unwrap();
        let squares: Vec<f64> = e.iter().map(|v| v * v).collect();
        let mask = select_small(&squares, ThresholdMode::Absolute(1.0)).unwrap();
        let frozen = |v: &[f64]| -> f64 {
            v.iter()
                .enumerate()
                .map(|(d, x)| x * x * mask.keep_factor(d))
                .sum()
        };
        let h = 1e-5;
        for d in 0..e.len() {
            let mut plus = e;
            let mut minus = e;
            plus[d] += h;
            minus[d] -= h;
            let fd = (frozen(&plus) - frozen(&minus)) / (2.0 * h);
            assert!((fd - grad[d]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn signal_noise_construction_keeps_only_signal() {
        let (k, n, a, eps) = (3usize, 20usize, 1.5f64, 0.01f64);
        let mut e = vec![eps; n];
        for slot in e.iter_mut().take(k) {
            *slot = a;
        }
        let noise = (n - k) as f64 * eps * eps;
        let delta = noise + 0.5 * a * a;
        let (v, g) = sparse_penalty(&e, ThresholdMode::Absolute(delta)).unwrap();
        assert_eq!(v, k as f64 * a * a);
        for (d, gd) in g.iter().enumerate() {
            assert_eq!(*gd, if d < k { 2.0 * a } else { 0.0 });
        }
    }

    fn vector() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..5.0, 1..40)
    }

    proptest! {
        #[test]
        fn matches_prefix_oracle(x in vector(), frac in 0.0f64..1.2) {
            let delta = frac * x.iter().sum::<f64>();
            let m = select_small(&x, ThresholdMode::Absolute(delta)).unwrap();
            let oracle = prefix_oracle(&x, delta);
            // The oracle and the selector may disagree only through rounding
            // of the prefix sums, which these draws never hit.
            prop_assert_eq!(&m.mask, &oracle);
            prop_assert_eq!(m.cutoff, m.mask.iter().filter(|&&b| b).count());
            prop_assert!(m.dropped_sum <= m.threshold);
            let total: f64 = x.iter().sum();
            prop_assert!(((m.dropped_sum + m.kept_sum) - total).abs() <= 1e-12 * total.max(1e-300));
        }

        #[test]
        fn mask_monotone_in_threshold(x in vector(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = select_small(&x, ThresholdMode::Relative(lo)).unwrap();
            let large = select_small(&x, ThresholdMode::Relative(hi)).unwrap();
            for (s, l) in small.mask.iter().zip(&large.mask) {
                prop_assert!(!s || *l);
            }
            let e: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
            let (v_lo, _) = sparse_penalty(&e, ThresholdMode::Relative(lo)).unwrap();
            let (v_hi, _) = sparse_penalty(&e, ThresholdMode::Relative(hi)).unwrap();
            prop_assert!(v_hi <= v_lo);
        }

        #[test]
        fn permutation_equivariant(e in prop::collection::vec(-3.0f64..3.0, 1..30), frac in 0.0f64..1.0, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut perm: Vec<usize> = (0..e.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&i| e[i]).collect();
            let t = ThresholdMode::Relative(frac);
            let (v, g) = sparse_penalty(&e, t).unwrap();
            let (pv, pg) = sparse_penalty(&permuted, t).unwrap();
            // Distinct values permute exactly; ties may legitimately swap.
            let mut sorted = e.iter().map(|x| x * x).collect::<Vec<_>>();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[0] < w[1]) {
                for (j, &i) in perm.iter().enumerate() {
                    prop_assert_eq!(pg[j], g[i]);
                }
            }
            prop_assert!((pv - v).abs() <= 1e-12 * v.max(1.0));
        }

        #[test]
        fn deterministic(e in prop::collection::vec(-3.0f64..3.0, 1..30), frac in 0.0f64..1.0) {
            let t = ThresholdMode::Relative(frac);
            let first = sparse_penalty(&e, t).unwrap();
            for _ in 0..5 {
                let again = sparse_penalty(&e, t).unwrap();
                prop_assert_eq!(first.0.to_bits(), again.0.to_bits());
                prop_assert_eq!(&first.1, &again.1);
            }
        }
    }
}
