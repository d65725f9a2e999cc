//! Per-triple and per-batch embedding penalties.
//!
//! The sparse penalty masks each of the four interaction vectors of a triple
//! independently and penalizes only the kept energy. With a zero threshold
//! it is exactly the full four-term penalty `‖h‖² + ‖t‖² + ‖h∘r‖² + ‖t∘r‖²`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_data::Triple;
use crate::models::{
    interaction_backward_unchecked, interaction_vectors_unchecked, ModelGradients, ModelKind,
    ModelParams, TripleGradient,
};
use crate::sparsifier::{kept_energy, select_small, ThresholdMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    None,
    F2,
    N3,
    Spr,
}

impl RegularizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::F2 => "f2",
            RegularizerKind::N3 => "n3",
            RegularizerKind::Spr => "spr",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RegularizerKind::None),
            "f2" => Ok(RegularizerKind::F2),
            "n3" => Ok(RegularizerKind::N3),
            "spr" => Ok(RegularizerKind::Spr),
            other => Err(Error::Config(format!("unknown regularizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub lambda: f64,
    /// Drop budget; present exactly when `kind` is `Spr`.
    pub threshold: Option<ThresholdMode>,
}

impl RegularizerSpec {
    pub fn none() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::None,
            lambda: 0.0,
            threshold: None,
        }
    }

    pub fn f2(lambda: f64) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::F2,
            lambda,
            threshold: None,
        }
    }

    pub fn n3(lambda: f64) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::N3,
            lambda,
            threshold: None,
        }
    }

    pub fn spr(lambda: f64, threshold: ThresholdMode) -> Self {
        RegularizerSpec {
            kind: RegularizerKind::Spr,
            lambda,
            threshold: Some(threshold),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        match (self.kind, self.threshold) {
            (RegularizerKind::Spr, Some(t)) => t.validate().map(|_| ()),
            (RegularizerKind::Spr, None) => {
                Err(Error::Config("spr regularizer needs a threshold".into()))
            }
            (_, Some(_)) => Err(Error::Config(format!(
                "threshold given for non-spr regularizer {}",
                self.kind
            ))),
            (_, None) => Ok(()),
        }
    }

    /// Whether the penalty contributes anything to the objective.
    pub fn is_active(&self) -> bool {
        self.kind != RegularizerKind::None && self.lambda > 0.0
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} penalty evaluated to {value}")))
    }
}

/// Sparse penalty of one triple with frozen-mask gradients.
pub fn spr_triple(
    params: &ModelParams,
    triple: Triple,
    threshold: ThresholdMode,
) -> Result<(f64, TripleGradient)> {
    params.check(triple)?;
    let vectors = interaction_vectors_unchecked(params, triple);
    let mut weights: [Vec<f64>; 4] = Default::default();
    let mut value = 0.0;
    for (x, w) in vectors.iter().zip(weights.iter_mut()) {
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("interaction entry {bad}")));
        }
        let mask = select_small(x, threshold)?;
        value += kept_energy(x, &mask);
        *w = (0..x.len()).map(|d| mask.keep_factor(d)).collect();
    }
    let grad = interaction_backward_unchecked(
        params,
        triple,
        [&weights[0], &weights[1], &weights[2], &weights[3]],
    );
    Ok((finite(value, "spr")?, grad))
}

/// The unmasked four-term penalty, the zero-threshold reference.
pub fn full_interaction_triple(params: &ModelParams, triple: Triple) -> Result<(f64, TripleGradient)> {
    params.check(triple)?;
    let vectors = interaction_vectors_unchecked(params, triple);
    let mut value = 0.0;
    for x in &vectors {
        value += x.iter().fold(0.0, |acc, v| acc + v);
    }
    let ones = vec![1.0; params.dim()];
    let grad = interaction_backward_unchecked(params, triple, [&ones, &ones, &ones, &ones]);
    Ok((finite(value, "four-term")?, grad))
}

/// Squared Frobenius norm of the three rows a triple uses.
pub fn f2_triple(params: &ModelParams, triple: Triple) -> Result<(f64, TripleGradient)> {
    params.check(triple)?;
    let mut g = TripleGradient::zeros(params, triple);
    let rows = [
        (params.head_row(triple.head), &mut g.head),
        (params.relation_row(triple.relation), &mut g.relation),
        (params.tail_row(triple.tail), &mut g.tail),
    ];
    let mut value = 0.0;
    for (row, grad) in rows {
        for (x, gx) in row.iter().zip(grad.iter_mut()) {
            value += x * x;
            *gx = 2.0 * x;
        }
    }
    Ok((finite(value, "f2")?, g))
}

/// Cubed-magnitude penalty; complex coordinates use their modulus.
pub fn n3_triple(params: &ModelParams, triple: Triple) -> Result<(f64, TripleGradient)> {
    params.check(triple)?;
    let mut g = TripleGradient::zeros(params, triple);
    let complex = params.kind() == ModelKind::ComplEx;
    let rows = [
        (params.head_row(triple.head), &mut g.head),
        (params.relation_row(triple.relation), &mut g.relation),
        (params.tail_row(triple.tail), &mut g.tail),
    ];
    let mut value = 0.0;
    for (row, grad) in rows {
        if complex {
            for (pair, gpair) in row.chunks_exact(2).zip(grad.chunks_exact_mut(2)) {
                let modulus = (pair[0] * pair[0] + pair[1] * pair[1]).sqrt();
                value += modulus * modulus * modulus;
                gpair[0] = 3.0 * modulus * pair[0];
                gpair[1] = 3.0 * modulus * pair[1];
            }
        } else {
            for (x, gx) in row.iter().zip(grad.iter_mut()) {
                let a = x.abs();
                value += a * a * a;
                *gx = 3.0 * a * x;
            }
        }
    }
    Ok((finite(value, "n3")?, g))
}

/// Penalty of one triple under `spec`, without the `lambda` factor.
pub fn triple_penalty(
    spec: &RegularizerSpec,
    params: &ModelParams,
    triple: Triple,
) -> Result<(f64, TripleGradient)> {
    match spec.kind {
        RegularizerKind::None => {
            params.check(triple)?;
            Ok((0.0, TripleGradient::zeros(params, triple)))
        }
        RegularizerKind::F2 => f2_triple(params, triple),
        RegularizerKind::N3 => n3_triple(params, triple),
        RegularizerKind::Spr => {
            let threshold = spec
                .threshold
                .ok_or_else(|| Error::Config("spr regularizer needs a threshold".into()))?;
            spr_triple(params, triple, threshold)
        }
    }
}

/// Adds `scale · ∇(mean penalty)` into `grads` and returns the mean penalty.
///
/// `lambda` is not applied; callers pass it through `scale`.
pub fn penalty_batch_into(
    spec: &RegularizerSpec,
    params: &ModelParams,
    batch: &[Triple],
    grads: &mut ModelGradients,
    scale: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if spec.kind == RegularizerKind::None {
        for t in batch {
            params.check(*t)?;
        }
        return Ok(0.0);
    }
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &triple in batch {
        let (v, g) = triple_penalty(spec, params, triple)?;
        total += v;
        grads.add_triple(&g, scale * inv);
    }
    finite(total * inv, spec.kind.as_str())
}

/// Mean penalty over a batch and its gradient.
pub fn penalty_batch(
    spec: &RegularizerSpec,
    params: &ModelParams,
    batch: &[Triple],
) -> Result<(f64, ModelGradients)> {
    let mut grads = ModelGradients::for_params(params);
    let value = penalty_batch_into(spec, params, batch, &mut grads, 1.0)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TableId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cp(h: &[f64], r: &[f64], t: &[f64]) -> (ModelParams, Triple) {
        let mut p = ModelParams::zeros(ModelKind::Cp, 2, 1, h.len());
        p.table_mut(TableId::Entities).row_mut(0).copy_from_slice(h);
        p.table_mut(TableId::Tails).row_mut(1).copy_from_slice(t);
        p.table_mut(TableId::Relations).row_mut(0).copy_from_slice(r);
        (p, Triple::new(0, 0, 1))
    }

    #[test]
    fn spr_examples() {
        let (p, t) = cp(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]);
        let (v, _) = spr_triple(&p, t, ThresholdMode::Absolute(0.0)).unwrap();
        assert_eq!(v, 4.0);

        let (v, g) = spr_triple(&p, t, ThresholdMode::Absolute(100.0)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.head.iter().chain(&g.tail).chain(&g.relation).all(|&x| x == 0.0));

        let (p, t) = cp(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 2.0]);
        let (v, g) = spr_triple(&p, t, ThresholdMode::Absolute(1.0)).unwrap();
        assert_eq!(v, 16.0);
        // Only coordinate 1 survives in every vector.
        assert_eq!(g.head, [0.0, 8.0]);
        assert_eq!(g.tail, [0.0, 8.0]);
        assert_eq!(g.relation, [0.0, 16.0]);
    }

    #[test]
    fn f2_and_n3_examples() {
        let (p, t) = cp(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(f2_triple(&p, t).unwrap().0, 9.0);
        assert_eq!(n3_triple(&p, t).unwrap().0, 13.0);
        let g = n3_triple(&p, t).unwrap().1;
        assert_eq!(g.head, [3.0, 12.0]);

        let z = ModelParams::zeros(ModelKind::Rescal, 2, 1, 3);
        assert_eq!(f2_triple(&z, Triple::new(0, 0, 1)).unwrap().0, 0.0);
        assert_eq!(n3_triple(&z, Triple::new(0, 0, 1)).unwrap().0, 0.0);

        let mut c = ModelParams::zeros(ModelKind::ComplEx, 2, 1, 1);
        c.table_mut(TableId::Entities).row_mut(0).copy_from_slice(&[1.0, 1.0]);
        c.table_mut(TableId::Entities).row_mut(1).copy_from_slice(&[1.0, 0.0]);
        c.table_mut(TableId::Relations).row_mut(0).copy_from_slice(&[1.0, 0.0]);
        let v = n3_triple(&c, Triple::new(0, 0, 1)).unwrap().0;
        assert!((v - (2f64.powf(1.5) + 2.0)).abs() < 1e-12);
        assert!((v - 4.8284).abs() < 1e-4);
    }

    #[test]
    fn batch_mean_and_disabled() {
        let (p, t) = cp(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]);
        let spec = RegularizerSpec::spr(1.0, ThresholdMode::Absolute(0.0));
        let (single, _) = spr_triple(&p, t, ThresholdMode::Absolute(0.0)).unwrap();
        let (v, _) = penalty_batch(&spec, &p, &[t, t]).unwrap();
        assert_eq!(v, single);

        let (v, g) = penalty_batch(&RegularizerSpec::none(), &p, &[t]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.entities.touched().is_empty());

        assert!(matches!(
            penalty_batch(&spec, &p, &[]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn batch_of_two_examples_is_mean() {
        let mut p = ModelParams::zeros(ModelKind::Cp, 4, 2, 2);
        p.table_mut(TableId::Entities).row_mut(0).copy_from_slice(&[1.0, 0.0]);
        p.table_mut(TableId::Tails).row_mut(1).copy_from_slice(&[0.0, 1.0]);
        p.table_mut(TableId::Relations).row_mut(0).copy_from_slice(&[1.0, 1.0]);
        p.table_mut(TableId::Entities).row_mut(2).copy_from_slice(&[1.0, 2.0]);
        p.table_mut(TableId::Tails).row_mut(3).copy_from_slice(&[1.0, 2.0]);
        p.table_mut(TableId::Relations).row_mut(1).copy_from_slice(&[1.0, 1.0]);
        let a = Triple::new(0, 0, 1);
        let b = Triple::new(2, 1, 3);
        let spec = RegularizerSpec::spr(1.0, ThresholdMode::Absolute(0.0));
        let (v, _) = penalty_batch(&spec, &p, &[a, b]).unwrap();
        // Direct sums: 1+1+1+1 and 5+5+5+5.
        assert_eq!(v, (4.0 + 20.0) / 2.0);
    }

    #[test]
    fn spec_validation() {
        assert!(RegularizerSpec::spr(0.1, ThresholdMode::Relative(0.4)).validate().is_ok());
        assert!(RegularizerSpec::f2(-1.0).validate().is_err());
        let mut s = RegularizerSpec::n3(0.1);
        s.threshold = Some(ThresholdMode::Absolute(0.1));
        assert!(s.validate().is_err());
        s = RegularizerSpec::spr(0.1, ThresholdMode::Relative(0.1));
        s.threshold = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn non_finite_penalty_is_an_error() {
        let (mut p, t) = cp(&[1.0, 2.0], &[1.0, 1.0], &[1.0, 1.0]);
        p.table_mut(TableId::Entities).row_mut(0)[0] = 1e200;
        assert!(matches!(n3_triple(&p, t), Err(Error::NonFinite(_))));
        assert!(matches!(
            spr_triple(&p, t, ThresholdMode::Absolute(0.0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn spr_non_increasing_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in ModelKind::ALL {
            let p = ModelParams::random_scaled(kind, 5, 2, 6, 1.0, &mut rng);
            let t = Triple::new(1, 1, 3);
            let mut last = f64::INFINITY;
            for step in 0..=20 {
                let (v, _) = spr_triple(&p, t, ThresholdMode::Relative(step as f64 / 20.0)).unwrap();
                assert!(v >= 0.0);
                assert!(v <= last, "{kind}");
                last = v;
            }
        }
    }
}
