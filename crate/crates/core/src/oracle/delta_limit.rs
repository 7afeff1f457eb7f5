//! Shrinking-σ harness for the delta-posterior equivalence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{make_leak_split, LeakScheme, LeakSplit, StepSequence};
use crate::distributions::ElementKind;
use crate::error::{Error, Result};
use crate::models::{Family, ModelConfig, SequenceModel};
use crate::objectives::{delta_equivalence_elbo, DeltaEquivalence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaConvergenceTable {
    pub rows: Vec<DeltaEquivalence>,
    /// `gap(σ_k) / gap(σ_{k+1})`
    pub ratios: Vec<f64>,
    pub max_identity_residual: f64,
    pub non_smooth: bool,
}

pub fn delta_convergence(model: &SequenceModel, seq: &StepSequence, split: &LeakSplit, sigmas: &[f64]) -> Result<DeltaConvergenceTable> {
    if sigmas.is_empty() {
        return Err(Error::invalid("need at least one σ"));
    }
    if sigmas.iter().any(|s| !(*s > 0.0)) || sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("σ sequence must be positive and strictly decreasing"));
    }
    let rows = sigmas
        .iter()
        .map(|&s| delta_equivalence_elbo(seq, split, s, model))
        .collect::<Result<Vec<_>>>()?;
    let ratios = rows
        .windows(2)
        .map(|w| (w[0].elbo - w[0].delta_objective) / (w[1].elbo - w[1].delta_objective))
        .collect();
    Ok(DeltaConvergenceTable {
        max_identity_residual: rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max),
        non_smooth: rows.iter().any(|r| r.non_smooth),
        ratios,
        rows,
    })
}

/// Small DELTA-RNN (width 4, interleave U=2) with a random sequence of `steps` steps.
pub fn toy_delta_setup(steps: usize, seed: u64) -> Result<(SequenceModel, StepSequence, LeakSplit)> {
    let width = 4;
    let split = make_leak_split(width, LeakScheme::Interleave { u: 2 })?;
    let mut cfg = ModelConfig::new(Family::DeltaRnn, 4, 4).with_components(2);
    cfg.leak = Some(split.scheme.clone());
    let model = SequenceModel::new(&cfg, &[ElementKind::Continuous; 4], seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70f1);
    let values: Vec<f64> = (0..steps * width).map(|_| StandardNormal.sample(&mut rng)).collect();
    let seq = StepSequence::continuous(values, steps, width)?;
    Ok((model, seq, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_shrinks_gap_fourfold() {
        let (m, s, split) = toy_delta_setup(3, 1).unwrap();
        let t = delta_convergence(&m, &s, &split, &[0.1, 0.05, 0.025]).unwrap();
        assert!(t.max_identity_residual < 1e-10);
        for r in &t.ratios {
            assert!((3.0..=5.0).contains(r), "{t:?}");
        }
        let tiny = delta_convergence(&m, &s, &split, &[1e-3]).unwrap();
        assert!(tiny.rows[0].gap_per_step() < 1e-3);
    }

    #[test]
    fn sigma_order_checked() {
        let (m, s, split) = toy_delta_setup(2, 1).unwrap();
        assert!(delta_convergence(&m, &s, &split, &[0.05, 0.1]).is_err());
        assert!(delta_convergence(&m, &s, &split, &[0.1, -0.05]).is_err());
    }
}
