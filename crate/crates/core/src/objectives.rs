//! Training objectives. Every objective is a quantity to maximize; the trainer
//! negates it.

use serde::{Deserialize, Serialize};

use crate::datasets::{LeakSplit, StepSequence};
use crate::distributions::{diag_gauss_kernel, log_sum_exp, DistParams, GaussianMixtureParams};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::models::{Backbone, Emitter, Family, ForwardResult, Head, HeadKind, Mode, SequenceModel};

pub const KL_ANNEAL_START: f64 = 0.2;
pub const KL_ANNEAL_STEP: f64 = 5e-5;

/// Values of one objective evaluation. `total = Σ recon − kl_coeff · Σ kl + aux`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub recon: Vec<f64>,
    /// Nonnegative per-step divergences (empty for deterministic families).
    pub kl: Vec<f64>,
    pub kl_coeff: f64,
    pub aux: f64,
}

impl ObjectiveBreakdown {
    pub fn recon_total(&self) -> f64 {
        self.recon.iter().sum()
    }

    pub fn kl_total(&self) -> f64 {
        self.kl.iter().sum()
    }
}

/// A breakdown plus the graph node holding `total`.
#[derive(Clone, Debug)]
pub struct Objective {
    pub breakdown: ObjectiveBreakdown,
    pub node: Var,
}

pub fn kl_anneal_coeff(update: u64) -> f64 {
    (KL_ANNEAL_START + KL_ANNEAL_STEP * update as f64).min(1.0)
}

/// Exact log-likelihood of a deterministic-family forward pass.
pub fn mle_loss(result: &mut ForwardResult, seq: &StepSequence) -> Result<Objective> {
    if result.latent.is_some() {
        return Err(Error::WrongObjective(format!(
            "{} has latent variables; use the ELBO",
            result.family
        )));
    }
    let steps = result.step_log_prob_nodes(seq)?;
    let node = result.graph.sum(&steps);
    let recon = steps.iter().map(|&v| result.graph.scalar(v)).collect();
    Ok(Objective {
        breakdown: ObjectiveBreakdown {
            total: result.graph.scalar(node),
            recon,
            kl: Vec::new(),
            kl_coeff: 0.0,
            aux: 0.0,
        },
        node,
    })
}

fn kl_nodes(result: &mut ForwardResult) -> Result<Vec<Var>> {
    let lt = result
        .latent
        .as_ref()
        .ok_or_else(|| Error::WrongObjective(format!("{} has no latent trace", result.family)))?;
    if lt.mode != Mode::Posterior {
        return Err(Error::WrongObjective("the ELBO needs a posterior-mode pass".into()));
    }
    let pairs: Vec<_> = lt
        .steps
        .iter()
        .map(|s| (s.post.unwrap(), (s.prior_mean, s.prior_log_scale)))
        .collect();
    Ok(pairs
        .into_iter()
        .map(|((qm, qs), (pm, ps))| result.graph.gauss_kl(qm, qs, pm, ps))
        .collect())
}

/// Single-draw ELBO with the KL in closed form. For flat families the KL
/// terms are per frame, the reconstruction terms per step.
pub fn elbo_loss(result: &mut ForwardResult, seq: &StepSequence, kl_coeff: f64) -> Result<Objective> {
    objective_with_aux(result, seq, kl_coeff, 0.0, 0.0)
}

/// ELBO plus the weighted auxiliary term.
pub fn objective_with_aux(
    result: &mut ForwardResult,
    seq: &StepSequence,
    kl_coeff: f64,
    alpha: f64,
    beta: f64,
) -> Result<Objective> {
    if !(0.0..=1.0).contains(&kl_coeff) {
        return Err(Error::invalid(format!("kl_coeff {kl_coeff} outside [0, 1]")));
    }
    let kls = kl_nodes(result)?;
    let steps = result.step_log_prob_nodes(seq)?;
    let g = &mut result.graph;
    let recon_node = g.sum(&steps);
    let kl_node = g.sum(&kls);
    let kl_scaled = g.scale(kl_node, -kl_coeff);
    let aux = if alpha == 0.0 && beta == 0.0 {
        None
    } else {
        Some(zforcing_aux_loss(result, alpha, beta)?)
    };
    let g = &mut result.graph;
    let node = match aux {
        Some(a) => g.sum(&[recon_node, kl_scaled, a]),
        None => g.sum(&[recon_node, kl_scaled]),
    };
    Ok(Objective {
        breakdown: ObjectiveBreakdown {
            total: g.scalar(node),
            recon: steps.iter().map(|&v| g.scalar(v)).collect(),
            kl: kls.iter().map(|&v| g.scalar(v)).collect(),
            kl_coeff,
            aux: aux.map_or(0.0, |a| g.scalar(a)),
        },
        node,
    })
}

/// `α · log N(sg(v←_t); dec(z_t)) + β · log N(v←_t; sg(dec(z_t)))` summed over steps.
/// With `α = β = 0` the result is a constant zero with no graph dependencies.
pub fn zforcing_aux_loss(result: &mut ForwardResult, alpha: f64, beta: f64) -> Result<Var> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid("auxiliary weights must be nonnegative"));
    }
    let dec = result
        .aux
        .clone()
        .ok_or_else(|| Error::WrongObjective("auxiliary loss needs the z-forcing variant".into()))?;
    let back = result
        .hidden
        .backward
        .clone()
        .ok_or_else(|| Error::WrongObjective("auxiliary loss needs backward states".into()))?;
    let zs: Vec<Var> = result.latent.as_ref().unwrap().steps.iter().map(|s| s.z).collect();
    let g = &mut result.graph;
    if alpha == 0.0 && beta == 0.0 {
        return Ok(g.constant(&[0.0]));
    }
    let mut terms = Vec::new();
    for (z, b) in zs.into_iter().zip(back) {
        let mean = dec.mean(g, z);
        let ls = dec.log_scale(g);
        if alpha != 0.0 {
            let target = g.stop_grad(b);
            let lp = g.diag_gauss_logpdf(mean, ls, target);
            terms.push(g.scale(lp, alpha));
        }
        if beta != 0.0 {
            let m = g.stop_grad(mean);
            let s = g.stop_grad(ls);
            let lp = g.diag_gauss_logpdf(m, s, b);
            terms.push(g.scale(lp, beta));
        }
    }
    Ok(g.sum(&terms))
}

/// Nodes and weights for `∫ e^{-u²} f(u) du ≈ Σ w_k f(u_k)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Result of comparing the matched-variance ELBO with the leaked-subset objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEquivalence {
    pub sigma: f64,
    pub elbo: f64,
    pub delta_objective: f64,
    /// Largest per-step `|E_q log N(x^a; z, σ²) + H(q)|`.
    pub identity_residual: f64,
    pub steps: usize,
    /// σ is not small relative to the narrowest head scale.
    pub non_smooth: bool,
}

impl DeltaEquivalence {
    pub fn gap_per_step(&self) -> f64 {
        (self.elbo - self.delta_objective).abs() / self.steps as f64
    }
}

fn head_value(kind: HeadKind, raw: &[f64]) -> DistParams {
    match kind {
        HeadKind::Gmm { .. } => DistParams::Gmm(GaussianMixtureParams::from_raw(raw).unwrap()),
        HeadKind::Bernoulli => DistParams::Bernoulli(crate::distributions::BernoulliParams { logit: raw[0] }),
    }
}

fn min_scale(p: &DistParams) -> f64 {
    match p {
        DistParams::Gmm(g) => g.scales().into_iter().fold(f64::INFINITY, f64::min),
        _ => f64::INFINITY,
    }
}

/// Builds, from a DELTA-RNN, the latent model whose posterior is `N(x^a, σ²I)`,
/// whose decoder emits `x^a ~ N(z, σ²I)` and `x^b` from the part-b heads fed
/// with `z`, and whose prior is the part-a density; returns its ELBO (all
/// expectations by Gauss–Hermite quadrature) next to the leaked-subset objective.
pub fn delta_equivalence_elbo(
    seq: &StepSequence,
    split: &LeakSplit,
    sigma: f64,
    shared_model: &SequenceModel,
) -> Result<DeltaEquivalence> {
    delta_equivalence_with_nodes(seq, split, sigma, shared_model, 16)
}

pub fn delta_equivalence_with_nodes(
    seq: &StepSequence,
    split: &LeakSplit,
    sigma: f64,
    shared_model: &SequenceModel,
    nodes: usize,
) -> Result<DeltaEquivalence> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("σ must be positive, got {sigma}")));
    }
    if shared_model.family() != Family::DeltaRnn {
        return Err(Error::invalid("the shared model must be a DELTA-RNN"));
    }
    let (Backbone::Det(backbone), Emitter::Delta(delta)) = (shared_model.backbone(), shared_model.emitter()) else {
        unreachable!("DELTA-RNN layout")
    };
    if &delta.split != split {
        return Err(Error::invalid("split differs from the shared model's split"));
    }
    if split.a.iter().any(|&i| seq.kinds()[i] != crate::distributions::ElementKind::Continuous) {
        return Err(Error::invalid("the leaked subset must be continuous"));
    }
    let d = split.a.len();
    let (u, w) = gauss_hermite(nodes);
    let norm = std::f64::consts::PI.powf(-0.5 * d as f64);
    let total_points = nodes.pow(d as u32);

    let mut g = crate::graph::Graph::new(shared_model.params());
    let inputs: Vec<Var> = (0..seq.steps()).map(|t| g.constant(seq.step(t))).collect();
    let contexts = backbone.run(&mut g, &inputs);

    let (mut elbo, mut delta_obj, mut residual) = (0.0, 0.0, 0.0f64);
    let mut narrowest = f64::INFINITY;
    for (t, &ctx) in contexts.iter().enumerate() {
        let step = seq.step(t);
        let xa: Vec<f64> = split.a.iter().map(|&i| step[i]).collect();
        let xb: Vec<f64> = split.b.iter().map(|&i| step[i]).collect();
        let a_heads: Vec<DistParams> = delta
            .part_a_heads(&mut g, ctx)
            .iter()
            .map(|h| head_value(h.kind, g.value(h.var)))
            .collect();
        let b_heads_at = |g: &mut crate::graph::Graph, z: &[f64]| -> Vec<DistParams> {
            let leaked = g.constant(z);
            let hs: Vec<Head> = delta.part_b_heads(g, ctx, leaked);
            hs.iter().map(|h| head_value(h.kind, g.value(h.var))).collect()
        };
        let log_a = |z: &[f64]| -> f64 { a_heads.iter().zip(z).map(|(h, &x)| h.log_prob(x).unwrap()).sum() };
        let log_b = |heads: &[DistParams]| -> f64 { heads.iter().zip(&xb).map(|(h, &x)| h.log_prob(x).unwrap()).sum() };

        let b_exact = b_heads_at(&mut g, &xa);
        narrowest = a_heads.iter().chain(&b_exact).map(min_scale).fold(narrowest, f64::min);
        delta_obj += log_a(&xa) + log_b(&b_exact);

        // x^a block: E_q log N(x^a; z, σ²I) + H(q)
        let ls = vec![sigma.ln(); d];
        let mut recon_a = 0.0;
        let mut rest = 0.0;
        let mut idx = vec![0usize; d];
        let mut z = vec![0.0; d];
        for _ in 0..total_points {
            let mut weight = norm;
            for k in 0..d {
                z[k] = xa[k] + sigma * std::f64::consts::SQRT_2 * u[idx[k]];
                weight *= w[idx[k]];
            }
            recon_a += weight * diag_gauss_kernel(&z, &ls, &xa, None);
            let bh = b_heads_at(&mut g, &z);
            rest += weight * (log_b(&bh) + log_a(&z));
            for k in 0..d {
                idx[k] += 1;
                if idx[k] < nodes {
                    break;
                }
                idx[k] = 0;
            }
        }
        let entropy = d as f64 * (0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + sigma.ln());
        let block = recon_a + entropy;
        residual = residual.max(block.abs());
        elbo += block + rest;
    }
    Ok(DeltaEquivalence {
        sigma,
        elbo,
        delta_objective: delta_obj,
        identity_residual: residual,
        steps: seq.steps(),
        non_smooth: sigma >= narrowest,
    })
}

/// Per-sequence totals summed in order; equals the objective on the whole batch.
pub fn batch_total(breakdowns: &[ObjectiveBreakdown]) -> f64 {
    breakdowns.iter().map(|b| b.total).sum()
}

/// `log ∫ exp f` helper used by bound estimators.
pub fn log_mean_exp_weights(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}
