use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::backbone::{AuxDecoder, DetBackbone, LatentStep, Mode, StochBackbone};
use super::config::{Family, LowDecoder, ModelConfig};
use super::emitters::{head_kinds, Delta, Emitter, Factorized, HierMade, HierRecurrent};
use super::layers::{Head, HeadKind};
use crate::datasets::{make_leak_split, StepSequence};
use crate::distributions::{BernoulliParams, DiagGaussianParams, DistParams, ElementKind, GaussianMixtureParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub enum Backbone {
    Det(DetBackbone),
    Stoch(StochBackbone),
}

/// A constructed member of the model zoo together with its parameters.
#[derive(Clone, Debug)]
pub struct SequenceModel {
    cfg: ModelConfig,
    kinds: Vec<ElementKind>,
    seed: u64,
    store: ParamStore,
    backbone: Backbone,
    emitter: Emitter,
}

/// Per-step latent parameters and draws of one forward pass.
#[derive(Clone, Debug)]
pub struct LatentTrace {
    pub dim: usize,
    pub steps: Vec<LatentStep>,
    pub mode: Mode,
}

/// Graph handles to the internal states of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct HiddenTrace {
    /// Emission context for each (backbone) step.
    pub contexts: Vec<Var>,
    /// `v→` read when emitting each step (stochastic families).
    pub forward: Vec<Var>,
    /// `v←_t` (stochastic families, posterior mode).
    pub backward: Option<Vec<Var>>,
    /// `g_{t,i}` of the recurrent low-level decoder.
    pub low: Vec<Vec<Var>>,
}

pub struct ForwardResult<'m> {
    pub graph: Graph<'m>,
    /// `heads[t][i]` for every step and element.
    pub heads: Vec<Vec<Head>>,
    pub latent: Option<LatentTrace>,
    pub hidden: HiddenTrace,
    pub aux: Option<AuxDecoder>,
    pub family: Family,
}

impl SequenceModel {
    pub fn new(cfg: &ModelConfig, kinds: &[ElementKind], seed: u64) -> Result<Self> {
        let problems = cfg.problems(kinds);
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fam = cfg.family;
        let heads = head_kinds(kinds, cfg.head.components);
        let inputs = if fam.is_flat() { 1 } else { kinds.len() };
        let backbone = if fam.is_stochastic() {
            Backbone::Stoch(StochBackbone::new(&mut store, inputs, cfg, &mut rng))
        } else {
            Backbone::Det(DetBackbone::new(&mut store, inputs, cfg, &mut rng))
        };
        let ctx = match &backbone {
            Backbone::Det(b) => b.context_dim(),
            Backbone::Stoch(b) => b.context_dim(),
        };
        let e = cfg.emit_hidden;
        let emitter = match fam {
            Family::FRnn | Family::FSrnn => {
                Emitter::Factorized(Factorized::new(&mut store, "out", ctx, e, &heads, &mut rng))
            }
            Family::RnnFlat | Family::SrnnFlat => {
                Emitter::Factorized(Factorized::new(&mut store, "out", ctx, e, &heads[..1], &mut rng))
            }
            Family::DeltaRnn => {
                let split = make_leak_split(kinds.len(), cfg.leak.clone().unwrap())?;
                Emitter::Delta(Delta::new(&mut store, ctx, e, &heads, split, &mut rng))
            }
            Family::RnnHier | Family::SrnnHier => match cfg.low_decoder.unwrap() {
                LowDecoder::Recurrent => Emitter::HierRecurrent(HierRecurrent::new(
                    &mut store, cfg.cell, ctx, e, &heads, &mut rng,
                )),
                LowDecoder::MaskedMlp => {
                    Emitter::HierMade(HierMade::new(&mut store, ctx, e, &heads, &mut rng))
                }
            },
        };
        Ok(Self {
            cfg: cfg.clone(),
            kinds: kinds.to_vec(),
            seed,
            store,
            backbone,
            emitter,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn family(&self) -> Family {
        self.cfg.family
    }

    pub fn kinds(&self) -> &[ElementKind] {
        &self.kinds
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    /// Seed the parameters were initialized from.
    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn emitter(&self) -> &Emitter {
        &self.emitter
    }

    pub fn is_stochastic(&self) -> bool {
        self.cfg.family.is_stochastic()
    }

    pub fn latent_dim(&self) -> Option<usize> {
        match &self.backbone {
            Backbone::Stoch(b) => Some(b.latent_dim),
            Backbone::Det(_) => None,
        }
    }

    /// Number of recurrence steps the backbone takes for a sequence of `steps` steps.
    pub fn backbone_steps(&self, steps: usize) -> usize {
        if self.cfg.family.is_flat() {
            steps * self.width()
        } else {
            steps
        }
    }

    /// Standard-normal draws a forward pass over `steps` steps consumes.
    pub fn noise_len(&self, steps: usize) -> usize {
        self.latent_dim().map_or(0, |d| d * self.backbone_steps(steps))
    }

    pub fn sample_noise<R: Rng>(&self, steps: usize, rng: &mut R) -> Vec<f64> {
        (0..self.noise_len(steps)).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Build the graph for one sequence. Deterministic families ignore `mode`
    /// and take an empty `noise` slice.
    pub fn forward(&self, seq: &StepSequence, mode: Mode, noise: &[f64]) -> Result<ForwardResult<'_>> {
        if seq.kinds() != self.kinds.as_slice() {
            return Err(Error::shape(
                format!("{} elements of kinds {:?}", self.width(), self.kinds),
                format!("{} elements of kinds {:?}", seq.width(), seq.kinds()),
            ));
        }
        let need = self.noise_len(seq.steps());
        if noise.len() != need {
            return Err(Error::shape(format!("{need} noise draws"), noise.len()));
        }
        let mut g = Graph::new(&self.store);
        let flat = self.cfg.family.is_flat();
        let inputs: Vec<Var> = if flat {
            seq.values().iter().map(|v| g.constant(&[*v])).collect()
        } else {
            (0..seq.steps()).map(|t| g.constant(seq.step(t))).collect()
        };
        let mut hidden = HiddenTrace::default();
        let mut latent = None;
        let mut aux = None;
        match &self.backbone {
            Backbone::Det(b) => hidden.contexts = b.run(&mut g, &inputs),
            Backbone::Stoch(b) => {
                let run = b.run(&mut g, &inputs, mode, noise);
                hidden.contexts = run.contexts;
                hidden.forward = run.forward_states;
                hidden.backward = run.backward_states;
                latent = Some(LatentTrace {
                    dim: b.latent_dim,
                    steps: run.latent,
                    mode,
                });
                aux = b.aux.clone();
            }
        }
        let l = self.width();
        let heads = if flat {
            let per_frame: Vec<Head> = hidden
                .contexts
                .iter()
                .enumerate()
                .map(|(k, &c)| self.emitter.emit(&mut g, c, &seq.values()[k..k + 1]).0[0])
                .collect();
            per_frame.chunks(l).map(|c| c.to_vec()).collect()
        } else {
            let mut heads = Vec::with_capacity(seq.steps());
            for t in 0..seq.steps() {
                let (h, low) = self.emitter.emit(&mut g, hidden.contexts[t], seq.step(t));
                heads.push(h);
                if !low.is_empty() {
                    hidden.low.push(low);
                }
            }
            heads
        };
        Ok(ForwardResult {
            graph: g,
            heads,
            latent,
            hidden,
            aux,
            family: self.cfg.family,
        })
    }

    /// Ancestral sample of `steps` steps; stochastic families draw `z` from the prior.
    pub fn generate(&self, steps: usize, seed: u64) -> Result<StepSequence> {
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = self.sample_noise(steps, &mut rng);
        let l = self.width();
        let mut values = vec![0.0; steps * l];
        let groups: Vec<Vec<usize>> = match &self.emitter {
            Emitter::Factorized(_) if !self.cfg.family.is_flat() => vec![(0..l).collect()],
            Emitter::Delta(d) => vec![d.split.a.clone(), d.split.b.clone()],
            _ => (0..l).map(|i| vec![i]).collect(),
        };
        for t in 0..steps {
            for group in &groups {
                let prefix = StepSequence::new(values[..(t + 1) * l].to_vec(), t + 1, self.kinds.clone())?;
                let res = self.forward(&prefix, Mode::Prior, &noise[..self.noise_len(t + 1)])?;
                for &i in group {
                    let head = res.head_params(t, i);
                    let u: f64 = rng.random();
                    let n: f64 = rng.sample(StandardNormal);
                    values[t * l + i] = head.sample(u, n);
                }
            }
        }
        StepSequence::new(values, steps, self.kinds.clone())
    }
}

impl LatentTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl ForwardResult<'_> {
    pub fn steps(&self) -> usize {
        self.heads.len()
    }

    pub fn head_raw(&self, t: usize, i: usize) -> &[f64] {
        self.graph.value(self.heads[t][i].var)
    }

    pub fn head_params(&self, t: usize, i: usize) -> DistParams {
        let h = self.heads[t][i];
        let raw = self.graph.value(h.var);
        match h.kind {
            HeadKind::Gmm { .. } => DistParams::Gmm(GaussianMixtureParams::from_raw(raw).unwrap()),
            HeadKind::Bernoulli => DistParams::Bernoulli(BernoulliParams { logit: raw[0] }),
        }
    }

    pub fn step_heads(&self, t: usize) -> Vec<DistParams> {
        (0..self.heads[t].len()).map(|i| self.head_params(t, i)).collect()
    }

    /// Prior parameters of the latent at backbone step `t`.
    pub fn prior(&self, t: usize) -> Result<DiagGaussianParams> {
        let lt = self.latent.as_ref().ok_or_else(|| Error::WrongObjective("model has no latent trace".into()))?;
        let s = &lt.steps[t];
        Ok(DiagGaussianParams {
            mean: self.graph.value(s.prior_mean).to_vec(),
            log_scale: self.graph.value(s.prior_log_scale).to_vec(),
        })
    }

    /// Posterior parameters of the latent at backbone step `t`; prior-mode passes have none.
    pub fn posterior(&self, t: usize) -> Result<DiagGaussianParams> {
        let lt = self.latent.as_ref().ok_or_else(|| Error::WrongObjective("model has no latent trace".into()))?;
        let (m, s) = lt.steps[t]
            .post
            .ok_or_else(|| Error::invalid("posterior parameters requested from a prior-mode pass"))?;
        Ok(DiagGaussianParams {
            mean: self.graph.value(m).to_vec(),
            log_scale: self.graph.value(s).to_vec(),
        })
    }

    pub fn z(&self, t: usize) -> Option<&[f64]> {
        self.latent.as_ref().map(|lt| self.graph.value(lt.steps[t].z))
    }

    /// One scalar node per step holding `Σ_i log p(x_{t,i} | ·)`.
    pub fn step_log_prob_nodes(&mut self, seq: &StepSequence) -> Result<Vec<Var>> {
        if seq.steps() != self.heads.len() {
            return Err(Error::shape(format!("{} steps", self.heads.len()), seq.steps()));
        }
        let mut out = Vec::with_capacity(seq.steps());
        for t in 0..seq.steps() {
            let terms: Vec<Var> = self.heads[t]
                .iter()
                .zip(seq.step(t))
                .map(|(h, &x)| h.log_prob(&mut self.graph, x))
                .collect();
            out.push(self.graph.sum(&terms));
        }
        Ok(out)
    }

    /// Per-step log-probabilities as plain numbers.
    pub fn step_log_probs(&mut self, seq: &StepSequence) -> Result<Vec<f64>> {
        let nodes = self.step_log_prob_nodes(seq)?;
        Ok(nodes.iter().map(|&v| self.graph.scalar(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LeakScheme;

    fn seq(steps: usize, width: usize, seed: u64) -> StepSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..steps * width).map(|_| rng.sample(StandardNormal)).collect();
        StepSequence::continuous(v, steps, width).unwrap()
    }

    fn configs() -> Vec<ModelConfig> {
        let mut out: Vec<ModelConfig> = Family::ALL
            .iter()
            .map(|&f| ModelConfig::new(f, 5, 4).with_components(3))
            .collect();
        let mut made = ModelConfig::new(Family::SrnnHier, 5, 6).with_components(2);
        made.low_decoder = Some(LowDecoder::MaskedMlp);
        out.push(made);
        let mut simple = ModelConfig::new(Family::FSrnn, 5, 4).with_components(2);
        simple.srnn_variant = super::super::SrnnVariant::Simplified;
        out.push(simple);
        out
    }

    fn bits(res: &ForwardResult, t: usize, i: usize) -> Vec<u64> {
        res.head_raw(t, i).iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn step_heads_ignore_future_steps() {
        let (t_len, l) = (3, 4);
        for cfg in configs() {
            let model = SequenceModel::new(&cfg, &[ElementKind::Continuous; 4], 7).unwrap();
            let base = seq(t_len, l, 1);
            let noise = model.sample_noise(t_len, &mut ChaCha8Rng::seed_from_u64(2));
            let r0 = model.forward(&base, Mode::Prior, &noise).unwrap();
            for t in 0..t_len {
                let mut v = base.values().to_vec();
                for x in &mut v[t * l..] {
                    *x += 0.37;
                }
                let p = StepSequence::continuous(v, t_len, l).unwrap();
                let r1 = model.forward(&p, Mode::Prior, &noise).unwrap();
                for i in 0..l {
                    if cfg.family == Family::DeltaRnn || cfg.family.is_hier() || cfg.family.is_flat() {
                        // within-step readers are checked separately; element 0 never reads x_t
                        if i > 0 {
                            continue;
                        }
                    }
                    if cfg.family == Family::DeltaRnn {
                        continue;
                    }
                    assert_eq!(bits(&r0, t, i), bits(&r1, t, i), "{} t={t} i={i}", cfg.family);
                }
            }
        }
    }

    #[test]
    fn element_heads_ignore_later_elements() {
        let (t_len, l) = (2, 4);
        for cfg in configs() {
            let model = SequenceModel::new(&cfg, &[ElementKind::Continuous; 4], 7).unwrap();
            let base = seq(t_len, l, 3);
            let noise = model.sample_noise(t_len, &mut ChaCha8Rng::seed_from_u64(2));
            let r0 = model.forward(&base, Mode::Prior, &noise).unwrap();
            for t in 0..t_len {
                for j in 0..l {
                    let p = base.with_value(t, j, base.get(t, j) + 0.5).unwrap();
                    let r1 = model.forward(&p, Mode::Prior, &noise).unwrap();
                    let blind: Vec<usize> = match cfg.family {
                        Family::FRnn | Family::FSrnn => (0..l).collect(),
                        Family::DeltaRnn => {
                            // part a never reads x_t; part b never reads x_t^b
                            let a = [0usize, 2];
                            if a.contains(&j) {
                                a.to_vec()
                            } else {
                                (0..l).collect()
                            }
                        }
                        _ => (0..=j).collect(),
                    };
                    for i in blind {
                        assert_eq!(bits(&r0, t, i), bits(&r1, t, i), "{} t={t} j={j} i={i}", cfg.family);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_noise_posterior_uses_mean() {
        let cfg = ModelConfig::new(Family::FSrnn, 4, 3).with_components(2);
        let model = SequenceModel::new(&cfg, &[ElementKind::Continuous; 2], 1).unwrap();
        let s = seq(3, 2, 5);
        let noise = vec![0.0; model.noise_len(3)];
        let r = model.forward(&s, Mode::Posterior, &noise).unwrap();
        for t in 0..3 {
            assert_eq!(r.z(t).unwrap(), r.posterior(t).unwrap().mean.as_slice());
        }
        let r2 = model.forward(&s, Mode::Prior, &noise).unwrap();
        assert!(r2.posterior(0).is_err());
    }

    #[test]
    fn generation_is_seeded() {
        let mut cfg = ModelConfig::new(Family::DeltaRnn, 4, 3).with_components(2);
        cfg.leak = Some(LeakScheme::Interleave { u: 2 });
        let model = SequenceModel::new(&cfg, &[ElementKind::Continuous; 4], 1).unwrap();
        let a = model.generate(3, 9).unwrap();
        assert_eq!(a, model.generate(3, 9).unwrap());
        assert_eq!((a.steps(), a.width()), (3, 4));
        let cfg = ModelConfig::new(Family::SrnnFlat, 4, 3);
        let model = SequenceModel::new(&cfg, &[ElementKind::Binary; 3], 1).unwrap();
        let b = model.generate(4, 1).unwrap();
        assert!(b.values().iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}
