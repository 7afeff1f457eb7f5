//! Step-level recurrences: the deterministic encoder of the RNN families and
//! the latent-variable recurrences of the SRNN families.

use rand::Rng;

use super::config::{ModelConfig, SrnnVariant};
use super::layers::{Cell, Linear};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Sample `z_t` from the approximate posterior (needs the whole sequence).
    Posterior,
    /// Sample `z_t` from the prior; step `t` never reads `x_{>=t}`.
    Prior,
}

#[derive(Clone, Debug)]
pub struct DetBackbone {
    pub cell: Cell,
}

impl DetBackbone {
    pub fn new<R: Rng>(store: &mut ParamStore, inputs: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        Self {
            cell: Cell::new(store, "rnn", cfg.cell, inputs, cfg.hidden, rng),
        }
    }

    pub fn context_dim(&self) -> usize {
        self.cell.hidden
    }

    /// `contexts[t]` summarizes `inputs[..t]`; the first is the learned initial state.
    pub fn run(&self, g: &mut Graph, inputs: &[Var]) -> Vec<Var> {
        let mut state = self.cell.initial(g);
        let mut contexts = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            contexts.push(self.cell.output(g, state));
            if t + 1 < inputs.len() {
                state = self.cell.step(g, *x, state, None);
            }
        }
        contexts
    }
}

/// Per-step latent parameters and the draw used.
#[derive(Clone, Debug)]
pub struct LatentStep {
    pub prior_mean: Var,
    pub prior_log_scale: Var,
    pub post: Option<(Var, Var)>,
    pub z: Var,
    pub noise: Vec<f64>,
}

/// Predicts the backward state from `z_t` with a diagonal Gaussian whose mean is
/// `tanh(W z + b)` and whose log-scale is a free vector.
#[derive(Clone, Debug)]
pub struct AuxDecoder {
    pub lin: Linear,
    pub log_scale: ParamId,
}

impl AuxDecoder {
    pub fn mean(&self, g: &mut Graph, z: Var) -> Var {
        let a = self.lin.forward(g, z);
        g.tanh(a)
    }

    pub fn log_scale(&self, g: &mut Graph) -> Var {
        g.param(self.log_scale)
    }
}

#[derive(Clone, Debug)]
pub struct StochBackbone {
    pub variant: SrnnVariant,
    pub latent_dim: usize,
    pub fwd: Cell,
    pub bwd: Cell,
    pub prior: Linear,
    pub post: Linear,
    /// Emission recurrence of the simplified variant.
    pub emit_rnn: Option<Cell>,
    /// Auxiliary reconstruction head of the z-forcing variant.
    pub aux: Option<AuxDecoder>,
}

pub struct StochRun {
    pub contexts: Vec<Var>,
    pub latent: Vec<LatentStep>,
    pub forward_states: Vec<Var>,
    pub backward_states: Option<Vec<Var>>,
}

impl StochBackbone {
    pub fn new<R: Rng>(store: &mut ParamStore, inputs: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let h = cfg.hidden;
        let dz = cfg.latent_dim.unwrap_or(1);
        let variant = cfg.srnn_variant;
        let fwd_in = match variant {
            SrnnVariant::ZForcing => inputs + dz,
            SrnnVariant::Simplified => inputs,
        };
        let fwd = Cell::new(store, "srnn.fwd", cfg.cell, fwd_in, h, rng);
        let bwd = Cell::new(store, "srnn.bwd", cfg.cell, inputs, h, rng);
        let prior = Linear::new(store, "srnn.prior", h, 2 * dz, true, rng);
        let post = Linear::new(store, "srnn.post", 2 * h, 2 * dz, true, rng);
        let emit_rnn = (variant == SrnnVariant::Simplified)
            .then(|| Cell::new(store, "srnn.emit", cfg.cell, h + dz, h, rng));
        let aux = (variant == SrnnVariant::ZForcing).then(|| AuxDecoder {
            lin: Linear::new(store, "srnn.aux", dz, h, true, rng),
            log_scale: store.zeros("srnn.aux.log_scale", vec![h]),
        });
        Self {
            variant,
            latent_dim: dz,
            fwd,
            bwd,
            prior,
            post,
            emit_rnn,
            aux,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self.variant {
            SrnnVariant::ZForcing => self.fwd.hidden + self.latent_dim,
            SrnnVariant::Simplified => self.fwd.hidden,
        }
    }

    fn split_gaussian(&self, g: &mut Graph, raw: Var) -> (Var, Var) {
        let d = self.latent_dim;
        (g.slice(raw, 0, d), g.slice(raw, d, d))
    }

    /// `noise` holds `inputs.len() * latent_dim` standard-normal draws.
    pub fn run(&self, g: &mut Graph, inputs: &[Var], mode: Mode, noise: &[f64]) -> StochRun {
        let t_len = inputs.len();
        let dz = self.latent_dim;
        assert_eq!(noise.len(), t_len * dz, "noise length");

        let backward_states = (mode == Mode::Posterior).then(|| {
            let mut out = vec![None; t_len];
            let mut state = self.bwd.initial(g);
            for t in (0..t_len).rev() {
                state = self.bwd.step(g, inputs[t], state, None);
                out[t] = Some(self.bwd.output(g, state));
            }
            out.into_iter().map(Option::unwrap).collect::<Vec<Var>>()
        });

        let mut v = self.fwd.initial(g);
        let mut emit_state = self.emit_rnn.as_ref().map(|c| c.initial(g));
        let mut contexts = Vec::with_capacity(t_len);
        let mut latent = Vec::with_capacity(t_len);
        let mut forward_states = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let vh = self.fwd.output(g, v);
            forward_states.push(vh);
            let prior_raw = self.prior.forward(g, vh);
            let (pm, ps) = self.split_gaussian(g, prior_raw);
            let eps = &noise[t * dz..(t + 1) * dz];
            let (post, z) = match &backward_states {
                Some(b) => {
                    let enc_in = g.concat(&[vh, b[t]]);
                    let q_raw = self.post.forward(g, enc_in);
                    let (qm, qs) = self.split_gaussian(g, q_raw);
                    let z = g.reparam(qm, qs, eps);
                    (Some((qm, qs)), z)
                }
                None => (None, g.reparam(pm, ps, eps)),
            };
            latent.push(LatentStep {
                prior_mean: pm,
                prior_log_scale: ps,
                post,
                z,
                noise: eps.to_vec(),
            });
            match self.variant {
                SrnnVariant::ZForcing => {
                    contexts.push(g.concat(&[vh, z]));
                    if t + 1 < t_len {
                        let xz = g.concat(&[inputs[t], z]);
                        v = self.fwd.step(g, xz, v, None);
                    }
                }
                SrnnVariant::Simplified => {
                    let cell = self.emit_rnn.as_ref().unwrap();
                    let vz = g.concat(&[vh, z]);
                    let s = cell.step(g, vz, emit_state.unwrap(), None);
                    emit_state = Some(s);
                    contexts.push(cell.output(g, s));
                    if t + 1 < t_len {
                        v = self.fwd.step(g, inputs[t], v, None);
                    }
                }
            }
        }
        StochRun {
            contexts,
            latent,
            forward_states,
            backward_states,
        }
    }
}
