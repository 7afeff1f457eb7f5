//! Parameterized building blocks shared by the model families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::ElementKind;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    /// Elman cell, `h' = tanh(W [x, h] + b)`.
    Tanh,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let w = store.uniform(format!("{name}.w"), vec![outputs, inputs], bound, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), vec![outputs]));
        Self {
            w,
            b,
            inputs,
            outputs,
        }
    }

    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + if self.b.is_some() { self.outputs } else { 0 }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(self.w, self.b, x)
    }
}

/// A linear map whose output row `r` may only read a prefix of its input.
#[derive(Clone, Debug)]
pub struct PrefixLinear {
    pub lin: Linear,
    pub prefix: Vec<u32>,
}

impl PrefixLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.prefix_affine(self.lin.w, self.lin.b, x, &self.prefix)
    }
}

/// Recurrent cell with a learned initial state.
#[derive(Clone, Debug)]
pub struct Cell {
    pub kind: CellKind,
    pub inputs: usize,
    pub hidden: usize,
    pub gates: Linear,
    pub init: ParamId,
}

impl Cell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let gate_rows = match kind {
            CellKind::Lstm => 4 * hidden,
            CellKind::Tanh => hidden,
        };
        let gates = Linear::new(store, name, inputs + hidden, gate_rows, true, rng);
        if kind == CellKind::Lstm {
            // forget-gate bias
            let b = store.get_mut(gates.b.unwrap());
            b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        }
        let state_len = match kind {
            CellKind::Lstm => 2 * hidden,
            CellKind::Tanh => hidden,
        };
        let init = store.zeros(format!("{name}.init"), vec![state_len]);
        Self {
            kind,
            inputs,
            hidden,
            gates,
            init,
        }
    }

    pub fn gate_rows(&self) -> usize {
        self.gates.outputs
    }

    pub fn initial(&self, g: &mut Graph) -> Var {
        g.param(self.init)
    }

    /// The externally visible hidden vector of a state.
    pub fn output(&self, g: &mut Graph, state: Var) -> Var {
        match self.kind {
            CellKind::Lstm => g.slice(state, 0, self.hidden),
            CellKind::Tanh => state,
        }
    }

    /// Advance one step. `extra` is added to the gate pre-activations.
    pub fn step(&self, g: &mut Graph, x: Var, state: Var, extra: Option<Var>) -> Var {
        let h = self.output(g, state);
        let xh = g.concat(&[x, h]);
        let mut pre = self.gates.forward(g, xh);
        if let Some(e) = extra {
            pre = g.add(pre, e);
        }
        match self.kind {
            CellKind::Lstm => {
                let c = g.slice(state, self.hidden, self.hidden);
                g.lstm(pre, c)
            }
            CellKind::Tanh => g.tanh(pre),
        }
    }

    pub fn num_params(&self) -> usize {
        self.gates.num_params() + self.initial_len()
    }

    fn initial_len(&self) -> usize {
        match self.kind {
            CellKind::Lstm => 2 * self.hidden,
            CellKind::Tanh => self.hidden,
        }
    }
}

/// Which distribution a head slot parameterizes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Gmm { components: usize },
    Bernoulli,
}

impl HeadKind {
    pub fn for_element(kind: ElementKind, components: usize) -> Self {
        match kind {
            ElementKind::Continuous => HeadKind::Gmm { components },
            ElementKind::Binary => HeadKind::Bernoulli,
        }
    }

    pub fn width(self) -> usize {
        match self {
            HeadKind::Gmm { components } => 3 * components,
            HeadKind::Bernoulli => 1,
        }
    }
}

/// Handle to one element's emitted parameters inside a graph.
#[derive(Copy, Clone, Debug)]
pub struct Head {
    pub var: Var,
    pub kind: HeadKind,
}

impl Head {
    pub fn log_prob(&self, g: &mut Graph, x: f64) -> Var {
        match self.kind {
            HeadKind::Gmm { .. } => g.gmm_logpdf(self.var, x),
            HeadKind::Bernoulli => g.bernoulli_logpmf(self.var, x),
        }
    }
}

/// Spread the initial component means over [-1, 1] so mixtures start asymmetric.
pub fn spread_mixture_means(bias: &mut [f64], kinds: &[HeadKind]) {
    let mut off = 0;
    for k in kinds {
        if let HeadKind::Gmm { components } = *k {
            for j in 0..components {
                bias[off + components + j] = if components > 1 {
                    j as f64 / (components - 1) as f64 * 2.0 - 1.0
                } else {
                    0.0
                };
            }
        }
        off += k.width();
    }
}

/// One affine map from a feature vector to the parameters of several element heads.
#[derive(Clone, Debug)]
pub struct ElementHeads {
    pub lin: Linear,
    pub kinds: Vec<HeadKind>,
}

impl ElementHeads {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        features: usize,
        kinds: Vec<HeadKind>,
        rng: &mut R,
    ) -> Self {
        let outputs = kinds.iter().map(|k| k.width()).sum();
        let lin = Linear::new(store, name, features, outputs, true, rng);
        spread_mixture_means(store.get_mut(lin.b.unwrap()), &kinds);
        Self { lin, kinds }
    }

    pub fn num_params(&self) -> usize {
        self.lin.num_params()
    }

    pub fn forward(&self, g: &mut Graph, features: Var) -> Vec<Head> {
        let raw = self.lin.forward(g, features);
        if self.kinds.len() == 1 {
            return vec![Head {
                var: raw,
                kind: self.kinds[0],
            }];
        }
        let mut off = 0;
        self.kinds
            .iter()
            .map(|&kind| {
                let var = g.slice(raw, off, kind.width());
                off += kind.width();
                Head { var, kind }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_parameter_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
        assert_eq!(lin.num_params(), 8);
        assert_eq!(store.num_scalars(), 8);
    }

    #[test]
    fn single_gaussian_head_parameter_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 3, 2, true, &mut rng);
        let before = store.num_scalars();
        let heads = ElementHeads::new(
            &mut store,
            "h",
            4,
            vec![HeadKind::Gmm { components: 1 }],
            &mut rng,
        );
        assert_eq!(store.num_scalars() - before, 4 * 3 + 3);
        assert_eq!(heads.num_params() + lin.num_params(), store.num_scalars());
    }

    #[test]
    fn cell_counts() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Cell::new(&mut store, "c", CellKind::Lstm, 3, 5, &mut rng);
        assert_eq!(c.num_params(), 4 * 5 * (3 + 5) + 4 * 5 + 2 * 5);
        assert_eq!(store.num_scalars(), c.num_params());
    }
}
