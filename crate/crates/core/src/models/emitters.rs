//! Within-step output decompositions: how the L element heads of one step are
//! produced from the step context (and, for the auto-regressive ones, from
//! earlier elements of the same step).

use rand::Rng;

use super::layers::{spread_mixture_means, Cell, CellKind, ElementHeads, Head, HeadKind, Linear, PrefixLinear};
use crate::datasets::LeakSplit;
use crate::distributions::ElementKind;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

/// Independent element heads given the context.
#[derive(Clone, Debug)]
pub struct Factorized {
    pub features: Linear,
    pub heads: ElementHeads,
}

impl Factorized {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        ctx: usize,
        emit: usize,
        kinds: &[HeadKind],
        rng: &mut R,
    ) -> Self {
        let features = Linear::new(store, &format!("{name}.feat"), ctx, emit, true, rng);
        let heads = ElementHeads::new(store, &format!("{name}.head"), emit, kinds.to_vec(), rng);
        Self { features, heads }
    }

    pub fn emit(&self, g: &mut Graph, ctx: Var) -> Vec<Head> {
        let f = self.features.forward(g, ctx);
        let f = g.tanh(f);
        self.heads.forward(g, f)
    }
}

/// Leaked-subset decomposition: part `a` from the context, part `b` from the
/// context plus a projection of the observed part-`a` values.
#[derive(Clone, Debug)]
pub struct Delta {
    pub split: LeakSplit,
    pub part_a: Factorized,
    pub leak_proj: Linear,
    pub part_b: Factorized,
}

impl Delta {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        ctx: usize,
        emit: usize,
        heads: &[HeadKind],
        split: LeakSplit,
        rng: &mut R,
    ) -> Self {
        let ka: Vec<HeadKind> = split.a.iter().map(|&i| heads[i]).collect();
        let kb: Vec<HeadKind> = split.b.iter().map(|&i| heads[i]).collect();
        let part_a = Factorized::new(store, "delta.a", ctx, emit, &ka, rng);
        let leak_proj = Linear::new(store, "delta.leak", split.a.len(), emit, true, rng);
        let part_b = Factorized::new(store, "delta.b", ctx + emit, emit, &kb, rng);
        Self {
            split,
            part_a,
            leak_proj,
            part_b,
        }
    }

    pub fn part_a_heads(&self, g: &mut Graph, ctx: Var) -> Vec<Head> {
        self.part_a.emit(g, ctx)
    }

    /// `leaked` holds the part-`a` values in split order.
    pub fn part_b_heads(&self, g: &mut Graph, ctx: Var, leaked: Var) -> Vec<Head> {
        let p = self.leak_proj.forward(g, leaked);
        let p = g.tanh(p);
        let joint = g.concat(&[ctx, p]);
        self.part_b.emit(g, joint)
    }

    /// Heads in natural element order.
    pub fn emit(&self, g: &mut Graph, ctx: Var, step: &[f64]) -> Vec<Head> {
        let a = self.part_a_heads(g, ctx);
        let leaked: Vec<f64> = self.split.a.iter().map(|&i| step[i]).collect();
        let leaked = g.constant(&leaked);
        let b = self.part_b_heads(g, ctx, leaked);
        let mut out = vec![None; self.split.width()];
        for (&i, h) in self.split.a.iter().zip(a) {
            out[i] = Some(h);
        }
        for (&i, h) in self.split.b.iter().zip(b) {
            out[i] = Some(h);
        }
        out.into_iter().map(Option::unwrap).collect()
    }
}

/// Low-level recurrence over the elements of a step. The context enters every
/// gate pre-activation; the input for element `i` is `x_{t,i-1}` (0 for `i = 0`).
#[derive(Clone, Debug)]
pub struct HierRecurrent {
    pub cell: Cell,
    pub ctx_gates: Linear,
    pub continuous: Option<ElementHeads>,
    pub binary: Option<ElementHeads>,
    pub kinds: Vec<HeadKind>,
}

impl HierRecurrent {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        cell_kind: CellKind,
        ctx: usize,
        emit: usize,
        kinds: &[HeadKind],
        rng: &mut R,
    ) -> Self {
        let cell = Cell::new(store, "low", cell_kind, 1, emit, rng);
        let ctx_gates = Linear::new(store, "low.ctx", ctx, cell.gate_rows(), false, rng);
        let gmm = kinds.iter().find(|k| matches!(k, HeadKind::Gmm { .. })).copied();
        let continuous = gmm.map(|k| ElementHeads::new(store, "low.head.c", emit, vec![k], rng));
        let binary = kinds
            .contains(&HeadKind::Bernoulli)
            .then(|| ElementHeads::new(store, "low.head.b", emit, vec![HeadKind::Bernoulli], rng));
        Self {
            cell,
            ctx_gates,
            continuous,
            binary,
            kinds: kinds.to_vec(),
        }
    }

    /// Heads and the low-level states `g_{t,i}`.
    pub fn emit(&self, g: &mut Graph, ctx: Var, step: &[f64]) -> (Vec<Head>, Vec<Var>) {
        let extra = self.ctx_gates.forward(g, ctx);
        let mut state = self.cell.initial(g);
        let mut heads = Vec::with_capacity(self.kinds.len());
        let mut states = Vec::with_capacity(self.kinds.len());
        for (i, kind) in self.kinds.iter().enumerate() {
            let prev = if i == 0 { 0.0 } else { step[i - 1] };
            let x = g.constant(&[prev]);
            state = self.cell.step(g, x, state, Some(extra));
            let h = self.cell.output(g, state);
            states.push(h);
            let bank = match kind {
                HeadKind::Gmm { .. } => self.continuous.as_ref(),
                HeadKind::Bernoulli => self.binary.as_ref(),
            };
            heads.push(bank.unwrap().forward(g, h)[0]);
        }
        (heads, states)
    }
}

/// Masked feed-forward decoder: one hidden layer whose units see a prefix of
/// the step, and output rows for element `i` see only units built from `x_{t,<i}`.
#[derive(Clone, Debug)]
pub struct HierMade {
    pub input: PrefixLinear,
    pub ctx_hidden: Linear,
    pub output: PrefixLinear,
    pub ctx_output: Linear,
    pub kinds: Vec<HeadKind>,
}

impl HierMade {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        ctx: usize,
        emit: usize,
        kinds: &[HeadKind],
        rng: &mut R,
    ) -> Self {
        let l = kinds.len();
        let mut degrees: Vec<u32> = (0..emit)
            .map(|k| if l > 1 { 1 + (k % (l - 1)) as u32 } else { 0 })
            .collect();
        degrees.sort_unstable();
        let input = PrefixLinear {
            lin: Linear::new(store, "made.in", l, emit, true, rng),
            prefix: degrees.clone(),
        };
        let ctx_hidden = Linear::new(store, "made.ctx_in", ctx, emit, false, rng);
        let mut prefix = Vec::new();
        for (i, k) in kinds.iter().enumerate() {
            let visible = degrees.iter().filter(|&&d| d as usize <= i).count() as u32;
            prefix.extend(std::iter::repeat_n(visible, k.width()));
        }
        let rows = prefix.len();
        let out_lin = Linear::new(store, "made.out", emit, rows, true, rng);
        spread_mixture_means(store.get_mut(out_lin.b.unwrap()), kinds);
        let output = PrefixLinear {
            lin: out_lin,
            prefix,
        };
        let ctx_output = Linear::new(store, "made.ctx_out", ctx, rows, false, rng);
        Self {
            input,
            ctx_hidden,
            output,
            ctx_output,
            kinds: kinds.to_vec(),
        }
    }

    pub fn emit(&self, g: &mut Graph, ctx: Var, step: &[f64]) -> Vec<Head> {
        let x = g.constant(step);
        let a = self.input.forward(g, x);
        let c = self.ctx_hidden.forward(g, ctx);
        let hid = g.add(a, c);
        let hid = g.tanh(hid);
        let o = self.output.forward(g, hid);
        let co = self.ctx_output.forward(g, ctx);
        let raw = g.add(o, co);
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

#[derive(Clone, Debug)]
pub enum Emitter {
    Factorized(Factorized),
    Delta(Delta),
    HierRecurrent(HierRecurrent),
    HierMade(HierMade),
}

impl Emitter {
    /// Heads for one step plus any low-level states.
    pub fn emit(&self, g: &mut Graph, ctx: Var, step: &[f64]) -> (Vec<Head>, Vec<Var>) {
        match self {
            Emitter::Factorized(f) => (f.emit(g, ctx), Vec::new()),
            Emitter::Delta(d) => (d.emit(g, ctx, step), Vec::new()),
            Emitter::HierRecurrent(h) => h.emit(g, ctx, step),
            Emitter::HierMade(m) => (m.emit(g, ctx, step), Vec::new()),
        }
    }
}

pub fn head_kinds(kinds: &[ElementKind], components: usize) -> Vec<HeadKind> {
    kinds
        .iter()
        .map(|&k| HeadKind::for_element(k, components))
        .collect()
}
