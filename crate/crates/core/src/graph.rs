//! Eager reverse-mode autodiff over small dense vectors.
//!
//! Values are computed when a node is created. Parameters live in a borrowed
//! [`ParamStore`] and are read in place by the affine ops; their gradients are
//! collected into a [`Gradients`] buffer by [`Graph::backward`].

use crate::distributions::{
    bernoulli_kernel, diag_gauss_kernel, gauss_kl_kernel, gmm_kernel, LOG_SCALE_MAX, LOG_SCALE_MIN,
};
use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Leaf,
    Param(ParamId),
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    /// Row `r` reads only `x[..prefix[r]]`; `prefix` lives in `links`.
    PrefixAffine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
        prefix: (u32, u32),
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(u32, u32),
    Slice(Var, u32),
    Gather(Var, u32, u32),
    Sum(u32, u32),
    StopGrad,
    /// Output `[h | c]`; gate activations and `tanh(c)` cached in `aux`.
    Lstm {
        pre: Var,
        c_prev: Var,
        aux: u32,
    },
    /// Scalar op with cached local gradients for each listed input.
    Scalar {
        inputs: (u32, u32),
        aux: u32,
    },
    Reparam {
        mean: Var,
        log_scale: Var,
        aux: u32,
    },
}

#[derive(Clone, Debug)]
struct Node {
    off: u32,
    len: u32,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    values: Vec<f64>,
    aux: Vec<f64>,
    links: Vec<u32>,
    pinned: Vec<Vec<f64>>,
    pinned_used: usize,
}

/// Result of a backward pass.
pub struct Backprop {
    node_grads: Vec<f64>,
    offsets: Vec<(u32, u32)>,
    pub params: Gradients,
}

impl Backprop {
    pub fn wrt(&self, v: Var) -> &[f64] {
        let (off, len) = self.offsets[v.0 as usize];
        &self.node_grads[off as usize..(off + len) as usize]
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            values: Vec::with_capacity(4096),
            aux: Vec::new(),
            links: Vec::new(),
            pinned: Vec::new(),
            pinned_used: 0,
        }
    }

    /// Makes the next `values.len()` calls to [`Graph::stop_grad`] return these
    /// values in order instead of their inputs. Used to hold stopped branches
    /// fixed while differencing the rest.
    pub fn pin_stop_grads(&mut self, values: Vec<Vec<f64>>) {
        self.pinned = values;
        self.pinned_used = 0;
    }

    /// Values of every stop-gradient node so far, in creation order.
    pub fn stop_grad_values(&self) -> Vec<Vec<f64>> {
        (0..self.nodes.len())
            .filter(|&k| matches!(self.nodes[k].op, Op::StopGrad))
            .map(|k| self.value(Var(k as u32)).to_vec())
            .collect()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0 as usize];
        &self.values[n.off as usize..(n.off + n.len) as usize]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let s = self.value(v);
        debug_assert_eq!(s.len(), 1);
        s[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, values: impl IntoIterator<Item = f64>) -> Var {
        let off = self.values.len();
        self.values.extend(values);
        let len = self.values.len() - off;
        self.nodes.push(Node {
            off: off as u32,
            len: len as u32,
            op,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    fn push_links(&mut self, vars: &[Var]) -> (u32, u32) {
        let start = self.links.len() as u32;
        self.links.extend(vars.iter().map(|v| v.0));
        (start, vars.len() as u32)
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.0 as usize];
        n.off as usize..(n.off + n.len) as usize
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Const, values.iter().copied())
    }

    /// A differentiable input whose gradient can be read back with [`Backprop::wrt`].
    pub fn leaf(&mut self, values: &[f64]) -> Var {
        self.push(Op::Leaf, values.iter().copied())
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.params;
        self.push(Op::Param(id), p.get(id).iter().copied())
    }

    /// `W x + b` with `W` stored row-major as `[rows, cols]`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let t = self.params.tensor(w);
        let (rows, cols) = (t.shape[0], t.shape[1]);
        assert_eq!(cols, self.len_of(x), "affine input width for {}", t.name);
        let wd = &t.data;
        let xr = self.range(x);
        let off = self.values.len();
        match b {
            Some(b) => self.values.extend_from_slice(self.params.get(b)),
            None => self.values.resize(off + rows, 0.0),
        }
        for r in 0..rows {
            let row = &wd[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(&self.values[xr.clone()]) {
                acc += wi * xi;
            }
            self.values[off + r] += acc;
        }
        self.nodes.push(Node {
            off: off as u32,
            len: rows as u32,
            op: Op::Affine { w, b, x },
        });
        Var((self.nodes.len() - 1) as u32)
    }

    /// Affine map where output row `r` only sees the first `prefix[r]` inputs.
    pub fn prefix_affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var, prefix: &[u32]) -> Var {
        let t = self.params.tensor(w);
        let (rows, cols) = (t.shape[0], t.shape[1]);
        assert_eq!(rows, prefix.len());
        assert_eq!(cols, self.len_of(x));
        let start = self.links.len() as u32;
        self.links.extend_from_slice(prefix);
        let wd = &t.data;
        let xr = self.range(x);
        let off = self.values.len();
        match b {
            Some(b) => self.values.extend_from_slice(self.params.get(b)),
            None => self.values.resize(off + rows, 0.0),
        }
        for r in 0..rows {
            let n = prefix[r] as usize;
            let row = &wd[r * cols..r * cols + n];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(&self.values[xr.start..xr.start + n]) {
                acc += wi * xi;
            }
            self.values[off + r] += acc;
        }
        self.nodes.push(Node {
            off: off as u32,
            len: rows as u32,
            op: Op::PrefixAffine {
                w,
                b,
                x,
                prefix: (start, rows as u32),
            },
        });
        Var((self.nodes.len() - 1) as u32)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b));
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.len_of(a), self.len_of(b));
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v: Vec<f64> = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .map(|&x| crate::distributions::sigmoid(x))
            .collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        let l = self.push_links(parts);
        self.push(Op::Concat(l.0, l.1), v)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice(a, start as u32), v)
    }

    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Var {
        let src = self.value(a);
        let v: Vec<f64> = indices.iter().map(|&i| src[i]).collect();
        let start = self.links.len() as u32;
        self.links.extend(indices.iter().map(|&i| i as u32));
        self.push(Op::Gather(a, start, indices.len() as u32), v)
    }

    /// Sum of every element of every input.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|p| self.value(*p).iter().sum::<f64>()).sum();
        let l = self.push_links(parts);
        self.push(Op::Sum(l.0, l.1), [total])
    }

    pub fn stop_grad(&mut self, a: Var) -> Var {
        let v = if self.pinned_used < self.pinned.len() {
            self.pinned_used += 1;
            let p = std::mem::take(&mut self.pinned[self.pinned_used - 1]);
            assert_eq!(p.len(), self.len_of(a), "pinned stop-gradient value has the wrong width");
            p
        } else {
            self.value(a).to_vec()
        };
        self.push(Op::StopGrad, v)
    }

    /// LSTM gate nonlinearity. `pre` holds `[i | f | g | o]` pre-activations.
    /// Output is the new state `[h | c]`.
    pub fn lstm(&mut self, pre: Var, c_prev: Var) -> Var {
        let h = self.len_of(c_prev);
        assert_eq!(self.len_of(pre), 4 * h);
        let aux = self.aux.len() as u32;
        let mut out = vec![0.0; 2 * h];
        {
            let p = self.value(pre).to_vec();
            let c0 = self.value(c_prev).to_vec();
            let mut acts = vec![0.0; 5 * h];
            for j in 0..h {
                let i = crate::distributions::sigmoid(p[j]);
                let f = crate::distributions::sigmoid(p[h + j]);
                let g = p[2 * h + j].tanh();
                let o = crate::distributions::sigmoid(p[3 * h + j]);
                let c = f * c0[j] + i * g;
                let tc = c.tanh();
                out[j] = o * tc;
                out[h + j] = c;
                acts[j] = i;
                acts[h + j] = f;
                acts[2 * h + j] = g;
                acts[3 * h + j] = o;
                acts[4 * h + j] = tc;
            }
            self.aux.extend_from_slice(&acts);
        }
        self.push(Op::Lstm { pre, c_prev, aux }, out)
    }

    fn scalar_op(&mut self, inputs: &[Var], value: f64, local_grads: &[f64]) -> Var {
        let aux = self.aux.len() as u32;
        self.aux.extend_from_slice(local_grads);
        let l = self.push_links(inputs);
        self.push(Op::Scalar { inputs: l, aux }, [value])
    }

    /// Mixture log-density of a fixed observation; `raw` is `[logits | means | log_scales]`.
    pub fn gmm_logpdf(&mut self, raw: Var, x: f64) -> Var {
        let mut g = vec![0.0; self.len_of(raw)];
        let v = gmm_kernel(self.value(raw), x, Some(&mut g));
        self.scalar_op(&[raw], v, &g)
    }

    pub fn bernoulli_logpmf(&mut self, logit: Var, x: f64) -> Var {
        let (v, g) = bernoulli_kernel(self.scalar(logit), x);
        self.scalar_op(&[logit], v, &[g])
    }

    pub fn diag_gauss_logpdf(&mut self, mean: Var, log_scale: Var, z: Var) -> Var {
        let d = self.len_of(mean);
        let (mut gm, mut gs, mut gz) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let v = diag_gauss_kernel(
            self.value(mean),
            self.value(log_scale),
            self.value(z),
            Some((&mut gm, &mut gs, &mut gz)),
        );
        gm.extend(gs);
        gm.extend(gz);
        self.scalar_op(&[mean, log_scale, z], v, &gm)
    }

    pub fn gauss_kl(&mut self, q_mean: Var, q_log_scale: Var, p_mean: Var, p_log_scale: Var) -> Var {
        let d = self.len_of(q_mean);
        let mut g = vec![vec![0.0; d]; 4];
        let v = {
            let [a, b, c, e] = &mut g[..] else { unreachable!() };
            gauss_kl_kernel(
                self.value(q_mean),
                self.value(q_log_scale),
                self.value(p_mean),
                self.value(p_log_scale),
                Some([a, b, c, e]),
            )
        };
        let flat: Vec<f64> = g.concat();
        self.scalar_op(&[q_mean, q_log_scale, p_mean, p_log_scale], v, &flat)
    }

    /// `mean + exp(clamp(log_scale)) * noise` with `noise` held fixed.
    pub fn reparam(&mut self, mean: Var, log_scale: Var, noise: &[f64]) -> Var {
        let d = self.len_of(mean);
        assert_eq!(noise.len(), d);
        let aux = self.aux.len() as u32;
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let s = self.value(log_scale)[i];
            let inside = (LOG_SCALE_MIN..=LOG_SCALE_MAX).contains(&s);
            let sd = s.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX).exp();
            out.push(self.value(mean)[i] + sd * noise[i]);
            // d z / d log_scale
            self.aux.push(if inside { sd * noise[i] } else { 0.0 });
        }
        self.push(
            Op::Reparam {
                mean,
                log_scale,
                aux,
            },
            out,
        )
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Backprop {
        assert_eq!(self.len_of(root), 1, "backward needs a scalar root");
        let mut grads = vec![0.0; self.values.len()];
        let mut pgrads = Gradients::zeros_like(self.params);
        grads[self.nodes[root.0 as usize].off as usize] = 1.0;
        for idx in (0..=root.0 as usize).rev() {
            let node = &self.nodes[idx];
            let out = node.off as usize..(node.off + node.len) as usize;
            if grads[out.clone()].iter().all(|g| *g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Const | Op::Leaf | Op::StopGrad => {}
                Op::Param(id) => {
                    for (p, g) in pgrads.get_mut(*id).iter_mut().zip(&grads[out]) {
                        *p += g;
                    }
                }
                Op::Affine { w, b, x } => {
                    let t = self.params.tensor(*w);
                    let cols = t.shape[1];
                    let xr = self.range(*x);
                    let dy: Vec<f64> = grads[out].to_vec();
                    if let Some(b) = b {
                        for (p, g) in pgrads.get_mut(*b).iter_mut().zip(&dy) {
                            *p += g;
                        }
                    }
                    let xv = &self.values[xr.clone()];
                    let gw = pgrads.get_mut(*w);
                    for (r, &g) in dy.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (gwi, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *gwi += g * xi;
                        }
                    }
                    let dx = &mut grads[xr];
                    for (r, &g) in dy.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (d, wi) in dx.iter_mut().zip(&t.data[r * cols..(r + 1) * cols]) {
                            *d += g * wi;
                        }
                    }
                }
                Op::PrefixAffine { w, b, x, prefix } => {
                    let t = self.params.tensor(*w);
                    let cols = t.shape[1];
                    let xr = self.range(*x);
                    let pre = &self.links[prefix.0 as usize..(prefix.0 + prefix.1) as usize];
                    let dy: Vec<f64> = grads[out].to_vec();
                    if let Some(b) = b {
                        for (p, g) in pgrads.get_mut(*b).iter_mut().zip(&dy) {
                            *p += g;
                        }
                    }
                    let xv = &self.values[xr.clone()];
                    let gw = pgrads.get_mut(*w);
                    for (r, &g) in dy.iter().enumerate() {
                        let n = pre[r] as usize;
                        for (gwi, xi) in gw[r * cols..r * cols + n].iter_mut().zip(xv) {
                            *gwi += g * xi;
                        }
                    }
                    let dx = &mut grads[xr];
                    for (r, &g) in dy.iter().enumerate() {
                        let n = pre[r] as usize;
                        for (d, wi) in dx[..n].iter_mut().zip(&t.data[r * cols..r * cols + n]) {
                            *d += g * wi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    let dy = grads[out].to_vec();
                    for v in [*a, *b] {
                        let r = self.range(v);
                        for (d, g) in grads[r].iter_mut().zip(&dy) {
                            *d += g;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let dy = grads[out].to_vec();
                    let (ra, rb) = (self.range(*a), self.range(*b));
                    let av = self.values[ra.clone()].to_vec();
                    let bv = self.values[rb.clone()].to_vec();
                    for i in 0..dy.len() {
                        grads[ra.start + i] += dy[i] * bv[i];
                        grads[rb.start + i] += dy[i] * av[i];
                    }
                }
                Op::Scale(a, c) => {
                    let dy = grads[out].to_vec();
                    let r = self.range(*a);
                    for (d, g) in grads[r].iter_mut().zip(&dy) {
                        *d += c * g;
                    }
                }
                Op::Tanh(a) => {
                    let r = self.range(*a);
                    for i in 0..node.len as usize {
                        let y = self.values[out.start + i];
                        grads[r.start + i] += grads[out.start + i] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let r = self.range(*a);
                    for i in 0..node.len as usize {
                        let y = self.values[out.start + i];
                        grads[r.start + i] += grads[out.start + i] * y * (1.0 - y);
                    }
                }
                Op::Concat(start, n) => {
                    let mut pos = out.start;
                    for &l in &self.links[*start as usize..(*start + *n) as usize] {
                        let r = self.range(Var(l));
                        let len = r.len();
                        for i in 0..len {
                            grads[r.start + i] += grads[pos + i];
                        }
                        pos += len;
                    }
                }
                Op::Slice(a, start) => {
                    let r = self.range(*a);
                    for i in 0..node.len as usize {
                        grads[r.start + *start as usize + i] += grads[out.start + i];
                    }
                }
                Op::Gather(a, start, n) => {
                    let r = self.range(*a);
                    for (i, &src) in self.links[*start as usize..(*start + *n) as usize]
                        .iter()
                        .enumerate()
                    {
                        grads[r.start + src as usize] += grads[out.start + i];
                    }
                }
                Op::Sum(start, n) => {
                    let g = grads[out.start];
                    for &l in &self.links[*start as usize..(*start + *n) as usize] {
                        for d in &mut grads[self.range(Var(l))] {
                            *d += g;
                        }
                    }
                }
                Op::Lstm { pre, c_prev, aux } => {
                    let h = node.len as usize / 2;
                    let acts = &self.aux[*aux as usize..*aux as usize + 5 * h];
                    let rp = self.range(*pre);
                    let rc = self.range(*c_prev);
                    for j in 0..h {
                        let (i, f, g, o, tc) =
                            (acts[j], acts[h + j], acts[2 * h + j], acts[3 * h + j], acts[4 * h + j]);
                        let dh = grads[out.start + j];
                        let dc = grads[out.start + h + j] + dh * o * (1.0 - tc * tc);
                        let c0 = self.values[rc.start + j];
                        grads[rp.start + j] += dc * g * i * (1.0 - i);
                        grads[rp.start + h + j] += dc * c0 * f * (1.0 - f);
                        grads[rp.start + 2 * h + j] += dc * i * (1.0 - g * g);
                        grads[rp.start + 3 * h + j] += dh * tc * o * (1.0 - o);
                        grads[rc.start + j] += dc * f;
                    }
                }
                Op::Scalar { inputs, aux } => {
                    let g = grads[out.start];
                    let mut pos = *aux as usize;
                    for &l in &self.links[inputs.0 as usize..(inputs.0 + inputs.1) as usize] {
                        let r = self.range(Var(l));
                        let len = r.len();
                        for i in 0..len {
                            grads[r.start + i] += g * self.aux[pos + i];
                        }
                        pos += len;
                    }
                }
                Op::Reparam {
                    mean,
                    log_scale,
                    aux,
                } => {
                    let rm = self.range(*mean);
                    let rs = self.range(*log_scale);
                    for i in 0..node.len as usize {
                        let g = grads[out.start + i];
                        grads[rm.start + i] += g;
                        grads[rs.start + i] += g * self.aux[*aux as usize + i];
                    }
                }
            }
        }
        Backprop {
            node_grads: grads,
            offsets: self.nodes.iter().map(|n| (n.off, n.len)).collect(),
            params: pgrads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn affine_and_param_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]);
        let b = store.add("b", vec![2], vec![0.01, 0.02]);
        let x0 = [1.0, 2.0, -1.0];
        let f = |x: &[f64]| {
            let mut g = Graph::new(&store);
            let xv = g.leaf(x);
            let y = g.affine(w, Some(b), xv);
            let t = g.tanh(y);
            let s = g.sum(&[t]);
            g.scalar(s)
        };
        let mut g = Graph::new(&store);
        let xv = g.leaf(&x0);
        let y = g.affine(w, Some(b), xv);
        let t = g.tanh(y);
        let s = g.sum(&[t]);
        let bp = g.backward(s);
        assert_close(bp.wrt(xv), &numeric(f, &x0), 1e-7);
        // d/db_r = 1 - tanh^2
        let tv = g.value(t).to_vec();
        assert_close(bp.params.get(b), &[1.0 - tv[0] * tv[0], 1.0 - tv[1] * tv[1]], 1e-12);
    }

    #[test]
    fn prefix_affine_ignores_masked_inputs() {
        let mut store = ParamStore::new();
        let w = store.add("w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut g = Graph::new(&store);
        let x = g.leaf(&[1.0, 1.0, 1.0]);
        let y = g.prefix_affine(w, None, x, &[1, 2]);
        assert_eq!(g.value(y), &[1.0, 9.0]);
        let s = g.sum(&[y]);
        let bp = g.backward(s);
        assert_eq!(bp.wrt(x), &[5.0, 5.0, 0.0]);
    }

    #[test]
    fn lstm_gradients_match_numeric() {
        let store = ParamStore::new();
        let pre0: Vec<f64> = (0..8).map(|i| 0.3 * (i as f64) - 1.0).collect();
        let c0 = [0.5, -0.25];
        let build = |pre: &[f64], c: &[f64]| {
            let mut g = Graph::new(&store);
            let p = g.leaf(pre);
            let cv = g.leaf(c);
            let s = g.lstm(p, cv);
            let w = g.constant(&[0.7, -1.3, 0.4, 2.0]);
            let m = g.mul(s, w);
            let r = g.sum(&[m]);
            (g.scalar(r), {
                let bp = g.backward(r);
                (bp.wrt(p).to_vec(), bp.wrt(cv).to_vec())
            })
        };
        let (_, (gp, gc)) = build(&pre0, &c0);
        assert_close(&gp, &numeric(|p| build(p, &c0).0, &pre0), 1e-7);
        assert_close(&gc, &numeric(|c| build(&pre0, c).0, &c0), 1e-7);
    }

    #[test]
    fn scalar_heads_match_numeric() {
        let store = ParamStore::new();
        let raw0 = [0.2, -0.4, 0.1, 0.5, -0.7, 1.2, 0.1, -0.3, 0.2];
        let f = |raw: &[f64]| {
            let mut g = Graph::new(&store);
            let r = g.leaf(raw);
            let v = g.gmm_logpdf(r, 0.3);
            g.scalar(v)
        };
        let mut g = Graph::new(&store);
        let r = g.leaf(&raw0);
        let v = g.gmm_logpdf(r, 0.3);
        let bp = g.backward(v);
        assert_close(bp.wrt(r), &numeric(f, &raw0), 1e-7);

        let k0 = [0.3, -0.2, 0.5, 0.1];
        let kl = |p: &[f64]| {
            let mut g = Graph::new(&store);
            let v: Vec<Var> = p.iter().map(|x| g.leaf(&[*x])).collect();
            let k = g.gauss_kl(v[0], v[1], v[2], v[3]);
            let bp = g.backward(k);
            (g.scalar(k), v.iter().map(|x| bp.wrt(*x)[0]).collect::<Vec<_>>())
        };
        assert_close(&kl(&k0).1, &numeric(|p| kl(p).0, &k0), 1e-7);
    }

    #[test]
    fn reparam_and_gather_gradients() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let m = g.leaf(&[0.5, -0.5]);
        let s = g.leaf(&[0.1, -0.2]);
        let z = g.reparam(m, s, &[1.5, -0.5]);
        let pick = g.gather(z, &[1, 1, 0]);
        let sum = g.sum(&[pick]);
        let bp = g.backward(sum);
        assert_eq!(bp.wrt(m), &[1.0, 2.0]);
        assert_close(bp.wrt(s), &[1.5 * 0.1f64.exp(), 2.0 * -0.5 * (-0.2f64).exp()], 1e-12);
    }

    #[test]
    fn stop_grad_blocks() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.leaf(&[2.0]);
        let b = g.stop_grad(a);
        let c = g.mul(a, b);
        let bp = g.backward(c);
        assert_eq!(bp.wrt(a), &[2.0]);
    }
}
