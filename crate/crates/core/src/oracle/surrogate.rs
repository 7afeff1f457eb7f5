//! Discrete-latent stand-in for a stochastic recurrent model whose marginal
//! likelihood can be enumerated exactly.
//!
//! `z_t` lives on a grid of `G` points, follows a Markov chain under the prior
//! and under the posterior, and emits every element of `x_t` independently
//! with mean (or logit) `a_i·z_t + b_i`. Densities here are written out
//! separately from the model kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::StepSequence;
use crate::distributions::ElementKind;
use crate::error::{Error, Result};
use crate::evaluation::LatentModel;

pub const MAX_STEPS: usize = 4;
pub const MAX_GRID: usize = 8;
pub const MAX_PATHS: u128 = 4096;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub kind: ElementKind,
    pub slope: f64,
    pub offset: f64,
    /// Only used by continuous elements.
    pub log_scale: f64,
}

impl Emission {
    fn log_density(&self, x: f64, z: f64) -> f64 {
        let m = self.slope * z + self.offset;
        match self.kind {
            ElementKind::Continuous => {
                let s = self.log_scale.exp();
                let u = (x - m) / s;
                -0.5 * u * u - self.log_scale - LN_SQRT_2PI
            }
            ElementKind::Binary => {
                // log σ(m) and log(1 − σ(m)), each in its stable branch
                let log_on = if m > 0.0 { -(-m).exp().ln_1p() } else { m - m.exp().ln_1p() };
                let log_off = log_on - m;
                if x > 0.5 {
                    log_on
                } else {
                    log_off
                }
            }
        }
    }
}

/// Error-compensated running sum (Neumaier).
#[derive(Copy, Clone, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn compensated_log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut acc = CompensatedSum::default();
    for x in xs {
        acc.add((x - m).exp());
    }
    m + acc.value().ln()
}

fn log_normalized(p: &[f64], what: &str) -> Result<Vec<f64>> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid(format!("{what}: weights must be finite and nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("{what}: weights sum to {s}, not 1")));
    }
    Ok(p.iter().map(|v| v.ln()).collect())
}

fn normalize_logs(l: &mut [f64]) {
    let z = compensated_log_sum_exp(l);
    for v in l {
        *v -= z;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub grid: Vec<f64>,
    pub steps: usize,
    pub emissions: Vec<Emission>,
    log_init: Vec<f64>,
    log_trans: Vec<Vec<f64>>,
    /// `q(z_1 | x)`
    q_init: Vec<f64>,
    /// `q(z_{t+1} | z_t, x)` for `t = 1..T−1`, each a `G × G` table.
    q_trans: Vec<Vec<Vec<f64>>>,
}

impl SurrogateModel {
    /// Prior tables are probabilities; the posterior starts equal to the prior.
    pub fn new(grid: Vec<f64>, steps: usize, init: &[f64], trans: &[Vec<f64>], emissions: Vec<Emission>) -> Result<Self> {
        let g = grid.len();
        if g == 0 || g > MAX_GRID || steps == 0 || steps > MAX_STEPS {
            return Err(Error::invalid(format!(
                "surrogate needs 1 ≤ G ≤ {MAX_GRID} and 1 ≤ T ≤ {MAX_STEPS}, got G={g}, T={steps}"
            )));
        }
        if emissions.is_empty() {
            return Err(Error::invalid("surrogate needs at least one emitted element"));
        }
        let paths = (g as u128).pow(steps as u32);
        if paths > MAX_PATHS {
            return Err(Error::StateSpaceTooLarge(paths));
        }
        if init.len() != g || trans.len() != g || trans.iter().any(|r| r.len() != g) {
            return Err(Error::invalid("prior tables must be G and G × G"));
        }
        let log_init = log_normalized(init, "initial prior")?;
        let log_trans = trans
            .iter()
            .map(|r| log_normalized(r, "transition prior"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            q_init: log_init.clone(),
            q_trans: vec![log_trans.clone(); steps - 1],
            grid,
            steps,
            emissions,
            log_init,
            log_trans,
        })
    }

    /// Random prior, posterior and emissions. Continuous elements only unless
    /// `kinds` says otherwise.
    pub fn random<R: Rng>(rng: &mut R, steps: usize, grid_points: usize, kinds: &[ElementKind]) -> Result<Self> {
        let simplex = |rng: &mut R| -> Vec<f64> {
            let w: Vec<f64> = (0..grid_points).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        };
        let mut grid: Vec<f64> = (0..grid_points).map(|_| rng.random_range(-2.0..2.0)).collect();
        grid.sort_by(f64::total_cmp);
        let init = simplex(rng);
        let trans: Vec<Vec<f64>> = (0..grid_points).map(|_| simplex(rng)).collect();
        let emissions = kinds
            .iter()
            .map(|&kind| Emission {
                kind,
                slope: rng.random_range(-1.5..1.5),
                offset: rng.random_range(-0.5..0.5),
                log_scale: rng.random_range(-0.7..0.3),
            })
            .collect();
        let mut m = Self::new(grid, steps, &init, &trans, emissions)?;
        let q_init = simplex(rng);
        let q_trans: Vec<Vec<Vec<f64>>> = (1..steps)
            .map(|_| (0..grid_points).map(|_| simplex(rng)).collect())
            .collect();
        m.set_posterior(&q_init, &q_trans)?;
        Ok(m)
    }

    pub fn grid_points(&self) -> usize {
        self.grid.len()
    }

    pub fn width(&self) -> usize {
        self.emissions.len()
    }

    pub fn kinds(&self) -> Vec<ElementKind> {
        self.emissions.iter().map(|e| e.kind).collect()
    }

    pub fn set_posterior(&mut self, init: &[f64], trans: &[Vec<Vec<f64>>]) -> Result<()> {
        let g = self.grid_points();
        if init.len() != g || trans.len() + 1 != self.steps || trans.iter().any(|t| t.len() != g || t.iter().any(|r| r.len() != g)) {
            return Err(Error::invalid("posterior tables must be G and (T−1) × G × G"));
        }
        self.q_init = log_normalized(init, "initial posterior")?;
        self.q_trans = trans
            .iter()
            .map(|t| t.iter().map(|r| log_normalized(r, "transition posterior")).collect())
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    fn check(&self, x: &StepSequence) -> Result<()> {
        if x.steps() != self.steps || x.width() != self.width() {
            return Err(Error::shape(self.steps * self.width(), x.steps() * x.width()));
        }
        Ok(())
    }

    /// `log p(x_t | z_t = grid[k])` for every `t, k`.
    fn emission_table(&self, x: &StepSequence) -> Vec<Vec<f64>> {
        (0..self.steps)
            .map(|t| {
                self.grid
                    .iter()
                    .map(|&z| {
                        let mut acc = CompensatedSum::default();
                        for (i, e) in self.emissions.iter().enumerate() {
                            acc.add(e.log_density(x.get(t, i), z));
                        }
                        acc.value()
                    })
                    .collect()
            })
            .collect()
    }

    fn paths(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let g = self.grid_points();
        let n = g.pow(self.steps as u32);
        (0..n).map(move |mut code| {
            let mut p = vec![0; self.steps];
            for slot in p.iter_mut() {
                *slot = code % g;
                code /= g;
            }
            p
        })
    }

    fn log_joint(&self, em: &[Vec<f64>], path: &[usize]) -> f64 {
        let mut acc = CompensatedSum::default();
        acc.add(self.log_init[path[0]]);
        for t in 1..path.len() {
            acc.add(self.log_trans[path[t - 1]][path[t]]);
        }
        for (t, &k) in path.iter().enumerate() {
            acc.add(em[t][k]);
        }
        acc.value()
    }

    fn log_q(&self, path: &[usize]) -> f64 {
        let mut acc = CompensatedSum::default();
        acc.add(self.q_init[path[0]]);
        for t in 1..path.len() {
            acc.add(self.q_trans[t - 1][path[t - 1]][path[t]]);
        }
        acc.value()
    }

    /// `Σ_z q(z | x) [log p(x, z) − log q(z | x)]` by enumeration.
    pub fn elbo(&self, x: &StepSequence) -> Result<f64> {
        self.check(x)?;
        let em = self.emission_table(x);
        let mut acc = CompensatedSum::default();
        for path in self.paths() {
            let lq = self.log_q(&path);
            if lq == f64::NEG_INFINITY {
                continue;
            }
            acc.add(lq.exp() * (self.log_joint(&em, &path) - lq));
        }
        Ok(acc.value())
    }

    /// Installs `p(z | x)`, computed with backward messages.
    pub fn install_true_posterior(&mut self, x: &StepSequence) -> Result<()> {
        self.check(x)?;
        let (g, n) = (self.grid_points(), self.steps);
        let em = self.emission_table(x);
        // beta[t][k] = log p(x_{t+1..} | z_t = k)
        let mut beta = vec![vec![0.0; g]; n];
        for t in (0..n - 1).rev() {
            for k in 0..g {
                let terms: Vec<f64> = (0..g)
                    .map(|j| self.log_trans[k][j] + em[t + 1][j] + beta[t + 1][j])
                    .collect();
                beta[t][k] = compensated_log_sum_exp(&terms);
            }
        }
        let mut q_init: Vec<f64> = (0..g).map(|k| self.log_init[k] + em[0][k] + beta[0][k]).collect();
        normalize_logs(&mut q_init);
        let q_trans = (1..n)
            .map(|t| {
                (0..g)
                    .map(|k| {
                        let mut row: Vec<f64> = (0..g).map(|j| self.log_trans[k][j] + em[t][j] + beta[t][j]).collect();
                        normalize_logs(&mut row);
                        row
                    })
                    .collect()
            })
            .collect();
        self.q_init = q_init;
        self.q_trans = q_trans;
        Ok(())
    }

    /// Posterior `(1 − w)·q + w·p(z | x)`, row by row.
    pub fn install_mixed_posterior(&mut self, x: &StepSequence, w: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::invalid(format!("mixing weight {w} outside [0, 1]")));
        }
        let (old_init, old_trans) = (self.q_init.clone(), self.q_trans.clone());
        self.install_true_posterior(x)?;
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            let mut r: Vec<f64> = a.iter().zip(b).map(|(u, v)| ((1.0 - w) * u.exp() + w * v.exp()).ln()).collect();
            normalize_logs(&mut r);
            r
        };
        self.q_init = mix(&old_init, &self.q_init);
        self.q_trans = old_trans
            .iter()
            .zip(&self.q_trans)
            .map(|(a, b)| a.iter().zip(b).map(|(ra, rb)| mix(ra, rb)).collect())
            .collect();
        Ok(())
    }

    /// Draws `x` from the prior generative process.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<StepSequence> {
        let pick = |rng: &mut R, logs: &[f64]| -> usize {
            let u: f64 = rng.random();
            let mut c = 0.0;
            for (k, l) in logs.iter().enumerate() {
                c += l.exp();
                if u < c {
                    return k;
                }
            }
            logs.len() - 1
        };
        let mut rows = Vec::with_capacity(self.steps);
        let mut k = pick(rng, &self.log_init);
        for t in 0..self.steps {
            if t > 0 {
                k = pick(rng, &self.log_trans[k]);
            }
            let z = self.grid[k];
            let row = self
                .emissions
                .iter()
                .map(|e| {
                    let m = e.slope * z + e.offset;
                    match e.kind {
                        ElementKind::Continuous => {
                            let n: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                            m + e.log_scale.exp() * n
                        }
                        ElementKind::Binary => {
                            let p = 1.0 / (1.0 + (-m).exp());
                            if rng.random::<f64>() < p {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .collect();
            rows.push(row);
        }
        StepSequence::from_rows(&rows, self.kinds())
    }
}

/// `log Σ_z p(x, z)` over all `Gᵀ` latent paths.
pub fn enumerate_exact_loglik(surrogate: &SurrogateModel, x: &StepSequence) -> Result<f64> {
    let paths = (surrogate.grid_points() as u128).pow(surrogate.steps as u32);
    if paths > MAX_PATHS {
        return Err(Error::StateSpaceTooLarge(paths));
    }
    surrogate.check(x)?;
    let em = surrogate.emission_table(x);
    let terms: Vec<f64> = surrogate.paths().map(|p| surrogate.log_joint(&em, &p)).collect();
    Ok(compensated_log_sum_exp(&terms))
}

impl LatentModel for SurrogateModel {
    fn log_weight<R: Rng>(&self, seq: &StepSequence, rng: &mut R) -> Result<f64> {
        self.check(seq)?;
        let pick = |rng: &mut R, logs: &[f64]| -> usize {
            let u: f64 = rng.random();
            let mut c = 0.0;
            for (k, l) in logs.iter().enumerate() {
                c += l.exp();
                if u < c {
                    return k;
                }
            }
            logs.len() - 1
        };
        let mut path = Vec::with_capacity(self.steps);
        path.push(pick(rng, &self.q_init));
        for t in 1..self.steps {
            let prev = path[t - 1];
            path.push(pick(rng, &self.q_trans[t - 1][prev]));
        }
        let em = self.emission_table(seq);
        Ok(self.log_joint(&em, &path) - self.log_q(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::multi_sample_bound;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(slope: f64, offset: f64) -> Emission {
        Emission {
            kind: ElementKind::Continuous,
            slope,
            offset,
            log_scale: 0.0,
        }
    }

    #[test]
    fn single_point_grid_is_the_decoder() {
        let m = SurrogateModel::new(vec![0.5], 2, &[1.0], &[vec![1.0]], vec![gauss(2.0, 0.0)]).unwrap();
        let x = StepSequence::continuous(vec![0.3, -0.4], 2, 1).unwrap();
        let direct: f64 = [0.3f64, -0.4]
            .iter()
            .map(|v| -0.5 * (v - 1.0).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum();
        assert!((enumerate_exact_loglik(&m, &x).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn two_term_mixture_by_hand() {
        let m = SurrogateModel::new(vec![-1.0, 1.0], 1, &[0.5, 0.5], &[vec![0.5, 0.5], vec![0.5, 0.5]], vec![gauss(1.0, 0.0)]).unwrap();
        let x = StepSequence::continuous(vec![0.2], 1, 1).unwrap();
        let d = |mu: f64| (-0.5 * (0.2 - mu) * (0.2 - mu)).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let hand = (0.5 * d(-1.0) + 0.5 * d(1.0)).ln();
        assert!((enumerate_exact_loglik(&m, &x).unwrap() - hand).abs() < 1e-14);
    }

    #[test]
    fn elbo_bounds_and_true_posterior_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kinds = [ElementKind::Continuous, ElementKind::Binary, ElementKind::Continuous];
        for _ in 0..20 {
            let mut m = SurrogateModel::random(&mut rng, 4, 8, &kinds).unwrap();
            let x = m.sample(&mut rng).unwrap();
            let exact = enumerate_exact_loglik(&m, &x).unwrap();
            assert!(m.elbo(&x).unwrap() <= exact + 1e-9);
            m.install_mixed_posterior(&x, 0.5).unwrap();
            let mixed = m.elbo(&x).unwrap();
            assert!(mixed <= exact + 1e-9);
            m.install_true_posterior(&x).unwrap();
            let tight = m.elbo(&x).unwrap();
            assert!((tight - exact).abs() < 1e-9, "{tight} vs {exact}");
            assert!(mixed <= tight + 1e-9);
        }
    }

    #[test]
    fn too_many_paths() {
        let g: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let p = vec![0.125; 8];
        let t = vec![p.clone(); 8];
        assert!(SurrogateModel::new(g.clone(), 4, &p, &t, vec![gauss(1.0, 0.0)]).is_ok());
        assert!(SurrogateModel::new(g, 5, &p, &t, vec![gauss(1.0, 0.0)]).is_err());
    }

    #[test]
    fn many_samples_approach_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = SurrogateModel::random(&mut rng, 2, 4, &[ElementKind::Continuous; 2]).unwrap();
        let x = m.sample(&mut rng).unwrap();
        let exact = enumerate_exact_loglik(&m, &x).unwrap();
        let b = multi_sample_bound(&m, &x, 4096, &mut rng).unwrap();
        assert!((b - exact).abs() < 0.05, "{b} vs {exact}");
    }
}
