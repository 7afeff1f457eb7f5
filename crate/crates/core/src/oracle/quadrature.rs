//! Normalization and divergence checks that recompute densities from scratch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{DiagGaussianParams, DistParams, LOG_SCALE_MAX, LOG_SCALE_MIN};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

fn sd(log_scale: f64) -> f64 {
    log_scale.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX).exp()
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Density of a 1-D head written out directly, plus its widest component scale.
fn density(head: &DistParams) -> Result<(Box<dyn Fn(f64) -> f64 + '_>, f64)> {
    match head {
        DistParams::Gmm(p) => {
            let m = p.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = p.logits.iter().map(|a| (a - m).exp()).sum();
            let widest = p.log_scales.iter().map(|s| sd(*s)).fold(0.0, f64::max);
            Ok((
                Box::new(move |x| {
                    p.logits
                        .iter()
                        .zip(&p.means)
                        .zip(&p.log_scales)
                        .map(|((a, mu), s)| (a - m).exp() / z * normal_pdf(x, *mu, sd(*s)))
                        .sum()
                }),
                widest,
            ))
        }
        DistParams::Gaussian(p) if p.mean.len() == 1 => {
            let (mu, s) = (p.mean[0], sd(p.log_scale[0]));
            Ok((Box::new(move |x| normal_pdf(x, mu, s)), s))
        }
        _ => Err(Error::invalid("quadrature needs a 1-D continuous head")),
    }
}

/// Trapezoid integral of the head's density over `grid`. Rejects grids whose
/// endpoint density times the widest scale (a tail-mass proxy) exceeds 1e-4.
pub fn quadrature_norm(head: &DistParams, grid: &Grid) -> Result<f64> {
    if grid.points < 2 || !(grid.hi > grid.lo) {
        return Err(Error::invalid("grid needs at least two points and hi > lo"));
    }
    let (pdf, widest) = density(head)?;
    let edge = (pdf(grid.lo) + pdf(grid.hi)) * widest;
    if edge > 1e-4 {
        return Err(Error::Oracle(format!(
            "grid [{}, {}] too narrow: edge mass ≈ {edge:.3e}",
            grid.lo, grid.hi
        )));
    }
    let h = (grid.hi - grid.lo) / (grid.points - 1) as f64;
    let mut acc = 0.0;
    for k in 0..grid.points {
        let w = if k == 0 || k + 1 == grid.points { 0.5 } else { 1.0 };
        acc += w * pdf(grid.lo + h * k as f64);
    }
    Ok(acc * h)
}

/// Grid covering `margin` widest-scale units beyond the extreme means.
pub fn covering_grid(head: &DistParams, margin: f64, points: usize) -> Result<Grid> {
    let (means, widest): (Vec<f64>, f64) = match head {
        DistParams::Gmm(p) => (p.means.clone(), p.log_scales.iter().map(|s| sd(*s)).fold(0.0, f64::max)),
        DistParams::Gaussian(p) if p.mean.len() == 1 => (p.mean.clone(), sd(p.log_scale[0])),
        _ => return Err(Error::invalid("quadrature needs a 1-D continuous head")),
    };
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - margin * widest;
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + margin * widest;
    Ok(Grid { lo, hi, points })
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// `E_q[log q − log p]` from `n` draws of `q`.
pub fn monte_carlo_kl(q: &DiagGaussianParams, p: &DiagGaussianParams, n: usize, seed: u64) -> Result<MonteCarlo> {
    if q.mean.len() != p.mean.len() || n < 2 {
        return Err(Error::invalid("dimension mismatch or fewer than two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_n = |x: f64, m: f64, ls: f64| {
        let s = sd(ls);
        -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut v = 0.0;
        for i in 0..q.mean.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = q.mean[i] + sd(q.log_scale[i]) * e;
            v += log_n(z, q.mean[i], q.log_scale[i]) - log_n(z, p.mean[i], p.log_scale[i]);
        }
        sum += v;
        sq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0) * n as f64 / (n - 1) as f64;
    Ok(MonteCarlo {
        mean,
        std_err: (var / n as f64).sqrt(),
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{gauss_kl, GaussianMixtureParams};

    fn std_normal() -> DistParams {
        DistParams::Gaussian(DiagGaussianParams {
            mean: vec![0.0],
            log_scale: vec![0.0],
        })
    }

    #[test]
    fn standard_normal_integrates_to_one() {
        let g = Grid {
            lo: -8.0,
            hi: 8.0,
            points: 10_000,
        };
        assert!((quadrature_norm(&std_normal(), &g).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let g = Grid {
            lo: -1.0,
            hi: 1.0,
            points: 100,
        };
        assert!(matches!(quadrature_norm(&std_normal(), &g), Err(Error::Oracle(_))));
    }

    #[test]
    fn mixture_integrates_to_one() {
        let h = DistParams::Gmm(GaussianMixtureParams {
            logits: vec![0.3, -1.0, 0.5],
            means: vec![-2.0, 0.1, 1.5],
            log_scales: vec![-0.5, 0.2, -1.2],
        });
        let g = covering_grid(&h, 10.0, 20_000).unwrap();
        assert!((quadrature_norm(&h, &g).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kl_agrees_with_sampling() {
        let q = DiagGaussianParams {
            mean: vec![0.4, -0.3],
            log_scale: vec![-0.2, 0.3],
        };
        let p = DiagGaussianParams {
            mean: vec![0.0, 0.1],
            log_scale: vec![0.1, -0.1],
        };
        let mc = monte_carlo_kl(&q, &p, 100_000, 5).unwrap();
        let exact = gauss_kl(&q, &p).unwrap();
        assert!((mc.mean - exact).abs() < 3.0 * mc.std_err, "{mc:?} vs {exact}");
    }
}
