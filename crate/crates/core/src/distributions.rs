//! Output and latent distribution heads.
//!
//! Every density here is evaluated from unconstrained parameters: mixture logits,
//! means and log-scales for Gaussian mixtures, a single logit for Bernoulli
//! elements, and mean/log-scale vectors for diagonal Gaussians. Log-scales are
//! clamped to `[LOG_SCALE_MIN, LOG_SCALE_MAX]` before use; the gradient is zero
//! outside that band.
//!
//! The `*_kernel` functions compute a value together with its gradient with
//! respect to the raw parameters and are shared with the autodiff graph.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_SCALE_MIN: f64 = -7.0;
pub const LOG_SCALE_MAX: f64 = 7.0;

/// Mixture component count used on continuous data unless a run overrides it.
pub const DEFAULT_COMPONENTS: usize = 20;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureParams {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussianParams {
    pub mean: Vec<f64>,
    pub log_scale: Vec<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct BernoulliParams {
    pub logit: f64,
}

/// Parameters of a single element's head.
#[derive(Clone, Debug, PartialEq)]
pub enum DistParams {
    Gmm(GaussianMixtureParams),
    Bernoulli(BernoulliParams),
    Gaussian(DiagGaussianParams),
}

#[inline]
fn clamp_log_scale(s: f64) -> (f64, bool) {
    if s < LOG_SCALE_MIN {
        (LOG_SCALE_MIN, false)
    } else if s > LOG_SCALE_MAX {
        (LOG_SCALE_MAX, false)
    } else {
        (s, true)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl GaussianMixtureParams {
    pub fn components(&self) -> usize {
        self.logits.len()
    }

    /// Unpack a `[logits | means | log_scales]` block.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || !raw.len().is_multiple_of(3) {
            return Err(Error::shape("3K mixture parameters", raw.len()));
        }
        let k = raw.len() / 3;
        Ok(Self {
            logits: raw[..k].to_vec(),
            means: raw[k..2 * k].to_vec(),
            log_scales: raw[2 * k..].to_vec(),
        })
    }

    pub fn to_raw(&self) -> Vec<f64> {
        let mut raw = self.logits.clone();
        raw.extend_from_slice(&self.means);
        raw.extend_from_slice(&self.log_scales);
        raw
    }

    fn validate(&self) -> Result<()> {
        let k = self.logits.len();
        if k == 0 || self.means.len() != k || self.log_scales.len() != k {
            return Err(Error::shape(
                format!("{k} components in every field"),
                format!(
                    "{} logits, {} means, {} log-scales",
                    k,
                    self.means.len(),
                    self.log_scales.len()
                ),
            ));
        }
        Ok(())
    }

    /// Mixture weights `softmax(logits)`.
    pub fn weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|a| (a - lse).exp()).collect()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.log_scales.iter().map(|&s| clamp_log_scale(s).0.exp()).collect()
    }
}

/// Log-density of a Gaussian mixture given raw `[logits | means | log_scales]`.
/// When `grad` is supplied it receives d(value)/d(raw) (overwritten).
pub fn gmm_kernel(raw: &[f64], x: f64, grad: Option<&mut [f64]>) -> f64 {
    let k = raw.len() / 3;
    let (logits, rest) = raw.split_at(k);
    let (means, log_scales) = rest.split_at(k);
    let lse_a = log_sum_exp(logits);
    let mut comp = [0.0f64; 64];
    let mut comp_vec;
    let terms: &mut [f64] = if k <= 64 {
        &mut comp[..k]
    } else {
        comp_vec = vec![0.0; k];
        &mut comp_vec
    };
    for j in 0..k {
        let (s, _) = clamp_log_scale(log_scales[j]);
        let u = (x - means[j]) * (-s).exp();
        terms[j] = logits[j] - lse_a - HALF_LN_2PI - s - 0.5 * u * u;
    }
    let value = log_sum_exp(terms);
    if let Some(g) = grad {
        for j in 0..k {
            let r = (terms[j] - value).exp();
            let w = (logits[j] - lse_a).exp();
            let (s, inside) = clamp_log_scale(log_scales[j]);
            let inv_var = (-2.0 * s).exp();
            let d = x - means[j];
            g[j] = r - w;
            g[k + j] = r * d * inv_var;
            g[2 * k + j] = if inside { r * (d * d * inv_var - 1.0) } else { 0.0 };
        }
    }
    value
}

/// `log p(x)` for binary `x` under `Bernoulli(sigmoid(logit))`. Returns the
/// value and d/d(logit).
pub fn bernoulli_kernel(logit: f64, x: f64) -> (f64, f64) {
    if x >= 0.5 {
        (-softplus(-logit), 1.0 - sigmoid(logit))
    } else {
        (-softplus(logit), -sigmoid(logit))
    }
}

/// Diagonal Gaussian log-density. Gradients (if requested) are written for
/// mean, log-scale and the evaluation point.
pub fn diag_gauss_kernel(
    mean: &[f64],
    log_scale: &[f64],
    z: &[f64],
    mut grads: Option<(&mut [f64], &mut [f64], &mut [f64])>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..mean.len() {
        let (s, inside) = clamp_log_scale(log_scale[i]);
        let inv_sd = (-s).exp();
        let d = z[i] - mean[i];
        let u = d * inv_sd;
        total += -HALF_LN_2PI - s - 0.5 * u * u;
        if let Some((gm, gs, gz)) = grads.as_mut() {
            gm[i] = d * inv_sd * inv_sd;
            gs[i] = if inside { u * u - 1.0 } else { 0.0 };
            gz[i] = -gm[i];
        }
    }
    total
}

/// Closed-form `KL(q || p)` between diagonal Gaussians, summed over dimensions.
/// Gradients (if requested) are written for q mean, q log-scale, p mean, p log-scale.
pub fn gauss_kl_kernel(
    q_mean: &[f64],
    q_log_scale: &[f64],
    p_mean: &[f64],
    p_log_scale: &[f64],
    mut grads: Option<[&mut [f64]; 4]>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..q_mean.len() {
        let (sq, in_q) = clamp_log_scale(q_log_scale[i]);
        let (sp, in_p) = clamp_log_scale(p_log_scale[i]);
        let var_ratio = (2.0 * (sq - sp)).exp();
        let d = q_mean[i] - p_mean[i];
        let inv_p_var = (-2.0 * sp).exp();
        total += sp - sq + 0.5 * (var_ratio + d * d * inv_p_var) - 0.5;
        if let Some([gqm, gqs, gpm, gps]) = grads.as_mut() {
            gqm[i] = d * inv_p_var;
            gpm[i] = -d * inv_p_var;
            gqs[i] = if in_q { var_ratio - 1.0 } else { 0.0 };
            gps[i] = if in_p {
                1.0 - var_ratio - d * d * inv_p_var
            } else {
                0.0
            };
        }
    }
    total
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("evaluation point {x}")))
    }
}

pub fn gmm_logpdf(params: &GaussianMixtureParams, x: f64) -> Result<f64> {
    params.validate()?;
    check_finite(x)?;
    Ok(gmm_kernel(&params.to_raw(), x, None))
}

pub fn bernoulli_logpmf(params: &BernoulliParams, x: f64) -> Result<f64> {
    if x != 0.0 && x != 1.0 {
        return Err(Error::invalid(format!("non-binary value {x}")));
    }
    Ok(bernoulli_kernel(params.logit, x).0)
}

pub fn diag_gauss_logpdf(params: &DiagGaussianParams, z: &[f64]) -> Result<f64> {
    let d = params.mean.len();
    if params.log_scale.len() != d || z.len() != d {
        return Err(Error::shape(
            format!("dimension {d}"),
            format!("log-scale {}, point {}", params.log_scale.len(), z.len()),
        ));
    }
    Ok(diag_gauss_kernel(&params.mean, &params.log_scale, z, None))
}

pub fn gauss_kl(q: &DiagGaussianParams, p: &DiagGaussianParams) -> Result<f64> {
    let d = q.mean.len();
    if q.log_scale.len() != d || p.mean.len() != d || p.log_scale.len() != d {
        return Err(Error::shape(
            format!("dimension {d}"),
            format!("q {}/{}, p {}/{}", d, q.log_scale.len(), p.mean.len(), p.log_scale.len()),
        ));
    }
    Ok(gauss_kl_kernel(&q.mean, &q.log_scale, &p.mean, &p.log_scale, None))
}

/// `z = mean + exp(log_scale) * noise`.
pub fn reparam_sample(params: &DiagGaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != params.mean.len() || params.log_scale.len() != params.mean.len() {
        return Err(Error::shape(params.mean.len(), noise.len()));
    }
    Ok(params
        .mean
        .iter()
        .zip(&params.log_scale)
        .zip(noise)
        .map(|((m, s), e)| m + clamp_log_scale(*s).0.exp() * e)
        .collect())
}

impl DistParams {
    pub fn log_prob(&self, x: f64) -> Result<f64> {
        match self {
            DistParams::Gmm(p) => gmm_logpdf(p, x),
            DistParams::Bernoulli(p) => bernoulli_logpmf(p, x),
            DistParams::Gaussian(p) => diag_gauss_logpdf(p, &[x]),
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            DistParams::Bernoulli(_) => ElementKind::Binary,
            _ => ElementKind::Continuous,
        }
    }

    /// Draw a value given a uniform variate and a standard normal variate.
    pub fn sample(&self, uniform: f64, normal: f64) -> f64 {
        match self {
            DistParams::Bernoulli(p) => {
                if uniform < sigmoid(p.logit) {
                    1.0
                } else {
                    0.0
                }
            }
            DistParams::Gaussian(p) => p.mean[0] + clamp_log_scale(p.log_scale[0]).0.exp() * normal,
            DistParams::Gmm(p) => {
                let w = p.weights();
                let mut acc = 0.0;
                let mut pick = w.len() - 1;
                for (j, wj) in w.iter().enumerate() {
                    acc += wj;
                    if uniform < acc {
                        pick = j;
                        break;
                    }
                }
                p.means[pick] + clamp_log_scale(p.log_scales[pick]).0.exp() * normal
            }
        }
    }
}

/// Log-probability of one step: the sum of per-element log-densities.
pub fn step_logprob(heads: &[DistParams], step: &[f64]) -> Result<f64> {
    if heads.len() != step.len() {
        return Err(Error::shape(
            format!("{} heads", step.len()),
            format!("{} heads", heads.len()),
        ));
    }
    heads.iter().zip(step).map(|(h, &x)| h.log_prob(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_mix() -> GaussianMixtureParams {
        GaussianMixtureParams {
            logits: vec![0.0],
            means: vec![0.0],
            log_scales: vec![0.0],
        }
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = gmm_logpdf(&std_normal_mix(), 0.0).unwrap();
        assert!((v + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn symmetric_two_component_mixture() {
        let p = GaussianMixtureParams {
            logits: vec![0.0, 0.0],
            means: vec![-1.0, 1.0],
            log_scales: vec![0.0, 0.0],
        };
        let v = gmm_logpdf(&p, 0.0).unwrap();
        assert!((v - (-HALF_LN_2PI - 0.5)).abs() < 1e-12);
        assert!((v + 1.418_938_5).abs() < 1e-7);
    }

    #[test]
    fn gmm_rejects_non_finite_point() {
        assert!(matches!(
            gmm_logpdf(&std_normal_mix(), f64::NAN),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn bernoulli_values() {
        let p = BernoulliParams { logit: 0.0 };
        assert!((bernoulli_logpmf(&p, 1.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bernoulli_logpmf(&p, 0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-12);
        let v = bernoulli_logpmf(&BernoulliParams { logit: 20.0 }, 0.0).unwrap();
        // -20 - ln(1 + e^-20)
        assert!((v - (-20.000_000_002_061_153)).abs() < 1e-12, "{v}");
        assert!(bernoulli_logpmf(&p, 2.0).is_err());
    }

    #[test]
    fn diag_gauss_factorizes() {
        let one = DiagGaussianParams {
            mean: vec![0.0],
            log_scale: vec![0.0],
        };
        let two = DiagGaussianParams {
            mean: vec![0.0, 0.0],
            log_scale: vec![0.0, 0.0],
        };
        let a = diag_gauss_logpdf(&one, &[0.0]).unwrap();
        let b = diag_gauss_logpdf(&two, &[0.0, 0.0]).unwrap();
        assert!((a + 0.918_938_5).abs() < 1e-7);
        assert_eq!(b, 2.0 * a);
        assert!(diag_gauss_logpdf(&two, &[0.0]).is_err());
    }

    #[test]
    fn kl_spot_values() {
        let n = |m: f64, var: f64| DiagGaussianParams {
            mean: vec![m],
            log_scale: vec![0.5 * var.ln()],
        };
        assert_eq!(gauss_kl(&n(0.3, 2.0), &n(0.3, 2.0)).unwrap(), 0.0);
        assert!((gauss_kl(&n(1.0, 1.0), &n(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        let v = gauss_kl(&n(0.0, 4.0), &n(0.0, 1.0)).unwrap();
        assert!((v - (1.5 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((v - 0.806_852_8).abs() < 1e-7);
    }

    #[test]
    fn reparam_identities() {
        let p = DiagGaussianParams {
            mean: vec![0.5, -1.0],
            log_scale: vec![0.3, -0.2],
        };
        assert_eq!(reparam_sample(&p, &[0.0, 0.0]).unwrap(), p.mean);
        let unit = DiagGaussianParams {
            mean: vec![0.0, 0.0],
            log_scale: vec![0.0, 0.0],
        };
        assert_eq!(reparam_sample(&unit, &[0.7, -1.1]).unwrap(), vec![0.7, -1.1]);
    }

    #[test]
    fn step_logprob_sums_elements() {
        let heads = vec![DistParams::Gmm(std_normal_mix()), DistParams::Gmm(std_normal_mix())];
        let v = step_logprob(&heads, &[0.0, 0.0]).unwrap();
        assert!((v + 1.837_877).abs() < 1e-6);
        let single = step_logprob(&heads[..1], &[0.0]).unwrap();
        assert_eq!(single, gmm_logpdf(&std_normal_mix(), 0.0).unwrap());
        assert!(step_logprob(&heads, &[0.0]).is_err());
    }

    #[test]
    fn extreme_parameters_stay_finite() {
        for logit in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            for x in [0.0, 1.0] {
                assert!(bernoulli_logpmf(&BernoulliParams { logit }, x).unwrap().is_finite());
            }
        }
        for sigma in [1e-4f64, 1e-2, 1.0, 1e2, 1e4] {
            let p = GaussianMixtureParams {
                logits: vec![30.0, -30.0],
                means: vec![0.0, 3.0],
                log_scales: vec![sigma.ln(), sigma.ln()],
            };
            for x in [-10.0, 0.0, 2.5, 10.0] {
                assert!(gmm_logpdf(&p, x).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn log_scale_clamped() {
        let wide = GaussianMixtureParams {
            logits: vec![0.0],
            means: vec![0.0],
            log_scales: vec![50.0],
        };
        let at_bound = GaussianMixtureParams {
            log_scales: vec![LOG_SCALE_MAX],
            ..wide.clone()
        };
        assert_eq!(gmm_logpdf(&wide, 1.0).unwrap(), gmm_logpdf(&at_bound, 1.0).unwrap());
        let mut g = vec![0.0; 3];
        gmm_kernel(&wide.to_raw(), 1.0, Some(&mut g));
        assert_eq!(g[2], 0.0);
    }
}
