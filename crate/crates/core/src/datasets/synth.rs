use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::StepSequence;
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthFamily {
    /// Order-1 autoregression across the elements of a step; the first
    /// element of a step continues from the last element of the previous one.
    #[default]
    WithinStepAr,
    IidNoise,
    /// Three fixed-frequency sinusoids with per-sequence random phases plus noise.
    SinusoidMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub family: SynthFamily,
    pub sequences: usize,
    pub steps: usize,
    pub width: usize,
    /// Within-step correlation coefficient.
    #[serde(default)]
    pub rho: f64,
    /// Coefficient linking the first element of step `t` to the last of step `t - 1`.
    #[serde(default)]
    pub across: f64,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_noise() -> f64 {
    1.0
}

impl Default for SyntheticSpec {
    /// A small within-step-AR corpus: 100 sequences of 16 steps, 8 elements per step.
    fn default() -> Self {
        Self {
            family: SynthFamily::WithinStepAr,
            sequences: 100,
            steps: 16,
            width: 8,
            rho: 0.9,
            across: 0.5,
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..1.0).contains(&self.rho) {
            problems.push(format!("rho {} outside [0, 1)", self.rho));
        }
        if !(self.across.abs() < 1.0) {
            problems.push(format!("across-step coefficient {} outside (-1, 1)", self.across));
        }
        if !(self.noise_scale > 0.0) {
            problems.push(format!("noise scale {} must be positive", self.noise_scale));
        }
        if self.sequences == 0 || self.steps == 0 || self.width == 0 {
            problems.push("sequence count, steps and width must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

const SINE_FREQS: [f64; 3] = [0.031, 0.117, 0.293];

/// Generate a dataset; a pure function of the spec (including its seed).
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<StepSequence>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t_len, l) = (spec.steps, spec.width);
    let s = spec.noise_scale;
    (0..spec.sequences)
        .map(|_| {
            let mut v = Vec::with_capacity(t_len * l);
            match spec.family {
                SynthFamily::WithinStepAr => {
                    let innov_w = (1.0 - spec.rho * spec.rho).sqrt();
                    let innov_a = (1.0 - spec.across * spec.across).sqrt();
                    let mut prev: f64 = s * rng.sample::<f64, _>(StandardNormal);
                    for t in 0..t_len {
                        for i in 0..l {
                            let e: f64 = rng.sample(StandardNormal);
                            let x = match (t, i) {
                                (0, 0) => prev,
                                (_, 0) => spec.across * prev + innov_a * s * e,
                                _ => spec.rho * prev + innov_w * s * e,
                            };
                            v.push(x);
                            prev = x;
                        }
                    }
                }
                SynthFamily::IidNoise => {
                    for _ in 0..t_len * l {
                        v.push(s * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                SynthFamily::SinusoidMixture => {
                    let phases: Vec<f64> = SINE_FREQS
                        .iter()
                        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                        .collect();
                    for k in 0..t_len * l {
                        let signal: f64 = SINE_FREQS
                            .iter()
                            .zip(&phases)
                            .enumerate()
                            .map(|(j, (w, p))| (w * std::f64::consts::TAU * k as f64 + p).sin() / (j + 1) as f64)
                            .sum();
                        v.push(signal + s * rng.sample::<f64, _>(StandardNormal));
                    }
                }
            }
            StepSequence::continuous(v, t_len, l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rho: f64) -> SyntheticSpec {
        SyntheticSpec {
            family: SynthFamily::WithinStepAr,
            sequences: 4,
            steps: 5,
            width: 8,
            rho,
            across: 0.5,
            noise_scale: 1.0,
            seed: 3,
        }
    }

    /// Pooled lag-1 correlation between neighbouring elements of the same step.
    fn within_step_lag1(data: &[StepSequence]) -> (f64, usize) {
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        for s in data {
            for t in 0..s.steps() {
                for w in s.step(t).windows(2) {
                    let (x, y) = (w[0], w[1]);
                    sx += x;
                    sy += y;
                    sxy += x * y;
                    sxx += x * x;
                    syy += y * y;
                    n += 1;
                }
            }
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf).powi(2);
        let vy = syy / nf - (sy / nf).powi(2);
        (cov / (vx * vy).sqrt(), n)
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_generate(&spec(0.9)).unwrap(), synth_generate(&spec(0.9)).unwrap());
        let mut other = spec(0.9);
        other.seed = 4;
        assert_ne!(synth_generate(&spec(0.9)).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn zero_rho_elements_uncorrelated() {
        let mut s = spec(0.0);
        s.sequences = 2000;
        let (r, n) = within_step_lag1(&synth_generate(&s).unwrap());
        assert!(r.abs() < 4.0 / (n as f64).sqrt(), "r = {r}");
    }

    #[test]
    fn within_step_correlation_matches_rho() {
        let mut s = spec(0.9);
        s.sequences = 20_000; // 1e5 steps
        let data = synth_generate(&s).unwrap();
        let (r, n) = within_step_lag1(&data);
        // Bartlett standard error of a lag-1 autocorrelation for AR(1).
        let se = ((1.0 - 0.81) / n as f64).sqrt();
        assert!((r - 0.9).abs() < 3.0 * se, "r = {r}, se = {se}");
    }

    #[test]
    fn validation() {
        assert!(synth_generate(&spec(1.0)).is_err());
        let mut s = spec(0.5);
        s.noise_scale = 0.0;
        assert!(synth_generate(&s).is_err());
    }
}
