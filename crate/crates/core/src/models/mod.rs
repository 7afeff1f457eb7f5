//! The model zoo. Every family is a [`SequenceModel`]: a step-level backbone
//! (deterministic or latent-variable) feeding a within-step emitter.

mod backbone;
mod checkpoint;
mod config;
mod emitters;
mod layers;
mod model;

pub use backbone::{AuxDecoder, DetBackbone, LatentStep, Mode, StochBackbone, StochRun};
pub use checkpoint::{decode_tensors, encode_tensors, load_checkpoint, save_checkpoint, CheckpointMeta, SeedLineage};
pub use config::{default_low_decoder, Family, HeadConfig, LowDecoder, ModelConfig, SrnnVariant};
pub use emitters::{head_kinds, Delta, Emitter, Factorized, HierMade, HierRecurrent};
pub use layers::{spread_mixture_means, Cell, CellKind, ElementHeads, Head, HeadKind, Linear, PrefixLinear};
pub use model::{Backbone, ForwardResult, HiddenTrace, LatentTrace, SequenceModel};

use crate::datasets::{LeakScheme, StepSequence};
use crate::distributions::ElementKind;
use crate::error::{Error, Result};

fn check_family(seq: &StepSequence, cfg: &ModelConfig, want: &[Family]) -> Result<()> {
    if !want.contains(&cfg.family) {
        return Err(Error::invalid(format!(
            "expected one of {:?}, config has {}",
            want.iter().map(|f| f.name()).collect::<Vec<_>>(),
            cfg.family
        )));
    }
    if seq.steps() == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(())
}

pub fn frnn_forward<'m>(model: &'m SequenceModel, seq: &StepSequence) -> Result<ForwardResult<'m>> {
    check_family(seq, model.config(), &[Family::FRnn])?;
    model.forward(seq, Mode::Prior, &[])
}

pub fn fsrnn_forward<'m>(
    model: &'m SequenceModel,
    seq: &StepSequence,
    mode: Mode,
    noise: &[f64],
) -> Result<ForwardResult<'m>> {
    check_family(seq, model.config(), &[Family::FSrnn])?;
    model.forward(seq, mode, noise)
}

pub fn delta_rnn_forward<'m>(model: &'m SequenceModel, seq: &StepSequence) -> Result<ForwardResult<'m>> {
    check_family(seq, model.config(), &[Family::DeltaRnn])?;
    model.forward(seq, Mode::Prior, &[])
}

pub fn hier_forward<'m>(
    model: &'m SequenceModel,
    seq: &StepSequence,
    mode: Mode,
    noise: &[f64],
) -> Result<ForwardResult<'m>> {
    check_family(seq, model.config(), &[Family::RnnHier, Family::SrnnHier])?;
    model.forward(seq, mode, noise)
}

pub fn flat_forward<'m>(
    model: &'m SequenceModel,
    seq: &StepSequence,
    mode: Mode,
    noise: &[f64],
) -> Result<ForwardResult<'m>> {
    check_family(seq, model.config(), &[Family::RnnFlat, Family::SrnnFlat])?;
    if !seq.is_single_kind() {
        return Err(Error::NotApplicable("mixed element kinds".into()));
    }
    model.forward(seq, mode, noise)
}

pub fn generate(model: &SequenceModel, steps: usize, seed: u64) -> Result<StepSequence> {
    model.generate(steps, seed)
}

pub fn count_parameters(model: &SequenceModel) -> usize {
    model.params().num_scalars()
}

fn count_for(cfg: &ModelConfig, kinds: &[ElementKind]) -> Result<usize> {
    Ok(count_parameters(&SequenceModel::new(cfg, kinds, 0)?))
}

/// Adjust `hidden` and `emit_hidden` of `base` so the parameter count lands as
/// close to `target` as the two widths allow, preferring balanced widths among
/// near-ties.
pub fn match_parameters(base: &ModelConfig, kinds: &[ElementKind], target: usize) -> Result<ModelConfig> {
    let mut best: Option<(f64, f64, ModelConfig)> = None;
    let upper_hidden = 512usize;
    let mut h = 2usize;
    while h <= upper_hidden {
        let mut cfg = base.clone();
        cfg.hidden = h;
        cfg.emit_hidden = 1;
        if count_for(&cfg, kinds)? > target {
            break;
        }
        // largest emit width that stays at or below the target, and the next one up
        let (mut lo, mut hi) = (1usize, 1usize);
        loop {
            cfg.emit_hidden = hi;
            if count_for(&cfg, kinds)? > target || hi >= 4096 {
                break;
            }
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            cfg.emit_hidden = mid;
            if count_for(&cfg, kinds)? > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        for e in [lo, hi] {
            cfg.emit_hidden = e;
            let n = count_for(&cfg, kinds)?;
            let dev = (n as f64 - target as f64).abs() / target as f64;
            let balance = ((h as f64) / (e as f64)).ln().abs();
            let better = match &best {
                None => true,
                Some((bd, bb, _)) => {
                    let tie = 0.005;
                    if dev <= tie && *bd <= tie {
                        balance < *bb
                    } else {
                        dev < *bd
                    }
                }
            };
            if better {
                best = Some((dev, balance, cfg.clone()));
            }
        }
        h += if h < 16 { 2 } else { 4 };
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::invalid(format!("no width combination reaches {target} parameters")))
}

/// One parameter-matched config per applicable family. Flat families are
/// skipped on mixed-kind data and DELTA-RNN on single-element data.
pub fn default_family_configs(kinds: &[ElementKind], target: usize) -> Result<Vec<ModelConfig>> {
    let single_kind = kinds.iter().all(|k| *k == kinds[0]);
    let speech_like = kinds.iter().all(|k| *k == ElementKind::Continuous);
    let mut out = Vec::new();
    for fam in Family::ALL {
        if fam.is_flat() && !single_kind {
            continue;
        }
        if fam == Family::DeltaRnn && kinds.len() < 2 {
            continue;
        }
        let mut cfg = ModelConfig::new(fam, 8, 8);
        if fam.is_hier() {
            cfg.low_decoder = Some(default_low_decoder(speech_like));
        }
        if fam == Family::DeltaRnn {
            cfg.leak = Some(LeakScheme::Interleave { u: 2 });
        }
        out.push(match_parameters(&cfg, kinds, target)?);
    }
    Ok(out)
}
