//! Optimization loop: Adam with a cosine learning-rate schedule, KL annealing,
//! gradient clipping, periodic validation and checkpoints.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{make_batches, StepSequence};
use crate::error::{Error, Result};
use crate::evaluation::{default_bound, test_loglik, Convention};
use crate::models::{save_checkpoint, CheckpointMeta, Mode, SeedLineage, SequenceModel, SrnnVariant};
use crate::objectives::{mle_loss, objective_with_aux, ObjectiveBreakdown};
use crate::params::{Gradients, ParamStore};

fn default_lr_base() -> f64 {
    1e-3
}
fn default_lr_final() -> f64 {
    1e-6
}
fn default_kl_start() -> f64 {
    0.2
}
fn default_kl_step() -> f64 {
    5e-5
}
fn default_clip() -> Option<f64> {
    Some(1.0)
}
fn default_valid_every() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    #[serde(default = "default_lr_base")]
    pub lr_base: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    pub total_updates: u64,
    pub batch_size: usize,
    #[serde(default = "default_kl_start")]
    pub kl_start: f64,
    #[serde(default = "default_kl_step")]
    pub kl_step: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_valid_every")]
    pub valid_every: u64,
}

impl TrainHyper {
    pub fn new(total_updates: u64, batch_size: usize, seed: u64) -> Self {
        Self {
            lr_base: default_lr_base(),
            lr_final: default_lr_final(),
            total_updates,
            batch_size,
            kl_start: default_kl_start(),
            kl_step: default_kl_step(),
            alpha: 0.0,
            beta: 0.0,
            seed,
            clip_norm: default_clip(),
            valid_every: default_valid_every(),
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr_base > 0.0 && self.lr_final > 0.0) {
            out.push("learning rates must be positive".into());
        }
        if self.total_updates < 1 {
            out.push("total_updates must be at least 1".into());
        }
        if self.batch_size < 1 {
            out.push("batch_size must be at least 1".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            out.push("alpha and beta must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.kl_start) || self.kl_step < 0.0 {
            out.push("kl_start must lie in [0, 1] and kl_step must be nonnegative".into());
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            out.push("clip_norm must be positive when set".into());
        }
        if self.valid_every < 1 {
            out.push("valid_every must be at least 1".into());
        }
        out
    }

    pub fn kl_coeff(&self, update: u64) -> f64 {
        (self.kl_start + self.kl_step * update as f64).min(1.0)
    }
}

/// Cosine decay from `lr_base` at update 0 to `lr_final` at `total_updates`.
pub fn cosine_lr(update: u64, hyper: &TrainHyper) -> f64 {
    if update >= hyper.total_updates {
        return hyper.lr_final;
    }
    let frac = update as f64 / hyper.total_updates as f64;
    hyper.lr_final + 0.5 * (hyper.lr_base - hyper.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// Bias-corrected Adam step. Non-finite gradients leave everything untouched.
pub fn adam_update(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient contains NaN or Inf; update skipped".into()));
    }
    let g = grads.to_flat();
    if g.len() != state.m.len() || g.len() != params.num_scalars() {
        return Err(Error::shape(format!("{} gradient entries", state.m.len()), g.len()));
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    let mut flat = params.to_flat();
    for (k, gk) in g.iter().enumerate() {
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * gk;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * gk * gk;
        let mh = state.m[k] / c1;
        let vh = state.v[k] / c2;
        flat[k] -= lr * mh / (vh.sqrt() + state.eps);
    }
    params.set_flat(&flat);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub update: u64,
    pub adam: AdamState,
    pub best_valid: Option<f64>,
    /// Seconds spent in the loop so far.
    pub wall_clock: f64,
}

/// Objective and ascent gradient for one sequence.
pub fn sequence_objective(
    model: &SequenceModel,
    seq: &StepSequence,
    hyper: &TrainHyper,
    update: u64,
    noise: &[f64],
) -> Result<(ObjectiveBreakdown, Gradients)> {
    let mut r = model.forward(seq, Mode::Posterior, noise)?;
    let obj = if model.is_stochastic() {
        let zf = model.config().srnn_variant == SrnnVariant::ZForcing;
        let (a, b) = if zf { (hyper.alpha, hyper.beta) } else { (0.0, 0.0) };
        objective_with_aux(&mut r, seq, hyper.kl_coeff(update), a, b)?
    } else {
        mle_loss(&mut r, seq)?
    };
    let grads = r.graph.backward(obj.node).params;
    Ok((obj.breakdown, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub update: u64,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub coeff: f64,
    pub aux: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidLine {
    pub update: u64,
    pub valid: f64,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingLine {
    pub update: u64,
    pub elapsed_s: f64,
}

/// Where a run writes logs and checkpoints.
#[derive(Clone, Debug)]
pub struct RunSink {
    pub dir: PathBuf,
    pub config_hash: String,
    pub seeds: SeedLineage,
}

impl RunSink {
    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn timing_path(&self) -> PathBuf {
        self.dir.join("timing.jsonl")
    }

    pub fn checkpoint_path(&self, tag: &str) -> PathBuf {
        self.dir.join(format!("{tag}.bin"))
    }

    fn save(&self, model: &SequenceModel, tag: &str, step: u64) -> Result<()> {
        let meta = CheckpointMeta {
            config_hash: self.config_hash.clone(),
            step,
            param_count: model.params().num_scalars(),
            seeds: self.seeds.clone(),
            model: model.config().clone(),
            kinds: model.kinds().to_vec(),
        };
        save_checkpoint(model, self.checkpoint_path(tag), &meta)
    }
}

struct Logs {
    metrics: Option<BufWriter<File>>,
    timing: Option<BufWriter<File>>,
}

fn open(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Logs {
    fn line<T: Serialize>(w: &mut Option<BufWriter<File>>, value: &T) -> Result<()> {
        if let Some(w) = w {
            serde_json::to_writer(&mut *w, value)?;
            w.write_all(b"\n").map_err(|e| Error::io("log", e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        for w in [&mut self.metrics, &mut self.timing].into_iter().flatten() {
            w.flush().map_err(|e| Error::io("log", e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: RunState,
    pub history: Vec<MetricsLine>,
    pub validation: Vec<ValidLine>,
    /// Parameters at the best validation score (the final ones when no validation data).
    pub best_params: ParamStore,
}

/// Validation score: per-step average under the model's default bound.
pub fn validation_score(model: &SequenceModel, valid: &[StepSequence], seed: u64) -> Result<f64> {
    Ok(test_loglik(model, valid, Convention::StepAverage, default_bound(model), seed)?.score)
}

/// Run `hyper.total_updates` updates. Every random choice follows from `hyper.seed`.
pub fn train_model(
    model: &mut SequenceModel,
    train: &[StepSequence],
    valid: &[StepSequence],
    hyper: &TrainHyper,
    sink: Option<&RunSink>,
) -> Result<TrainOutcome> {
    let problems = hyper.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let batches = make_batches(train, hyper.batch_size, hyper.seed)?;
    let mut logs = Logs {
        metrics: sink.map(|s| open(&s.metrics_path())).transpose()?,
        timing: sink.map(|s| open(&s.timing_path())).transpose()?,
    };
    let mut state = RunState {
        update: 0,
        adam: AdamState::new(model.params().num_scalars()),
        best_valid: None,
        wall_clock: 0.0,
    };
    let mut history = Vec::new();
    let mut validation = Vec::new();
    let mut best_params = model.params().clone();
    let start = Instant::now();
    let mut epoch = 0u64;
    let mut queue: std::collections::VecDeque<Vec<usize>> = Default::default();

    while state.update < hyper.total_updates {
        if queue.is_empty() {
            queue.extend(batches.epoch_batches(epoch));
            epoch += 1;
        }
        let batch = queue.pop_front().unwrap();
        let u = state.update;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_0f_d1ff);
        noise_rng.set_stream(u);

        let mut grads = Gradients::zeros_like(model.params());
        let (mut total, mut recon, mut kl, mut aux) = (0.0, 0.0, 0.0, 0.0);
        let weight = 1.0 / batch.len() as f64;
        for &i in &batch {
            let seq = &train[i];
            let noise = model.sample_noise(seq.steps(), &mut noise_rng);
            let (b, g) = sequence_objective(model, seq, hyper, u, &noise)?;
            if !b.total.is_finite() {
                if let Some(s) = sink {
                    s.save(model, "last_good", u)?;
                }
                logs.flush()?;
                return Err(Error::NonFinite(format!("objective {} at update {u}", b.total)));
            }
            total += weight * b.total;
            recon += weight * b.recon_total();
            kl += weight * b.kl_total();
            aux += weight * b.aux;
            // descend on the negated objective
            grads.accumulate(&g, -weight);
        }
        let norm = grads.norm();
        if let Some(c) = hyper.clip_norm {
            if norm > c {
                grads.scale(c / norm);
            }
        }
        let lr = cosine_lr(u, hyper);
        if let Err(e) = adam_update(model.params_mut(), &grads, &mut state.adam, lr) {
            if let Some(s) = sink {
                s.save(model, "last_good", u)?;
            }
            logs.flush()?;
            return Err(e);
        }
        state.update += 1;
        let line = MetricsLine {
            update: u,
            total,
            recon,
            kl,
            coeff: if model.is_stochastic() { hyper.kl_coeff(u) } else { 0.0 },
            aux,
            lr,
            grad_norm: norm,
        };
        Logs::line(&mut logs.metrics, &line)?;
        history.push(line);

        let done = state.update == hyper.total_updates;
        if !valid.is_empty() && (state.update.is_multiple_of(hyper.valid_every) || done) {
            let score = validation_score(model, valid, hyper.seed)?;
            let best = state.best_valid.is_none_or(|b| score > b);
            if best {
                state.best_valid = Some(score);
                best_params = model.params().clone();
                if let Some(s) = sink {
                    s.save(model, "best", state.update)?;
                }
            }
            let v = ValidLine {
                update: state.update,
                valid: score,
                best,
            };
            Logs::line(&mut logs.metrics, &v)?;
            validation.push(v);
        }
        if state.update.is_multiple_of(1000) || done {
            state.wall_clock = start.elapsed().as_secs_f64();
            Logs::line(
                &mut logs.timing,
                &TimingLine {
                    update: state.update,
                    elapsed_s: state.wall_clock,
                },
            )?;
        }
    }
    if valid.is_empty() {
        best_params = model.params().clone();
        if let Some(s) = sink {
            s.save(model, "best", state.update)?;
        }
    }
    if let Some(s) = sink {
        s.save(model, "final", state.update)?;
    }
    logs.flush()?;
    state.wall_clock = start.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        state,
        history,
        validation,
        best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_generate, SyntheticSpec};
    use crate::models::{Family, ModelConfig};

    #[test]
    fn schedule_endpoints() {
        let h = TrainHyper::new(1000, 1, 0);
        assert_eq!(cosine_lr(0, &h), 1e-3);
        assert_eq!(cosine_lr(1000, &h), 1e-6);
        assert_eq!(cosine_lr(5000, &h), 1e-6);
        assert!((cosine_lr(500, &h) - 5.005e-4).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for u in 0..=1000 {
            let lr = cosine_lr(u, &h);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut store = ParamStore::new();
        store.add("w", vec![2], vec![1.0, -2.0]);
        let mut st = AdamState::new(2);
        st.m = vec![0.5, 0.5];
        let g = Gradients::zeros_like(&store);
        adam_update(&mut store, &g, &mut st, 0.1).unwrap();
        // m decays, but bias correction of a nonzero m still moves w
        assert_eq!(st.m, vec![0.45, 0.45]);
        let mut store = ParamStore::new();
        store.add("w", vec![2], vec![1.0, -2.0]);
        let mut st = AdamState::new(2);
        let g = Gradients::zeros_like(&store);
        adam_update(&mut store, &g, &mut st, 0.1).unwrap();
        assert_eq!(store.to_flat(), vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![2], vec![0.0, 0.0]);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id).copy_from_slice(&[3.0, -0.01]);
        let mut st = AdamState::new(2);
        adam_update(&mut store, &g, &mut st, 0.01).unwrap();
        let w = store.to_flat();
        assert!((w[0] + 0.01).abs() < 1e-8 && (w[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![1], vec![0.0]);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(id)[0] = f64::NAN;
        let mut st = AdamState::new(1);
        assert!(adam_update(&mut store, &g, &mut st, 0.01).is_err());
        assert_eq!(store.to_flat(), vec![0.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", vec![3], vec![2.0, -1.0, 0.5]);
        let target = [0.3, 0.1, -0.2];
        let loss = |w: &[f64]| w.iter().zip(&target).map(|(a, b)| (a - b) * (a - b) * 2.0).sum::<f64>();
        let mut st = AdamState::new(3);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let w = store.to_flat();
            losses.push(loss(&w));
            let mut g = Gradients::zeros_like(&store);
            for k in 0..3 {
                g.get_mut(id)[k] = 4.0 * (w[k] - target[k]);
            }
            adam_update(&mut store, &g, &mut st, 0.02).unwrap();
        }
        for w in losses[10..].windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(losses[99] < 0.5 * losses[0]);
    }

    #[test]
    fn smoke_run_writes_both_checkpoints() {
        let spec = SyntheticSpec {
            sequences: 4,
            steps: 3,
            width: 2,
            ..SyntheticSpec::default()
        };
        let data = synth_generate(&spec).unwrap();
        let mut model = SequenceModel::new(&ModelConfig::new(Family::FSrnn, 3, 3).with_components(2), data[0].kinds(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sink = RunSink {
            dir: dir.path().to_path_buf(),
            config_hash: "x".into(),
            seeds: SeedLineage {
                global: 0,
                init: 0,
                data: 0,
                noise: 0,
            },
        };
        let h = TrainHyper::new(1, 2, 0);
        let out = train_model(&mut model, &data[..3], &data[3..], &h, Some(&sink)).unwrap();
        assert_eq!(out.state.update, 1);
        assert!(sink.checkpoint_path("best").exists());
        assert!(sink.checkpoint_path("final").exists());
        let lines = std::fs::read_to_string(sink.metrics_path()).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    #[test]
    fn training_lowers_the_loss() {
        let spec = SyntheticSpec {
            sequences: 16,
            steps: 4,
            width: 2,
            ..SyntheticSpec::default()
        };
        let data = synth_generate(&spec).unwrap();
        let mut model = SequenceModel::new(&ModelConfig::new(Family::FRnn, 4, 4).with_components(2), data[0].kinds(), 0).unwrap();
        let mut h = TrainHyper::new(300, 16, 0);
        h.lr_base = 1e-2;
        let out = train_model(&mut model, &data, &[], &h, None).unwrap();
        let first = -out.history[0].total;
        let last = -out.history.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }
}
