//! JSON experiment configs and the commands built on them: synthesize data,
//! train, evaluate, tabulate and sweep.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{
    flatten_steps, load_pianoroll, load_steps_csv, load_trajectory, load_wav, permute_steps, random_permutation,
    reshape_multiframe, stride_subsample, synth_generate, write_steps_csv, DatasetManifest, FrameSequence,
    SourceFormat, Split, StepSequence, SyntheticSpec,
};
use crate::distributions::ElementKind;
use crate::error::{Error, Result};
use crate::evaluation::{
    render_runtime, results_table, runtime_report, test_loglik, BoundKind, Convention, EvalReport, RunSummary,
};
use crate::models::{load_checkpoint, match_parameters, Family, ModelConfig, SeedLineage, SequenceModel, SrnnVariant};
use crate::training::{train_model, RunSink, TrainHyper};

/// Environment variable naming the root directory for run directories.
pub const OUTPUT_ROOT_VAR: &str = "SEQDENS_OUT";

/// The auxiliary-loss grid searched per stochastic model.
pub const AUX_GRID: [f64; 3] = [0.0, 0.0025, 0.005];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { spec: SyntheticSpec },
    /// A [`DatasetManifest`]; relative paths resolve against the config file.
    Manifest { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Transform {
    Multiframe { frame_len: usize, steps: usize },
    Stride { m: usize },
    /// Fixed random element order; the seed defaults to one derived from the global seed.
    Permute {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Flatten,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub source: DataSource,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    /// Only used for synthetic sources; manifests carry their own splits.
    #[serde(default)]
    pub split: SplitFractions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_convention")]
    pub convention: Convention,
    /// Defaults to `exact` for deterministic families and `elbo` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundKind>,
}

fn default_convention() -> Convention {
    Convention::StepAverage
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            convention: default_convention(),
            bound: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory name and model id; defaults to the family name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    /// When set, widths are chosen so the model has about this many parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_target: Option<usize>,
    pub training: TrainHyper,
    #[serde(default)]
    pub evaluation: EvalSection,
}

/// Shape of the data flowing through the transform chain.
#[derive(Clone, Debug, PartialEq)]
enum Stage {
    Frames,
    Steps(Option<Vec<ElementKind>>),
}

/// 64-bit seed for one purpose, derived from the global seed.
pub fn derive_seed(global: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn seed_lineage(global: u64) -> SeedLineage {
    SeedLineage {
        global,
        init: derive_seed(global, "init"),
        data: derive_seed(global, "data"),
        noise: derive_seed(global, "noise"),
    }
}

impl ExperimentConfig {
    /// Parses a config file; a relative manifest path is resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        if let DataSource::Manifest { path: m } = &mut cfg.dataset.source {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new(".")).join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seeds(&self) -> SeedLineage {
        seed_lineage(self.seed)
    }

    pub fn model_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.family.name().to_string())
    }

    pub fn dataset_id(&self) -> String {
        if let Some(id) = &self.dataset.id {
            return id.clone();
        }
        match &self.dataset.source {
            DataSource::Synthetic { spec } => format!("synthetic-{}", serde_json::to_value(spec.family).unwrap().as_str().unwrap()),
            DataSource::Manifest { path } => path
                .parent()
                .and_then(|p| p.file_name())
                .map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned()),
        }
    }

    pub fn bound(&self) -> BoundKind {
        self.evaluation.bound.unwrap_or(if self.model.family.is_stochastic() {
            BoundKind::Elbo
        } else {
            BoundKind::Exact
        })
    }

    fn source_stage(&self) -> std::result::Result<Stage, String> {
        match &self.dataset.source {
            DataSource::Synthetic { spec } => Ok(Stage::Steps(Some(vec![ElementKind::Continuous; spec.width]))),
            DataSource::Manifest { path } => {
                let m = DatasetManifest::load(path).map_err(|e| format!("dataset manifest: {e}"))?;
                Ok(match m.format {
                    SourceFormat::Wav => Stage::Frames,
                    SourceFormat::Pianoroll => Stage::Steps(Some(vec![ElementKind::Binary; 88])),
                    SourceFormat::Trajectory => Stage::Steps(Some(vec![
                        ElementKind::Binary,
                        ElementKind::Continuous,
                        ElementKind::Continuous,
                    ])),
                    SourceFormat::Steps => Stage::Steps(m.kinds.clone()),
                })
            }
        }
    }

    /// Element kinds seen by the model, or a list of chain errors.
    fn chain_kinds(&self) -> std::result::Result<Option<Vec<ElementKind>>, Vec<String>> {
        let mut stage = self.source_stage().map_err(|e| vec![e])?;
        let mut problems = Vec::new();
        for (k, t) in self.dataset.transforms.iter().enumerate() {
            let at = format!("transform {} ({})", k + 1, transform_name(t));
            stage = match (t, stage) {
                (Transform::Multiframe { frame_len, steps }, Stage::Frames) => {
                    if *frame_len == 0 || *steps == 0 {
                        problems.push(format!("{at}: frame_len and steps must be positive"));
                    }
                    Stage::Steps(Some(vec![ElementKind::Continuous; *frame_len]))
                }
                (Transform::Stride { m }, Stage::Frames) => {
                    if *m == 0 {
                        problems.push(format!("{at}: stride must be positive"));
                    }
                    Stage::Frames
                }
                (Transform::Permute { .. }, s @ Stage::Steps(_)) => s,
                (Transform::Flatten, Stage::Steps(kinds)) => {
                    if let Some(k) = &kinds {
                        if k.iter().any(|x| *x != k[0]) {
                            problems.push(format!("{at}: cannot flatten steps of mixed element kinds"));
                        }
                    }
                    Stage::Frames
                }
                (_, s) => {
                    let have = if s == Stage::Frames { "frame sequences" } else { "step sequences" };
                    problems.push(format!("{at}: not applicable to {have}"));
                    s
                }
            };
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        Ok(match stage {
            Stage::Frames => Some(vec![ElementKind::Continuous]),
            Stage::Steps(k) => k,
        })
    }

    /// Element kinds of the data the model will see. Reads the first training
    /// file when a steps manifest does not declare its kinds.
    pub fn data_kinds(&self) -> Result<Vec<ElementKind>> {
        match self.chain_kinds() {
            Err(p) => Err(Error::Config(p)),
            Ok(Some(k)) => Ok(k),
            Ok(None) => {
                let DataSource::Manifest { path } = &self.dataset.source else { unreachable!() };
                let m = DatasetManifest::load(path)?;
                let first = m.files(Split::Train).first().ok_or(Error::EmptySequence)?;
                let base = path.parent().unwrap_or(Path::new("."));
                let seq = load_steps_csv(base.join(first), None)?;
                let mut stage_kinds = seq.kinds().to_vec();
                for t in &self.dataset.transforms {
                    match t {
                        Transform::Flatten => stage_kinds = vec![ElementKind::Continuous],
                        Transform::Multiframe { frame_len, .. } => stage_kinds = vec![ElementKind::Continuous; *frame_len],
                        _ => {}
                    }
                }
                Ok(stage_kinds)
            }
        }
    }

    /// Every problem with this config; empty when it can run.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(n) = &self.name {
            if n.is_empty() || n.contains(['/', '\\']) || n == "." || n == ".." {
                out.push(format!("name {n:?} is not a valid directory name"));
            }
        }
        if let DataSource::Synthetic { spec } = &self.dataset.source {
            if let Err(Error::Config(p)) = spec.validate() {
                out.extend(p.into_iter().map(|p| format!("synthetic spec: {p}")));
            }
            let f = self.dataset.split;
            if [f.train, f.valid, f.test].iter().any(|v| !(*v >= 0.0)) || (f.train + f.valid + f.test - 1.0).abs() > 1e-9 {
                out.push("split fractions must be nonnegative and sum to 1".into());
            } else if f.train == 0.0 || f.test == 0.0 {
                out.push("train and test fractions must be positive".into());
            } else if spec.sequences > 0 && split_sizes(spec.sequences, &f).iter().any(|&(n, want)| want && n == 0) {
                out.push(format!("{} sequences leave an empty split", spec.sequences));
            }
        }
        match self.data_kinds() {
            Ok(kinds) => {
                out.extend(self.model.problems(&kinds).into_iter().map(|p| format!("model: {p}")));
                if let Some(t) = self.param_target {
                    if t == 0 {
                        out.push("param_target must be positive".into());
                    }
                }
            }
            Err(Error::Config(p)) => out.extend(p),
            Err(e) => out.push(format!("dataset: {e}")),
        }
        out.extend(self.training.problems().into_iter().map(|p| format!("training: {p}")));
        if self.training.seed != 0 {
            out.push("training.seed is derived from the global seed; set `seed` at the top level instead".into());
        }
        let stochastic = self.model.family.is_stochastic();
        let zf = self.model.srnn_variant == SrnnVariant::ZForcing;
        if (self.training.alpha > 0.0 || self.training.beta > 0.0) && !(stochastic && zf) {
            out.push("alpha/beta only apply to z-forcing stochastic families".into());
        }
        match (self.evaluation.bound, stochastic) {
            (Some(BoundKind::Exact), true) => out.push(format!("{} has no exact likelihood; use elbo or multi-sample(k)", self.model.family)),
            (Some(BoundKind::Elbo | BoundKind::MultiSample(_)), false) => {
                out.push(format!("{} is scored exactly; drop the bound", self.model.family))
            }
            (Some(BoundKind::MultiSample(0)), _) => out.push("multi-sample bound needs k ≥ 1".into()),
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Model config after parameter matching.
    pub fn resolved_model(&self) -> Result<ModelConfig> {
        match self.param_target {
            Some(t) => match_parameters(&self.model, &self.data_kinds()?, t),
            None => Ok(self.model.clone()),
        }
    }

    pub fn hyper(&self) -> TrainHyper {
        let mut h = self.training.clone();
        h.seed = self.seeds().noise;
        h
    }
}

fn transform_name(t: &Transform) -> &'static str {
    match t {
        Transform::Multiframe { .. } => "multiframe",
        Transform::Stride { .. } => "stride",
        Transform::Permute { .. } => "permute",
        Transform::Flatten => "flatten",
    }
}

/// `(size, must be nonempty)` for train, valid and test.
fn split_sizes(n: usize, f: &SplitFractions) -> [(usize, bool); 3] {
    let train = (f.train * n as f64).round() as usize;
    let valid = ((f.valid * n as f64).round() as usize).min(n - train.min(n));
    let test = n - train.min(n) - valid;
    [(train, true), (valid, f.valid > 0.0), (test, true)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub kinds: Vec<ElementKind>,
    pub train: Vec<StepSequence>,
    pub valid: Vec<StepSequence>,
    pub test: Vec<StepSequence>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[StepSequence] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

enum Item {
    Frames(FrameSequence),
    Steps(StepSequence),
}

fn apply_chain(items: Vec<Item>, transforms: &[Transform], global: u64) -> Result<Vec<StepSequence>> {
    let mut items = items;
    for t in transforms {
        let mut next = Vec::with_capacity(items.len());
        for it in items {
            match (t, it) {
                (Transform::Multiframe { frame_len, steps }, Item::Frames(f)) => {
                    next.extend(reshape_multiframe(&f, *frame_len, *steps)?.into_iter().map(Item::Steps))
                }
                (Transform::Stride { m }, Item::Frames(f)) => next.push(Item::Frames(stride_subsample(&f, *m)?)),
                (Transform::Permute { seed }, Item::Steps(s)) => {
                    let perm = random_permutation(s.width(), seed.unwrap_or_else(|| derive_seed(global, "permute")));
                    next.push(Item::Steps(permute_steps(&s, &perm)?))
                }
                (Transform::Flatten, Item::Steps(s)) => next.push(Item::Frames(flatten_steps(&s)?)),
                _ => return Err(Error::Config(vec![format!("{} does not apply here", transform_name(t))])),
            }
        }
        items = next;
    }
    items
        .into_iter()
        .map(|it| match it {
            Item::Steps(s) => Ok(s),
            // a frame sequence ending the chain is read as one element per step
            Item::Frames(f) => StepSequence::continuous(f.frames().to_vec(), f.len(), 1),
        })
        .collect()
}

fn load_item(format: SourceFormat, path: &Path, kinds: Option<&[ElementKind]>) -> Result<Item> {
    Ok(match format {
        SourceFormat::Wav => Item::Frames(load_wav(path)?),
        SourceFormat::Pianoroll => Item::Steps(load_pianoroll(path)?),
        SourceFormat::Trajectory => Item::Steps(load_trajectory(path)?),
        SourceFormat::Steps => Item::Steps(load_steps_csv(path, kinds)?),
    })
}

/// Materializes the train/valid/test splits described by the config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let (train, valid, test) = match &cfg.dataset.source {
        DataSource::Synthetic { spec } => {
            let mut spec = spec.clone();
            spec.seed = seeds.data;
            let all = synth_generate(&spec)?;
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split")));
            let [(n_train, _), (n_valid, _), _] = split_sizes(all.len(), &cfg.dataset.split);
            let pick = |r: &[usize]| r.iter().map(|&i| Item::Steps(all[i].clone())).collect::<Vec<_>>();
            (
                pick(&order[..n_train]),
                pick(&order[n_train..n_train + n_valid]),
                pick(&order[n_train + n_valid..]),
            )
        }
        DataSource::Manifest { path } => {
            let m = DatasetManifest::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let load = |s: Split| {
                m.files(s)
                    .iter()
                    .map(|f| load_item(m.format, &base.join(f), m.kinds.as_deref()))
                    .collect::<Result<Vec<_>>>()
            };
            (load(Split::Train)?, load(Split::Valid)?, load(Split::Test)?)
        }
    };
    let tf = &cfg.dataset.transforms;
    let ds = Dataset {
        id: cfg.dataset_id(),
        kinds: cfg.data_kinds()?,
        train: apply_chain(train, tf, cfg.seed)?,
        valid: apply_chain(valid, tf, cfg.seed)?,
        test: apply_chain(test, tf, cfg.seed)?,
    };
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::Config(vec!["train and test splits must be nonempty after transforms".into()]));
    }
    Ok(ds)
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if nonempty && !force {
            return Err(Error::invalid(format!("{} exists; pass --force to overwrite", dir.display())));
        }
        if force {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Writes the materialized splits as step CSVs plus `manifest.json`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    if !matches!(cfg.dataset.source, DataSource::Synthetic { .. }) {
        return Err(Error::Config(vec!["synth needs a synthetic dataset source".into()]));
    }
    let ds = build_dataset(cfg)?;
    prepare_dir(out, force)?;
    let mut lists: [Vec<PathBuf>; 3] = Default::default();
    for (k, split) in [Split::Train, Split::Valid, Split::Test].into_iter().enumerate() {
        let name = format!("{split:?}").to_lowercase();
        let dir = out.join(&name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, s) in ds.split(split).iter().enumerate() {
            let rel = PathBuf::from(&name).join(format!("{i:05}.csv"));
            write_steps_csv(out.join(&rel), s)?;
            lists[k].push(rel);
        }
    }
    let [train, valid, test] = lists;
    let manifest = DatasetManifest {
        format: SourceFormat::Steps,
        kinds: Some(ds.kinds.clone()),
        train,
        valid,
        test,
    };
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

/// Everything needed to reproduce and describe a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config_hash: String,
    pub code_version: String,
    pub seeds: SeedLineage,
    pub model: ModelConfig,
    pub param_count: usize,
    pub updates: u64,
    pub best_valid: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub report: EvalReport,
}

pub fn code_version() -> String {
    format!("seqdens {}", env!("CARGO_PKG_VERSION"))
}

/// Default run directory: `$SEQDENS_OUT/<name>` (the output root defaults to `runs`).
pub fn default_run_dir(cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let name = cfg
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.model.family.name().to_lowercase(), &cfg.hash()[..8]));
    root.join(name)
}

/// Trains per the config, writing config copy, logs, checkpoints, run info and
/// the best model's test report into `dir`.
pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<TrainResult> {
    cfg.validate()?;
    let ds = build_dataset(cfg)?;
    let model_cfg = cfg.resolved_model()?;
    let seeds = cfg.seeds();
    let mut model = SequenceModel::new(&model_cfg, &ds.kinds, seeds.init)?;
    prepare_dir(dir, force)?;
    fs::write(dir.join("config.json"), cfg.to_json()).map_err(|e| Error::io(dir, e))?;
    let sink = RunSink {
        dir: dir.to_path_buf(),
        config_hash: cfg.hash(),
        seeds: seeds.clone(),
    };
    let hyper = cfg.hyper();
    let outcome = train_model(&mut model, &ds.train, &ds.valid, &hyper, Some(&sink))?;
    model.params_mut().load_from(outcome.best_params.tensors().to_vec())?;
    let mut report = test_loglik(&model, &ds.test, cfg.evaluation.convention, cfg.bound(), derive_seed(cfg.seed, "eval"))?;
    report.model_id = cfg.model_id();
    report.dataset_id = ds.id.clone();
    report.train_hours = Some(outcome.state.wall_clock / 3600.0);
    report.seed = cfg.seed;
    let info = RunInfo {
        config_hash: cfg.hash(),
        code_version: code_version(),
        seeds,
        model: model_cfg,
        param_count: model.params().num_scalars(),
        updates: outcome.state.update,
        best_valid: outcome.state.best_valid,
        wall_clock_s: outcome.state.wall_clock,
    };
    write_json(&dir.join("run.json"), &info)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(TrainResult {
        dir: dir.to_path_buf(),
        info,
        report,
    })
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub report: EvalReport,
    pub path: PathBuf,
    pub warnings: Vec<String>,
}

fn bound_tag(b: BoundKind) -> String {
    match b {
        BoundKind::Exact => "exact".into(),
        BoundKind::Elbo => "elbo".into(),
        BoundKind::MultiSample(k) => format!("multi-sample-{k}"),
    }
}

/// Scores the run's best checkpoint on its test split.
pub fn cmd_eval(dir: &Path, k: Option<usize>, convention: Option<Convention>) -> Result<EvalResult> {
    let ckpt = dir.join("best.bin");
    if !ckpt.exists() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", ckpt.display())));
    }
    let cfg: ExperimentConfig = read_json(&dir.join("config.json"))?;
    let (model, _) = load_checkpoint(&ckpt)?;
    let bound = match k {
        Some(0) => return Err(Error::Config(vec!["--k must be at least 1".into()])),
        Some(k) if model.is_stochastic() => BoundKind::MultiSample(k),
        Some(_) => return Err(Error::Config(vec![format!("{} is scored exactly; --k does not apply", model.family())])),
        None => cfg.bound(),
    };
    let mut warnings = Vec::new();
    let conv = convention.unwrap_or(cfg.evaluation.convention);
    if conv != cfg.evaluation.convention {
        warnings.push(format!(
            "convention {conv} differs from the dataset's declared {}",
            cfg.evaluation.convention
        ));
    }
    let ds = build_dataset(&cfg)?;
    let mut report = test_loglik(&model, &ds.test, conv, bound, derive_seed(cfg.seed, "eval"))?;
    report.model_id = cfg.model_id();
    report.dataset_id = ds.id;
    report.seed = cfg.seed;
    if let Ok(prev) = read_json::<EvalReport>(&dir.join("report.json")) {
        report.train_hours = prev.train_hours;
    }
    let path = dir.join(format!("eval-{}-{}.json", bound_tag(bound), conv));
    write_json(&path, &report)?;
    Ok(EvalResult { report, path, warnings })
}

fn collect_reports(path: &Path, out: &mut Vec<(PathBuf, EvalReport)>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            let file_ok = e.file_name().is_some_and(|n| {
                let n = n.to_string_lossy();
                n == "report.json" || (n.starts_with("eval-") && n.ends_with(".json"))
            });
            if e.is_dir() || file_ok {
                collect_reports(&e, out)?;
            }
        }
        Ok(())
    } else {
        out.push((path.to_path_buf(), read_json(path)?));
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TableOutput {
    pub text: String,
    pub csv: Option<String>,
    pub runtime: Option<String>,
}

/// Renders the reports found at `paths` (files, or directories searched for
/// `report.json` and `eval-*.json`).
pub fn cmd_table(paths: &[PathBuf], csv: bool) -> Result<TableOutput> {
    let mut found = Vec::new();
    for p in paths {
        collect_reports(p, &mut found)?;
    }
    if found.is_empty() {
        return Err(Error::invalid("no reports found"));
    }
    let reports: Vec<EvalReport> = found.iter().map(|(_, r)| r.clone()).collect();
    let table = results_table(&reports).map_err(|e| {
        let names: Vec<String> = found.iter().map(|(p, _)| p.display().to_string()).collect();
        let msg = match e {
            Error::InvalidArgument(m) => m,
            other => other.to_string(),
        };
        Error::invalid(format!("{msg} (reports: {})", names.join(", ")))
    })?;
    let runs: Vec<RunSummary> = reports
        .iter()
        .filter_map(|r| {
            let family = r.model_id.parse::<Family>().ok()?;
            Some(RunSummary {
                model_id: r.model_id.clone(),
                family,
                hours: r.train_hours?,
                score: Some(r.score),
            })
        })
        .collect();
    Ok(TableOutput {
        text: table.to_text(),
        csv: csv.then(|| table.to_csv()).transpose()?,
        runtime: (!runs.is_empty()).then(|| render_runtime(&runtime_report(&runs, false))),
    })
}

/// One config per cell of the α × β grid.
pub fn sweep_configs(cfg: &ExperimentConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    if !(cfg.model.family.is_stochastic() && cfg.model.srnn_variant == SrnnVariant::ZForcing) {
        return Err(Error::Config(vec![format!(
            "sweep needs a z-forcing stochastic family, got {}",
            cfg.model.family
        )]));
    }
    let base = cfg.model_id();
    let mut out = Vec::with_capacity(9);
    for a in AUX_GRID {
        for b in AUX_GRID {
            let mut c = cfg.clone();
            c.training.alpha = a;
            c.training.beta = b;
            let name = format!("{base}-a{a}-b{b}");
            c.name = Some(name.clone());
            out.push((name, c));
        }
    }
    Ok(out)
}

/// Writes the grid's configs under `root` and, when `run` is set, trains each one.
pub fn cmd_sweep(cfg: &ExperimentConfig, root: &Path, force: bool, run: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let cells = sweep_configs(cfg)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut out = Vec::new();
    for (name, c) in cells {
        let path = root.join(format!("{name}.json"));
        if path.exists() && !force {
            return Err(Error::invalid(format!("{} exists; pass --force to overwrite", path.display())));
        }
        fs::write(&path, c.to_json()).map_err(|e| Error::io(&path, e))?;
        if run {
            cmd_train(&c, &root.join(&name), force)?;
        }
        out.push(path);
    }
    Ok(out)
}

/// Smallest runnable config: synthetic within-step AR data and one update.
pub fn smoke_config(family: Family) -> ExperimentConfig {
    let mut model = ModelConfig::new(family, 8, 8).with_components(2);
    if family.is_stochastic() {
        model.latent_dim = Some(2);
    }
    ExperimentConfig {
        name: None,
        seed: 0,
        dataset: DatasetSection {
            id: None,
            source: DataSource::Synthetic {
                spec: SyntheticSpec {
                    sequences: 20,
                    steps: 6,
                    width: 4,
                    ..SyntheticSpec::default()
                },
            },
            transforms: Vec::new(),
            split: SplitFractions::default(),
        },
        model,
        param_target: None,
        training: TrainHyper::new(1, 4, 0),
        evaluation: EvalSection::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_configs_validate() {
        for f in Family::ALL {
            let c = smoke_config(f);
            assert!(c.problems().is_empty(), "{f}: {:?}", c.problems());
        }
    }

    #[test]
    fn json_round_trip_and_hash() {
        let c = smoke_config(Family::FSrnn);
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn chain_type_checks() {
        let mut c = smoke_config(Family::FRnn);
        c.dataset.transforms = vec![Transform::Stride { m: 2 }];
        assert!(c.problems().iter().any(|p| p.contains("stride")));
        c.dataset.transforms = vec![Transform::Flatten, Transform::Multiframe { frame_len: 4, steps: 6 }];
        assert!(c.problems().is_empty(), "{:?}", c.problems());
        c.dataset.transforms = vec![Transform::Flatten, Transform::Permute { seed: None }];
        assert!(!c.problems().is_empty());
    }

    #[test]
    fn problems_are_listed_together() {
        let mut c = smoke_config(Family::FRnn);
        c.training.batch_size = 0;
        c.evaluation.bound = Some(BoundKind::Elbo);
        c.dataset.split.test = 0.5;
        assert!(c.problems().len() >= 3, "{:?}", c.problems());
    }

    #[test]
    fn dataset_is_seeded_and_split() {
        let c = smoke_config(Family::FRnn);
        let a = build_dataset(&c).unwrap();
        assert_eq!((a.train.len(), a.valid.len(), a.test.len()), (16, 2, 2));
        assert_eq!(a, build_dataset(&c).unwrap());
        let mut d = c.clone();
        d.seed = 5;
        assert_ne!(a.train, build_dataset(&d).unwrap().train);
    }

    #[test]
    fn sweep_grid_has_nine_cells() {
        let cells = sweep_configs(&smoke_config(Family::FSrnn)).unwrap();
        assert_eq!(cells.len(), 9);
        assert!(cells.iter().any(|(_, c)| c.training.alpha == 0.005 && c.training.beta == 0.0025));
        assert!(sweep_configs(&smoke_config(Family::FRnn)).is_err());
    }
}
