//! Test-set scoring, bounds for latent-variable models, and report tables.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::StepSequence;
use crate::distributions::{diag_gauss_kernel, log_mean_exp};
use crate::error::{Error, Result};
use crate::models::{Family, Mode, SequenceModel};
use crate::objectives::{elbo_loss, mle_loss};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    SequenceAverage,
    FrameAverage,
    StepAverage,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::SequenceAverage => "sequence-average",
            Convention::FrameAverage => "frame-average",
            Convention::StepAverage => "step-average",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Convention::SequenceAverage, Convention::FrameAverage, Convention::StepAverage]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown convention {s:?}")))
    }
}

/// How a score relates to the true log-likelihood.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BoundKind {
    Exact,
    Elbo,
    MultiSample(usize),
}

impl BoundKind {
    pub fn is_lower_bound(self) -> bool {
        !matches!(self, BoundKind::Exact)
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundKind::Exact => f.write_str("exact"),
            BoundKind::Elbo => f.write_str("elbo"),
            BoundKind::MultiSample(k) => write!(f, "multi-sample({k})"),
        }
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(BoundKind::Exact),
            "elbo" => Ok(BoundKind::Elbo),
            _ => s
                .strip_prefix("multi-sample(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|k| k.parse().ok())
                .filter(|k| *k >= 1)
                .map(BoundKind::MultiSample)
                .ok_or_else(|| Error::invalid(format!("unknown bound kind {s:?}"))),
        }
    }
}

impl TryFrom<String> for BoundKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BoundKind> for String {
    fn from(b: BoundKind) -> String {
        b.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub convention: Convention,
    pub score: f64,
    pub bound: BoundKind,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_hours: Option<f64>,
    pub seed: u64,
    pub sequences: usize,
    pub steps: usize,
    pub frames: usize,
}

/// Anything that can draw `log p(x, z) − log q(z | x)` for a posterior sample.
pub trait LatentModel {
    fn log_weight<R: Rng>(&self, seq: &StepSequence, rng: &mut R) -> Result<f64>;
}

impl LatentModel for SequenceModel {
    fn log_weight<R: Rng>(&self, seq: &StepSequence, rng: &mut R) -> Result<f64> {
        if !self.is_stochastic() {
            return Err(Error::WrongObjective(format!("{} has no latent variables", self.family())));
        }
        let noise = self.sample_noise(seq.steps(), rng);
        log_weight_with_noise(self, seq, &noise)
    }
}

/// `log p(x | z) + Σ_t log p(z_t | ·) − Σ_t log q(z_t | ·)` at the draw fixed by `noise`.
pub fn log_weight_with_noise(model: &SequenceModel, seq: &StepSequence, noise: &[f64]) -> Result<f64> {
    let mut r = model.forward(seq, Mode::Posterior, noise)?;
    let recon: f64 = r.step_log_probs(seq)?.iter().sum();
    let lt = r.latent.as_ref().unwrap();
    let mut lw = recon;
    for s in &lt.steps {
        let z = r.graph.value(s.z);
        let (qm, qs) = s.post.unwrap();
        lw += diag_gauss_kernel(r.graph.value(s.prior_mean), r.graph.value(s.prior_log_scale), z, None);
        lw -= diag_gauss_kernel(r.graph.value(qm), r.graph.value(qs), z, None);
    }
    Ok(lw)
}

/// `log (1/k) Σ_j w_j` over `k` independent posterior draws.
pub fn multi_sample_bound<M: LatentModel, R: Rng>(model: &M, seq: &StepSequence, k: usize, rng: &mut R) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let w = (0..k).map(|_| model.log_weight(seq, rng)).collect::<Result<Vec<_>>>()?;
    Ok(log_mean_exp(&w))
}

/// Independent noise stream for sequence `index` under `seed`.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Total score of one sequence under `bound`.
pub fn sequence_score(model: &SequenceModel, seq: &StepSequence, bound: BoundKind, rng: &mut ChaCha8Rng) -> Result<f64> {
    match (model.is_stochastic(), bound) {
        (false, BoundKind::Exact) => {
            let mut r = model.forward(seq, Mode::Prior, &[])?;
            Ok(mle_loss(&mut r, seq)?.breakdown.total)
        }
        (true, BoundKind::Elbo) => {
            let noise = model.sample_noise(seq.steps(), rng);
            let mut r = model.forward(seq, Mode::Posterior, &noise)?;
            Ok(elbo_loss(&mut r, seq, 1.0)?.breakdown.total)
        }
        (true, BoundKind::MultiSample(k)) => multi_sample_bound(model, seq, k, rng),
        (stoch, b) => Err(Error::invalid(format!(
            "bound {b} does not apply to a {} model",
            if stoch { "latent-variable" } else { "deterministic" }
        ))),
    }
}

/// The bound used when none is requested.
pub fn default_bound(model: &SequenceModel) -> BoundKind {
    if model.is_stochastic() {
        BoundKind::Elbo
    } else {
        BoundKind::Exact
    }
}

/// Reduce per-sequence totals under a convention.
pub fn average(totals: &[f64], data: &[StepSequence], convention: Convention) -> f64 {
    let sum: f64 = totals.iter().sum();
    let denom = match convention {
        Convention::SequenceAverage => totals.len(),
        Convention::FrameAverage => data.iter().map(StepSequence::num_elements).sum(),
        Convention::StepAverage => data.iter().map(StepSequence::steps).sum(),
    };
    sum / denom as f64
}

/// Score every sequence (in order, each with its own noise stream) and average.
pub fn test_loglik(
    model: &SequenceModel,
    data: &[StepSequence],
    convention: Convention,
    bound: BoundKind,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let totals = data
        .iter()
        .enumerate()
        .map(|(i, s)| sequence_score(model, s, bound, &mut sequence_rng(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let score = average(&totals, data, convention);
    if !score.is_finite() {
        return Err(Error::NonFinite(format!("evaluation score {score}")));
    }
    Ok(EvalReport {
        model_id: model.family().name().to_string(),
        dataset_id: String::new(),
        convention,
        score,
        bound,
        param_count: model.params().num_scalars(),
        train_hours: None,
        seed,
        sequences: data.len(),
        steps: data.iter().map(StepSequence::steps).sum(),
        frames: data.iter().map(StepSequence::num_elements).sum(),
    })
}

/// Reference training times (hours) and TIMIT scores per family at input length 8000.
pub const RUNTIME_ANCHORS: [(Family, f64, f64); 7] = [
    (Family::FRnn, 0.54, 32_745.0),
    (Family::FSrnn, 0.94, 69_296.0),
    (Family::DeltaRnn, 0.90, 66_453.0),
    (Family::RnnHier, 9.92, 109_641.0),
    (Family::SrnnHier, 12.52, 107_912.0),
    (Family::RnnFlat, 37.48, 117_721.0),
    (Family::SrnnFlat, 42.26, 109_284.0),
];

/// RNN-hier at input length 1000: hours and score.
pub const RUNTIME_ANCHOR_HIER_1000: (f64, f64) = (1.7, 101_713.0);

/// Reference parameter counts (speech, MIDI, handwriting); `None` where not applicable.
pub const PARAM_COUNT_TARGETS: [(Family, [Option<f64>; 3]); 7] = [
    (Family::FRnn, [Some(17.41e6), Some(0.57e6), Some(0.93e6)]),
    (Family::FSrnn, [Some(17.53e6), Some(2.28e6), Some(1.17e6)]),
    (Family::DeltaRnn, [Some(18.57e6), Some(0.71e6), None]),
    (Family::RnnFlat, [Some(16.86e6), Some(1.58e6), None]),
    (Family::SrnnFlat, [Some(16.93e6), Some(2.24e6), None]),
    (Family::RnnHier, [Some(17.28e6), Some(1.87e6), Some(0.97e6)]),
    (Family::SrnnHier, [Some(17.25e6), Some(3.05e6), Some(1.02e6)]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_id: String,
    pub family: Family,
    pub hours: f64,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeRow {
    pub model_id: String,
    pub family: Family,
    pub hours: f64,
    pub score: Option<f64>,
    pub anchor: Option<(f64, f64)>,
}

pub fn runtime_report(runs: &[RunSummary], with_anchors: bool) -> Vec<RuntimeRow> {
    let mut rows: Vec<RuntimeRow> = runs
        .iter()
        .map(|r| RuntimeRow {
            model_id: r.model_id.clone(),
            family: r.family,
            hours: r.hours,
            score: r.score,
            anchor: with_anchors
                .then(|| RUNTIME_ANCHORS.iter().find(|a| a.0 == r.family).map(|a| (a.1, a.2)))
                .flatten(),
        })
        .collect();
    rows.sort_by_key(|r| r.family.order());
    rows
}

pub fn render_runtime(rows: &[RuntimeRow]) -> String {
    let mut out = String::new();
    let anchors = rows.iter().any(|r| r.anchor.is_some());
    out.push_str(&format!("{:<16} {:>10} {:>14}", "model", "time (h)", "log-lik"));
    if anchors {
        out.push_str(&format!(" {:>10} {:>12}", "ref (h)", "ref log-lik"));
    }
    out.push('\n');
    for r in rows {
        let score = r.score.map_or("-".to_string(), |s| format!("{s:.2}"));
        out.push_str(&format!("{:<16} {:>10.4} {:>14}", r.model_id, r.hours, score));
        if anchors {
            match r.anchor {
                Some((h, s)) => out.push_str(&format!(" {h:>10.2} {s:>12.0}")),
                None => out.push_str(&format!(" {:>10} {:>12}", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub score: f64,
    pub bound: BoundKind,
}

impl Cell {
    fn render(&self, precise: bool) -> String {
        let mark = if self.bound.is_lower_bound() { "≥" } else { "" };
        let num = if precise {
            format!("{}", self.score)
        } else {
            format!("{:.2}", self.score)
        };
        match self.bound {
            BoundKind::MultiSample(k) => format!("{mark}{num} (k={k})"),
            _ => format!("{mark}{num}"),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("bad table cell {s:?}"));
        let (lower, rest) = match s.strip_prefix('≥') {
            Some(r) => (true, r),
            None => (false, s),
        };
        let (num, k) = match rest.split_once(" (k=") {
            Some((n, k)) => (n, Some(k.strip_suffix(')').ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let score = num.parse::<f64>().map_err(|_| bad())?;
        let bound = match (lower, k) {
            (false, None) => BoundKind::Exact,
            (true, None) => BoundKind::Elbo,
            (true, Some(k)) => BoundKind::MultiSample(k),
            (false, Some(_)) => return Err(bad()),
        };
        Ok(Cell { score, bound })
    }
}

/// Models × datasets grid of scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<String>,
    pub columns: Vec<(String, Convention)>,
    pub cells: Vec<Vec<Option<Cell>>>,
}

fn row_key(id: &str) -> (usize, String) {
    (id.parse::<Family>().map_or(usize::MAX, |f| f.order()), id.to_string())
}

pub fn results_table(reports: &[EvalReport]) -> Result<ResultsTable> {
    let mut columns: Vec<(String, Convention)> = Vec::new();
    let mut problems = Vec::new();
    for r in reports {
        match columns.iter().find(|c| c.0 == r.dataset_id) {
            Some(c) if c.1 != r.convention => problems.push(format!(
                "{} on {} uses {} but the column uses {}",
                r.model_id, r.dataset_id, r.convention, c.1
            )),
            Some(_) => {}
            None => columns.push((r.dataset_id.clone(), r.convention)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::invalid(format!("mixed conventions: {}", problems.join("; "))));
    }
    columns.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rows: Vec<String> = Vec::new();
    for r in reports {
        if !rows.contains(&r.model_id) {
            rows.push(r.model_id.clone());
        }
    }
    rows.sort_by_key(|id| row_key(id));
    let mut cells = vec![vec![None; columns.len()]; rows.len()];
    for r in reports {
        let i = rows.iter().position(|x| *x == r.model_id).unwrap();
        let j = columns.iter().position(|c| c.0 == r.dataset_id).unwrap();
        if cells[i][j].is_some() {
            return Err(Error::invalid(format!("duplicate report for {} on {}", r.model_id, r.dataset_id)));
        }
        cells[i][j] = Some(Cell {
            score: r.score,
            bound: r.bound,
        });
    }
    Ok(ResultsTable { rows, columns, cells })
}

impl ResultsTable {
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = self.columns.iter().map(|(d, c)| format!("{d} ({c})")).collect();
        let body: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.as_ref().map_or("-".into(), |c| c.render(false))).collect())
            .collect();
        let w0 = self.rows.iter().map(|r| r.chars().count()).chain([5]).max().unwrap();
        let widths: Vec<usize> = headers
            .iter()
            .enumerate()
            .map(|(j, h)| body.iter().map(|r| r[j].chars().count()).chain([h.chars().count()]).max().unwrap())
            .collect();
        let pad = |s: &str, w: usize| format!("{}{}", " ".repeat(w.saturating_sub(s.chars().count())), s);
        let mut out = format!("{:<w0$}", "model");
        for (h, w) in headers.iter().zip(&widths) {
            out.push_str("  ");
            out.push_str(&pad(h, *w));
        }
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&body) {
            out.push_str(&format!("{name:<w0$}"));
            for (c, w) in row.iter().zip(&widths) {
                out.push_str("  ");
                out.push_str(&pad(c, *w));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string()];
        header.extend(self.columns.iter().map(|(d, c)| format!("{d} ({c})")));
        w.write_record(&header)?;
        for (name, row) in self.rows.iter().zip(&self.cells) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.as_ref().map_or(String::new(), |c| c.render(true))));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let mut columns = Vec::new();
        for h in header.iter().skip(1) {
            let (d, c) = h
                .rsplit_once(" (")
                .and_then(|(d, c)| c.strip_suffix(')').map(|c| (d, c)))
                .ok_or_else(|| Error::invalid(format!("bad column header {h:?}")))?;
            columns.push((d.to_string(), c.parse()?));
        }
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(rec.get(0).unwrap_or_default().to_string());
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|s| if s.is_empty() { Ok(None) } else { Cell::parse(s).map(Some) })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { rows, columns, cells })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub a: String,
    pub b: String,
    pub rel_diff: f64,
    pub pass: bool,
}

/// Pairwise `|n_a − n_b| / max(n_a, n_b) ≤ tolerance`.
pub fn param_match_check(models: &[(String, usize)], tolerance: f64) -> Vec<PairCheck> {
    let mut out = Vec::new();
    for (i, (a, na)) in models.iter().enumerate() {
        for (b, nb) in &models[i + 1..] {
            let hi = (*na).max(*nb) as f64;
            let rel = if hi == 0.0 { 0.0 } else { na.abs_diff(*nb) as f64 / hi };
            out.push(PairCheck {
                a: a.clone(),
                b: b.clone(),
                rel_diff: rel,
                pass: rel <= tolerance,
            });
        }
    }
    out
}
