//! Sequence containers, file ingestion, dataset transforms, synthetic data and batching.

mod batch;
mod io;
mod synth;
mod transforms;

pub use batch::{make_batches, BatchStream};
pub use io::{
    load_pianoroll, load_steps_csv, load_trajectory, load_wav, write_steps_csv, write_wav,
    DatasetManifest, SourceFormat, Split,
};
pub use synth::{synth_generate, SynthFamily, SyntheticSpec};
pub use transforms::{
    flatten_steps, inverse_permutation, make_leak_split, permute_steps, random_permutation,
    reshape_multiframe, stride_subsample, LeakScheme, LeakSplit,
};

use serde::{Deserialize, Serialize};

use crate::distributions::ElementKind;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub source: String,
    pub original_len: usize,
}

/// A univariate sequence of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<f64>,
    pub meta: SampleMeta,
}

impl FrameSequence {
    pub fn new(frames: Vec<f64>, meta: SampleMeta) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(x) = frames.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("frame value {x}")));
        }
        Ok(Self { frames, meta })
    }

    pub fn from_frames(frames: Vec<f64>) -> Result<Self> {
        let n = frames.len();
        Self::new(
            frames,
            SampleMeta {
                source: String::new(),
                original_len: n,
            },
        )
    }

    pub fn frames(&self) -> &[f64] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A `T x L` sequence of multivariate steps stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSequence {
    values: Vec<f64>,
    steps: usize,
    kinds: Vec<ElementKind>,
}

impl StepSequence {
    pub fn new(values: Vec<f64>, steps: usize, kinds: Vec<ElementKind>) -> Result<Self> {
        let width = kinds.len();
        if steps == 0 || width == 0 {
            return Err(Error::EmptySequence);
        }
        if values.len() != steps * width {
            return Err(Error::shape(format!("{steps}x{width} values"), values.len()));
        }
        for (n, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("element {n}: {x}")));
            }
            if kinds[n % width] == ElementKind::Binary && x != 0.0 && x != 1.0 {
                return Err(Error::invalid(format!(
                    "non-binary value {x} in binary dimension {}",
                    n % width
                )));
            }
        }
        Ok(Self {
            values,
            steps,
            kinds,
        })
    }

    /// All-continuous sequence.
    pub fn continuous(values: Vec<f64>, steps: usize, width: usize) -> Result<Self> {
        Self::new(values, steps, vec![ElementKind::Continuous; width])
    }

    pub fn from_rows(rows: &[Vec<f64>], kinds: Vec<ElementKind>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != kinds.len()) {
            return Err(Error::shape(format!("rows of {}", kinds.len()), "ragged rows"));
        }
        Self::new(rows.concat(), rows.len(), kinds)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[ElementKind] {
        &self.kinds
    }

    pub fn step(&self, t: usize) -> &[f64] {
        let l = self.width();
        &self.values[t * l..(t + 1) * l]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.width() + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_elements(&self) -> usize {
        self.values.len()
    }

    /// Copy with one element replaced; validation is re-run.
    pub fn with_value(&self, t: usize, i: usize, x: f64) -> Result<Self> {
        let mut v = self.values.clone();
        v[t * self.width() + i] = x;
        Self::new(v, self.steps, self.kinds.clone())
    }

    pub fn is_single_kind(&self) -> bool {
        self.kinds.iter().all(|k| *k == self.kinds[0])
    }
}
