use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameSequence, SampleMeta, StepSequence};

use crate::{Error, Result};

/// Cut a frame sequence into non-overlapping `steps x frame_len` windows.
/// A trailing remainder shorter than one window is dropped.
pub fn reshape_multiframe(
    seq: &FrameSequence,
    frame_len: usize,
    steps: usize,
) -> Result<Vec<StepSequence>> {
    if frame_len == 0 || steps == 0 {
        return Err(Error::invalid("frame length and step count must be positive"));
    }
    let window = frame_len * steps;
    seq.frames()
        .chunks_exact(window)
        .map(|chunk| StepSequence::continuous(chunk.to_vec(), steps, frame_len))
        .collect()
}

/// Keep frames `0, M, 2M, ...`.
pub fn stride_subsample(seq: &FrameSequence, stride: usize) -> Result<FrameSequence> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let frames = seq.frames().iter().step_by(stride).copied().collect();
    FrameSequence::new(frames, seq.meta.clone())
}

/// `out[t][i] = in[t][perm[i]]` for every step.
pub fn permute_steps(seq: &StepSequence, perm: &[usize]) -> Result<StepSequence> {
    check_permutation(perm, seq.width())?;
    let mut values = Vec::with_capacity(seq.num_elements());
    for t in 0..seq.steps() {
        let step = seq.step(t);
        values.extend(perm.iter().map(|&p| step[p]));
    }
    let kinds = perm.iter().map(|&p| seq.kinds()[p]).collect();
    StepSequence::new(values, seq.steps(), kinds)
}

fn check_permutation(perm: &[usize], width: usize) -> Result<()> {
    if perm.len() != width {
        return Err(Error::invalid(format!(
            "permutation has {} entries for width {width}",
            perm.len()
        )));
    }
    let mut seen = vec![false; width];
    for &p in perm {
        if p >= width || std::mem::replace(&mut seen[p], true) {
            return Err(Error::invalid("permutation is not a bijection"));
        }
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Result<Vec<usize>> {
    check_permutation(perm, perm.len())?;
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    Ok(inv)
}

pub fn random_permutation(width: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..width).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Row-major concatenation of the steps into one frame sequence.
pub fn flatten_steps(seq: &StepSequence) -> Result<FrameSequence> {
    if !seq.is_single_kind() {
        return Err(Error::NotApplicable(
            "elements of a step have mixed statistical types".into(),
        ));
    }
    FrameSequence::new(
        seq.values().to_vec(),
        SampleMeta {
            source: String::new(),
            original_len: seq.num_elements(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakScheme {
    /// Every `u`-th element, starting with the first.
    Interleave { u: usize },
    /// `v` elements drawn uniformly without replacement.
    Random { v: usize, seed: u64 },
}

/// Partition of step indices into the leaked subset `a` and its complement `b`.
/// Indices are 0-based and sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakSplit {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub scheme: LeakScheme,
}

impl LeakSplit {
    pub fn width(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

pub fn make_leak_split(width: usize, scheme: LeakScheme) -> Result<LeakSplit> {
    let a: Vec<usize> = match &scheme {
        LeakScheme::Interleave { u } => {
            if *u < 2 || *u > width {
                return Err(Error::invalid(format!(
                    "interleave stride {u} must lie in [2, {width}]"
                )));
            }
            (0..width).step_by(*u).collect()
        }
        LeakScheme::Random { v, seed } => {
            if *v < 1 || *v >= width {
                return Err(Error::invalid(format!(
                    "random leak size {v} must lie in [1, {})",
                    width
                )));
            }
            let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(*seed), width, *v).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let b = (0..width).filter(|i| !a.contains(i)).collect();
    Ok(LeakSplit { a, b, scheme })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::ElementKind;
    use proptest::prelude::*;

    fn frames(n: usize) -> FrameSequence {
        FrameSequence::from_frames((1..=n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn multiframe_speech_window() {
        let out = reshape_multiframe(&frames(8000), 200, 40).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].steps(), out[0].width()), (40, 200));
        let out = reshape_multiframe(&frames(8001), 200, 40).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(*out[0].values().last().unwrap(), 8000.0);
        let out = reshape_multiframe(&frames(6), 1, 3).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].values(), &[1.0, 2.0, 3.0]);
        assert_eq!(out[1].values(), &[4.0, 5.0, 6.0]);
        assert!(reshape_multiframe(&frames(5), 2, 3).unwrap().is_empty());
    }

    #[test]
    fn stride_examples() {
        let s = stride_subsample(&frames(10), 3).unwrap();
        assert_eq!(s.frames(), &[1.0, 4.0, 7.0, 10.0]);
        assert_eq!(stride_subsample(&frames(10), 50).unwrap().frames(), &[1.0]);
        assert_eq!(stride_subsample(&frames(10), 1).unwrap(), frames(10));
    }

    #[test]
    fn permutation_examples() {
        let s = StepSequence::continuous(vec![1.0, 2.0, 3.0], 1, 3).unwrap();
        assert_eq!(permute_steps(&s, &[0, 1, 2]).unwrap(), s);
        assert_eq!(permute_steps(&s, &[2, 1, 0]).unwrap().values(), &[3.0, 2.0, 1.0]);
        assert!(permute_steps(&s, &[0, 0, 1]).is_err());
        assert!(permute_steps(&s, &[0, 1]).is_err());
    }

    #[test]
    fn flatten_examples() {
        let s = StepSequence::continuous(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        assert_eq!(flatten_steps(&s).unwrap().frames(), s.values());
        let col = StepSequence::continuous(vec![1.0, 2.0], 2, 1).unwrap();
        assert_eq!(flatten_steps(&col).unwrap().frames(), &[1.0, 2.0]);
        let mixed = StepSequence::new(
            vec![1.0, 0.5, -0.5],
            1,
            vec![ElementKind::Binary, ElementKind::Continuous, ElementKind::Continuous],
        )
        .unwrap();
        assert!(matches!(flatten_steps(&mixed), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn leak_split_examples() {
        assert_eq!(make_leak_split(6, LeakScheme::Interleave { u: 2 }).unwrap().a, vec![0, 2, 4]);
        assert_eq!(make_leak_split(6, LeakScheme::Interleave { u: 3 }).unwrap().a, vec![0, 3]);
        let r = LeakScheme::Random { v: 2, seed: 9 };
        let s1 = make_leak_split(4, r.clone()).unwrap();
        assert_eq!(s1.a.len(), 2);
        assert_eq!(s1, make_leak_split(4, r).unwrap());
        assert!(make_leak_split(4, LeakScheme::Random { v: 4, seed: 0 }).is_err());
        assert!(make_leak_split(4, LeakScheme::Interleave { u: 5 }).is_err());
        assert!(make_leak_split(4, LeakScheme::Interleave { u: 1 }).is_err());
    }

    proptest! {
        #[test]
        fn flatten_reshape_identity(t in 1usize..6, l in 1usize..6, seed in 0u64..1000) {
            let vals: Vec<f64> = (0..t * l).map(|i| ((i as u64 * 7919 + seed) % 101) as f64 - 50.0).collect();
            let s = StepSequence::continuous(vals, t, l).unwrap();
            let back = reshape_multiframe(&flatten_steps(&s).unwrap(), l, t).unwrap();
            prop_assert_eq!(back, vec![s]);
        }

        #[test]
        fn permutation_inverse_round_trip(l in 1usize..12, seed in 0u64..500) {
            let s = StepSequence::continuous((0..3 * l).map(|i| i as f64).collect(), 3, l).unwrap();
            let p = random_permutation(l, seed);
            let inv = inverse_permutation(&p).unwrap();
            prop_assert_eq!(permute_steps(&permute_steps(&s, &p).unwrap(), &inv).unwrap(), s);
        }

        #[test]
        fn leak_split_partitions(l in 2usize..40, u in 2usize..40, v in 1usize..40, seed in 0u64..100) {
            let schemes = [LeakScheme::Interleave { u: u.min(l) }, LeakScheme::Random { v: v.min(l - 1), seed }];
            for scheme in schemes {
                let s = make_leak_split(l, scheme).unwrap();
                prop_assert!(!s.a.is_empty() && !s.b.is_empty());
                let mut all: Vec<usize> = s.a.iter().chain(&s.b).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..l).collect::<Vec<_>>());
            }
        }

        #[test]
        fn stride_one_is_identity(n in 1usize..200) {
            prop_assert_eq!(stride_subsample(&frames(n), 1).unwrap(), frames(n));
        }
    }
}
