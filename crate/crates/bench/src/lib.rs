//! Fixtures shared by the benchmarks.

use seqdens::datasets::{synth_generate, SynthFamily, SyntheticSpec};
use seqdens::{Family, ModelConfig, SequenceModel, StepSequence};

/// A within-step-AR sequence and a freshly initialized model of `family`.
pub fn fixture(family: Family, steps: usize, width: usize, hidden: usize) -> (SequenceModel, StepSequence) {
    let spec = SyntheticSpec {
        family: SynthFamily::WithinStepAr,
        sequences: 1,
        steps,
        width,
        rho: 0.9,
        across: 0.5,
        noise_scale: 1.0,
        seed: 11,
    };
    let seq = synth_generate(&spec).expect("valid spec").remove(0);
    let cfg = ModelConfig::new(family, hidden, hidden);
    let model = SequenceModel::new(&cfg, seq.kinds(), 3).expect("valid config");
    (model, seq)
}
