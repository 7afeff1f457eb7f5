use serde::{Deserialize, Serialize};

use super::layers::CellKind;
use crate::datasets::LeakScheme;
use crate::distributions::{ElementKind, DEFAULT_COMPONENTS};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "F-RNN")]
    FRnn,
    #[serde(rename = "F-SRNN")]
    FSrnn,
    #[serde(rename = "DELTA-RNN")]
    DeltaRnn,
    #[serde(rename = "RNN-HIER")]
    RnnHier,
    #[serde(rename = "SRNN-HIER")]
    SrnnHier,
    #[serde(rename = "RNN-FLAT")]
    RnnFlat,
    #[serde(rename = "SRNN-FLAT")]
    SrnnFlat,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::FRnn,
        Family::FSrnn,
        Family::DeltaRnn,
        Family::RnnHier,
        Family::SrnnHier,
        Family::RnnFlat,
        Family::SrnnFlat,
    ];

    pub fn is_stochastic(self) -> bool {
        matches!(self, Family::FSrnn | Family::SrnnHier | Family::SrnnFlat)
    }

    pub fn is_hier(self) -> bool {
        matches!(self, Family::RnnHier | Family::SrnnHier)
    }

    pub fn is_flat(self) -> bool {
        matches!(self, Family::RnnFlat | Family::SrnnFlat)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::FRnn => "F-RNN",
            Family::FSrnn => "F-SRNN",
            Family::DeltaRnn => "DELTA-RNN",
            Family::RnnHier => "RNN-HIER",
            Family::SrnnHier => "SRNN-HIER",
            Family::RnnFlat => "RNN-FLAT",
            Family::SrnnFlat => "SRNN-FLAT",
        }
    }

    /// Position in the reporting order used by result and runtime tables.
    pub fn order(self) -> usize {
        Family::ALL.iter().position(|f| *f == self).unwrap()
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model family {s:?}"))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowDecoder {
    Recurrent,
    MaskedMlp,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrnnVariant {
    #[default]
    ZForcing,
    Simplified,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Mixture components for continuous elements.
    pub components: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
        }
    }
}

fn default_cell() -> CellKind {
    CellKind::Lstm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default = "default_cell")]
    pub cell: CellKind,
    /// Width of the step-level recurrent state(s).
    pub hidden: usize,
    /// Width of the emission feature layer (or the low-level decoder).
    pub emit_hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak: Option<LeakScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_decoder: Option<LowDecoder>,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub srnn_variant: SrnnVariant,
}

impl ModelConfig {
    pub fn new(family: Family, hidden: usize, emit_hidden: usize) -> Self {
        Self {
            family,
            cell: CellKind::Lstm,
            hidden,
            emit_hidden,
            latent_dim: family.is_stochastic().then_some(4),
            leak: (family == Family::DeltaRnn).then_some(LeakScheme::Interleave { u: 2 }),
            low_decoder: family.is_hier().then_some(LowDecoder::Recurrent),
            head: HeadConfig::default(),
            srnn_variant: SrnnVariant::ZForcing,
        }
    }

    pub fn with_components(mut self, components: usize) -> Self {
        self.head.components = components;
        self
    }

    /// Every problem with this config for data of the given element kinds.
    pub fn problems(&self, kinds: &[ElementKind]) -> Vec<String> {
        let mut out = Vec::new();
        let fam = self.family;
        if kinds.is_empty() {
            out.push("data must have at least one element per step".into());
        }
        if self.hidden == 0 || self.emit_hidden == 0 {
            out.push("hidden and emit_hidden must be positive".into());
        }
        if self.head.components == 0 {
            out.push("head.components must be at least 1".into());
        }
        match (fam.is_stochastic(), self.latent_dim) {
            (true, None) | (true, Some(0)) => {
                out.push(format!("{fam} requires latent_dim >= 1"));
            }
            (false, Some(_)) => out.push(format!("{fam} is deterministic; latent_dim must be absent")),
            _ => {}
        }
        if fam == Family::DeltaRnn {
            match &self.leak {
                None => out.push("DELTA-RNN requires a leak split".into()),
                Some(scheme) => {
                    if let Err(e) = crate::datasets::make_leak_split(kinds.len(), scheme.clone()) {
                        out.push(format!("leak split: {e}"));
                    }
                }
            }
        } else if self.leak.is_some() {
            out.push(format!("leak split only applies to DELTA-RNN, not {fam}"));
        }
        if fam.is_hier() {
            if self.low_decoder.is_none() {
                out.push(format!("{fam} requires low_decoder"));
            }
        } else if self.low_decoder.is_some() {
            out.push(format!("low_decoder only applies to hierarchical families, not {fam}"));
        }
        if fam.is_flat() && kinds.iter().any(|k| *k != kinds[0]) {
            out.push(format!(
                "{fam}: flat model not applicable to mixed element kinds"
            ));
        }
        out
    }
}

/// Low-level decoder used by default: recurrent for speech-like continuous
/// data, masked feed-forward otherwise.
pub fn default_low_decoder(speech_like: bool) -> LowDecoder {
    if speech_like {
        LowDecoder::Recurrent
    } else {
        LowDecoder::MaskedMlp
    }
}
