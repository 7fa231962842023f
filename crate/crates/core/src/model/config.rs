use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::KnowledgeFeatureVector;
use crate::spkb::BucketId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSource {
    Plurality,
    Ag,
    Sp,
}

impl KnowledgeSource {
    pub const ALL: [KnowledgeSource; 3] = [KnowledgeSource::Plurality, KnowledgeSource::Ag, KnowledgeSource::Sp];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeSource::Plurality => "plurality",
            KnowledgeSource::Ag => "ag",
            KnowledgeSource::Sp => "sp",
        }
    }

    /// Number of distinct feature values, i.e. rows of the embedding table.
    pub fn rows(self) -> usize {
        match self {
            KnowledgeSource::Plurality | KnowledgeSource::Ag => 2,
            KnowledgeSource::Sp => BucketId::COUNT,
        }
    }

    pub fn value(self, f: &KnowledgeFeatureVector) -> usize {
        match self {
            KnowledgeSource::Plurality => f.plurality as usize,
            KnowledgeSource::Ag => f.ag as usize,
            KnowledgeSource::Sp => f.sp.value() as usize,
        }
    }
}

impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plurality" => Ok(KnowledgeSource::Plurality),
            "ag" => Ok(KnowledgeSource::Ag),
            "sp" => Ok(KnowledgeSource::Sp),
            _ => Err(Error::Config(format!("unknown knowledge source {s:?}"))),
        }
    }
}

/// Which token vectors the inner-span attention averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSource {
    /// Word embeddings before the recurrent encoder.
    #[default]
    Embedding,
    /// Recurrent encoder outputs.
    Encoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Contextual scorer, pruning, then the knowledge-attention layer.
    #[default]
    TwoLayer,
    /// Knowledge embeddings concatenated onto span representations, one scorer.
    FeatureConcat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub lstm_hidden: usize,
    pub ffnn_hidden: Vec<usize>,
    pub knowledge_dim: usize,
    pub width_dim: usize,
    pub dropout: f64,
    pub head_source: HeadSource,
    pub variant: Variant,
    pub sources: Vec<KnowledgeSource>,
    /// When false the per-pair source weights are fixed at `1 / m`.
    pub knowledge_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 50,
            lstm_hidden: 200,
            ffnn_hidden: vec![150, 150],
            knowledge_dim: 20,
            width_dim: 20,
            dropout: 0.2,
            head_source: HeadSource::Embedding,
            variant: Variant::TwoLayer,
            sources: KnowledgeSource::ALL.to_vec(),
            knowledge_attention: true,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for finite-difference checks.
    pub fn reduced() -> Self {
        ModelConfig {
            word_dim: 8,
            lstm_hidden: 8,
            ffnn_hidden: vec![16, 16],
            knowledge_dim: 4,
            width_dim: 4,
            ..ModelConfig::default()
        }
    }

    /// Dimensions sized for the synthetic corpus on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            word_dim: 16,
            lstm_hidden: 16,
            ffnn_hidden: vec![32, 32],
            knowledge_dim: 8,
            width_dim: 8,
            dropout: 0.4,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("knowledge_dim", self.knowledge_dim),
            ("width_dim", self.width_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.ffnn_hidden.contains(&0) {
            return Err(Error::Config("ffnn_hidden entries must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidDropout(self.dropout));
        }
        let mut seen = self.sources.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.sources.len() {
            return Err(Error::Config("knowledge sources listed twice".into()));
        }
        Ok(())
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn head_dim(&self) -> usize {
        match self.head_source {
            HeadSource::Embedding => self.word_dim,
            HeadSource::Encoded => self.encoder_dim(),
        }
    }

    /// Width of `[x*_start, x*_end, x̂, φ]`.
    pub fn span_dim(&self) -> usize {
        2 * self.encoder_dim() + self.head_dim() + self.width_dim
    }

    /// Width of the input to the first-layer (or concatenation) scorer.
    pub fn pair_input_dim(&self) -> usize {
        let side = match self.variant {
            Variant::TwoLayer => self.span_dim(),
            Variant::FeatureConcat => self.span_dim() + self.sources.len() * self.knowledge_dim,
        };
        3 * side
    }

    /// True when the second layer runs.
    pub fn has_knowledge_layer(&self) -> bool {
        self.variant == Variant::TwoLayer && !self.sources.is_empty()
    }

    /// Copy with `disabled` sources removed.
    pub fn without(&self, disabled: &[KnowledgeSource]) -> Self {
        ModelConfig {
            sources: self.sources.iter().copied().filter(|s| !disabled.contains(s)).collect(),
            ..self.clone()
        }
    }
}

pub const WIDTH_BUCKETS: usize = 6;

/// Width buckets `1, 2, 3, 4, 5–7, 8+`.
pub fn width_bucket(width: usize) -> usize {
    match width {
        0..=4 => width.saturating_sub(1),
        5..=7 => 4,
        _ => 5,
    }
}
