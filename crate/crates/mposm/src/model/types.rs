//! Configuration and output types shared across the model, training, and
//! evaluation code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {context} (sentence {sentence})")]
    NonFinite { context: String, sentence: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    /// Bidirectional recurrence over the whole tag sequence.
    Full,
    /// Feed-forward over the 2k neighboring tag embeddings.
    WidthK(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    /// Learned feed-forward head from tag embeddings to the vocabulary.
    Feedforward,
    /// P(x|z) derived from the local predictor's P(z|x) and empirical P(x)
    /// via Bayes' rule, recomputed every step.
    BayesTied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Standard,
    /// Word representations feed the reconstruction network directly; tags
    /// are read off the reconstruction head at every position.
    WordVariant,
    /// Masked-word pretraining stage: predict masked words straight from the
    /// context representation, skipping the tag factorization.
    MlmpPretrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_tags: usize,
    pub word_emb_dim: usize,
    pub pos_emb_dim: usize,
    pub char_emb_dim: usize,
    pub hidden_dim: usize,
    pub mask_rate: f64,
    pub gumbel_tau: f64,
    pub dropout: f64,
    pub context: ContextKind,
    pub emission: EmissionKind,
    pub variant: ModelVariant,
    pub use_pretrained_emb: bool,
    pub use_feature_file: bool,
    pub local_predictor_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_tags: 45,
            word_emb_dim: 100,
            pos_emb_dim: 200,
            char_emb_dim: 100,
            hidden_dim: 128,
            mask_rate: 0.15,
            gumbel_tau: 2.0,
            dropout: 0.5,
            context: ContextKind::Full,
            emission: EmissionKind::BayesTied,
            variant: ModelVariant::Standard,
            use_pretrained_emb: false,
            use_feature_file: false,
            local_predictor_layers: 1,
        }
    }
}

impl ModelConfig {
    /// Defaults for the agreement-learning datasets: 6 tags and a small
    /// character embedding.
    pub fn synthetic() -> Self {
        ModelConfig {
            n_tags: 6,
            char_emb_dim: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut errors = Vec::new();
        if self.n_tags == 0 {
            errors.push("n_tags must be positive".to_string());
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            errors.push(format!(
                "mask_rate must be in (0, 1), got {}",
                self.mask_rate
            ));
        }
        if self.gumbel_tau <= 0.0 || self.gumbel_tau.is_nan() {
            errors.push(format!("gumbel_tau must be > 0, got {}", self.gumbel_tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errors.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if let ContextKind::WidthK(k) = self.context {
            if k == 0 {
                errors.push("width_k context requires k >= 1".to_string());
            }
        }
        if self.local_predictor_layers == 0 || self.local_predictor_layers > 2 {
            errors.push(format!(
                "local_predictor_layers must be 1 or 2, got {}",
                self.local_predictor_layers
            ));
        }
        if !self.hidden_dim.is_multiple_of(2) {
            errors.push(format!(
                "hidden_dim must be even (split across char-encoder directions), got {}",
                self.hidden_dim
            ));
        }
        if self.use_feature_file && self.emission == EmissionKind::BayesTied {
            errors.push(
                "use_feature_file requires emission = feedforward (no type-level P(z|x) table)"
                    .to_string(),
            );
        }
        if self.variant == ModelVariant::WordVariant && self.emission == EmissionKind::BayesTied {
            errors.push(
                "word_variant requires emission = feedforward (no local P(z|x) to tie)".to_string(),
            );
        }
        if [
            self.word_emb_dim,
            self.pos_emb_dim,
            self.char_emb_dim,
            self.hidden_dim,
        ]
        .contains(&0)
        {
            errors.push("embedding and hidden dimensions must be positive".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(errors.join("; ")))
        }
    }

    /// Index of the reserved MASK row in the tag-embedding table.
    pub fn mask_tag_id(&self) -> usize {
        self.n_tags
    }
}

/// Per-sentence masked position sets for one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPattern {
    pub masked: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSource {
    LocalArgmax,
    ReconstructionArgmax,
}

/// The artifact's primary output: one predicted tag id per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub tags: Vec<Vec<usize>>,
    pub source: TagSource,
}

impl TagAssignment {
    pub fn token_count(&self) -> usize {
        self.tags.iter().map(|s| s.len()).sum()
    }

    pub fn flat(&self) -> Vec<usize> {
        self.tags.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::synthetic().validate().is_ok());
    }

    #[test]
    fn invalid_mask_rate_names_field() {
        let cfg = ModelConfig {
            mask_rate: 1.5,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("mask_rate"));
    }

    #[test]
    fn zero_width_k_rejected() {
        let cfg = ModelConfig {
            context: ContextKind::WidthK(0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
