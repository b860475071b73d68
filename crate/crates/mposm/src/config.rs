//! Experiment configuration files: flat `key = value` pairs with dotted
//! namespaces, parsed into a typed config with exhaustive validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ContextKind, EmissionKind, ModelConfig, ModelVariant};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config errors:\n{0}")]
    Invalid(String),
}

/// Full experiment description: model plus training settings and data paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn synthetic() -> Self {
        ExperimentConfig {
            model: ModelConfig::synthetic(),
            train: TrainConfig::default(),
        }
    }

    /// Parse a config file on top of the given base. Unknown keys, malformed
    /// values, and semantic violations are all collected and reported
    /// together rather than one at a time.
    pub fn load(path: &Path, base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = base;
        let mut errors: Vec<String> = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", lineno + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            if let Some(first) = seen.insert(key.to_string(), lineno + 1) {
                errors.push(format!(
                    "line {}: duplicate key `{key}` (first set on line {first})",
                    lineno + 1
                ));
                continue;
            }
            if let Err(e) = apply_key(&mut cfg, key, value) {
                errors.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if let Err(e) = cfg.model.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = cfg.train.validate() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors.join("\n")))
        }
    }

    /// Render the fully resolved config back out as `key = value` lines.
    pub fn to_config_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let context = match m.context {
            ContextKind::Full => "full".to_string(),
            ContextKind::WidthK(k) => k.to_string(),
        };
        let emission = match m.emission {
            EmissionKind::Feedforward => "feedforward",
            EmissionKind::BayesTied => "bayes_tied",
        };
        let variant = match m.variant {
            ModelVariant::Standard => "standard",
            ModelVariant::WordVariant => "word",
            ModelVariant::MlmpPretrain => "mlmp",
        };
        let _ = writeln!(s, "model.n_tags = {}", m.n_tags);
        let _ = writeln!(s, "model.word_emb_dim = {}", m.word_emb_dim);
        let _ = writeln!(s, "model.pos_emb_dim = {}", m.pos_emb_dim);
        let _ = writeln!(s, "model.char_emb_dim = {}", m.char_emb_dim);
        let _ = writeln!(s, "model.hidden_dim = {}", m.hidden_dim);
        let _ = writeln!(s, "model.mask_rate = {}", m.mask_rate);
        let _ = writeln!(s, "model.gumbel_tau = {}", m.gumbel_tau);
        let _ = writeln!(s, "model.dropout = {}", m.dropout);
        let _ = writeln!(s, "model.context = {context}");
        let _ = writeln!(s, "model.emission = {emission}");
        let _ = writeln!(s, "model.variant = {variant}");
        let _ = writeln!(s, "model.use_pretrained_emb = {}", m.use_pretrained_emb);
        let _ = writeln!(s, "model.use_feature_file = {}", m.use_feature_file);
        let _ = writeln!(
            s,
            "model.local_predictor_layers = {}",
            m.local_predictor_layers
        );
        let _ = writeln!(s, "train.lr = {}", t.lr);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "train.lr_decay = {}", t.lr_decay);
        let _ = writeln!(s, "train.patience = {}", t.patience);
        let _ = writeln!(
            s,
            "train.improvement_threshold = {}",
            t.improvement_threshold
        );
        let _ = writeln!(s, "train.max_decays = {}", t.max_decays);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "train.rechunk = {}", t.rechunk);
        let _ = writeln!(s, "train.selection = {}", t.selection);
        let _ = writeln!(s, "train.pretrain_epochs = {}", t.pretrain_epochs);
        s
    }
}

fn apply_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse::<T>()
            .map_err(|e| format!("bad value for `{key}`: {e}"))
    }
    let m = &mut cfg.model;
    let t = &mut cfg.train;
    match key {
        "model.n_tags" => m.n_tags = parse(key, value)?,
        "model.word_emb_dim" => m.word_emb_dim = parse(key, value)?,
        "model.pos_emb_dim" => m.pos_emb_dim = parse(key, value)?,
        "model.char_emb_dim" => m.char_emb_dim = parse(key, value)?,
        "model.hidden_dim" => m.hidden_dim = parse(key, value)?,
        "model.mask_rate" => m.mask_rate = parse(key, value)?,
        "model.gumbel_tau" => m.gumbel_tau = parse(key, value)?,
        "model.dropout" => m.dropout = parse(key, value)?,
        "model.context" => {
            m.context = match value {
                "full" => ContextKind::Full,
                k => ContextKind::WidthK(parse(key, k)?),
            }
        }
        "model.emission" => {
            m.emission = match value {
                "feedforward" => EmissionKind::Feedforward,
                "bayes_tied" => EmissionKind::BayesTied,
                other => {
                    return Err(format!(
                        "bad value for `{key}`: `{other}` (expected feedforward or bayes_tied)"
                    ))
                }
            }
        }
        "model.variant" => {
            m.variant = match value {
                "standard" => ModelVariant::Standard,
                "word" => ModelVariant::WordVariant,
                "mlmp" => ModelVariant::MlmpPretrain,
                other => {
                    return Err(format!(
                        "bad value for `{key}`: `{other}` (expected standard, word, or mlmp)"
                    ))
                }
            }
        }
        "model.use_pretrained_emb" => m.use_pretrained_emb = parse(key, value)?,
        "model.use_feature_file" => m.use_feature_file = parse(key, value)?,
        "model.local_predictor_layers" => m.local_predictor_layers = parse(key, value)?,
        "train.lr" => t.lr = parse(key, value)?,
        "train.batch_size" => t.batch_size = parse(key, value)?,
        "train.max_epochs" => t.max_epochs = parse(key, value)?,
        "train.lr_decay" => t.lr_decay = parse(key, value)?,
        "train.patience" => t.patience = parse(key, value)?,
        "train.improvement_threshold" => t.improvement_threshold = parse(key, value)?,
        "train.max_decays" => t.max_decays = parse(key, value)?,
        "train.seed" => t.seed = parse(key, value)?,
        "train.rechunk" => t.rechunk = parse(key, value)?,
        "train.selection" => t.selection = parse(key, value)?,
        "train.pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_base() {
        let cfg = ExperimentConfig::parse("", ExperimentConfig::default()).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn overrides_and_comments() {
        let text = "
# experiment
model.n_tags = 6   # synthetic
model.context = 1
train.seed = 42
";
        let cfg = ExperimentConfig::parse(text, ExperimentConfig::default()).unwrap();
        assert_eq!(cfg.model.n_tags, 6);
        assert_eq!(cfg.model.context, ContextKind::WidthK(1));
        assert_eq!(cfg.train.seed, 42);
    }

    #[test]
    fn all_errors_reported_together() {
        let text = "
model.n_tags = zero
model.mask_rate = 3.0
nonsense.key = 1
model.n_tags = 5
";
        let err = ExperimentConfig::parse(text, ExperimentConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad value for `model.n_tags`"), "{msg}");
        assert!(msg.contains("mask_rate"), "{msg}");
        assert!(msg.contains("unknown key `nonsense.key`"), "{msg}");
        assert!(msg.contains("duplicate key `model.n_tags`"), "{msg}");
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::synthetic();
        cfg.model.context = ContextKind::WidthK(2);
        cfg.train.seed = 7;
        let text = cfg.to_config_text();
        let reparsed = ExperimentConfig::parse(&text, ExperimentConfig::default()).unwrap();
        assert_eq!(reparsed, cfg);
    }
}
