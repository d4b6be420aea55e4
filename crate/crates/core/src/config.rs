//! JSON run configuration. Unknown keys are rejected at every level so that a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::masking::{AugmentConfig, DEFAULT_MASK_RATIO};
use crate::model::{AdamWConfig, ModelConfig, TrainConfig};
use crate::tokenizer::TokenizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingConfig {
    pub ratio: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_MASK_RATIO,
        }
    }
}

/// Transformer shape; token width and patch size come from the tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub dec_dim: usize,
    pub enc_heads: Option<usize>,
    pub dec_heads: Option<usize>,
    pub class_token: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::full();
        Self {
            enc_blocks: m.enc_blocks,
            dec_blocks: m.dec_blocks,
            dec_dim: m.dec_dim,
            enc_heads: None,
            dec_heads: None,
            class_token: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adamw,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            kind: OptimizerKind::Adamw,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            schedule: Schedule::Cosine,
            steps: 300,
            batch_size: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Directory of `.ply` training clouds.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Loss CSV; defaults to the checkpoint path with a `.csv` extension.
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub tokenizer: TokenizerConfig,
    pub masking: MaskingConfig,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub loss: LossWeights,
    pub seed: u64,
    pub io: IoSection,
}

impl RunConfig {
    /// CPU-sized variant: 32^3 grid, 4^3 patches, C = 32, 2 + 2 blocks.
    pub fn desk() -> Self {
        let m = ModelConfig::desk();
        Self {
            tokenizer: TokenizerConfig::desk(),
            model: ModelSection {
                enc_blocks: m.enc_blocks,
                dec_blocks: m.dec_blocks,
                dec_dim: m.dec_dim,
                ..ModelSection::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.model_config().validate()?;
        if !(0.0..1.0).contains(&self.masking.ratio) {
            return Err(Error::Config(format!("masking ratio {} outside [0, 1)", self.masking.ratio)));
        }
        let r = self.augment.ratio;
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("augment ratio {r} outside (0, 1]")));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) || o.batch_size == 0 {
            return Err(Error::Config("optimizer needs a finite lr >= 0 and a positive batch size".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            enc_blocks: self.model.enc_blocks,
            enc_dim: self.tokenizer.embed_dim,
            dec_blocks: self.model.dec_blocks,
            dec_dim: self.model.dec_dim,
            enc_heads: self.model.enc_heads,
            dec_heads: self.model.dec_heads,
            patch_size: self.tokenizer.patch_size,
            class_token: self.model.class_token,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        TrainConfig {
            steps: o.steps,
            batch_size: o.batch_size,
            mask_ratio: self.masking.ratio,
            augment: self.augment.clone(),
            optimizer: AdamWConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
                cosine: o.schedule == Schedule::Cosine,
            },
            weights: self.loss,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_full_scale() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.masking.ratio, 0.6);
        assert_eq!(c.augment.ratio, 0.5);
        assert_eq!(c.optimizer.lr, 5e-4);
        assert_eq!(c.tokenizer.space_size, 224);
        assert_eq!(c.tokenizer.num_cells(), 4096);
        assert_eq!(c.loss, LossWeights::default());
        let m = c.model_config();
        assert_eq!((m.enc_blocks, m.enc_dim, m.dec_blocks, m.dec_dim), (12, 384, 8, 512));
        assert_eq!((m.enc_heads(), m.dec_heads()), (24, 32));
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            r#"{"tokeniser": {}}"#,
            r#"{"tokenizer": {"patchsize": 4}}"#,
            r#"{"optimizer": {"kind": "sgd"}}"#,
            r#"{"masking": {"ratio": 1.5}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn round_trip_and_desk() {
        let d = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&d.to_json()).unwrap(), d);
        let m = d.model_config();
        assert_eq!((m.enc_blocks, m.enc_dim, m.dec_blocks, m.dec_dim, m.patch_size), (2, 32, 2, 32, 4));
        let t = d.train_config();
        assert_eq!(t.optimizer.lr, 5e-4);
        assert!(t.optimizer.cosine);
    }
}
