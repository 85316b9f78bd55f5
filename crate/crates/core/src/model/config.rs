use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoder flavor: left-to-right teacher or parallel student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Ar,
    Nar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub flavor: Flavor,
    /// Layers per stack.
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub hidden_dim: usize,
    /// Full vocabulary size, reserved ids included.
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Share the embedding table with the output projection.
    pub tie_embeddings: bool,
    /// Renormalize soft-copy kernel rows to sum to one (NAR only).
    pub kernel_normalize: bool,
    /// One decoder positional table shared by all layers, rather than one per layer (NAR only).
    pub shared_layer_positions: bool,
    /// Initial soft-copy variance (NAR only).
    pub init_sigma_sq: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(36, Flavor::Ar)
    }
}

impl ModelConfig {
    /// 2 layers, 4 heads, 64 model dims, 256 hidden dims.
    pub fn desk(vocab_size: usize, flavor: Flavor) -> Self {
        ModelConfig {
            flavor,
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            hidden_dim: 256,
            vocab_size,
            max_len: 64,
            dropout: 0.0,
            tie_embeddings: true,
            kernel_normalize: true,
            shared_layer_positions: true,
            init_sigma_sq: 1.0,
        }
    }

    /// The base configuration: 6 layers, 8 heads, 512 model dims, 2048 hidden dims.
    pub fn base(vocab_size: usize, flavor: Flavor) -> Self {
        ModelConfig {
            num_layers: 6,
            num_heads: 8,
            model_dim: 512,
            hidden_dim: 2048,
            max_len: 256,
            dropout: 0.1,
            ..ModelConfig::desk(vocab_size, flavor)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("hidden_dim", self.hidden_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.init_sigma_sq <= 0.0 || !self.init_sigma_sq.is_finite() {
            return Err(Error::invalid("init_sigma_sq must be positive"));
        }
        Ok(())
    }

    /// Same shapes everywhere the encoder and embeddings are concerned.
    pub fn encoder_compatible(&self, other: &ModelConfig) -> bool {
        self.num_layers == other.num_layers
            && self.num_heads == other.num_heads
            && self.model_dim == other.model_dim
            && self.hidden_dim == other.hidden_dim
            && self.vocab_size == other.vocab_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::desk(36, Flavor::Ar).validate().unwrap();
        let base = ModelConfig::base(40000, Flavor::Nar);
        base.validate().unwrap();
        assert_eq!((base.num_layers, base.num_heads, base.model_dim, base.hidden_dim), (6, 8, 512, 2048));
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let mut c = ModelConfig::desk(36, Flavor::Ar);
        c.num_heads = 5;
        assert!(c.validate().is_err());
    }
}
