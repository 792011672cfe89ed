use serde::{Deserialize, Serialize};

use crate::error::{CofError, Result};
use crate::tokenizer::{INSTRUCTION_MAX_LEN, PAPER_MAX_LEN};

/// Shape of the shared instruction/paper Transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_instruction_len: usize,
    pub max_paper_len: usize,
    pub vocab_size: usize,
    pub layer_norm_eps: f64,
    /// L2-normalize output embeddings before they are compared.
    pub normalize_embeddings: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 256,
            max_instruction_len: INSTRUCTION_MAX_LEN,
            max_paper_len: PAPER_MAX_LEN,
            vocab_size: 4,
            layer_norm_eps: 1e-5,
            normalize_embeddings: false,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Rows of the position embedding table.
    pub fn max_positions(&self) -> usize {
        self.max_instruction_len.max(self.max_paper_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(CofError::Config("num_layers must be at least 1".into()));
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(CofError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(CofError::Config("hidden_dim and ffn_dim must be positive".into()));
        }
        if self.max_instruction_len < 2 || self.max_paper_len < 2 {
            return Err(CofError::Config("sequence limits must be at least 2".into()));
        }
        if self.vocab_size < crate::tokenizer::NUM_RESERVED {
            return Err(CofError::Config("vocab_size must cover the reserved tokens".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(CofError::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
