//! Instruction-conditioned paper encoder.

mod config;
mod forward;
mod weights;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::EncoderConfig;
pub use forward::{
    attention_on, embed_inputs, embed_on, encode_instruction, encode_instruction_on, encode_paper,
    encode_paper_on, encode_paper_padded, encode_paper_uninstructed, mha, mha_asymmetric,
    BoundLayer, BoundWeights, LayerStates,
};
pub use weights::{EncoderWeights, LayerWeights, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use weights::Cursor;

use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tokenizer::{self, Vocabulary};

/// Relevance factor selected by an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Semantic,
    Topic,
    Citation,
    /// Only used by the topic-classification probe.
    TopicClassification,
}

impl Factor {
    /// The three factors used for matching and training.
    pub const MATCHING: [Factor; 3] = [Factor::Semantic, Factor::Topic, Factor::Citation];

    pub fn instruction(self) -> &'static str {
        match self {
            Factor::Semantic => "Retrieve a scientific paper that is relevant to the query.",
            Factor::Topic => {
                "Find a pair of papers that one paper shares similar scientific topic classes with the other paper."
            }
            Factor::Citation => "Retrieve a scientific paper that is cited by the query.",
            Factor::TopicClassification => {
                "Tag a scientific paper with relevant scientific topic classes."
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Semantic => "semantic",
            Factor::Topic => "topic",
            Factor::Citation => "citation",
            Factor::TopicClassification => "topic_classification",
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factor {
    type Err = CofError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(Factor::Semantic),
            "topic" => Ok(Factor::Topic),
            "citation" => Ok(Factor::Citation),
            "topic_classification" => Ok(Factor::TopicClassification),
            other => Err(CofError::Usage(format!("unknown factor {other:?}"))),
        }
    }
}

/// A fixed instruction text bound to its factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorInstruction {
    pub factor: Factor,
    pub text: &'static str,
}

impl From<Factor> for FactorInstruction {
    fn from(factor: Factor) -> Self {
        Self {
            factor,
            text: factor.instruction(),
        }
    }
}

/// Trained weights plus the vocabulary they were trained with.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub weights: EncoderWeights<T>,
    pub vocab: Vocabulary,
}

impl<T: Scalar> Model<T> {
    pub fn new(weights: EncoderWeights<T>, vocab: Vocabulary) -> Result<Self> {
        if weights.config.vocab_size != vocab.len() {
            return Err(CofError::Usage(format!(
                "weights expect {} vocabulary entries, vocabulary has {}",
                weights.config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { weights, vocab })
    }

    pub fn instruction_states(&self, factor: Factor) -> Result<LayerStates<T>> {
        let seq = tokenizer::encode(
            factor.instruction(),
            &self.vocab,
            self.weights.config.max_instruction_len,
        )?;
        encode_instruction(&seq, &self.weights)
    }

    /// Embeds `text` with the given instruction states, or without any
    /// instruction when `states` is `None`.
    pub fn embed_text(&self, text: &str, states: Option<&LayerStates<T>>) -> Result<Vec<T>> {
        let seq = tokenizer::encode(text, &self.vocab, self.weights.config.max_paper_len)?;
        match states {
            Some(s) => encode_paper(&seq, s, &self.weights),
            None => encode_paper_uninstructed(&seq, &self.weights),
        }
    }

    pub fn embedder(&self) -> Embedder<'_, T> {
        Embedder {
            model: self,
            states: HashMap::new(),
            instructed: true,
        }
    }

    /// An embedder that ignores the requested factor and returns the
    /// factor-agnostic encoding.
    pub fn uninstructed_embedder(&self) -> Embedder<'_, T> {
        Embedder {
            model: self,
            states: HashMap::new(),
            instructed: false,
        }
    }
}

/// Embeds texts under factors, caching the instruction states per factor.
pub struct Embedder<'m, T> {
    model: &'m Model<T>,
    states: HashMap<Factor, LayerStates<T>>,
    instructed: bool,
}

impl<T: Scalar> Embedder<'_, T> {
    pub fn embed(&mut self, text: &str, factor: Factor) -> Result<Vec<T>> {
        if !self.instructed {
            return self.model.embed_text(text, None);
        }
        if !self.states.contains_key(&factor) {
            let s = self.model.instruction_states(factor)?;
            self.states.insert(factor, s);
        }
        self.model.embed_text(text, self.states.get(&factor))
    }

    pub fn is_instructed(&self) -> bool {
        self.instructed
    }
}
