//! Contrastive pre-training: factor-tagged samples, batch layout, the loss,
//! AdamW and the training loop, plus a synthetic corpus generator for small
//! runs.

mod batch;
mod optim;
mod samples;
mod synthetic;
mod train;

pub use batch::{assemble_batch, Batch};
pub use optim::{
    adamw_step, check_finite, clip_global_norm, global_norm, learning_rate, AdamState,
    AdamWConfig,
};
pub use samples::{
    build_citation_samples, build_datasets, build_semantic_samples, build_topic_samples, citation_graph,
    citation_triplets, is_topic_positive, topic_positive_pairs, Item, SkipReport, TrainingSample,
    vocabulary_texts, FINE_FIELD_LAYER, TOPIC_POSITIVES_PER_PAPER,
};
pub use synthetic::{generate_synthetic_corpus, FieldHierarchy, SyntheticCorpus, SyntheticCorpusSpec};
pub use train::{
    batch_loss, batch_loss_on, batch_loss_value, train, LossRecord, TrainConfig, TrainOutcome,
};

use crate::error::{CofError, Result};
use crate::scalar::Scalar;

/// `-log(exp(a·q⁺) / (exp(a·q⁺) + Σ exp(a·q⁻)))`, evaluated with
/// log-sum-exp.
pub fn contrastive_loss<T: Scalar>(anchor: &[T], positive: &[T], negatives: &[Vec<T>]) -> Result<T> {
    let dot = |v: &[T]| -> Result<T> {
        if v.len() != anchor.len() {
            return Err(CofError::Shape {
                op: "contrastive_loss",
                left: vec![anchor.len()],
                right: vec![v.len()],
            });
        }
        Ok(anchor.iter().zip(v).map(|(&a, &b)| a * b).sum())
    };
    let pos = dot(positive)?;
    let mut logits = vec![pos];
    for n in negatives {
        logits.push(dot(n)?);
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    Ok((max - pos) + sum.ln())
}
