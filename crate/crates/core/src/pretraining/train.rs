use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Gradients, Tape, Var};
use crate::encoder::{
    encode_instruction_on, encode_paper_on, BoundWeights, EncoderWeights, Factor, Model,
};
use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{self, Vocabulary};

use super::batch::{assemble_batch, Batch};
use super::optim::{adamw_step, clip_global_norm, learning_rate, AdamState, AdamWConfig};
use super::samples::TrainingSample;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Hard negatives kept per sample.
    pub hard_negatives: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub in_batch_negatives: bool,
    /// When false the encoder is trained without instructions (the
    /// factor-agnostic ablation).
    pub use_instructions: bool,
    /// Samples drawn per factor each epoch; `None` uses every sample.
    pub max_samples_per_factor: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            peak_lr: 3e-4,
            weight_decay: 0.01,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            hard_negatives: 1,
            seed: 0,
            warmup_fraction: 0.1,
            max_grad_norm: Some(1.0),
            in_batch_negatives: true,
            use_instructions: true,
            max_samples_per_factor: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CofError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return bad("train.peak_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_betas.0) || !(0.0..1.0).contains(&self.adam_betas.1) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("train.warmup_fraction must lie in [0, 1]");
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 {
            return bad("weight decay must be >= 0 and adam eps > 0");
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Mean training loss of one factor over one epoch (epochs count from 1).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub factor: Factor,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub history: Vec<LossRecord>,
    pub steps: usize,
}

/// Builds the batch loss on `tape` and returns its node.
///
/// The instruction is encoded once and shared by every text; items with the
/// same id are encoded once.
pub fn batch_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundWeights<T>,
    weights: &EncoderWeights<T>,
    vocab: &Vocabulary,
    batch: &Batch,
    use_instructions: bool,
) -> Result<Var> {
    let cfg = &weights.config;
    let instruction = if use_instructions {
        let ids = tokenizer::encode(batch.factor.instruction(), vocab, cfg.max_instruction_len)?;
        Some(encode_instruction_on(tape, bound, ids.valid())?)
    } else {
        None
    };
    let mut cache: HashMap<&str, Var> = HashMap::new();
    let mut stacked = Vec::with_capacity(2);
    for items in [&batch.anchors, &batch.candidates] {
        let mut vars = Vec::with_capacity(items.len());
        for it in items.iter() {
            let v = match cache.get(it.id.as_str()) {
                Some(&v) => v,
                None => {
                    let seq = tokenizer::encode(&it.text, vocab, cfg.max_paper_len)?;
                    let ids = seq.valid();
                    let v = encode_paper_on(tape, bound, ids, ids.len(), instruction.as_deref())?;
                    cache.insert(it.id.as_str(), v);
                    v
                }
            };
            vars.push(v);
        }
        stacked.push(tape.concat_rows(&vars)?);
    }
    let logits = tape.matmul_bt(stacked[0], stacked[1])?;
    tape.info_nce(logits, &batch.positive, &batch.mask)
}

/// Loss of one batch and its gradients with respect to every weight tensor,
/// indexed in weight-layout order.
pub fn batch_loss<T: Scalar>(
    weights: &EncoderWeights<T>,
    vocab: &Vocabulary,
    batch: &Batch,
    use_instructions: bool,
) -> Result<(T, Gradients<T>)> {
    let mut tape = Tape::new();
    let bound = weights.bind(&mut tape);
    let loss = batch_loss_on(&mut tape, &bound, weights, vocab, batch, use_instructions)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.backward(loss)?))
}

/// Forward-only batch loss.
pub fn batch_loss_value<T: Scalar>(
    weights: &EncoderWeights<T>,
    vocab: &Vocabulary,
    batch: &Batch,
    use_instructions: bool,
) -> Result<T> {
    let mut tape = Tape::new();
    let bound = weights.bind(&mut tape);
    let loss = batch_loss_on(&mut tape, &bound, weights, vocab, batch, use_instructions)?;
    Ok(tape.value(loss).data()[0])
}

/// Splits each factor's samples into shuffled batches and interleaves them
/// round-robin across factors.
fn epoch_batches<'a>(
    datasets: &'a BTreeMap<Factor, Vec<TrainingSample>>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<&'a TrainingSample>> {
    let mut per_factor: Vec<Vec<Vec<&TrainingSample>>> = Vec::new();
    for samples in datasets.values() {
        let mut order: Vec<&TrainingSample> = samples.iter().collect();
        order.shuffle(rng);
        if let Some(cap) = config.max_samples_per_factor {
            order.truncate(cap);
        }
        per_factor.push(order.chunks(config.batch_size).map(<[_]>::to_vec).collect());
    }
    let rounds = per_factor.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for batches in &per_factor {
            if let Some(b) = batches.get(r) {
                out.push(b.clone());
            }
        }
    }
    out
}

fn batches_per_epoch(datasets: &BTreeMap<Factor, Vec<TrainingSample>>, config: &TrainConfig) -> usize {
    datasets
        .values()
        .map(|s| {
            let n = config.max_samples_per_factor.map_or(s.len(), |c| c.min(s.len()));
            n.div_ceil(config.batch_size)
        })
        .sum()
}

/// Trains `model` on factor-homogeneous batches of the given datasets.
///
/// Deterministic for a fixed `config.seed`. Returns the trained model, the
/// per-epoch mean loss of each factor and the number of optimizer steps.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    model: Model<T>,
    datasets: &BTreeMap<Factor, Vec<TrainingSample>>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let datasets: BTreeMap<Factor, Vec<TrainingSample>> = datasets
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(&f, s)| {
            let trimmed = s
                .iter()
                .map(|x| {
                    let mut x = x.clone();
                    x.hard_negatives.truncate(config.hard_negatives);
                    x
                })
                .collect();
            (f, trimmed)
        })
        .collect();
    if datasets.is_empty() {
        return Err(CofError::Usage("no non-empty factor dataset to train on".into()));
    }
    if let Some((f, s)) = datasets
        .iter()
        .find_map(|(f, s)| s.iter().find(|x| x.factor != *f).map(|x| (f, x)))
    {
        return Err(CofError::Usage(format!(
            "{} sample found in the {f} dataset",
            s.factor
        )));
    }

    let Model { mut weights, vocab } = model;
    let names = EncoderWeights::<T>::param_names(&weights.config);
    let mut state = AdamState::new(weights.params());
    let adamw = config.adamw();
    let total_steps = config.epochs * batches_per_epoch(&datasets, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut sums: BTreeMap<Factor, (f64, usize)> = BTreeMap::new();
        for samples in epoch_batches(&datasets, config, &mut rng) {
            let owned: Vec<TrainingSample> = samples.into_iter().cloned().collect();
            let batch = assemble_batch(&owned, config.in_batch_negatives)?;
            let (loss, grads) = batch_loss(&weights, &vocab, &batch, config.use_instructions)?;
            let entry = sums.entry(batch.factor).or_insert((0.0, 0));
            entry.0 += loss.as_f64() * batch.len() as f64;
            entry.1 += batch.len();

            let mut by_id = grads.into_params();
            let mut flat: Vec<Tensor<T>> = weights
                .params()
                .iter()
                .enumerate()
                .map(|(i, p)| by_id.remove(&i).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            super::optim::check_finite(&flat.iter().map(Some).collect::<Vec<_>>(), &names)?;
            if let Some(max) = config.max_grad_norm {
                clip_global_norm(&mut flat, max);
            }
            let lr = learning_rate(config.peak_lr, step, total_steps, config.warmup_fraction);
            let grads: Vec<Option<&Tensor<T>>> = flat.iter().map(Some).collect();
            adamw_step(&mut weights.params_mut(), &grads, &names, &mut state, &adamw, lr)?;
            step += 1;
        }
        for (factor, (sum, n)) in sums {
            let mean_loss = sum / n.max(1) as f64;
            log::info!("epoch {epoch} {factor}: mean loss {mean_loss:.4}");
            history.push(LossRecord {
                epoch,
                factor,
                mean_loss,
            });
        }
    }
    Ok(TrainOutcome {
        model: Model::new(weights, vocab)?,
        history,
        steps: step,
    })
}
