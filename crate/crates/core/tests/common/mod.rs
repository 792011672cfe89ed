//! Independent reference implementations used as oracles by the integration
//! tests. Everything here works on plain nested `Vec`s with explicit loops.
#![allow(dead_code)]

use cof_core::encoder::{EncoderConfig, EncoderWeights, LayerWeights};
use cof_core::tensor::Tensor;
use cof_core::tokenizer::{TokenSequence, PAD_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toy_config(layers: usize, d: usize, heads: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        hidden_dim: d,
        num_heads: heads,
        ffn_dim: 2 * d,
        max_instruction_len: 8,
        max_paper_len: 12,
        vocab_size: 20,
        ..EncoderConfig::default()
    }
}

/// Weights with every entry (gains and biases included) drawn at random.
pub fn random_weights(config: EncoderConfig, seed: u64) -> EncoderWeights<f64> {
    let mut w = EncoderWeights::init_with_std(config, seed, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for p in w.params_mut() {
        for v in p.data_mut() {
            if *v == 0.0 || *v == 1.0 {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    w
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn seq(ids: &[u32], max_len: usize) -> TokenSequence {
    let mut all = ids.to_vec();
    let n = all.len();
    all.resize(max_len, PAD_ID);
    TokenSequence {
        ids: all,
        attention_length: n,
    }
}

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, &v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn layer_norm_rows(x: &Mat, gamma: &[f64], beta: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + eps).sqrt() * gamma[j] + beta[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Per-head, per-query loop over keys with explicit softmax.
pub fn attention(
    queries: &Mat,
    context: &Mat,
    key_valid: &[bool],
    layer: &LayerWeights<f64>,
) -> Mat {
    let heads = layer.query.len();
    let dh = layer.query[0].shape()[1];
    let mut concat: Mat = vec![Vec::new(); queries.len()];
    for u in 0..heads {
        let wq = to_mat(&layer.query[u]);
        let wk = to_mat(&layer.key[u]);
        let wv = to_mat(&layer.value[u]);
        let q = mat_mul(queries, &wq);
        let k = mat_mul(context, &wk);
        let v = mat_mul(context, &wv);
        for (i, qi) in q.iter().enumerate() {
            let mut scores = Vec::new();
            for (j, kj) in k.iter().enumerate() {
                if key_valid[j] {
                    let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    scores.push((j, s / (dh as f64).sqrt()));
                }
            }
            let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s.1 - max).exp()).sum();
            let mut out = vec![0.0; dh];
            for &(j, s) in &scores {
                let p = (s - max).exp() / z;
                for c in 0..dh {
                    out[c] += p * v[j][c];
                }
            }
            concat[i].extend(out);
        }
    }
    mat_mul(&concat, &to_mat(&layer.output))
}

pub fn ffn_block(h_hat: &Mat, layer: &LayerWeights<f64>) -> Mat {
    let inner = mat_mul(h_hat, &to_mat(&layer.ffn_in));
    let inner: Mat = inner
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(layer.ffn_in_bias.data())
                .map(|(a, b)| gelu(a + b))
                .collect()
        })
        .collect();
    mat_mul(&inner, &to_mat(&layer.ffn_out))
        .into_iter()
        .map(|r| r.iter().zip(layer.ffn_out_bias.data()).map(|(a, b)| a + b).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// One full layer: LN(H + Att), then LN(Ĥ + FFN(Ĥ)).
pub fn layer(h: &Mat, context: &Mat, key_valid: &[bool], lw: &LayerWeights<f64>, eps: f64) -> Mat {
    let att = attention(h, context, key_valid, lw);
    let h_hat = layer_norm_rows(
        &add(h, &att),
        lw.attn_norm_gamma.data(),
        lw.attn_norm_beta.data(),
        eps,
    );
    let f = ffn_block(&h_hat, lw);
    layer_norm_rows(
        &add(&h_hat, &f),
        lw.ffn_norm_gamma.data(),
        lw.ffn_norm_beta.data(),
        eps,
    )
}

pub fn embed(ids: &[u32], w: &EncoderWeights<f64>) -> Mat {
    ids.iter()
        .enumerate()
        .map(|(pos, &id)| {
            let t = w.token_embedding.row(id as usize);
            let p = w.position_embedding.row(pos);
            let s = w.segment_embedding.row(0);
            (0..t.len()).map(|j| t[j] + s[j] + p[j]).collect()
        })
        .collect()
}

/// Instruction states `H^(0..=L)` computed layer by layer.
pub fn instruction_states(ids: &[u32], w: &EncoderWeights<f64>) -> Vec<Mat> {
    let eps = w.config.layer_norm_eps;
    let mut h = embed(ids, w);
    let mut out = vec![h.clone()];
    for lw in &w.layers {
        let valid = vec![true; h.len()];
        h = layer(&h, &h.clone(), &valid, lw, eps);
        out.push(h.clone());
    }
    out
}

/// Final `[CLS]` vector of the paper encoder.
pub fn paper_cls(ids: &[u32], instr: Option<&[Mat]>, w: &EncoderWeights<f64>) -> Vec<f64> {
    let eps = w.config.layer_norm_eps;
    let mut h = embed(ids, w);
    for (l, lw) in w.layers.iter().enumerate() {
        let mut ctx = instr.map_or_else(Vec::new, |s| s[l].clone());
        ctx.extend(h.iter().cloned());
        let valid = vec![true; ctx.len()];
        h = layer(&h, &ctx, &valid, lw, eps);
    }
    h[0].clone()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst agreement between analytic and central-difference gradients of the
/// full batch loss on one random toy configuration.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

const TOY_WORDS: [&str; 12] = [
    "retrieve", "a", "scientific", "paper", "cited", "query", "graph", "neural", "topic",
    "kernel", "data", "model",
];

/// Relative error with a floor of 1e-3 on the denominator, so coordinates
/// whose true gradient is essentially zero are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Builds a random 2-layer toy encoder (vocabulary of 16 ids, d=8, two heads,
/// ffn 32) and a random batch, then compares the gradient of
/// `batch_loss` against central differences with h=1e-5 at every weight
/// coordinate.
pub fn encoder_gradient_check(seed: u64) -> GradCheck {
    use cof_core::encoder::Factor;
    use cof_core::pretraining::{assemble_batch, batch_loss, batch_loss_value, Item, TrainingSample};
    use cof_core::tokenizer::Vocabulary;
    use rand::seq::IndexedRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::from_tokens(TOY_WORDS);
    let config = EncoderConfig {
        num_layers: 2,
        hidden_dim: 8,
        num_heads: 2,
        ffn_dim: 32,
        max_instruction_len: 10,
        max_paper_len: 10,
        vocab_size: vocab.len(),
        normalize_embeddings: rng.random_bool(0.25),
        ..EncoderConfig::default()
    };
    let mut w = EncoderWeights::<f64>::init_with_std(config, seed, 0.4).unwrap();
    for p in w.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }

    let factor = *[Factor::Semantic, Factor::Topic, Factor::Citation]
        .choose(&mut rng)
        .unwrap();
    let use_instructions = rng.random_bool(0.75);
    let in_batch = rng.random_bool(0.75);
    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=7);
        (0..n)
            .map(|_| *TOY_WORDS.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let b = rng.random_range(1..=3);
    let mut next = 0;
    let mut item = |rng: &mut ChaCha8Rng| {
        next += 1;
        Item::new(format!("d{next}"), text(rng))
    };
    let samples: Vec<TrainingSample> = (0..b)
        .map(|_| TrainingSample {
            factor,
            anchor: item(&mut rng),
            positive: item(&mut rng),
            hard_negatives: (0..rng.random_range(usize::from(b == 1 || !in_batch)..=2))
                .map(|_| item(&mut rng))
                .collect(),
        })
        .collect();
    let batch = assemble_batch(&samples, in_batch).unwrap();

    let (_, grads) = batch_loss(&w, &vocab, &batch, use_instructions).unwrap();
    let shapes: Vec<usize> = w.params().iter().map(|p| p.numel()).collect();
    let coords: Vec<(usize, usize)> = shapes
        .iter()
        .enumerate()
        .flat_map(|(pid, &n)| (0..n).map(move |k| (pid, k)))
        .collect();

    let h = 1e-5;
    let mut max_rel_err = 0.0f64;
    for &(pid, k) in &coords {
        let analytic = grads.param(pid).map_or(0.0, |g| g.data()[k]);
        let orig = w.params()[pid].data()[k];
        w.params_mut()[pid].data_mut()[k] = orig + h;
        let up = batch_loss_value(&w, &vocab, &batch, use_instructions).unwrap();
        w.params_mut()[pid].data_mut()[k] = orig - h;
        let down = batch_loss_value(&w, &vocab, &batch, use_instructions).unwrap();
        w.params_mut()[pid].data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(analytic, numeric));
    }
    GradCheck {
        max_rel_err,
        checked: coords.len(),
    }
}
