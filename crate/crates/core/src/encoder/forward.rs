//! Forward pass of the instruction encoder and the instruction-guided paper
//! encoder, expressed on a [`Tape`] so the same code serves inference and
//! training.
//!
//! Layer `l + 1` of the paper encoder attends with paper-token queries over
//! the keys/values of `H_instruction^(l) ∥ H_paper^(l)`; the instruction
//! encoder never sees the paper.

use crate::autodiff::{Tape, Var};
use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

use super::weights::{EncoderWeights, LayerWeights};

/// Tape handles for one layer's parameters.
#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
    pub value: Vec<Var>,
    pub output: Var,
    pub attn_norm_gamma: Var,
    pub attn_norm_beta: Var,
    pub ffn_in: Var,
    pub ffn_in_bias: Var,
    pub ffn_out: Var,
    pub ffn_out_bias: Var,
    pub ffn_norm_gamma: Var,
    pub ffn_norm_beta: Var,
}

/// All encoder parameters registered on a tape, with `ParamId`s following
/// the weight layout order.
#[derive(Clone, Debug)]
pub struct BoundWeights<T> {
    pub token_embedding: Var,
    pub position_embedding: Var,
    pub segment_embedding: Var,
    pub layers: Vec<BoundLayer>,
    pub eps: T,
    pub head_dim: usize,
    pub normalize: bool,
}

impl<T: Scalar> EncoderWeights<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundWeights<T> {
        let mut id = 0usize;
        let mut reg = |tape: &mut Tape<T>, t: &Tensor<T>| {
            let v = tape.param(id, t.clone());
            id += 1;
            v
        };
        let token_embedding = reg(tape, &self.token_embedding);
        let position_embedding = reg(tape, &self.position_embedding);
        let segment_embedding = reg(tape, &self.segment_embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                query: l.query.iter().map(|t| reg(tape, t)).collect(),
                key: l.key.iter().map(|t| reg(tape, t)).collect(),
                value: l.value.iter().map(|t| reg(tape, t)).collect(),
                output: reg(tape, &l.output),
                attn_norm_gamma: reg(tape, &l.attn_norm_gamma),
                attn_norm_beta: reg(tape, &l.attn_norm_beta),
                ffn_in: reg(tape, &l.ffn_in),
                ffn_in_bias: reg(tape, &l.ffn_in_bias),
                ffn_out: reg(tape, &l.ffn_out),
                ffn_out_bias: reg(tape, &l.ffn_out_bias),
                ffn_norm_gamma: reg(tape, &l.ffn_norm_gamma),
                ffn_norm_beta: reg(tape, &l.ffn_norm_beta),
            })
            .collect();
        BoundWeights {
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
            eps: T::of(self.config.layer_norm_eps),
            head_dim: self.config.head_dim(),
            normalize: self.config.normalize_embeddings,
        }
    }
}

fn bind_layer<T: Scalar>(tape: &mut Tape<T>, l: &LayerWeights<T>) -> BoundLayer {
    let mut c = |t: &Tensor<T>| tape.constant(t.clone());
    BoundLayer {
        query: l.query.iter().map(&mut c).collect(),
        key: l.key.iter().map(&mut c).collect(),
        value: l.value.iter().map(&mut c).collect(),
        output: c(&l.output),
        attn_norm_gamma: c(&l.attn_norm_gamma),
        attn_norm_beta: c(&l.attn_norm_beta),
        ffn_in: c(&l.ffn_in),
        ffn_in_bias: c(&l.ffn_in_bias),
        ffn_out: c(&l.ffn_out),
        ffn_out_bias: c(&l.ffn_out_bias),
        ffn_norm_gamma: c(&l.ffn_norm_gamma),
        ffn_norm_beta: c(&l.ffn_norm_beta),
    }
}

/// Sum of token, segment (always id 0) and position embeddings.
pub fn embed_on<T: Scalar>(tape: &mut Tape<T>, w: &BoundWeights<T>, ids: &[u32]) -> Result<Var> {
    let positions = tape.value(w.position_embedding).shape()[0];
    if ids.len() > positions {
        return Err(CofError::Input(format!(
            "sequence of length {} exceeds the {positions}-row position table",
            ids.len()
        )));
    }
    let tok_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let pos_ids: Vec<usize> = (0..ids.len()).collect();
    let seg_ids = vec![0usize; ids.len()];
    let tok = tape.gather_rows(w.token_embedding, &tok_ids)?;
    let pos = tape.gather_rows(w.position_embedding, &pos_ids)?;
    let seg = tape.gather_rows(w.segment_embedding, &seg_ids)?;
    let sum = tape.add(tok, seg)?;
    tape.add(sum, pos)
}

fn key_mask_tensor<T: Scalar>(rows: usize, key_valid: &[bool]) -> Tensor<T> {
    let keys = key_valid.len();
    let mut data = Vec::with_capacity(rows * keys);
    for _ in 0..rows {
        data.extend(
            key_valid
                .iter()
                .map(|&ok| if ok { T::zero() } else { T::neg_infinity() }),
        );
    }
    Tensor::new(vec![rows, keys], data).expect("sized from arguments")
}

/// Multi-head attention with queries from `queries` and keys/values from
/// `context`, followed by the output projection. `key_valid`, when given,
/// marks which context rows may be attended to.
pub fn attention_on<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &BoundLayer,
    head_dim: usize,
    queries: Var,
    context: Var,
    key_valid: Option<&[bool]>,
) -> Result<Var> {
    let rows = tape.value(queries).shape()[0];
    let mask = match key_valid {
        Some(valid) if valid.iter().any(|&v| !v) => Some(key_mask_tensor::<T>(rows, valid)),
        _ => None,
    };
    let scale = T::one() / T::of(head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(layer.query.len());
    for u in 0..layer.query.len() {
        let q = tape.matmul(queries, layer.query[u])?;
        let k = tape.matmul(context, layer.key[u])?;
        let v = tape.matmul(context, layer.value[u])?;
        let scores = tape.matmul_bt(q, k)?;
        let mut scores = tape.scale(scores, scale);
        if let Some(m) = &mask {
            scores = tape.add_const(scores, m)?;
        }
        let probs = tape.softmax_rows(scores);
        heads.push(tape.matmul(probs, v)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, layer.output)
}

/// Residual + layer norm, position-wise GELU feed-forward, residual + layer norm.
fn finish_layer<T: Scalar>(
    tape: &mut Tape<T>,
    layer: &BoundLayer,
    eps: T,
    h: Var,
    attended: Var,
) -> Result<Var> {
    let res = tape.add(h, attended)?;
    let h_hat = tape.layer_norm(res, layer.attn_norm_gamma, layer.attn_norm_beta, eps)?;
    let inner = tape.matmul(h_hat, layer.ffn_in)?;
    let inner = tape.add_row(inner, layer.ffn_in_bias)?;
    let act = tape.gelu(inner);
    let out = tape.matmul(act, layer.ffn_out)?;
    let out = tape.add_row(out, layer.ffn_out_bias)?;
    let res = tape.add(h_hat, out)?;
    tape.layer_norm(res, layer.ffn_norm_gamma, layer.ffn_norm_beta, eps)
}

/// Encodes an (unpadded) instruction; returns `H^(0) … H^(L)`.
pub fn encode_instruction_on<T: Scalar>(
    tape: &mut Tape<T>,
    w: &BoundWeights<T>,
    ids: &[u32],
) -> Result<Vec<Var>> {
    let mut states = Vec::with_capacity(w.layers.len() + 1);
    let mut h = embed_on(tape, w, ids)?;
    states.push(h);
    for layer in &w.layers {
        let att = attention_on(tape, layer, w.head_dim, h, h, None)?;
        h = finish_layer(tape, layer, w.eps, h, att)?;
        states.push(h);
    }
    Ok(states)
}

/// Encodes a paper and returns its `[1 × d]` `[CLS]` embedding.
///
/// `ids` may include trailing `[PAD]` positions beyond `valid_len`; they are
/// masked as keys. `instruction` carries the instruction layer states
/// (`H^(0) … H^(L)`); `None` or zero-row states give the plain
/// self-attention encoder.
pub fn encode_paper_on<T: Scalar>(
    tape: &mut Tape<T>,
    w: &BoundWeights<T>,
    ids: &[u32],
    valid_len: usize,
    instruction: Option<&[Var]>,
) -> Result<Var> {
    if let Some(states) = instruction {
        if states.len() != w.layers.len() + 1 {
            return Err(CofError::Usage(format!(
                "instruction has {} layer states, encoder expects {}",
                states.len(),
                w.layers.len() + 1
            )));
        }
    }
    if valid_len == 0 || valid_len > ids.len() {
        return Err(CofError::Input(format!(
            "valid length {valid_len} outside 1..={}",
            ids.len()
        )));
    }
    let instruction =
        instruction.filter(|states| tape.value(states[0]).shape().first().copied() != Some(0));
    let instr_rows = instruction.map_or(0, |s| tape.value(s[0]).shape()[0]);
    let key_valid: Option<Vec<bool>> = (valid_len < ids.len()).then(|| {
        std::iter::repeat(true)
            .take(instr_rows)
            .chain((0..ids.len()).map(|i| i < valid_len))
            .collect()
    });

    let mut h = embed_on(tape, w, ids)?;
    for (l, layer) in w.layers.iter().enumerate() {
        let context = match instruction {
            Some(states) => tape.concat_rows(&[states[l], h])?,
            None => h,
        };
        let att = attention_on(tape, layer, w.head_dim, h, context, key_valid.as_deref())?;
        h = finish_layer(tape, layer, w.eps, h, att)?;
    }
    let cls = tape.slice_rows(h, 0, 1)?;
    Ok(if w.normalize {
        tape.l2_normalize_rows(cls)
    } else {
        cls
    })
}

/// Hidden states of every layer, `H^(0) … H^(L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStates<T> {
    pub states: Vec<Tensor<T>>,
}

impl<T: Scalar> LayerStates<T> {
    /// Zero-length instruction states for an `num_layers`-layer encoder.
    pub fn empty(num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            states: vec![Tensor::zeros(&[0, hidden_dim]); num_layers + 1],
        }
    }

    pub fn num_layers(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn last(&self) -> &Tensor<T> {
        self.states.last().expect("at least the input layer")
    }

    fn on_tape(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.states.iter().map(|s| tape.constant(s.clone())).collect()
    }
}

fn check_ids<T: Scalar>(ids: &[u32], weights: &EncoderWeights<T>) -> Result<()> {
    let vocab = weights.config.vocab_size;
    match ids.iter().find(|&&id| id as usize >= vocab) {
        Some(id) => Err(CofError::Input(format!(
            "token id {id} out of range for vocabulary of size {vocab}"
        ))),
        None => Ok(()),
    }
}

/// `h^(0)` for every position of `seq`, padding included.
pub fn embed_inputs<T: Scalar>(seq: &TokenSequence, weights: &EncoderWeights<T>) -> Result<Tensor<T>> {
    check_ids(&seq.ids, weights)?;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape);
    let out = embed_on(&mut tape, &w, &seq.ids)?;
    Ok(tape.value(out).clone())
}

/// Self-attention of one layer over `h`; `key_valid` masks padded keys.
pub fn mha<T: Scalar>(
    h: &Tensor<T>,
    layer: &LayerWeights<T>,
    key_valid: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bl = bind_layer(&mut tape, layer);
    let head_dim = layer.query[0].shape()[1];
    let hv = tape.constant(h.clone());
    let out = attention_on(&mut tape, &bl, head_dim, hv, hv, key_valid)?;
    Ok(tape.value(out).clone())
}

/// Asymmetric attention: queries from the paper rows only, keys/values from
/// `instruction ∥ paper`, using the same projections as [`mha`].
pub fn mha_asymmetric<T: Scalar>(
    paper: &Tensor<T>,
    instruction: &Tensor<T>,
    layer: &LayerWeights<T>,
    paper_valid: Option<&[bool]>,
    instruction_valid: Option<&[bool]>,
) -> Result<Tensor<T>> {
    let (a, d_i) = instruction.dims2("mha_asymmetric")?;
    let (b, d_p) = paper.dims2("mha_asymmetric")?;
    if d_i != d_p {
        return Err(CofError::Shape {
            op: "mha_asymmetric",
            left: paper.shape().to_vec(),
            right: instruction.shape().to_vec(),
        });
    }
    if a == 0 {
        return mha(paper, layer, paper_valid);
    }
    let mut tape = Tape::new();
    let bl = bind_layer(&mut tape, layer);
    let head_dim = layer.query[0].shape()[1];
    let hp = tape.constant(paper.clone());
    let hi = tape.constant(instruction.clone());
    let ctx = tape.concat_rows(&[hi, hp])?;
    let valid: Option<Vec<bool>> = (paper_valid.is_some() || instruction_valid.is_some()).then(|| {
        let iv = instruction_valid.map_or_else(|| vec![true; a], <[bool]>::to_vec);
        let pv = paper_valid.map_or_else(|| vec![true; b], <[bool]>::to_vec);
        iv.into_iter().chain(pv).collect()
    });
    let out = attention_on(&mut tape, &bl, head_dim, hp, ctx, valid.as_deref())?;
    Ok(tape.value(out).clone())
}

/// Runs the instruction encoder on the non-pad prefix of `instruction`.
pub fn encode_instruction<T: Scalar>(
    instruction: &TokenSequence,
    weights: &EncoderWeights<T>,
) -> Result<LayerStates<T>> {
    check_ids(instruction.valid(), weights)?;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape);
    let states = encode_instruction_on(&mut tape, &w, instruction.valid())?;
    Ok(LayerStates {
        states: states.into_iter().map(|s| tape.value(s).clone()).collect(),
    })
}

/// `g(p|φ)`: the final-layer `[CLS]` vector of the paper encoded with the
/// instruction states of factor φ.
pub fn encode_paper<T: Scalar>(
    paper: &TokenSequence,
    instruction: &LayerStates<T>,
    weights: &EncoderWeights<T>,
) -> Result<Vec<T>> {
    if instruction.num_layers() != weights.config.num_layers {
        return Err(CofError::Usage(format!(
            "instruction states have {} layers, encoder has {}",
            instruction.num_layers(),
            weights.config.num_layers
        )));
    }
    check_ids(paper.valid(), weights)?;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape);
    let states = instruction.on_tape(&mut tape);
    let cls = encode_paper_on(&mut tape, &w, paper.valid(), paper.attention_length, Some(&states))?;
    Ok(tape.value(cls).data().to_vec())
}

/// Same as [`encode_paper`] but runs over the padded sequence with key masking
/// instead of dropping the padding first.
pub fn encode_paper_padded<T: Scalar>(
    paper: &TokenSequence,
    instruction: &LayerStates<T>,
    weights: &EncoderWeights<T>,
) -> Result<Vec<T>> {
    check_ids(&paper.ids, weights)?;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape);
    let states = instruction.on_tape(&mut tape);
    let cls = encode_paper_on(&mut tape, &w, &paper.ids, paper.attention_length, Some(&states))?;
    Ok(tape.value(cls).data().to_vec())
}

/// Factor-agnostic embedding: the plain self-attention stack over the paper.
pub fn encode_paper_uninstructed<T: Scalar>(
    paper: &TokenSequence,
    weights: &EncoderWeights<T>,
) -> Result<Vec<T>> {
    check_ids(paper.valid(), weights)?;
    let mut tape = Tape::new();
    let w = weights.bind(&mut tape);
    let cls = encode_paper_on(&mut tape, &w, paper.valid(), paper.attention_length, None)?;
    Ok(tape.value(cls).data().to_vec())
}
