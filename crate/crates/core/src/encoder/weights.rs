//! Encoder parameters, initialization, and the `COFW` checkpoint format.
//!
//! Parameter order (also the checkpoint order and the `ParamId` numbering):
//!
//! 1. token embedding `[vocab_size × d]`
//! 2. position embedding `[max_positions × d]`
//! 3. segment embedding `[2 × d]`
//! 4. for each layer: `query_1..query_U`, `key_1..key_U`, `value_1..value_U`
//!    (each `[d × d/U]`), `output [d × d]`, `attn_norm.gamma [d]`,
//!    `attn_norm.beta [d]`, `ffn_in [d × ffn]`, `ffn_in_bias [ffn]`,
//!    `ffn_out [ffn × d]`, `ffn_out_bias [d]`, `ffn_norm.gamma [d]`,
//!    `ffn_norm.beta [d]`.
//!
//! Checkpoint layout (all little-endian): magic `COFW`, `u32` version, the
//! config as `u32` num_layers, hidden_dim, num_heads, ffn_dim,
//! max_instruction_len, max_paper_len, vocab_size, then `f64` layer_norm_eps,
//! `u32` normalize flag, then every parameter in the order above as `f32`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"COFW";
pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_STD: f64 = 0.02;
const SEGMENT_ROWS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub query: Vec<Tensor<T>>,
    pub key: Vec<Tensor<T>>,
    pub value: Vec<Tensor<T>>,
    pub output: Tensor<T>,
    pub attn_norm_gamma: Tensor<T>,
    pub attn_norm_beta: Tensor<T>,
    pub ffn_in: Tensor<T>,
    pub ffn_in_bias: Tensor<T>,
    pub ffn_out: Tensor<T>,
    pub ffn_out_bias: Tensor<T>,
    pub ffn_norm_gamma: Tensor<T>,
    pub ffn_norm_beta: Tensor<T>,
}

/// The single parameter set shared by the instruction and paper encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: EncoderConfig,
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub segment_embedding: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
}

fn shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden_dim;
    let dh = config.head_dim();
    let f = config.ffn_dim;
    let mut out = vec![
        ("token_embedding".to_string(), vec![config.vocab_size, d]),
        ("position_embedding".to_string(), vec![config.max_positions(), d]),
        ("segment_embedding".to_string(), vec![SEGMENT_ROWS, d]),
    ];
    for l in 0..config.num_layers {
        for kind in ["query", "key", "value"] {
            for u in 0..config.num_heads {
                out.push((format!("layer{l}.{kind}{u}"), vec![d, dh]));
            }
        }
        out.push((format!("layer{l}.output"), vec![d, d]));
        out.push((format!("layer{l}.attn_norm.gamma"), vec![d]));
        out.push((format!("layer{l}.attn_norm.beta"), vec![d]));
        out.push((format!("layer{l}.ffn_in"), vec![d, f]));
        out.push((format!("layer{l}.ffn_in_bias"), vec![f]));
        out.push((format!("layer{l}.ffn_out"), vec![f, d]));
        out.push((format!("layer{l}.ffn_out_bias"), vec![d]));
        out.push((format!("layer{l}.ffn_norm.gamma"), vec![d]));
        out.push((format!("layer{l}.ffn_norm.beta"), vec![d]));
    }
    out
}

impl<T: Scalar> EncoderWeights<T> {
    /// Parameter names in layout order.
    pub fn param_names(config: &EncoderConfig) -> Vec<String> {
        shapes(config).into_iter().map(|(n, _)| n).collect()
    }

    /// Builds weights from tensors listed in layout order.
    pub fn from_params(config: EncoderConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = shapes(&config);
        if expected.len() != params.len() {
            return Err(CofError::Usage(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(CofError::Usage(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        let u = config.num_heads;
        let mut it = params.into_iter();
        let mut next = || it.next().expect("length checked above");
        let token_embedding = next();
        let position_embedding = next();
        let segment_embedding = next();
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let query = (0..u).map(|_| next()).collect();
            let key = (0..u).map(|_| next()).collect();
            let value = (0..u).map(|_| next()).collect();
            layers.push(LayerWeights {
                query,
                key,
                value,
                output: next(),
                attn_norm_gamma: next(),
                attn_norm_beta: next(),
                ffn_in: next(),
                ffn_in_bias: next(),
                ffn_out: next(),
                ffn_out_bias: next(),
                ffn_norm_gamma: next(),
                ffn_norm_beta: next(),
            });
        }
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
        })
    }

    /// Gaussian(0, 0.02) matrices, zero biases, unit layer-norm gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: EncoderConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| CofError::Config(e.to_string()))?;
        let params = shapes(&config)
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".gamma") {
                    Tensor::filled(&shape, T::one())
                } else if name.ends_with("bias") || name.ends_with(".beta") {
                    Tensor::zeros(&shape)
                } else {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
                    Tensor::new(shape, data).expect("sized from shape")
                }
            })
            .collect();
        Self::from_params(config, params)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.token_embedding,
            &self.position_embedding,
            &self.segment_embedding,
        ];
        for l in &self.layers {
            out.extend(l.query.iter());
            out.extend(l.key.iter());
            out.extend(l.value.iter());
            out.extend([
                &l.output,
                &l.attn_norm_gamma,
                &l.attn_norm_beta,
                &l.ffn_in,
                &l.ffn_in_bias,
                &l.ffn_out,
                &l.ffn_out_bias,
                &l.ffn_norm_gamma,
                &l.ffn_norm_beta,
            ]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.token_embedding,
            &mut self.position_embedding,
            &mut self.segment_embedding,
        ];
        for l in &mut self.layers {
            out.extend(l.query.iter_mut());
            out.extend(l.key.iter_mut());
            out.extend(l.value.iter_mut());
            out.extend([
                &mut l.output,
                &mut l.attn_norm_gamma,
                &mut l.attn_norm_beta,
                &mut l.ffn_in,
                &mut l.ffn_in_bias,
                &mut l.ffn_out,
                &mut l.ffn_out_bias,
                &mut l.ffn_norm_gamma,
                &mut l.ffn_norm_beta,
            ]);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Serializes to the `COFW` checkpoint layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(64 + self.num_scalars() * 4);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [
            c.num_layers,
            c.hidden_dim,
            c.num_heads,
            c.ffn_dim,
            c.max_instruction_len,
            c.max_paper_len,
            c.vocab_size,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&c.layer_norm_eps.to_le_bytes());
        buf.extend_from_slice(&u32::from(c.normalize_embeddings).to_le_bytes());
        for p in self.params() {
            for &v in p.data() {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fmt = |message: String| CofError::Format {
            path: origin.to_path_buf(),
            message,
        };
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4).ok_or_else(|| fmt("truncated header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fmt(format!("bad magic {magic:?}, expected COFW")));
        }
        let version = cur.u32().ok_or_else(|| fmt("truncated header".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let mut fields = [0usize; 7];
        for f in fields.iter_mut() {
            *f = cur.u32().ok_or_else(|| fmt("truncated config".into()))? as usize;
        }
        let eps = cur.f64().ok_or_else(|| fmt("truncated config".into()))?;
        let normalize = cur.u32().ok_or_else(|| fmt("truncated config".into()))? != 0;
        let config = EncoderConfig {
            num_layers: fields[0],
            hidden_dim: fields[1],
            num_heads: fields[2],
            ffn_dim: fields[3],
            max_instruction_len: fields[4],
            max_paper_len: fields[5],
            vocab_size: fields[6],
            layer_norm_eps: eps,
            normalize_embeddings: normalize,
        };
        config.validate().map_err(|e| fmt(e.to_string()))?;
        let mut params = Vec::new();
        for (name, shape) in shapes(&config) {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = cur
                    .f32()
                    .ok_or_else(|| fmt(format!("truncated parameter {name}")))?;
                data.push(T::of(v as f64));
            }
            params.push(Tensor::new(shape, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(fmt(format!(
                "{} trailing bytes after parameters",
                bytes.len() - cur.pos
            )));
        }
        Self::from_params(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| CofError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| CofError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
