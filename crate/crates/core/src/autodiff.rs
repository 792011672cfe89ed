//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede it
//! and a single reverse sweep visits each node once. The op set is exactly
//! what the encoder and the contrastive objective need.

use std::collections::BTreeMap;

use crate::error::{CofError, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    self, gelu_derivative, layer_norm_with_stats, matmul, matmul_a_bt, matmul_at_b, NormStats,
    Tensor,
};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of a trainable parameter (its position in the weight layout).
pub type ParamId = usize;

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    Scale(Var, T),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        stats: NormStats<T>,
        beta: Var,
    },
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    Sum(Var),
    L2Normalize {
        x: Var,
        inv_norms: Vec<T>,
    },
    InfoNce {
        logits: Var,
        positive: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// The computation record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every leaf reachable from it.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: BTreeMap<usize, Tensor<T>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a constant or parameter leaf, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        debug_assert!(value.is_finite() || matches!(op, Op::AddConst(_)));
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_a_bt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `[d]` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    /// Adds a fixed tensor (e.g. an attention mask) that receives no gradient.
    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        let v = self.value(x).add(c)?;
        Ok(self.push(v, Op::AddConst(x)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = tensor::softmax_rows(self.value(x));
        self.push(v, Op::Softmax(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (v, stats) =
            layer_norm_with_stats(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                stats,
                beta,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = tensor::gelu(self.value(x));
        self.push(v, Op::Gelu(x))
    }

    /// Selects rows of an embedding table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(CofError::Input(format!(
                    "row id {id} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let v = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_rows(&tensors)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src).slice_rows(start, len)?;
        Ok(self.push(v, Op::SliceRows { src, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Scales every row to unit Euclidean norm (zero rows stay zero).
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        let d = v.last_dim().max(1);
        let mut inv_norms = Vec::with_capacity(v.rows());
        for row in v.data_mut().chunks_mut(d) {
            let n = row.iter().map(|&a| a * a).sum::<T>().sqrt();
            let inv = if n > T::zero() { T::one() / n } else { T::zero() };
            row.iter_mut().for_each(|a| *a *= inv);
            inv_norms.push(inv);
        }
        self.push(v, Op::L2Normalize { x, inv_norms })
    }

    /// Mean contrastive loss over the rows of a logit matrix.
    ///
    /// Row `i` contributes `logsumexp(valid logits) - logits[i][positive[i]]`,
    /// where `mask` (row-major, same shape as `logits`) selects the valid
    /// columns. The positive column must be valid.
    pub fn info_nce(&mut self, logits: Var, positive: &[usize], mask: &[bool]) -> Result<Var> {
        let l = self.value(logits);
        let (n, m) = l.dims2("info_nce")?;
        if positive.len() != n || mask.len() != n * m {
            return Err(CofError::Shape {
                op: "info_nce",
                left: vec![n, m],
                right: vec![positive.len(), mask.len()],
            });
        }
        let mut probs = vec![T::zero(); n * m];
        let mut total = T::zero();
        for i in 0..n {
            let row = l.row(i);
            let pos = positive[i];
            if pos >= m || !mask[i * m + pos] {
                return Err(CofError::Usage(format!(
                    "positive column {pos} of row {i} is not a valid logit"
                )));
            }
            let max = (0..m)
                .filter(|&j| mask[i * m + j])
                .map(|j| row[j])
                .fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..m {
                if mask[i * m + j] {
                    let e = (row[j] - max).exp();
                    probs[i * m + j] = e;
                    z += e;
                }
            }
            for j in 0..m {
                probs[i * m + j] /= z;
            }
            total += (max - row[pos]) + z.ln();
        }
        let count = T::from_usize(n.max(1)).expect("batch size fits scalar");
        let v = Tensor::scalar(total / count);
        Ok(self.push(
            v,
            Op::InfoNce {
                logits,
                positive: positive.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
        ))
    }

    /// Gradient of a scalar node with respect to all reachable leaves.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let v = self.value(root);
        if v.numel() != 1 {
            return Err(CofError::Usage(format!(
                "backward requires a scalar root, got shape {:?}",
                v.shape()
            )));
        }
        self.backward_seeded(root, Tensor::filled(v.shape(), T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`) backwards.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(CofError::Shape {
                op: "backward",
                left: self.value(root).shape().to_vec(),
                right: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed);
        let mut out = Gradients {
            leaves: BTreeMap::new(),
            params: BTreeMap::new(),
        };

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {
                    out.leaves.insert(idx, g);
                }
                Op::Param(id) => {
                    match out.params.get_mut(id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.params.insert(*id, g.clone());
                        }
                    }
                    out.leaves.insert(idx, g);
                }
                Op::MatMul(a, b) => {
                    let da = matmul_a_bt(&g, self.value(*b))?;
                    let db = matmul_at_b(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = matmul(&g, self.value(*b))?;
                    let db = matmul_at_b(&g, self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, bias) => {
                    let d = g.last_dim();
                    let mut db = vec![T::zero(); d];
                    for row in g.data().chunks(d.max(1)) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let db = Tensor::new(self.value(*bias).shape().to_vec(), db)?;
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::AddConst(x) => accumulate(&mut grads, *x, g),
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(*b))?;
                    let db = g.mul(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.scale(*c)),
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.last_dim().max(1);
                    let mut dx = g;
                    for (dr, yr) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let inner: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = yv * (*dv - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    stats,
                    beta,
                } => {
                    let gamma_v = self.value(*gamma);
                    let d = gamma_v.numel();
                    let n = T::from_usize(d).expect("dimension fits scalar");
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    for (r, (gr, xh)) in g
                        .data()
                        .chunks(d)
                        .zip(stats.normalized.data().chunks(d))
                        .enumerate()
                    {
                        let mut sum_dxh = T::zero();
                        let mut sum_dxh_xh = T::zero();
                        for j in 0..d {
                            dgamma[j] += gr[j] * xh[j];
                            dbeta[j] += gr[j];
                            let dxh = gr[j] * gamma_v.data()[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let inv = stats.inv_std[r] / n;
                        let out = &mut dx.data_mut()[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dxh = gr[j] * gamma_v.data()[j];
                            out[j] = inv * (n * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(
                        &mut grads,
                        *gamma,
                        Tensor::new(gamma_v.shape().to_vec(), dgamma)?,
                    );
                    let beta_shape = self.value(*beta).shape().to_vec();
                    accumulate(&mut grads, *beta, Tensor::new(beta_shape, dbeta)?);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (dv, &xi) in dx.data_mut().iter_mut().zip(xv.data()) {
                        *dv *= gelu_derivative(xi);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let d = t.last_dim();
                    let mut dt = Tensor::zeros(t.shape());
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                        for (a, &v) in dst.iter_mut().zip(g.row(r)) {
                            *a += v;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).dims2("concat_rows")?.0;
                        accumulate(&mut grads, p, g.slice_rows(start, rows)?);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2("concat_cols")?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2("concat_cols")?.1;
                        let mut data = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            data.extend_from_slice(
                                &g.data()[i * total + offset..i * total + offset + w],
                            );
                        }
                        accumulate(&mut grads, p, Tensor::new(vec![rows, w], data)?);
                        offset += w;
                    }
                }
                Op::SliceRows { src, start } => {
                    let s = self.value(*src);
                    let d = s.last_dim();
                    let mut ds = Tensor::zeros(s.shape());
                    ds.data_mut()[start * d..start * d + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut grads, *src, ds);
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::filled(&shape, g.data()[0]));
                }
                Op::L2Normalize { x, inv_norms } => {
                    let y = &node.value;
                    let d = y.last_dim().max(1);
                    let mut dx = g;
                    for ((dr, yr), &inv) in dx
                        .data_mut()
                        .chunks_mut(d)
                        .zip(y.data().chunks(d))
                        .zip(inv_norms)
                    {
                        let inner: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for (dv, &yv) in dr.iter_mut().zip(yr) {
                            *dv = (*dv - yv * inner) * inv;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::InfoNce {
                    logits,
                    positive,
                    mask,
                    probs,
                } => {
                    let shape = self.value(*logits).shape().to_vec();
                    let (n, m) = (shape[0], shape[1]);
                    let scale = g.data()[0] / T::from_usize(n.max(1)).expect("fits");
                    let mut dl = vec![T::zero(); n * m];
                    for i in 0..n {
                        for j in 0..m {
                            if mask[i * m + j] {
                                dl[i * m + j] = probs[i * m + j] * scale;
                            }
                        }
                        dl[i * m + positive[i]] -= scale;
                    }
                    accumulate(&mut grads, *logits, Tensor::new(shape, dl)?);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(0, Tensor::vector(vec![0.5, -1.0, 2.0]));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(0).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient_is_twice_w() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(3, Tensor::vector(vec![0.5, -1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(3).unwrap().data(), &[1.0, -2.0, 4.0]);
    }

    #[test]
    fn non_scalar_root_is_usage_error() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(0, Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(CofError::Usage(_))));
    }

    #[test]
    fn repeated_param_use_accumulates() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(0, Tensor::vector(vec![2.0]));
        let b = tape.param(0, Tensor::vector(vec![2.0]));
        let p = tape.mul(a, b).unwrap();
        let g = tape.backward(p).unwrap();
        assert_eq!(g.param(0).unwrap().data(), &[4.0]);
    }

    #[test]
    fn info_nce_with_only_positive_is_zero() {
        let mut tape = Tape::<f64>::new();
        let l = tape.param(0, Tensor::from_rows(&[vec![3.0, 7.0]]).unwrap());
        let loss = tape.info_nce(l, &[0], &[true, false]).unwrap();
        assert_eq!(tape.value(loss).data()[0], 0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.param(0).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
