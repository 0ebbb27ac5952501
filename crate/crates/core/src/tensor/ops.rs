//! Differentiable operations. Each forward records an [`Op`] whose
//! `backward` maps the output gradient onto the inputs.

use std::rc::Rc;

use super::gemm::gemm;
use super::tape::Var;
use super::Tensor;
use crate::error::{Error, Result};

/// Zero padding mode for [`Var::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric `(k-1)/2` on both sides; output length equals input length.
    Same,
    /// `k-1` zeros on the left only; output position `t` reads inputs `<= t`.
    Causal,
}

pub(crate) enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: f64 },
    Dense { x: usize, w: usize, b: Option<usize> },
    BatchMatMul { a: usize, b: usize, b_t: bool },
    Permute { a: usize, map: Rc<Vec<usize>> },
    Reshape { a: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    Softmax { a: usize, axis: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Conv1d { x: usize, w: usize, b: Option<usize>, pad_left: usize },
    /// Max over an axis (`MaxPool`) or running max (`PrefixMax`); `src[i]` is
    /// the input flat index that produced output `i`.
    Gather { a: usize, src: Vec<usize> },
    Embedding { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize>, active: Vec<bool>, probs: Vec<f64>, count: f64 },
    NormalizePower { a: usize, mask: Option<Vec<f64>>, power: f64, count: f64 },
    Sum { a: usize },
    Passthrough { a: usize },
}

type ValueFn<'a> = dyn Fn(usize) -> Rc<Tensor> + 'a;
type NeedFn<'a> = dyn Fn(usize) -> bool + 'a;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let off = nd - inp.len();
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for d in (0..inp.len()).rev() {
        strides[off + d] = if inp[d] == 1 { 0 } else { s };
        s *= inp[d];
    }
    strided_map(out, &strides)
}

/// Walks `shape` in row-major order, emitting `Σ index[d]·strides[d]`.
fn strided_map(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let total = numel(shape);
    let nd = shape.len();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            cur -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    map
}

fn reduce_to(g: &[f64], map: &[usize], len: usize, scale: Option<(&[f64], &[usize])>) -> Vec<f64> {
    let mut out = vec![0.0; len];
    match scale {
        None => {
            for (gv, &m) in g.iter().zip(map) {
                out[m] += gv;
            }
        }
        Some((other, omap)) => {
            for ((gv, &m), &om) in g.iter().zip(map).zip(omap) {
                out[m] += gv * other[om];
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn emit(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = inputs.iter().any(|&i| self.tape.requires_grad(i));
        self.tape.push(value, op, rg)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn binary(&self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        self.same_tape(&other);
        let a = self.value();
        let b = other.value();
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Tensor::new(a.shape().to_vec(), data)?, true));
        }
        let out = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::dim(name, a.shape(), b.shape()))?;
        let ma = broadcast_map(&out, a.shape());
        let mb = broadcast_map(&out, b.shape());
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
            .collect();
        Ok((Tensor::new(out, data)?, false))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (v, _) = self.binary(other, "add", |x, y| x + y)?;
        Ok(self.emit(v, Op::Add { a: self.id, b: other.id }, &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (v, _) = self.binary(other, "mul", |x, y| x * y)?;
        Ok(self.emit(v, Op::Mul { a: self.id, b: other.id }, &[self.id, other.id]))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x * s);
        self.emit(v, Op::Scale { a: self.id, s }, &[self.id])
    }

    /// Plain 2-D matrix product `[m×k]·[k×n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::dim("matmul", a.shape(), b.shape()));
        }
        self.batch_matmul(other, false)
    }

    /// Batched product over matching leading dims: `[..,m,k]·[..,k,n]`, or
    /// `[..,m,k]·[..,n,k]ᵀ` when `b_t` is set.
    pub fn batch_matmul(&self, other: Var<'t>, b_t: bool) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        let nd = sa.len();
        if nd < 2 || sb.len() != nd || sa[..nd - 2] != sb[..nd - 2] {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let (m, k) = (sa[nd - 2], sa[nd - 1]);
        let (kb, n) = if b_t { (sb[nd - 1], sb[nd - 2]) } else { (sb[nd - 2], sb[nd - 1]) };
        if k != kb {
            return Err(Error::dim("batch_matmul", sa, sb));
        }
        let batch = numel(&sa[..nd - 2]);
        let mut out = vec![0.0; batch * m * n];
        for g in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[g * m * k..(g + 1) * m * k],
                false,
                &b.data()[g * k * n..(g + 1) * k * n],
                b_t,
                &mut out[g * m * n..(g + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..nd - 2].to_vec();
        shape.extend([m, n]);
        let v = Tensor::new(shape, out)?;
        Ok(self.emit(v, Op::BatchMatMul { a: self.id, b: other.id, b_t }, &[self.id, other.id]))
    }

    /// Affine map over the last axis: `x[..,in]·W[in,out] + b[out]`.
    pub fn dense(&self, w: Var<'t>, b: Option<Var<'t>>) -> Result<Var<'t>> {
        self.same_tape(&w);
        let (x, wv) = (self.value(), w.value());
        let din = *x.shape().last().expect("non-empty shape");
        if wv.ndim() != 2 || wv.shape()[0] != din {
            return Err(Error::dim("dense", x.shape(), wv.shape()));
        }
        let dout = wv.shape()[1];
        let rows = x.len() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(bias) = b {
            self.same_tape(&bias);
            let bv = bias.value();
            if bv.shape() != [dout] {
                return Err(Error::dim("dense bias", wv.shape(), bv.shape()));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(rows, din, dout, x.data(), false, wv.data(), false, &mut out, b.is_some());
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let v = Tensor::new(shape, out)?;
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        Ok(self.emit(v, Op::Dense { x: self.id, w: w.id, b: b.map(|b| b.id) }, &inputs))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.emit(v, Op::Reshape { a: self.id }, &[self.id]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let s = a.shape();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", s, perm));
        }
        let mut in_strides = vec![0; s.len()];
        let mut acc = 1;
        for d in (0..s.len()).rev() {
            in_strides[d] = acc;
            acc *= s[d];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = strided_map(&out_shape, &strides);
        let data = map.iter().map(|&i| a.data()[i]).collect();
        let v = Tensor::new(out_shape, data)?;
        Ok(self.emit(v, Op::Permute { a: self.id, map: Rc::new(map) }, &[self.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| {
            first.same_tape(p);
            p.value()
        }).collect();
        let s0 = values[0].shape();
        if axis >= s0.len() {
            return Err(Error::dim("concat", s0, &[axis]));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != s0.len() || s.iter().zip(s0).enumerate().any(|(d, (x, y))| d != axis && x != y) {
                return Err(Error::dim("concat", s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(s0, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = s0.to_vec();
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = Tensor::new(shape, data)?;
        Ok(first.emit(v, Op::Concat { inputs: ids.clone(), axis }, &ids))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.emit(v, Op::Sigmoid { a: self.id }, &[self.id])
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.emit(v, Op::Relu { a: self.id }, &[self.id])
    }

    /// Softmax along `axis`, max-shifted. `-inf` entries get weight 0; a
    /// slice that is entirely `-inf` yields all zeros.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(Error::dim("softmax", a.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut out = vec![0.0; a.len()];
        let x = a.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let mut z = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let v = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(v, Op::Softmax { a: self.id, axis }, &[self.id]))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (x, g, b) = (self.value(), gain.value(), bias.value());
        let d = *x.shape().last().unwrap();
        if g.shape() != [d] || b.shape() != [d] {
            return Err(Error::dim("layer_norm", x.shape(), g.shape()));
        }
        let rows = x.len() / d;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.emit(
            v,
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, xhat, rstd },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// 1-D cross-correlation along the last axis. `self` is `[c_in, L]` or
    /// `[B, c_in, L]`, `kernels` is `[c_out, c_in, k]`, `bias` is `[c_out]`.
    /// Zero padding keeps the output length at `L`.
    pub fn conv1d(&self, kernels: Var<'t>, bias: Option<Var<'t>>, padding: Padding) -> Result<Var<'t>> {
        let (x, w) = (self.value(), kernels.value());
        let xs = x.shape();
        let (batch, c_in, len) = match *xs {
            [c, l] => (1, c, l),
            [b, c, l] => (b, c, l),
            _ => return Err(Error::dim("conv1d", xs, w.shape())),
        };
        let ws = w.shape();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::dim("conv1d", xs, ws));
        }
        let (c_out, k) = (ws[0], ws[2]);
        let pad_left = match padding {
            Padding::Same if k % 2 == 0 => {
                return Err(Error::Config(format!("same padding needs an odd kernel size, got {k}")))
            }
            Padding::Same => (k - 1) / 2,
            Padding::Causal => k - 1,
        };
        let mut out = vec![0.0; batch * c_out * len];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [c_out] {
                return Err(Error::dim("conv1d bias", ws, bv.shape()));
            }
            for (i, v) in out.iter_mut().enumerate() {
                *v = bv.data()[(i / len) % c_out];
            }
        }
        let mut cols = vec![0.0; c_in * k * len];
        for bi in 0..batch {
            im2col(&x.data()[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, pad_left, &mut cols);
            gemm(
                c_out,
                c_in * k,
                len,
                w.data(),
                false,
                &cols,
                false,
                &mut out[bi * c_out * len..(bi + 1) * c_out * len],
                true,
            );
        }
        let mut shape = xs.to_vec();
        shape[xs.len() - 2] = c_out;
        let v = Tensor::new(shape, out)?;
        let mut inputs = vec![self.id, kernels.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.emit(
            v,
            Op::Conv1d { x: self.id, w: kernels.id, b: bias.map(|b| b.id), pad_left },
            &inputs,
        ))
    }

    /// Max over `axis`, removing it (a 1-D input reduces to shape `[1]`).
    /// Ties resolve to the first index.
    pub fn global_maxpool(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(Error::dim("global_maxpool", a.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut src = Vec::with_capacity(outer * inner);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for j in 1..len {
                    let at = o * len * inner + j * inner + i;
                    if a.data()[at] > a.data()[best] {
                        best = at;
                    }
                }
                src.push(best);
                data.push(a.data()[best]);
            }
        }
        let mut shape: Vec<usize> = a.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, data)?;
        Ok(self.emit(v, Op::Gather { a: self.id, src }, &[self.id]))
    }

    /// Running max along `axis`: output `t` is the max of inputs `0..=t`.
    pub fn prefix_max(&self, axis: usize) -> Result<Var<'t>> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(Error::dim("prefix_max", a.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_split(a.shape(), axis);
        let mut src = vec![0; a.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for j in 0..len {
                    let at = o * len * inner + j * inner + i;
                    if a.data()[at] > a.data()[best] {
                        best = at;
                    }
                    src[at] = best;
                }
            }
        }
        let data = src.iter().map(|&s| a.data()[s]).collect();
        let v = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.emit(v, Op::Gather { a: self.id, src }, &[self.id]))
    }

    /// Rows of `self` (a `[V, d]` table) selected by `ids`; output shape is
    /// `ids_shape + [d]`.
    pub fn embedding_lookup(&self, ids: &[usize], ids_shape: &[usize]) -> Result<Var<'t>> {
        let t = self.value();
        if t.ndim() != 2 || numel(ids_shape) != ids.len() {
            return Err(Error::dim("embedding_lookup", t.shape(), ids_shape));
        }
        let (vocab, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Data(format!("token id {id} out of range for vocabulary of {vocab}")));
            }
            data.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let v = Tensor::new(shape, data)?;
        Ok(self.emit(v, Op::Embedding { table: self.id, ids: ids.to_vec() }, &[self.id]))
    }

    /// Mean token cross-entropy of `self` (logits `[.., V]`) against `targets`,
    /// over positions where `active` is true.
    pub fn cross_entropy_with_logits(&self, targets: &[usize], active: &[bool]) -> Result<Var<'t>> {
        let z = self.value();
        let v = *z.shape().last().unwrap();
        let rows = z.len() / v;
        if targets.len() != rows || active.len() != rows {
            return Err(Error::dim("cross_entropy", z.shape(), &[targets.len(), active.len()]));
        }
        let count = active.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Contract("cross-entropy over a batch with no active positions".into()));
        }
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        for r in 0..rows {
            if !active[r] {
                continue;
            }
            let t = targets[r];
            if t >= v {
                return Err(Error::Data(format!("target {t} out of range for {v} classes")));
            }
            let row = &z.data()[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            for j in 0..v {
                probs[r * v + j] = (row[j] - lse).exp();
            }
        }
        let count = count as f64;
        let value = Tensor::scalar(total / count);
        Ok(self.emit(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                active: active.to_vec(),
                probs,
                count,
            },
            &[self.id],
        ))
    }

    /// Scales `self` (interleaved real/imag pairs) so the mean power per
    /// complex symbol is `power`. With a `mask` (0/1 per real entry, same
    /// shape), masked entries are zeroed and excluded from the average.
    pub fn normalize_power(&self, mask: Option<&[f64]>, power: f64) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(m) = mask {
            if m.len() != x.len() {
                return Err(Error::dim("normalize_power", x.shape(), &[m.len()]));
            }
        }
        let active = mask.map_or(x.len() as f64, |m| m.iter().sum());
        let count = active / 2.0;
        let energy: f64 = match mask {
            Some(m) => x.data().iter().zip(m).map(|(v, k)| k * v * v).sum(),
            None => x.sq_norm(),
        };
        let p = energy / count;
        if count <= 0.0 || !(p > 1e-300) || !p.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot normalize signal with average power {p:e}"
            )));
        }
        let s = (power / p).sqrt();
        let data = match mask {
            Some(m) => x.data().iter().zip(m).map(|(v, k)| k * v * s).collect(),
            None => x.data().iter().map(|v| v * s).collect(),
        };
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.emit(
            v,
            Op::NormalizePower { a: self.id, mask: mask.map(<[f64]>::to_vec), power, count },
            &[self.id],
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.emit(v, Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Replaces the forward value while passing gradients through unchanged
    /// (identity Jacobian).
    pub fn straight_through(&self, value: Tensor) -> Result<Var<'t>> {
        if value.shape() != self.shape().as_slice() {
            return Err(Error::dim("straight_through", &self.shape(), value.shape()));
        }
        Ok(self.emit(value, Op::Passthrough { a: self.id }, &[self.id]))
    }
}

/// `cols[(i*k + j), t] = x[i, t + j - pad_left]` with zeros outside.
fn im2col(x: &[f64], c_in: usize, len: usize, k: usize, pad_left: usize, cols: &mut [f64]) {
    for i in 0..c_in {
        for j in 0..k {
            let row = &mut cols[(i * k + j) * len..(i * k + j + 1) * len];
            for (t, v) in row.iter_mut().enumerate() {
                let src = t + j;
                *v = if src >= pad_left && src - pad_left < len {
                    x[i * len + src - pad_left]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im(cols: &[f64], c_in: usize, len: usize, k: usize, pad_left: usize, dx: &mut [f64]) {
    for i in 0..c_in {
        for j in 0..k {
            let row = &cols[(i * k + j) * len..(i * k + j + 1) * len];
            for (t, v) in row.iter().enumerate() {
                let src = t + j;
                if src >= pad_left && src - pad_left < len {
                    dx[i * len + src - pad_left] += v;
                }
            }
        }
    }
}

impl Op {
    pub(crate) fn backward(
        &self,
        out: &Tensor,
        g: &Tensor,
        val: &ValueFn<'_>,
        need: &NeedFn<'_>,
        acc: &mut dyn FnMut(usize, Tensor),
    ) {
        let like = |shape: &[usize], data: Vec<f64>| Tensor::new(shape.to_vec(), data).expect("gradient shape");
        match self {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for &id in [a, b] {
                    if need(id) {
                        let v = val(id);
                        if v.shape() == g.shape() {
                            acc(id, g.clone());
                        } else {
                            let map = broadcast_map(g.shape(), v.shape());
                            acc(id, like(v.shape(), reduce_to(g.data(), &map, v.len(), None)));
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                for (id, this, other) in [(*a, &va, &vb), (*b, &vb, &va)] {
                    if !need(id) {
                        continue;
                    }
                    if this.shape() == g.shape() && other.shape() == g.shape() {
                        let d = g.data().iter().zip(other.data()).map(|(x, y)| x * y).collect();
                        acc(id, like(this.shape(), d));
                    } else {
                        let map = broadcast_map(g.shape(), this.shape());
                        let omap = broadcast_map(g.shape(), other.shape());
                        let d = reduce_to(g.data(), &map, this.len(), Some((other.data(), &omap)));
                        acc(id, like(this.shape(), d));
                    }
                }
            }
            Op::Scale { a, s } => acc(*a, g.map(|x| x * s)),
            Op::Dense { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / din;
                if need(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    gemm(rows, dout, din, g.data(), false, wv.data(), true, &mut dx, false);
                    acc(*x, like(xv.shape(), dx));
                }
                if need(*w) {
                    let mut dw = vec![0.0; wv.len()];
                    gemm(din, rows, dout, xv.data(), true, g.data(), false, &mut dw, false);
                    acc(*w, like(wv.shape(), dw));
                }
                if let Some(b) = b {
                    if need(*b) {
                        let mut db = vec![0.0; dout];
                        for row in g.data().chunks(dout) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        acc(*b, like(&[dout], db));
                    }
                }
            }
            Op::BatchMatMul { a, b, b_t } => {
                let (av, bv) = (val(*a), val(*b));
                let nd = av.ndim();
                let (m, k) = (av.shape()[nd - 2], av.shape()[nd - 1]);
                let n = g.shape()[nd - 1];
                let batch = av.len() / (m * k);
                if need(*a) {
                    let mut da = vec![0.0; av.len()];
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let bs = &bv.data()[bi * k * n..(bi + 1) * k * n];
                        gemm(m, n, k, gs, false, bs, !b_t, &mut da[bi * m * k..(bi + 1) * m * k], false);
                    }
                    acc(*a, like(av.shape(), da));
                }
                if need(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let as_ = &av.data()[bi * m * k..(bi + 1) * m * k];
                        let dst = &mut db[bi * k * n..(bi + 1) * k * n];
                        if *b_t {
                            gemm(n, m, k, gs, true, as_, false, dst, false);
                        } else {
                            gemm(k, m, n, as_, true, gs, false, dst, false);
                        }
                    }
                    acc(*b, like(bv.shape(), db));
                }
            }
            Op::Permute { a, map } => {
                let av = val(*a);
                let mut d = vec![0.0; av.len()];
                for (gv, &m) in g.data().iter().zip(map.iter()) {
                    d[m] = *gv;
                }
                acc(*a, like(av.shape(), d));
            }
            Op::Reshape { a } => {
                let av = val(*a);
                acc(*a, like(av.shape(), g.data().to_vec()));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &id in inputs {
                    let v = val(id);
                    let len = v.shape()[*axis];
                    if need(id) {
                        let mut d = Vec::with_capacity(v.len());
                        for o in 0..outer {
                            let start = o * total * inner + offset * inner;
                            d.extend_from_slice(&g.data()[start..start + len * inner]);
                        }
                        acc(id, like(v.shape(), d));
                    }
                    offset += len;
                }
            }
            Op::Sigmoid { a } => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                acc(*a, like(out.shape(), d));
            }
            Op::Relu { a } => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 }).collect();
                acc(*a, like(out.shape(), d));
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis);
                let (y, gd) = (out.data(), g.data());
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            d[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                acc(*a, like(out.shape(), d));
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = val(*gain);
                let d = gv.len();
                let rows = xhat.len() / d;
                if need(*gain) || need(*bias) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g.data()[r * d + j] * xhat[r * d + j];
                            db[j] += g.data()[r * d + j];
                        }
                    }
                    acc(*gain, like(&[d], dg));
                    acc(*bias, like(&[d], db));
                }
                if need(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    let n = d as f64;
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let dxh: Vec<f64> = g.data()[row.clone()].iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(&xhat[row.clone()]).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] / n * (n * dxh[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    acc(*x, like(out.shape(), dx));
                }
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let (xv, wv) = (val(*x), val(*w));
                let xs = xv.shape();
                let (c_in, len) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let batch = xv.len() / (c_in * len);
                let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
                let mut cols = vec![0.0; c_in * k * len];
                let mut dw = vec![0.0; wv.len()];
                let mut dx = vec![0.0; xv.len()];
                let mut dcols = vec![0.0; c_in * k * len];
                for bi in 0..batch {
                    let gs = &g.data()[bi * c_out * len..(bi + 1) * c_out * len];
                    if need(*w) {
                        im2col(&xv.data()[bi * c_in * len..(bi + 1) * c_in * len], c_in, len, k, *pad_left, &mut cols);
                        gemm(c_out, len, c_in * k, gs, false, &cols, true, &mut dw, true);
                    }
                    if need(*x) {
                        gemm(c_in * k, c_out, len, wv.data(), true, gs, false, &mut dcols, false);
                        col2im(&dcols, c_in, len, k, *pad_left, &mut dx[bi * c_in * len..(bi + 1) * c_in * len]);
                    }
                }
                if need(*w) {
                    acc(*w, like(wv.shape(), dw));
                }
                if need(*x) {
                    acc(*x, like(xs, dx));
                }
                if let Some(b) = b {
                    if need(*b) {
                        let mut db = vec![0.0; c_out];
                        for (i, v) in g.data().iter().enumerate() {
                            db[(i / len) % c_out] += v;
                        }
                        acc(*b, like(&[c_out], db));
                    }
                }
            }
            Op::Gather { a, src } => {
                let av = val(*a);
                let mut d = vec![0.0; av.len()];
                for (gv, &s) in g.data().iter().zip(src) {
                    d[s] += gv;
                }
                acc(*a, like(av.shape(), d));
            }
            Op::Embedding { table, ids } => {
                let tv = val(*table);
                let dim = tv.shape()[1];
                let mut d = vec![0.0; tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dim {
                        d[id * dim + j] += g.data()[r * dim + j];
                    }
                }
                acc(*table, like(tv.shape(), d));
            }
            Op::CrossEntropy { logits, targets, active, probs, count } => {
                let lv = val(*logits);
                let v = *lv.shape().last().unwrap();
                let scale = g.data()[0] / count;
                let mut d = vec![0.0; lv.len()];
                for (r, (&t, &on)) in targets.iter().zip(active).enumerate() {
                    if !on {
                        continue;
                    }
                    for j in 0..v {
                        d[r * v + j] = probs[r * v + j] * scale;
                    }
                    d[r * v + t] -= scale;
                }
                acc(*logits, like(lv.shape(), d));
            }
            Op::NormalizePower { a, mask, power, count } => {
                // y = m·x·s with s = sqrt(power/P), P = Σ m x² / count
                let xv = val(*a);
                let x = xv.data();
                let m = |i: usize| mask.as_ref().map_or(1.0, |mk| mk[i]);
                let energy: f64 = (0..x.len()).map(|i| m(i) * x[i] * x[i]).sum();
                let p = energy / count;
                let s = (power / p).sqrt();
                let gy: f64 = (0..x.len()).map(|i| g.data()[i] * m(i) * x[i]).sum();
                let d = (0..x.len())
                    .map(|j| m(j) * (g.data()[j] * s - x[j] * s / p / count * gy))
                    .collect();
                acc(*a, like(xv.shape(), d));
            }
            Op::Sum { a } => {
                let av = val(*a);
                acc(*a, Tensor::full(av.shape(), g.data()[0]));
            }
            Op::Passthrough { a } => acc(*a, g.clone()),
        }
    }
}
