//! Eager reverse-mode differentiation over dense tensors.
//!
//! Every op computes its value immediately and records enough context to
//! propagate a cotangent back to its inputs. A [`Tape`] is built fresh for
//! each forward pass; parameters are read from a borrowed [`ParamStore`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::params::{ParamId, ParamStore, Rng};
use crate::tensor::{numel, split_axis, strides, Tensor};
use crate::{Error, Real, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Shift(Var),
    Sqrt(Var),
    Gelu(Var),
    Broadcast(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Linear { x: Var, w: Var, b: Option<Var> },
    Bmm(Var, Var),
    Concat { axis: usize, parts: Vec<Var> },
    Gather { x: Var, axis: usize, index: Vec<Option<usize>> },
    SumAxis { x: Var, axis: usize },
    SumAll(Var),
    Softmax(Var),
    Standardize { x: Var, dims: (usize, usize, usize), inv_std: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Statistics produced by [`Tape::standardize`], one entry per normalized
/// feature.
#[derive(Clone, Debug)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

pub struct Tape<'a, T: Real> {
    store: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    mode: Mode,
    rng: Option<&'a mut Rng>,
    updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(store: &'a ParamStore<T>, mode: Mode) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            mode,
            rng: None,
            updates: Vec::new(),
        }
    }

    pub fn with_rng(mut self, rng: &'a mut Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad)
    }

    /// Parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Leaf, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn record_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.updates.push((id, value));
    }

    pub fn take_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        core::mem::take(&mut self.updates)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, ta.shape(), tb.shape()));
        }
        Ok((ta.zip_map(tb, f), self.needs(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, g) = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b), g))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v * s);
        let g = self.needs(&[x]);
        self.push(t, Op::Scale(x, s), g)
    }

    pub fn shift(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x).map(|v| v + s);
        let g = self.needs(&[x]);
        self.push(t, Op::Shift(x), g)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.sqrt());
        let g = self.needs(&[x]);
        self.push(t, Op::Sqrt(x), g)
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(gelu);
        let g = self.needs(&[x]);
        self.push(t, Op::Gelu(x), g)
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config("dropout", "p must lie in [0, 1)"));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::config("dropout", "train-mode dropout needs an rng"))?;
        let keep = T::of(1.0 / (1.0 - p));
        let shape = self.nodes[x.0].value.shape().to_vec();
        let mask: Vec<T> = (0..numel(&shape))
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    /// Broadcasts with right-aligned numpy rules.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let src = broadcast_strides(self.shape(x), shape)
            .ok_or_else(|| Error::shape("broadcast", self.shape(x), shape))?;
        let input = self.value(x).data();
        let mut out = Vec::with_capacity(numel(shape));
        walk(shape, &src, |off| out.push(input[off]));
        let t = Tensor::new(shape.to_vec(), out)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::Broadcast(x), g))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), g))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x).permute(perm)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::Permute(x, perm.to_vec()), g))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    /// Affine map over the last axis: `x[..., X] · w[X, Y] + b[Y]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape("linear", &xs, &ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[1]] {
                return Err(Error::shape("linear bias", &ws, self.shape(b)));
            }
        }
        let (k, n) = (ws[0], ws[1]);
        let m = numel(&xs) / k.max(1);
        let mut out = vec![T::zero(); m * n];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(n) {
                row.copy_from_slice(bias);
            }
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let g = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(t, Op::Linear { x, w, b }, g))
    }

    /// Batched matrix product over matching leading axes.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
        let batch = numel(&sa[..r - 2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            matmul_acc(
                &da[i * m * k..(i + 1) * m * k],
                &db[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa;
        shape[r - 1] = n;
        let t = Tensor::new(shape, out)?;
        let g = self.needs(&[a, b]);
        Ok(self.push(t, Op::Bmm(a, b), g))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat(&tensors, axis)?;
        let g = self.needs(parts);
        Ok(self.push(
            t,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            g,
        ))
    }

    /// Selects along `axis`; `None` entries produce zeros and receive no
    /// gradient.
    pub fn gather(&mut self, x: Var, axis: usize, index: Vec<Option<usize>>) -> Result<Var> {
        let t = self.value(x).gather(axis, &index)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::Gather { x, axis, index }, g))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.gather(x, axis, (start..start + len).map(Some).collect())
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::shape("sum_axis", &xs, &[axis]));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let data = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let base = (o * n + i) * inner;
                for j in 0..inner {
                    out[o * inner + j] += data[base + j];
                }
            }
        }
        let mut shape = xs;
        shape[axis] = 1;
        let t = Tensor::new(shape, out)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::SumAxis { x, axis }, g))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let g = self.needs(&[x]);
        self.push(t, Op::SumAll(x), g)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::of(1.0 / n as f64))
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().ok_or_else(|| Error::shape("softmax", &xs, &[]))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(xs, out)?;
        let g = self.needs(&[x]);
        Ok(self.push(t, Op::Softmax(x), g))
    }

    /// Zero-mean unit-variance over the middle extent of an
    /// `[outer, reduce, inner]` view (biased variance, `eps` inside the root).
    pub fn standardize(
        &mut self,
        x: Var,
        outer: usize,
        reduce: usize,
        inner: usize,
        eps: f64,
    ) -> Result<(Var, Moments<T>)> {
        let xs = self.shape(x).to_vec();
        if outer * reduce * inner != numel(&xs) || reduce == 0 {
            return Err(Error::shape("standardize", &xs, &[outer, reduce, inner]));
        }
        let data = self.value(x).data();
        let nf = T::of(reduce as f64);
        let mut mean = vec![T::zero(); outer * inner];
        let mut var = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for r in 0..reduce {
                for i in 0..inner {
                    mean[o * inner + i] += data[(o * reduce + r) * inner + i];
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for o in 0..outer {
            for r in 0..reduce {
                for i in 0..inner {
                    let d = data[(o * reduce + r) * inner + i] - mean[o * inner + i];
                    var[o * inner + i] += d * d;
                }
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let mut out = Vec::with_capacity(data.len());
        for o in 0..outer {
            for r in 0..reduce {
                for i in 0..inner {
                    let f = o * inner + i;
                    out.push((data[(o * reduce + r) * inner + i] - mean[f]) * inv_std[f]);
                }
            }
        }
        let t = Tensor::new(xs, out)?;
        let g = self.needs(&[x]);
        let v = self.push(
            t,
            Op::Standardize {
                x,
                dims: (outer, reduce, inner),
                inv_std,
            },
            g,
        );
        Ok((
            v,
            Moments {
                mean,
                var,
                count: reduce,
            },
        ))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, wants(*a), || g.clone());
                accumulate(grads, *b, wants(*b), || g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, wants(*a), || g.clone());
                accumulate(grads, *b, wants(*b), || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, wants(*a), || g.zip_map(val(*b), |d, y| d * y));
                accumulate(grads, *b, wants(*b), || g.zip_map(val(*a), |d, x| d * x));
            }
            Op::Div(a, b) => {
                accumulate(grads, *a, wants(*a), || g.zip_map(val(*b), |d, y| d / y));
                accumulate(grads, *b, wants(*b), || {
                    let mut t = g.zip_map(val(*a), |d, x| d * x);
                    for (v, &y) in t.data_mut().iter_mut().zip(val(*b).data()) {
                        *v = -*v / (y * y);
                    }
                    t
                });
            }
            Op::Scale(x, s) => accumulate(grads, *x, wants(*x), || g.map(|d| d * *s)),
            Op::Shift(x) => accumulate(grads, *x, wants(*x), || g.clone()),
            Op::Sqrt(x) => accumulate(grads, *x, wants(*x), || {
                g.zip_map(&node.value, |d, y| d / (y + y))
            }),
            Op::Gelu(x) => accumulate(grads, *x, wants(*x), || {
                g.zip_map(val(*x), |d, v| d * gelu_grad(v))
            }),
            Op::Broadcast(x) => accumulate(grads, *x, wants(*x), || {
                let in_shape = val(*x).shape();
                let src = broadcast_strides(in_shape, g.shape()).expect("validated in forward");
                let mut acc = vec![T::zero(); numel(in_shape)];
                let mut k = 0;
                let gd = g.data();
                walk(g.shape(), &src, |off| {
                    acc[off] += gd[k];
                    k += 1;
                });
                Tensor::new(in_shape.to_vec(), acc).expect("shape")
            }),
            Op::Reshape(x) => accumulate(grads, *x, wants(*x), || {
                g.clone().reshape(val(*x).shape()).expect("shape")
            }),
            Op::Permute(x, perm) => accumulate(grads, *x, wants(*x), || {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                g.permute(&inv).expect("perm")
            }),
            Op::Linear { x, w, b } => {
                let (xs, ws) = (val(*x), val(*w));
                let (k, n) = (ws.shape()[0], ws.shape()[1]);
                let m = xs.numel() / k.max(1);
                accumulate(grads, *x, wants(*x), || {
                    let mut dx = vec![T::zero(); m * k];
                    matmul_bt_acc(g.data(), ws.data(), &mut dx, m, n, k);
                    Tensor::new(xs.shape().to_vec(), dx).expect("shape")
                });
                accumulate(grads, *w, wants(*w), || {
                    let mut dw = vec![T::zero(); k * n];
                    matmul_at_acc(xs.data(), g.data(), &mut dw, m, k, n);
                    Tensor::new(ws.shape().to_vec(), dw).expect("shape")
                });
                if let Some(b) = b {
                    accumulate(grads, *b, wants(*b), || {
                        let mut db = vec![T::zero(); n];
                        for row in g.data().chunks(n.max(1)) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        Tensor::new(vec![n], db).expect("shape")
                    });
                }
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let r = ta.rank();
                let (m, k, n) = (ta.shape()[r - 2], ta.shape()[r - 1], tb.shape()[r - 1]);
                let batch = numel(&ta.shape()[..r - 2]);
                accumulate(grads, *a, wants(*a), || {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        matmul_bt_acc(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    Tensor::new(ta.shape().to_vec(), da).expect("shape")
                });
                accumulate(grads, *b, wants(*b), || {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        matmul_at_acc(
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    Tensor::new(tb.shape().to_vec(), db).expect("shape")
                });
            }
            Op::Concat { axis, parts } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut start = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    accumulate(grads, p, wants(p), || {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        Tensor::new(val(p).shape().to_vec(), d).expect("shape")
                    });
                    start += len;
                }
            }
            Op::Gather { x, axis, index } => accumulate(grads, *x, wants(*x), || {
                let xs = val(*x).shape();
                let (outer, n, inner) = split_axis(xs, *axis);
                let mut d = vec![T::zero(); numel(xs)];
                let gd = g.data();
                for o in 0..outer {
                    for (j, ix) in index.iter().enumerate() {
                        if let Some(i) = ix {
                            let src = (o * index.len() + j) * inner;
                            let dst = (o * n + i) * inner;
                            for t in 0..inner {
                                d[dst + t] += gd[src + t];
                            }
                        }
                    }
                }
                Tensor::new(xs.to_vec(), d).expect("shape")
            }),
            Op::SumAxis { x, axis } => accumulate(grads, *x, wants(*x), || {
                let xs = val(*x).shape();
                let (outer, n, inner) = split_axis(xs, *axis);
                let mut d = Vec::with_capacity(numel(xs));
                for o in 0..outer {
                    for _ in 0..n {
                        d.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                Tensor::new(xs.to_vec(), d).expect("shape")
            }),
            Op::SumAll(x) => accumulate(grads, *x, wants(*x), || Tensor::full(val(*x).shape(), g.item())),
            Op::Softmax(x) => accumulate(grads, *x, wants(*x), || {
                let y = &node.value;
                let n = *y.shape().last().unwrap();
                let mut d = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n.max(1)).zip(g.data().chunks(n.max(1))) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
                }
                Tensor::new(y.shape().to_vec(), d).expect("shape")
            }),
            Op::Standardize { x, dims, inv_std } => accumulate(grads, *x, wants(*x), || {
                let (outer, reduce, inner) = *dims;
                let y = node.value.data();
                let gd = g.data();
                let nf = T::of(reduce as f64);
                let mut d = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let f = o * inner + i;
                        let mut mg = T::zero();
                        let mut mgy = T::zero();
                        for r in 0..reduce {
                            let k = (o * reduce + r) * inner + i;
                            mg += gd[k];
                            mgy += gd[k] * y[k];
                        }
                        mg /= nf;
                        mgy /= nf;
                        for r in 0..reduce {
                            let k = (o * reduce + r) * inner + i;
                            d[k] = inv_std[f] * (gd[k] - mg - y[k] * mgy);
                        }
                    }
                }
                Tensor::new(val(*x).shape().to_vec(), d).expect("shape")
            }),
        }
        Ok(())
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::input`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.wrt(*v).map(|g| (*p, g)))
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, wanted: bool, f: impl FnOnce() -> Tensor<T>) {
    if !wanted {
        return;
    }
    let g = f();
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn broadcast_strides(from: &[usize], to: &[usize]) -> Option<Vec<usize>> {
    if from.len() > to.len() {
        return None;
    }
    let pad = to.len() - from.len();
    let fs = strides(from);
    let mut out = vec![0; to.len()];
    for i in 0..from.len() {
        let (f, t) = (from[i], to[pad + i]);
        if f == t {
            out[pad + i] = if f == 1 { 0 } else { fs[i] };
        } else if f != 1 {
            return None;
        }
    }
    Some(out)
}

/// Visits source offsets in row-major order of `shape` under `src` strides.
fn walk(shape: &[usize], src: &[usize], mut f: impl FnMut(usize)) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        f(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += src[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= src[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] · b[k,n]ᵀ`
fn matmul_bt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize, k: usize) {
    let mut bt = vec![T::zero(); n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    matmul_acc(a, &bt, out, m, n, k);
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`
fn matmul_at_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        ParamStore::new()
    }

    #[test]
    fn broadcast_then_reduce() {
        let s = store();
        let mut tape = Tape::new(&s, Mode::Train);
        let x = tape.input(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let y = tape.broadcast_to(x, &[2, 3]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let l = tape.sum_all(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_pads_with_zero_and_scatters_back() {
        let s = store();
        let mut tape = Tape::new(&s, Mode::Train);
        let x = tape.input(Tensor::from_f64(&[1, 3], &[5.0, 6.0, 7.0]).unwrap());
        let y = tape
            .gather(x, 1, vec![None, Some(0), Some(2), Some(2)])
            .unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 5.0, 7.0, 7.0]);
        let l = tape.sum_all(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let s = store();
        let mut tape = Tape::new(&s, Mode::Eval);
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[4, 2]));
        let err = tape.linear(x, w, None).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "linear", .. }));
    }

    #[test]
    fn gelu_at_zero_and_tails() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(6.0f64) - 6.0).abs() < 1e-6);
        assert!(gelu(-6.0f64).abs() < 1e-6);
    }

    #[test]
    fn permute_roundtrip() {
        let t = Tensor::<f64>::from_f64(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>()).unwrap();
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.get(&[3, 1, 2]), t.get(&[1, 2, 3]));
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), t);
    }

    #[test]
    fn dropout_modes() {
        let s = store();
        let mut tape = Tape::new(&s, Mode::Eval);
        let x = tape.constant(Tensor::ones(&[8]));
        assert_eq!(tape.dropout(x, 0.5).unwrap(), x);
        let mut rng = crate::params::seeded(0);
        let mut tape = Tape::new(&s, Mode::Train).with_rng(&mut rng);
        let x = tape.constant(Tensor::ones(&[1000]));
        assert_eq!(tape.dropout(x, 0.0).unwrap(), x);
        let y = tape.dropout(x, 0.25).unwrap();
        let vals = tape.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((650..850).contains(&kept), "kept {kept}");
        assert!(tape.dropout(x, 1.0).is_err());
    }
}
