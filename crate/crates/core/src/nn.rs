//! Learnable building blocks shared by the tokenizers, mixer and encoder.

use alloc::format;
use alloc::vec::Vec;

use libm::sqrt;

use crate::params::{ParamId, ParamStore, Rng};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::{numel, Tensor};
use crate::{Error, Real, Result};

/// Affine map over the last axis. Weights uniform in ±1/√fan_in, bias zero.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / sqrt(in_dim.max(1) as f64);
        let w = store.uniform(&format!("{name}.w"), &[in_dim, out_dim], bound, rng)?;
        let b = if bias {
            Some(store.constant(&format!("{name}.b"), &[out_dim], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = t.param(self.w);
        let b = self.b.map(|b| t.param(b));
        t.linear(x, w, b)
    }

    /// Applies the map over `axis` instead of the last axis.
    pub fn forward_axis<T: Real>(&self, t: &mut Tape<'_, T>, x: Var, axis: usize) -> Result<Var> {
        let rank = t.shape(x).len();
        if axis + 1 == rank {
            return self.forward(t, x);
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(axis, rank - 1);
        let moved = t.permute(x, &perm)?;
        let y = self.forward(t, moved)?;
        t.permute(y, &perm)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.b.is_some() { self.out_dim } else { 0 }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum NormFlavor {
    /// Each feature coordinate normalized across the leading sample axes.
    Batch,
    /// Each token normalized across its last axis.
    Layer,
}

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Batch or layer normalization with a learned affine.
///
/// Inputs are `[B, C, features...]`; in batch flavor the `B·C` leading
/// entries are the samples, matching channel independence.
#[derive(Clone, Debug)]
pub struct Norm {
    pub flavor: NormFlavor,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Option<ParamId>,
    pub running_var: Option<ParamId>,
    features: Vec<usize>,
}

impl Norm {
    /// `features` are the trailing axes of the input (`[T, L]` for batch
    /// flavor on a token tensor, `[L]` for layer flavor).
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, flavor: NormFlavor, features: &[usize]) -> Result<Self> {
        let affine: &[usize] = match flavor {
            NormFlavor::Batch => features,
            NormFlavor::Layer => &features[features.len() - 1..],
        };
        let gamma = store.constant(&format!("{name}.gamma"), affine, 1.0)?;
        let beta = store.constant(&format!("{name}.beta"), affine, 0.0)?;
        let (running_mean, running_var) = match flavor {
            NormFlavor::Batch => (
                Some(store.buffer(&format!("{name}.running_mean"), features, 0.0)?),
                Some(store.buffer(&format!("{name}.running_var"), features, 1.0)?),
            ),
            NormFlavor::Layer => (None, None),
        };
        Ok(Self {
            flavor,
            gamma,
            beta,
            running_mean,
            running_var,
            features: features.to_vec(),
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        let nf = self.features.len();
        let ok = match self.flavor {
            NormFlavor::Batch => shape.len() > nf && shape[shape.len() - nf..] == self.features[..],
            NormFlavor::Layer => shape.last() == self.features.last(),
        };
        if !ok {
            return Err(Error::shape("norm", &shape, &self.features));
        }
        let normed = match self.flavor {
            NormFlavor::Layer => {
                let l = *shape.last().unwrap();
                t.standardize(x, numel(&shape) / l, l, 1, NORM_EPS)?.0
            }
            NormFlavor::Batch => self.batch(t, x, &shape)?,
        };
        let gamma = t.param(self.gamma);
        let beta = t.param(self.beta);
        let g = t.broadcast_to(gamma, &shape)?;
        let b = t.broadcast_to(beta, &shape)?;
        let scaled = t.mul(normed, g)?;
        t.add(scaled, b)
    }

    fn batch<T: Real>(&self, t: &mut Tape<'_, T>, x: Var, shape: &[usize]) -> Result<Var> {
        let f = numel(&self.features);
        let samples = numel(shape) / f;
        let (rm, rv) = (self.running_mean.unwrap(), self.running_var.unwrap());
        match t.mode() {
            Mode::Train => {
                if shape[0] < 2 {
                    return Err(Error::Statistics { samples: shape[0] });
                }
                let (y, m) = t.standardize(x, 1, samples, f, NORM_EPS)?;
                let store = t.store();
                let mom = T::of(NORM_MOMENTUM);
                let unbias = T::of(samples as f64 / (samples as f64 - 1.0));
                let new_mean: Vec<T> = store
                    .value(rm)
                    .data()
                    .iter()
                    .zip(&m.mean)
                    .map(|(&old, &cur)| (T::one() - mom) * old + mom * cur)
                    .collect();
                let new_var: Vec<T> = store
                    .value(rv)
                    .data()
                    .iter()
                    .zip(&m.var)
                    .map(|(&old, &cur)| (T::one() - mom) * old + mom * cur * unbias)
                    .collect();
                t.record_update(rm, Tensor::new(self.features.clone(), new_mean)?);
                t.record_update(rv, Tensor::new(self.features.clone(), new_var)?);
                Ok(y)
            }
            Mode::Eval => {
                let store = t.store();
                let mean = store.value(rm).clone();
                let inv = store.value(rv).map(|v| T::one() / (v + T::of(NORM_EPS)).sqrt());
                let mean = t.constant(mean);
                let inv = t.constant(inv);
                let mean = t.broadcast_to(mean, shape)?;
                let inv = t.broadcast_to(inv, shape)?;
                let centered = t.sub(x, mean)?;
                t.mul(centered, inv)
            }
        }
    }
}

/// Scaled dot-product attention over `[N, T, D]` inputs split into `heads`.
/// Returns the concatenated head outputs `[N, T, D]` and the attention
/// weights `[N, heads, T, T]`. Unmasked.
pub fn softmax_attention<T: Real>(t: &mut Tape<'_, T>, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Var)> {
    let shape = t.shape(q).to_vec();
    if shape.len() != 3 || t.shape(k) != shape.as_slice() || t.shape(v) != shape.as_slice() {
        return Err(Error::shape("attention", &shape, t.shape(k)));
    }
    let (n, tokens, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::config("heads", format!("{heads} does not divide d_m={d}")));
    }
    let dh = d / heads;
    let split = |t: &mut Tape<'_, T>, x: Var| -> Result<Var> {
        let r = t.reshape(x, &[n, tokens, heads, dh])?;
        t.permute(r, &[0, 2, 1, 3])
    };
    let qh = split(t, q)?;
    let kh = split(t, k)?;
    let vh = split(t, v)?;
    let kt = t.transpose_last(kh)?;
    let logits = t.bmm(qh, kt)?;
    let logits = t.scale(logits, T::of(1.0 / sqrt(dh as f64)));
    let weights = t.softmax_last(logits)?;
    let ctx = t.bmm(weights, vh)?;
    let ctx = t.permute(ctx, &[0, 2, 1, 3])?;
    let out = t.reshape(ctx, &[n, tokens, d])?;
    Ok((out, weights))
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_model: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::config("heads", format!("{heads} does not divide d_m={d_model}")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, true, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, true, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, true, rng)?,
            out: Linear::new(store, &format!("{name}.out"), d_model, d_model, true, rng)?,
            heads,
        })
    }

    /// `x: [N, T, D]` → (`[N, T, D]`, weights `[N, heads, T, T]`).
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<(Var, Var)> {
        let q = self.q.forward(t, x)?;
        let k = self.k.forward(t, x)?;
        let v = self.v.forward(t, x)?;
        let (ctx, w) = softmax_attention(t, q, k, v, self.heads)?;
        Ok((self.out.forward(t, ctx)?, w))
    }
}

/// Two-layer MLP with GeLU and dropout between the layers.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d_model: usize, d_ff: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), d_model, d_ff, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), d_ff, d_model, true, rng)?,
            dropout,
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(t, x)?;
        let h = t.gelu(h);
        let h = t.dropout(h, self.dropout)?;
        self.down.forward(t, h)
    }
}
