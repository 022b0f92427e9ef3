use alloc::vec;
use alloc::vec::Vec;

use super::window::WindowRow;
use crate::schema::Value;
use crate::tensor::{numel, Tensor};
use crate::{Error, Real, Result};

/// Standard deviations below this fall back to 1.
pub const STD_EPS: f64 = 1e-5;

/// Dense row-major tensor of auxiliary cells.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTensor {
    shape: Vec<usize>,
    data: Vec<Value>,
}

impl ValueTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Value>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("value tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], v: Value) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; numel(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Value] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Value] {
        &mut self.data
    }

    /// Keeps the listed entries of the last axis, in the given order.
    pub fn select_last(&self, keep: &[usize]) -> Self {
        let v = *self.shape.last().unwrap_or(&1);
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = keep.len();
        let data = self.data.chunks(v.max(1)).flat_map(|row| keep.iter().map(move |&i| row[i])).collect();
        Self { shape, data }
    }
}

/// Per sample and channel statistics used to undo instance normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState<T> {
    /// `[B·C]`
    pub last: Vec<T>,
    /// `[B·C]`, 1 where the fallback applied.
    pub std: Vec<T>,
    pub flagged: Vec<bool>,
}

impl<T: Real> NormState<T> {
    /// Last value and population std over the non-pad steps of each
    /// `[B, C, l]` row.
    pub fn compute(observed: &Tensor<T>, pad_len: &[usize]) -> Self {
        let s = observed.shape();
        let (b, c, l) = (s[0], s[1], s[2]);
        let mut st = NormState {
            last: Vec::with_capacity(b * c),
            std: Vec::with_capacity(b * c),
            flagged: Vec::with_capacity(b * c),
        };
        for (row, xs) in observed.data().chunks(l).enumerate() {
            let real = &xs[pad_len[row / c]..];
            let n = T::of(real.len() as f64);
            let mean = real.iter().copied().sum::<T>() / n;
            let var = real.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let std = var.sqrt();
            let flagged = std < T::of(STD_EPS);
            st.last.push(xs[l - 1]);
            st.std.push(if flagged { T::one() } else { std });
            st.flagged.push(flagged);
        }
        st
    }
}

/// Model input for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBatch<T> {
    /// `[B, C, l]`
    pub observed: Tensor<T>,
    /// `[B, C, l + f, V_tvk]`
    pub tvk: ValueTensor,
    /// `[B, C, V_s]`
    pub statics: ValueTensor,
    /// `[B, C, f]`
    pub target: Tensor<T>,
    pub pad_len: Vec<usize>,
    pub norm_state: Option<NormState<T>>,
}

impl<T: Real> SeriesBatch<T> {
    /// Stacks window rows. Pad positions are overwritten with canonical
    /// values (0.0 and [`Value::Pad`]) whatever the rows hold there.
    pub fn from_rows(rows: &[&WindowRow]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::config("batch", "no rows"))?;
        let (c, l, f) = (first.channels, first.lookback, first.horizon);
        let v = first.tvk.len() / (c * (l + f));
        let vs = first.statics.len() / c;
        let b = rows.len();
        let mut observed = Vec::with_capacity(b * c * l);
        let mut target = Vec::with_capacity(b * c * f);
        let mut tvk = Vec::with_capacity(b * c * (l + f) * v);
        let mut statics = Vec::with_capacity(b * c * vs);
        let mut pad_len = Vec::with_capacity(b);
        for r in rows {
            if (r.channels, r.lookback, r.horizon) != (c, l, f)
                || r.tvk.len() != c * (l + f) * v
                || r.statics.len() != c * vs
                || r.pad_len >= l
            {
                return Err(Error::Schema("window rows disagree in layout".into()));
            }
            let p = r.pad_len;
            for (i, &x) in r.observed.iter().enumerate() {
                observed.push(if i % l < p { T::zero() } else { T::of(x) });
            }
            for (i, &x) in r.tvk.iter().enumerate() {
                tvk.push(if (i / v) % (l + f) < p { Value::Pad } else { x });
            }
            target.extend(r.target.iter().map(|&x| T::of(x)));
            statics.extend_from_slice(&r.statics);
            pad_len.push(p);
        }
        Ok(Self {
            observed: Tensor::new(vec![b, c, l], observed)?,
            tvk: ValueTensor::new(vec![b, c, l + f, v], tvk)?,
            statics: ValueTensor::new(vec![b, c, vs], statics)?,
            target: Tensor::new(vec![b, c, f], target)?,
            pad_len,
            norm_state: None,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.observed.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.observed.shape()[1]
    }
}

/// `(y − last) / std` per sample and channel on the past window and the
/// target; pad positions stay 0.
pub fn instance_normalize<T: Real>(batch: &SeriesBatch<T>) -> SeriesBatch<T> {
    let state = NormState::compute(&batch.observed, &batch.pad_len);
    let c = batch.channels();
    let l = batch.observed.shape()[2];
    let f = batch.target.shape()[2];
    let mut out = batch.clone();
    for (row, xs) in out.observed.data_mut().chunks_mut(l).enumerate() {
        let p = batch.pad_len[row / c];
        for x in &mut xs[p..] {
            *x = (*x - state.last[row]) / state.std[row];
        }
    }
    for (row, ys) in out.target.data_mut().chunks_mut(f).enumerate() {
        for y in ys {
            *y = (*y - state.last[row]) / state.std[row];
        }
    }
    out.norm_state = Some(state);
    out
}

/// Inverse of [`instance_normalize`] for a `[B, C, f]` forecast.
pub fn instance_denormalize<T: Real>(pred: &Tensor<T>, state: &NormState<T>) -> Tensor<T> {
    let f = *pred.shape().last().unwrap();
    let mut out = pred.clone();
    for (row, ys) in out.data_mut().chunks_mut(f).enumerate() {
        for y in ys {
            *y = *y * state.std[row] + state.last[row];
        }
    }
    out
}
