//! Learned positional bias and post-norm transformer blocks.

use alloc::format;
use alloc::vec::Vec;

use crate::nn::{FeedForward, MultiHeadAttention, Norm, NormFlavor};
use crate::params::{ParamId, ParamStore, Rng};
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result};

pub const POS_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: Norm,
    pub ffn: FeedForward,
    pub norm2: Norm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    /// `[n_tokens, d_m]`
    pub position: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub tokens: usize,
    pub d_model: usize,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        tokens: usize,
        d_model: usize,
        d_ff: usize,
        heads: usize,
        blocks: usize,
        flavor: NormFlavor,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if blocks == 0 {
            return Err(Error::config("blocks", "need at least one block"));
        }
        let position = store.normal(&format!("{name}.position"), &[tokens, d_model], POS_STD, rng)?;
        let blocks = (0..blocks)
            .map(|i| {
                let n = format!("{name}.block{i}");
                Ok(EncoderBlock {
                    attention: MultiHeadAttention::new(store, &format!("{n}.attn"), d_model, heads, rng)?,
                    norm1: Norm::new(store, &format!("{n}.norm1"), flavor, &[tokens, d_model])?,
                    ffn: FeedForward::new(store, &format!("{n}.ffn"), d_model, d_ff, dropout, rng)?,
                    norm2: Norm::new(store, &format!("{n}.norm2"), flavor, &[tokens, d_model])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            position,
            blocks,
            tokens,
            d_model,
        })
    }

    /// `[B, C, n, d_m] → [B, C, n, d_m]`; channels attend independently.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let s = t.shape(x).to_vec();
        if s.len() != 4 || s[2] != self.tokens || s[3] != self.d_model {
            return Err(Error::config(
                "tokens",
                format!("encoder built for {} tokens of width {}, got {s:?}", self.tokens, self.d_model),
            ));
        }
        let pos = t.param(self.position);
        let pos = t.broadcast_to(pos, &s)?;
        let mut x = t.add(x, pos)?;
        let flat = [s[0] * s[1], s[2], s[3]];
        for b in &self.blocks {
            let xf = t.reshape(x, &flat)?;
            let (a, _) = b.attention.forward(t, xf)?;
            let a = t.reshape(a, &s)?;
            let y = t.add(x, a)?;
            let y = b.norm1.forward(t, y)?;
            let h = b.ffn.forward(t, y)?;
            let z = t.add(y, h)?;
            x = b.norm2.forward(t, z)?;
        }
        Ok(x)
    }
}
