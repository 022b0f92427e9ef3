//! Cross-series tokens from token mixing and channel mixing.

use alloc::format;

use crate::nn::{Linear, Norm, NormFlavor};
use crate::params::{ParamStore, Rng};
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result};

#[derive(Clone, Debug)]
pub struct ChannelMixer {
    pub token_norm: Norm,
    /// Token axis `n_B → n_B`.
    pub token_mix: Linear,
    /// Token axis `n_B → n_CST`.
    pub token_squeeze: Linear,
    pub channel_norm: Norm,
    /// Channel axis `d_c → d_cross`.
    pub channel_up: Linear,
    /// Channel axis `d_cross → d_c`.
    pub channel_down: Linear,
    /// Channel axis `d_c → 1`.
    pub channel_squeeze: Linear,
    pub dropout: f64,
    pub channels: usize,
}

impl ChannelMixer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        flavor: NormFlavor,
        n_base: usize,
        n_cst: usize,
        channels: usize,
        d_cross: usize,
        d_model: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_cst == 0 || d_cross == 0 || channels == 0 {
            return Err(Error::config("mixer", "n_cst, d_cross and channels must be positive"));
        }
        Ok(Self {
            token_norm: Norm::new(store, &format!("{name}.token_norm"), flavor, &[n_base, d_model])?,
            token_mix: Linear::new(store, &format!("{name}.token_mix"), n_base, n_base, true, rng)?,
            token_squeeze: Linear::new(store, &format!("{name}.token_squeeze"), n_base, n_cst, true, rng)?,
            channel_norm: Norm::new(store, &format!("{name}.channel_norm"), flavor, &[n_cst, d_model])?,
            channel_up: Linear::new(store, &format!("{name}.channel_up"), channels, d_cross, true, rng)?,
            channel_down: Linear::new(store, &format!("{name}.channel_down"), d_cross, channels, true, rng)?,
            channel_squeeze: Linear::new(store, &format!("{name}.channel_squeeze"), channels, 1, true, rng)?,
            dropout,
            channels,
        })
    }

    pub fn token_count(&self) -> usize {
        self.token_squeeze.out_dim
    }

    /// `[B, C, n_B, d_m] → [B, C, n_CST, d_m]`, identical across `C`.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, tokens: Var) -> Result<Var> {
        let s = t.shape(tokens).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::config(
                "channels",
                format!("mixer built for {} channels, input has shape {s:?}", self.channels),
            ));
        }
        let h = self.token_norm.forward(t, tokens)?;
        let h = self.token_mix.forward_axis(t, h, 2)?;
        let h = t.gelu(h);
        let h = t.dropout(h, self.dropout)?;
        let x = t.add(tokens, h)?;
        let x = self.token_squeeze.forward_axis(t, x, 2)?;

        let h = self.channel_norm.forward(t, x)?;
        let h = self.channel_up.forward_axis(t, h, 1)?;
        let h = t.gelu(h);
        let h = t.dropout(h, self.dropout)?;
        let h = self.channel_down.forward_axis(t, h, 1)?;
        let x = t.add(x, h)?;

        let one = self.channel_squeeze.forward_axis(t, x, 1)?;
        t.broadcast_to(one, &[s[0], s[1], self.token_count(), s[3]])
    }

}
