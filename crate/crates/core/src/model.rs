//! Model configuration, construction and the full forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::aux::{StaticTokenizer, TvkTokenizer};
use crate::data::{NormState, SeriesBatch};
use crate::encoder::Encoder;
use crate::error::StageExt;
use crate::gradcheck::{grad_check, GradCheckOptions, GradReport};
use crate::head::ReverseSplitter;
use crate::layout::{TokenFamily, TokenLayout};
use crate::mixer::ChannelMixer;
use crate::mrp::MrpTokenizer;
use crate::nn::NormFlavor;
use crate::params::{seeded, ParamId, ParamStore, Rng};
use crate::patch::ResolutionSet;
use crate::schema::{Schema, Scope};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Real, Result};

use rand::Rng as _;

/// Added to the affine scale before dividing by it on the way out.
pub const AFFINE_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub resolutions: Vec<usize>,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_cross: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Tokens per TVK scope.
    pub n_tvk: usize,
    /// Static tokens when the static variables must be condensed; 0
    /// disables static tokens.
    pub n_static: usize,
    pub n_cst: usize,
    pub dropout: f64,
    pub norm: NormFlavor,
    pub include_tvkt: bool,
    pub include_cst: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![1, 2, 3, 4, 6, 8],
            lookback: 28,
            horizon: 24,
            channels: 2,
            d_model: 64,
            d_ff: 128,
            d_cross: 16,
            heads: 8,
            blocks: 2,
            n_tvk: 8,
            n_static: 4,
            n_cst: 8,
            dropout: 0.0,
            norm: NormFlavor::Batch,
            include_tvkt: true,
            include_cst: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checks: `d_m = 8`, `K = {1, 2}`,
    /// `l = 8`, `f = 4`, both auxiliary token families on.
    pub fn toy() -> Self {
        Self {
            resolutions: vec![1, 2],
            lookback: 8,
            horizon: 4,
            channels: 2,
            d_model: 8,
            d_ff: 16,
            d_cross: 4,
            heads: 2,
            blocks: 2,
            n_tvk: 2,
            n_static: 2,
            n_cst: 2,
            ..Self::default()
        }
    }

    pub fn resolution_set(&self) -> Result<ResolutionSet> {
        ResolutionSet::new(self.resolutions.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.resolution_set()?;
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("blocks", self.blocks),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config("heads", format!("{} does not divide d_model={}", self.heads, self.d_model)));
        }
        if self.horizon < k.max() {
            return Err(Error::config("horizon", format!("must be at least the largest resolution {}", k.max())));
        }
        if self.lookback < k.max() {
            return Err(Error::config("lookback", format!("must be at least the largest resolution {}", k.max())));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if self.include_cst && (self.n_cst == 0 || self.d_cross == 0) {
            return Err(Error::config("n_cst", "cross-series tokens need n_cst > 0 and d_cross > 0"));
        }
        if self.include_tvkt && self.n_tvk == 0 {
            return Err(Error::config("n_tvk", "TVK tokens need n_tvk > 0"));
        }
        Ok(())
    }
}

/// Outputs of [`Model::forward_tape`].
pub struct Forward<T> {
    /// Forecast in instance-normalized space, `[B, C, f]`.
    pub pred_norm: Var,
    /// Forecast in input space, `[B, C, f]`.
    pub pred: Var,
    /// Target in instance-normalized space.
    pub target_norm: Tensor<T>,
    pub state: NormState<T>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub schema: Schema,
    pub store: ParamStore<T>,
    pub layout: TokenLayout,
    /// Per-channel affine applied after instance normalization.
    pub affine_scale: ParamId,
    pub affine_shift: ParamId,
    pub mrp: MrpTokenizer,
    pub statics: Option<StaticTokenizer>,
    pub tvk_global: Option<TvkTokenizer>,
    pub tvk_specific: Option<TvkTokenizer>,
    pub mixer: Option<ChannelMixer>,
    pub encoder: Encoder,
    pub head: ReverseSplitter,
}

/// Name prefixes of the model's modules, in forward order.
pub const MODULES: [&str; 8] = ["revin", "mrp", "static", "tvk_global", "tvk_specific", "mixer", "encoder", "head"];

pub fn build_model<T: Real>(config: &ModelConfig, schema: &Schema) -> Result<Model<T>> {
    config.validate()?;
    if schema.channels() != config.channels {
        return Err(Error::config(
            "channels",
            format!("config has {} channels, schema declares {}", config.channels, schema.channels()),
        ));
    }
    let k = config.resolution_set()?;
    let d = config.d_model;
    let mut rng = seeded(config.seed);
    let mut store = ParamStore::new();
    let affine_scale = store.constant("revin.scale", &[config.channels], 1.0)?;
    let affine_shift = store.constant("revin.shift", &[config.channels], 0.0)?;

    let mrp = MrpTokenizer::new(&mut store, "mrp", &k, config.lookback, d, &mut rng)?;
    let statics = StaticTokenizer::new(&mut store, "static", &schema.statics(), config.n_static, d, &mut rng)?;
    let (tvk_global, tvk_specific) = if config.include_tvkt {
        let vars = schema.tvk();
        let window = config.lookback + config.horizon;
        (
            TvkTokenizer::new(&mut store, "tvk_global", Scope::Global, &vars, &k, window, config.n_tvk, d, &mut rng)?,
            TvkTokenizer::new(&mut store, "tvk_specific", Scope::Specific, &vars, &k, window, config.n_tvk, d, &mut rng)?,
        )
    } else {
        (None, None)
    };

    let mut layout = TokenLayout::default();
    layout.push(TokenFamily::Mrp, mrp.token_count());
    layout.push(TokenFamily::Static, statics.as_ref().map_or(0, StaticTokenizer::token_count));
    layout.push(TokenFamily::TvkGlobal, tvk_global.as_ref().map_or(0, TvkTokenizer::token_count));
    layout.push(TokenFamily::TvkSpecific, tvk_specific.as_ref().map_or(0, TvkTokenizer::token_count));
    let n_base = layout.total();
    let mixer = if config.include_cst {
        let m = ChannelMixer::new(
            &mut store,
            "mixer",
            config.norm,
            n_base,
            config.n_cst,
            config.channels,
            config.d_cross,
            d,
            config.dropout,
            &mut rng,
        )?;
        layout.push(TokenFamily::CrossSeries, m.token_count());
        Some(m)
    } else {
        None
    };
    let encoder = Encoder::new(
        &mut store,
        "encoder",
        layout.total(),
        d,
        config.d_ff,
        config.heads,
        config.blocks,
        config.norm,
        config.dropout,
        &mut rng,
    )?;
    let head = ReverseSplitter::new(&mut store, "head", &k, config.horizon, d, &mut rng)?;
    Ok(Model {
        config: config.clone(),
        schema: schema.clone(),
        store,
        layout,
        affine_scale,
        affine_shift,
        mrp,
        statics,
        tvk_global,
        tvk_specific,
        mixer,
        encoder,
        head,
    })
}

impl<T: Real> Model<T> {
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Trainable parameter count per module prefix.
    pub fn param_breakdown(&self) -> Vec<(&'static str, usize)> {
        MODULES
            .iter()
            .map(|&m| (m, self.store.count_prefix(&format!("{m}."))))
            .collect()
    }

    /// Rebuilds the model described by `config` and `schema` and loads
    /// parameter values from `store`.
    pub fn from_store(config: &ModelConfig, schema: &Schema, store: &ParamStore<T>) -> Result<Self> {
        let mut m = build_model(config, schema)?;
        m.store.load_from(store)?;
        Ok(m)
    }

    /// Pad rows of every categorical embedding table.
    pub fn pad_rows(&self) -> Vec<(ParamId, usize)> {
        let mut rows = Vec::new();
        if let Some(s) = &self.statics {
            rows.extend(s.embedding.pad_rows());
        }
        for t in [&self.tvk_global, &self.tvk_specific].into_iter().flatten() {
            rows.extend(t.embedding.pad_rows());
        }
        rows
    }

    /// Records the whole pipeline on `t`; `past` must hold `batch.observed`.
    pub fn forward_tape(&self, t: &mut Tape<'_, T>, batch: &SeriesBatch<T>, past: Var) -> Result<Forward<T>> {
        let cfg = &self.config;
        let s = batch.observed.shape();
        let (b, c, l, f) = (s[0], s[1], cfg.lookback, cfg.horizon);
        if c != cfg.channels || s[2] != l || batch.target.shape() != [b, c, f] {
            return Err(Error::config(
                "batch",
                format!("expected observed [B,{},{l}] and target [B,{},{f}], got {s:?} and {:?}", cfg.channels, cfg.channels, batch.target.shape()),
            ));
        }
        if t.shape(past) != s {
            return Err(Error::shape("forward", t.shape(past), s));
        }

        // instance normalization: subtract the last value, divide by the
        // population std over real steps (1 when degenerate)
        let state = NormState::compute(t.value(past), &batch.pad_len);
        let mut mask = Vec::with_capacity(b * c * l);
        let mut inv_count = Vec::with_capacity(b * c);
        for bi in 0..b {
            let p = batch.pad_len[bi];
            for _ in 0..c {
                mask.extend((0..l).map(|i| if i < p { T::zero() } else { T::one() }));
                inv_count.push(T::of(1.0 / (l - p) as f64));
            }
        }
        let keep: Vec<T> = state.flagged.iter().map(|&fl| if fl { T::zero() } else { T::one() }).collect();
        let fill: Vec<T> = keep.iter().map(|&k| T::one() - k).collect();
        let mask = t.constant(Tensor::new(vec![b, c, l], mask)?);
        let inv_count = t.constant(Tensor::new(vec![b, c, 1], inv_count)?);
        let keep = t.constant(Tensor::new(vec![b, c, 1], keep)?);
        let fill = t.constant(Tensor::new(vec![b, c, 1], fill)?);

        let last = t.gather(past, 2, vec![Some(l - 1)])?;
        let masked = t.mul(past, mask)?;
        let total = t.sum_axis(masked, 2)?;
        let mean = t.mul(total, inv_count)?;
        let mean_b = t.broadcast_to(mean, &[b, c, l])?;
        let dev = t.sub(past, mean_b)?;
        let dev = t.mul(dev, mask)?;
        let sq = t.mul(dev, dev)?;
        let ss = t.sum_axis(sq, 2)?;
        let var = t.mul(ss, inv_count)?;
        let var = t.mul(var, keep)?;
        let var = t.add(var, fill)?;
        let std = t.sqrt(var);

        let last_l = t.broadcast_to(last, &[b, c, l])?;
        let std_l = t.broadcast_to(std, &[b, c, l])?;
        let centered = t.sub(past, last_l)?;
        let normed = t.div(centered, std_l)?;
        let scale = t.param(self.affine_scale);
        let shift = t.param(self.affine_shift);
        let scale = t.reshape(scale, &[c, 1])?;
        let shift = t.reshape(shift, &[c, 1])?;
        let scale_l = t.broadcast_to(scale, &[b, c, l])?;
        let shift_l = t.broadcast_to(shift, &[b, c, l])?;
        let x = t.mul(normed, scale_l)?;
        let x = t.add(x, shift_l)?;
        let x = t.mul(x, mask)?;

        let mut tokens = vec![self.mrp.forward(t, x).stage("mrp")?];
        if let Some(st) = &self.statics {
            tokens.push(st.forward(t, &batch.statics).stage("static tokens")?);
        }
        if let Some(g) = &self.tvk_global {
            tokens.push(g.forward(t, &batch.tvk).stage("global tvk tokens")?);
        }
        if let Some(sp) = &self.tvk_specific {
            tokens.push(sp.forward(t, &batch.tvk).stage("specific tvk tokens")?);
        }
        let mut all = t.concat(&tokens, 2).stage("assemble")?;
        if let Some(m) = &self.mixer {
            let cst = m.forward(t, all).stage("channel mixer")?;
            all = t.concat(&[all, cst], 2).stage("append cst")?;
        }
        let encoded = self.encoder.forward(t, all).stage("encoder")?;
        let y = self.head.forward(t, encoded, &self.layout).stage("head")?;

        let shift_f = t.broadcast_to(shift, &[b, c, f])?;
        let scale_f = t.broadcast_to(scale, &[b, c, f])?;
        let scale_f = t.shift(scale_f, T::of(AFFINE_EPS));
        let y = t.sub(y, shift_f)?;
        let pred_norm = t.div(y, scale_f)?;
        let std_f = t.broadcast_to(std, &[b, c, f])?;
        let last_f = t.broadcast_to(last, &[b, c, f])?;
        let pred = t.mul(pred_norm, std_f)?;
        let pred = t.add(pred, last_f)?;

        let mut target_norm = batch.target.clone();
        for (row, ys) in target_norm.data_mut().chunks_mut(f).enumerate() {
            for y in ys {
                *y = (*y - state.last[row]) / state.std[row];
            }
        }
        Ok(Forward {
            pred_norm,
            pred,
            target_norm,
            state,
        })
    }

    /// Forecast in input space. Train mode with dropout needs `rng`.
    pub fn forward(&self, batch: &SeriesBatch<T>, mode: Mode, rng: Option<&mut Rng>) -> Result<Tensor<T>> {
        let mut t = Tape::new(&self.store, mode);
        if let Some(r) = rng {
            t = t.with_rng(r);
        }
        let past = t.constant(batch.observed.clone());
        let out = self.forward_tape(&mut t, batch, past)?;
        Ok(t.value(out.pred).clone())
    }
}

/// Finite-difference checks of every module on its own, fed random inputs
/// of the right shape, then of the whole model on `batch`.
pub fn module_grad_checks(model: &Model<f64>, batch: &SeriesBatch<f64>, opts: &GradCheckOptions) -> Result<Vec<(String, GradReport)>> {
    let cfg = &model.config;
    let (b, c, d) = (batch.batch_size(), cfg.channels, cfg.d_model);
    let mut rng = seeded(opts.seed ^ 0xC0FFEE);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
    };
    let only = |prefix: &str| GradCheckOptions {
        prefix: Some(format!("{prefix}.")),
        ..opts.clone()
    };
    let store = &model.store;
    let n_base = model.layout.total() - model.layout.count(TokenFamily::CrossSeries);
    let mut out = Vec::new();
    let x = random(&[b, c, cfg.lookback]);
    out.push(("mrp".into(), grad_check(store, &[x], |t, v| model.mrp.forward(t, v[0]), &only("mrp"))?));
    if let Some(s) = &model.statics {
        out.push(("static".into(), grad_check(store, &[], |t, _| s.forward(t, &batch.statics), &only("static"))?));
    }
    for (name, tvk) in [("tvk_global", &model.tvk_global), ("tvk_specific", &model.tvk_specific)] {
        if let Some(tk) = tvk {
            out.push((name.into(), grad_check(store, &[], |t, _| tk.forward(t, &batch.tvk), &only(name))?));
        }
    }
    if let Some(m) = &model.mixer {
        let x = random(&[b, c, n_base, d]);
        out.push(("mixer".into(), grad_check(store, &[x], |t, v| m.forward(t, v[0]), &only("mixer"))?));
    }
    let x = random(&[b, c, model.layout.total(), d]);
    out.push(("encoder".into(), grad_check(store, core::slice::from_ref(&x), |t, v| model.encoder.forward(t, v[0]), &only("encoder"))?));
    out.push(("head".into(), grad_check(store, &[x], |t, v| model.head.forward(t, v[0], &model.layout), &only("head"))?));
    let e2e = grad_check(
        store,
        core::slice::from_ref(&batch.observed),
        |t, v| Ok(model.forward_tape(t, batch, v[0])?.pred),
        opts,
    )?;
    out.push(("end_to_end".into(), e2e));
    Ok(out)
}

/// `sqrt(mean((pred − target)²))` on the tape.
pub fn rmse_loss<T: Real>(t: &mut Tape<'_, T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    let target = t.constant(target.clone());
    let d = t.sub(pred, target)?;
    let sq = t.mul(d, d)?;
    let mse = t.mean_all(sq);
    Ok(t.sqrt(mse))
}
