//! Tokens for auxiliary variables: base embeddings, time-varying-known
//! tokens from basis combinations, and static tokens.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::ValueTensor;
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore, Rng};
use crate::patch::{PatchPlan, ResolutionSet};
use crate::schema::{Scope, Value, VarKind, VariableSchema};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Real, Result};

/// Standard deviation of embedding initializations.
pub const EMBED_STD: f64 = 0.02;

/// Static variables up to this count become tokens directly; above it they
/// are condensed.
pub const STATIC_DIRECT_MAX: usize = 8;

#[derive(Clone, Debug)]
pub enum VarEmbedding {
    /// Rows `0..cardinality`, then missing, then the zero pad row.
    Categorical { table: ParamId, cardinality: u32 },
    /// `v · direction`, or `missing` when absent.
    Numerical { direction: ParamId, missing: ParamId },
}

#[derive(Clone, Debug)]
pub struct BaseEmbedding {
    pub vars: Vec<(VariableSchema, VarEmbedding)>,
    pub d_model: usize,
}

impl BaseEmbedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vars: &[&VariableSchema],
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(vars.len());
        for v in vars {
            let base = format!("{name}.{}", v.name);
            let emb = match v.kind {
                VarKind::Categorical { cardinality } => {
                    let rows = cardinality as usize + 2;
                    let table = store.normal(&format!("{base}.table"), &[rows, d_model], EMBED_STD, rng)?;
                    store.value_mut(table).data_mut()[(rows - 1) * d_model..].fill(T::zero());
                    VarEmbedding::Categorical { table, cardinality }
                }
                VarKind::Numerical => VarEmbedding::Numerical {
                    direction: store.normal(&format!("{base}.direction"), &[d_model], EMBED_STD, rng)?,
                    missing: store.normal(&format!("{base}.missing"), &[d_model], EMBED_STD, rng)?,
                },
            };
            out.push(((*v).clone(), emb));
        }
        Ok(Self { vars: out, d_model })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// `[..., V] → [..., V, d_m]`.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, values: &ValueTensor) -> Result<Var> {
        let shape = values.shape();
        let v = self.vars.len();
        if shape.last() != Some(&v) || v == 0 {
            return Err(Error::shape("embed", shape, &[v]));
        }
        let n = values.data().len() / v;
        let d = self.d_model;
        let mut cols = Vec::with_capacity(v);
        for (j, (schema, emb)) in self.vars.iter().enumerate() {
            let cells = (0..n).map(|i| values.data()[i * v + j]);
            let col = match *emb {
                VarEmbedding::Categorical { table, cardinality } => {
                    let mut idx = Vec::with_capacity(n);
                    for cell in cells {
                        schema.check(cell)?;
                        idx.push(match cell {
                            Value::Pad => None,
                            Value::Num(_) => unreachable!("checked"),
                            c => c.symbol(cardinality).map(|s| s as usize),
                        });
                    }
                    let tab = t.param(table);
                    t.gather(tab, 0, idx)?
                }
                VarEmbedding::Numerical { direction, missing } => {
                    let mut coef = Vec::with_capacity(n);
                    let mut miss = Vec::with_capacity(n);
                    for cell in cells {
                        schema.check(cell)?;
                        let (c, m) = match cell {
                            Value::Num(x) => (x, 0.0),
                            Value::Missing => (0.0, 1.0),
                            _ => (0.0, 0.0),
                        };
                        coef.push(T::of(c));
                        miss.push(T::of(m));
                    }
                    let coef = t.constant(Tensor::new(vec![n, 1], coef)?);
                    let miss = t.constant(Tensor::new(vec![n, 1], miss)?);
                    let dir = t.param(direction);
                    let mv = t.param(missing);
                    let coef = t.broadcast_to(coef, &[n, d])?;
                    let miss = t.broadcast_to(miss, &[n, d])?;
                    let dir = t.broadcast_to(dir, &[n, d])?;
                    let mv = t.broadcast_to(mv, &[n, d])?;
                    let a = t.mul(coef, dir)?;
                    let b = t.mul(miss, mv)?;
                    t.add(a, b)?
                }
            };
            cols.push(t.reshape(col, &[n, 1, d])?);
        }
        let stacked = t.concat(&cols, 1)?;
        let mut out_shape = shape.to_vec();
        out_shape.push(d);
        t.reshape(stacked, &out_shape)
    }

    /// Rows of categorical tables reserved for pads.
    pub fn pad_rows(&self) -> Vec<(ParamId, usize)> {
        self.vars
            .iter()
            .filter_map(|(_, e)| match e {
                VarEmbedding::Categorical { table, cardinality } => Some((*table, *cardinality as usize + 1)),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.vars
            .iter()
            .map(|(_, e)| match e {
                VarEmbedding::Categorical { cardinality, .. } => (*cardinality as usize + 2) * self.d_model,
                VarEmbedding::Numerical { .. } => 2 * self.d_model,
            })
            .sum()
    }
}

/// Time-varying-known tokens for the variables of one scope.
#[derive(Clone, Debug)]
pub struct TvkTokenizer {
    pub scope: Scope,
    /// Positions of this scope's variables on the TVK variable axis.
    pub columns: Vec<usize>,
    pub embedding: BaseEmbedding,
    /// `[V, 1]`, no bias.
    pub mix: ParamId,
    pub plans: Vec<PatchPlan>,
    /// `[a_k + 1, 1]` per resolution.
    pub basis: Vec<ParamId>,
    /// Token axis `Σk → n_TVK`, with bias.
    pub compress: Linear,
}

impl TvkTokenizer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        scope: Scope,
        tvk_vars: &[&VariableSchema],
        resolutions: &ResolutionSet,
        window: usize,
        n_tokens: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Option<Self>> {
        let columns: Vec<usize> = (0..tvk_vars.len()).filter(|&i| tvk_vars[i].scope == scope).collect();
        if columns.is_empty() || n_tokens == 0 {
            return Ok(None);
        }
        let vars: Vec<&VariableSchema> = columns.iter().map(|&i| tvk_vars[i]).collect();
        let embedding = BaseEmbedding::new(store, &format!("{name}.embed"), &vars, d_model, rng)?;
        let v = vars.len();
        let mix = store.uniform(&format!("{name}.mix"), &[v, 1], 1.0 / libm::sqrt(v as f64), rng)?;
        let plans = resolutions
            .as_slice()
            .iter()
            .map(|&k| PatchPlan::new(window, k))
            .collect::<Result<Vec<_>>>()?;
        let basis = plans
            .iter()
            .map(|p| store.uniform(&format!("{name}.basis.k{}", p.k), &[p.width(), 1], 1.0 / libm::sqrt(p.width() as f64), rng))
            .collect::<Result<Vec<_>>>()?;
        let compress = Linear::new(store, &format!("{name}.compress"), resolutions.token_count(), n_tokens, true, rng)?;
        Ok(Some(Self {
            scope,
            columns,
            embedding,
            mix,
            plans,
            basis,
            compress,
        }))
    }

    pub fn token_count(&self) -> usize {
        self.compress.out_dim
    }

    fn check_global(&self, tvk: &ValueTensor) -> Result<()> {
        let s = tvk.shape();
        let (b, c, h, v) = (s[0], s[1], s[2], s[3]);
        let d = tvk.data();
        for bi in 0..b {
            for ci in 1..c {
                for ti in 0..h {
                    for &j in &self.columns {
                        let first = d[((bi * c) * h + ti) * v + j];
                        let other = d[((bi * c + ci) * h + ti) * v + j];
                        if first != other {
                            return Err(Error::Consistency(self.embedding.vars[self.col_pos(j)].0.name.clone()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn col_pos(&self, j: usize) -> usize {
        self.columns.iter().position(|&c| c == j).unwrap()
    }

    /// Basis-combined tokens before compression: `[B, C, Σk, d_m]`.
    pub fn patch_tokens<T: Real>(&self, t: &mut Tape<'_, T>, tvk: &ValueTensor) -> Result<Var> {
        let s = tvk.shape().to_vec();
        if s.len() != 4 || s[2] != self.plans[0].h {
            return Err(Error::shape("tvk", &s, &[0, 0, self.plans[0].h, 0]));
        }
        if self.scope == Scope::Global {
            self.check_global(tvk)?;
        }
        let (b, c, h, d) = (s[0], s[1], s[2], self.embedding.d_model);
        let emb = self.embedding.forward(t, &tvk.select_last(&self.columns))?; // [B,C,H,V,L]
        let emb = t.permute(emb, &[0, 1, 2, 4, 3])?;
        let mix = t.param(self.mix);
        let mixed = t.linear(emb, mix, None)?;
        let mixed = t.reshape(mixed, &[b, c, h, d])?;
        let mut parts = Vec::with_capacity(self.plans.len());
        for (plan, &basis) in self.plans.iter().zip(&self.basis) {
            let w = plan.width();
            let patches = t.gather(mixed, 2, plan.padded_index())?;
            let patches = t.reshape(patches, &[b, c, plan.k, w, d])?;
            let patches = t.permute(patches, &[0, 1, 2, 4, 3])?;
            let bv = t.param(basis);
            let tok = t.linear(patches, bv, None)?;
            parts.push(t.reshape(tok, &[b, c, plan.k, d])?);
        }
        t.concat(&parts, 2)
    }

    /// `[B, C, l + f, V_tvk] → [B, C, n_TVK, d_m]`.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, tvk: &ValueTensor) -> Result<Var> {
        let tokens = self.patch_tokens(t, tvk)?;
        self.compress.forward_axis(t, tokens, 2)
    }

    pub fn param_count(&self) -> usize {
        self.embedding.param_count()
            + self.columns.len()
            + self.plans.iter().map(PatchPlan::width).sum::<usize>()
            + self.compress.param_count()
    }
}

/// Static tokens: the base embeddings themselves, or a learned condensation
/// over the variable axis.
#[derive(Clone, Debug)]
pub struct StaticTokenizer {
    pub embedding: BaseEmbedding,
    pub condenser: Option<Linear>,
}

impl StaticTokenizer {
    /// Direct path for up to [`STATIC_DIRECT_MAX`] variables, otherwise
    /// condensed to `n_tokens`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        vars: &[&VariableSchema],
        n_tokens: usize,
        d_model: usize,
        rng: &mut Rng,
    ) -> Result<Option<Self>> {
        if vars.is_empty() || n_tokens == 0 {
            return Ok(None);
        }
        let embedding = BaseEmbedding::new(store, &format!("{name}.embed"), vars, d_model, rng)?;
        let condenser = if vars.len() > STATIC_DIRECT_MAX {
            Some(Linear::new(store, &format!("{name}.condense"), vars.len(), n_tokens, true, rng)?)
        } else {
            None
        };
        Ok(Some(Self { embedding, condenser }))
    }

    pub fn token_count(&self) -> usize {
        self.condenser.as_ref().map_or(self.embedding.len(), |c| c.out_dim)
    }

    /// `[B, C, V_s] → [B, C, n_S, d_m]`.
    pub fn forward<T: Real>(&self, t: &mut Tape<'_, T>, statics: &ValueTensor) -> Result<Var> {
        let emb = self.embedding.forward(t, statics)?;
        match &self.condenser {
            Some(c) => c.forward_axis(t, emb, 2),
            None => Ok(emb),
        }
    }

    pub fn param_count(&self) -> usize {
        self.embedding.param_count() + self.condenser.as_ref().map_or(0, Linear::param_count)
    }
}
