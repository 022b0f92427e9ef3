//! Synthetic markdown sales generator with known ground truth.
//!
//! Each series is one product in one store over its clearance period. Sales
//! at full price follow a daily cycle; reduced-price sales spike at every
//! price reduction and decay geometrically, each later spike damped
//! relative to the previous one.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::params::{seeded, Rng};
use crate::schema::{Group, RawSeries, Schema, Scope, Timestamp, Value, VariableSchema};
use crate::{Error, Result};

pub const FULL: &str = "full_price_sales";
pub const REDUCED: &str = "reduced_price_sales";
/// Half-hourly sampling.
pub const PERIOD: i64 = 1800;
const DAY: i64 = 86_400;
const OPEN_HOUR: f64 = 8.0;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Schedule {
    /// 1 to `max_reductions` reductions with increasing discounts drawn
    /// from `discounts`, at random times in the second three quarters.
    Random { discounts: Vec<f64>, max_reductions: usize },
    /// The same `(step, cumulative discount)` list for every series.
    Fixed(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MarkdownParams {
    pub base_full: f64,
    pub base_reduced: f64,
    /// Spike height per unit of discount.
    pub spike_gain: f64,
    /// Per-step geometric decay of a spike.
    pub decay: f64,
    /// Multiplier applied to each successive spike.
    pub damping: f64,
    /// Noise std relative to the series scale.
    pub noise: f64,
    /// Relative amplitude of the daily cycle in full-price sales.
    pub season_amp: f64,
    /// Fraction of the reduced-price spike taken from full-price sales.
    pub cannibalization: f64,
    pub schedule: Schedule,
    pub min_len: usize,
    pub max_len: usize,
    pub product_groups: u32,
    pub store_types: u32,
    /// Distinct due dates; series sharing one share a split key.
    pub due_days: i64,
}

impl Default for MarkdownParams {
    fn default() -> Self {
        Self {
            base_full: 10.0,
            base_reduced: 1.0,
            spike_gain: 10.0,
            decay: 0.8,
            damping: 0.6,
            noise: 0.3,
            season_amp: 0.3,
            cannibalization: 0.1,
            schedule: Schedule::Random {
                discounts: vec![0.25, 0.5, 0.75],
                max_reductions: 3,
            },
            min_len: 36,
            max_len: 48,
            product_groups: 4,
            store_types: 3,
            due_days: 60,
        }
    }
}

impl MarkdownParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("decay", (0.0..1.0).contains(&self.decay)),
            ("damping", self.damping >= 0.0),
            ("noise", self.noise >= 0.0),
            ("spike_gain", self.spike_gain >= 0.0),
            ("min_len", self.min_len >= 4 && self.min_len <= self.max_len),
            ("product_groups", self.product_groups > 0),
            ("store_types", self.store_types > 0),
            ("due_days", self.due_days > 0),
        ];
        for (field, ok) in checks {
            if !ok {
                return Err(Error::config(field, "out of range"));
            }
        }
        match &self.schedule {
            Schedule::Random { discounts, max_reductions } => {
                if discounts.is_empty() || *max_reductions == 0 || *max_reductions > 3 {
                    return Err(Error::config("schedule", "need discounts and 1..=3 reductions"));
                }
                if discounts.iter().any(|d| !(0.0..1.0).contains(d)) {
                    return Err(Error::config("schedule", "discounts must lie in [0, 1)"));
                }
            }
            Schedule::Fixed(steps) => {
                if steps.len() > 3 || steps.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::config("schedule", "at most 3 reductions at increasing steps"));
                }
            }
        }
        Ok(())
    }
}

pub fn markdown_schema(params: &MarkdownParams) -> Schema {
    Schema::new(vec![
        VariableSchema::numerical(FULL, Scope::Specific, Group::Observed),
        VariableSchema::numerical(REDUCED, Scope::Specific, Group::Observed),
        VariableSchema::numerical("price", Scope::Specific, Group::Tvk),
        VariableSchema::categorical("reduction_iteration", 4, Scope::Global, Group::Tvk),
        VariableSchema::numerical("hour_of_day", Scope::Global, Group::Tvk),
        VariableSchema::categorical("product_group", params.product_groups, Scope::Global, Group::Static),
        VariableSchema::categorical("store_type", params.store_types, Scope::Global, Group::Static),
        VariableSchema::categorical("channel", 2, Scope::Specific, Group::Static),
    ])
    .expect("static schema")
}

/// Noise-free dynamics behind one generated series.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub scale: f64,
    /// `(step, cumulative discount)` of each reduction.
    pub reductions: Vec<(usize, f64)>,
    pub full: Vec<f64>,
    pub reduced: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub schema: Schema,
    pub series: Vec<RawSeries>,
    pub truth: Vec<GroundTruth>,
}

fn hour_of_day(t: usize) -> f64 {
    (OPEN_HOUR + t as f64 * PERIOD as f64 / 3600.0) % 24.0
}

/// Reduced-price spike component at step `t`.
pub fn spike(params: &MarkdownParams, scale: f64, reductions: &[(usize, f64)], t: usize) -> f64 {
    let mut damp = 1.0;
    let mut s = 0.0;
    for &(tau, d) in reductions {
        if t >= tau {
            s += params.spike_gain * d * damp * scale * libm::pow(params.decay, (t - tau) as f64);
        }
        damp *= params.damping;
    }
    s
}

fn schedule(params: &MarkdownParams, n: usize, rng: &mut Rng) -> Vec<(usize, f64)> {
    match &params.schedule {
        Schedule::Fixed(steps) => steps.iter().copied().filter(|&(t, _)| t < n).collect(),
        Schedule::Random { discounts, max_reductions } => {
            let count = rng.random_range(1..=*max_reductions);
            let (lo, hi) = (n / 4, n - 2);
            let mut times: Vec<usize> = Vec::with_capacity(count);
            while times.len() < count.min(hi - lo + 1) {
                let t = rng.random_range(lo..=hi);
                if !times.contains(&t) {
                    times.push(t);
                }
            }
            times.sort_unstable();
            let mut ds: Vec<f64> = (0..times.len()).map(|_| discounts[rng.random_range(0..discounts.len())]).collect();
            ds.sort_by(f64::total_cmp);
            times.into_iter().zip(ds).collect()
        }
    }
}

/// Generates `n_series` series; identical `(n_series, seed, params)` give
/// identical output.
pub fn generate_markdown(n_series: usize, seed: u64, params: &MarkdownParams) -> Result<Generated> {
    params.validate()?;
    let schema = markdown_schema(params);
    let mut rng = seeded(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let group_scale: Vec<f64> = (0..params.product_groups).map(|g| 1.0 + g as f64).collect();
    let store_scale: Vec<f64> = (0..params.store_types).map(|s| 1.0 + 0.5 * s as f64).collect();
    let mut series = Vec::with_capacity(n_series);
    let mut truth = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let n = rng.random_range(params.min_len..=params.max_len);
        let group = rng.random_range(0..params.product_groups);
        let store = rng.random_range(0..params.store_types);
        let jitter = libm::exp(0.2 * unit.sample(&mut rng));
        let scale = group_scale[group as usize] * store_scale[store as usize] * jitter;
        let reductions = schedule(params, n, &mut rng);
        let due = rng.random_range(0..params.due_days);

        let mut full = Vec::with_capacity(n);
        let mut reduced = Vec::with_capacity(n);
        let mut price = Vec::with_capacity(n);
        let mut iteration = Vec::with_capacity(n);
        let mut hours = Vec::with_capacity(n);
        for t in 0..n {
            let h = hour_of_day(t);
            let season = 1.0 + params.season_amp * libm::sin(2.0 * core::f64::consts::PI * h / 24.0);
            let s = spike(params, scale, &reductions, t);
            full.push(params.base_full * scale * season - params.cannibalization * s);
            reduced.push(params.base_reduced * scale + s);
            let active = reductions.iter().filter(|r| r.0 <= t).count();
            let discount = if active == 0 { 0.0 } else { reductions[active - 1].1 };
            price.push(Value::Num(1.0 - discount));
            iteration.push(Value::Cat(active as u32));
            hours.push(Value::Num(h));
        }
        let mut observed = vec![full.clone(), reduced.clone()];
        if params.noise > 0.0 {
            for ch in &mut observed {
                for v in ch.iter_mut() {
                    *v = (*v + params.noise * scale * unit.sample(&mut rng)).max(0.0);
                }
            }
        }
        let start = due * DAY + (OPEN_HOUR as i64) * 3600;
        series.push(RawSeries {
            key: vec![format!("p{i}"), format!("s{store}"), format!("d{due}")],
            split_key: due,
            timestamps: (0..n).map(|t| Timestamp(start + t as i64 * PERIOD)).collect(),
            observed,
            tvk: vec![
                vec![vec![Value::Num(1.0); n], price],
                vec![iteration],
                vec![hours],
            ],
            statics: vec![
                vec![Value::Cat(group)],
                vec![Value::Cat(store)],
                vec![Value::Cat(0), Value::Cat(1)],
            ],
        });
        truth.push(GroundTruth {
            scale,
            reductions,
            full,
            reduced,
        });
    }
    Ok(Generated { schema, series, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> MarkdownParams {
        MarkdownParams {
            noise: 0.0,
            season_amp: 0.0,
            cannibalization: 0.0,
            ..MarkdownParams::default()
        }
    }

    #[test]
    fn single_reduction_matches_closed_form() {
        let p = MarkdownParams {
            schedule: Schedule::Fixed(vec![(10, 0.5)]),
            ..quiet()
        };
        let g = generate_markdown(5, 3, &p).unwrap();
        for (s, truth) in g.series.iter().zip(&g.truth) {
            let base = p.base_reduced * truth.scale;
            for t in 0..s.len() {
                let want = if t < 10 {
                    base
                } else {
                    base + p.spike_gain * 0.5 * truth.scale * p.decay.powi((t - 10) as i32)
                };
                assert!((s.observed[1][t] - want).abs() < 1e-9, "t={t}");
                assert!((s.observed[0][t] - p.base_full * truth.scale).abs() < 1e-9);
            }
            assert_eq!(s.tvk[0][1][9], Value::Num(1.0));
            assert_eq!(s.tvk[0][1][10], Value::Num(0.5));
            assert_eq!(s.tvk[1][0][10], Value::Cat(1));
        }
    }

    #[test]
    fn later_spikes_are_damped() {
        let p = MarkdownParams {
            schedule: Schedule::Fixed(vec![(10, 0.5), (25, 0.5)]),
            ..quiet()
        };
        let g = generate_markdown(3, 1, &p).unwrap();
        for truth in &g.truth {
            let jump = |tau: usize| truth.reduced[tau] - p.decay * (truth.reduced[tau - 1] - p.base_reduced * truth.scale) - p.base_reduced * truth.scale;
            assert!(jump(25) < jump(10));
            assert!((jump(25) / jump(10) - p.damping).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gain_leaves_base_demand() {
        let p = MarkdownParams {
            spike_gain: 0.0,
            ..quiet()
        };
        let g = generate_markdown(4, 2, &p).unwrap();
        for (s, truth) in g.series.iter().zip(&g.truth) {
            assert!(s.observed[1].iter().all(|&v| (v - p.base_reduced * truth.scale).abs() < 1e-12));
        }
    }

    #[test]
    fn output_is_seed_deterministic_and_valid() {
        let p = MarkdownParams::default();
        let a = generate_markdown(20, 7, &p).unwrap();
        let b = generate_markdown(20, 7, &p).unwrap();
        assert_eq!(a.series, b.series);
        for s in &a.series {
            s.validate(&a.schema).unwrap();
            assert!((p.min_len..=p.max_len).contains(&s.len()));
            assert!(s.observed.iter().flatten().all(|&v| v >= 0.0));
        }
        let c = generate_markdown(20, 8, &p).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn random_schedule_is_increasing() {
        let g = generate_markdown(50, 0, &MarkdownParams::default()).unwrap();
        for t in &g.truth {
            assert!(!t.reductions.is_empty() && t.reductions.len() <= 3);
            assert!(t.reductions.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        }
    }
}
