//! Resolution-set, module-inclusion and latent-size sweeps.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{build_model, ModelConfig};
use crate::params::derive_seed;
use crate::pipeline::Prepared;
use crate::train::{evaluate, train, NoHooks, TrainSpec};
use crate::{Real, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ModuleArm {
    None,
    Tvkt,
    Cst,
    Both,
}

impl ModuleArm {
    pub const ALL: [ModuleArm; 4] = [ModuleArm::None, ModuleArm::Tvkt, ModuleArm::Cst, ModuleArm::Both];

    pub fn label(self) -> &'static str {
        match self {
            ModuleArm::None => "none",
            ModuleArm::Tvkt => "tvkt",
            ModuleArm::Cst => "cst",
            ModuleArm::Both => "both",
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        cfg.include_tvkt = matches!(self, ModuleArm::Tvkt | ModuleArm::Both);
        cfg.include_cst = matches!(self, ModuleArm::Cst | ModuleArm::Both);
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum AblationKind {
    Resolutions,
    Modules,
    Scaling,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AblationSpec {
    pub base_resolutions: Vec<usize>,
    /// Repeats per arm of the module and scaling sweeps.
    pub repeats: usize,
    /// Repeats per arm of the resolution sweep.
    pub sweep_repeats: usize,
    pub sizes: Vec<usize>,
    pub scaling_arms: Vec<ModuleArm>,
    pub seed: u64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            base_resolutions: vec![1, 2, 4, 8, 16],
            repeats: 5,
            sweep_repeats: 1,
            sizes: vec![32, 64, 96, 128],
            scaling_arms: vec![ModuleArm::None, ModuleArm::Tvkt, ModuleArm::Both],
            seed: 0,
        }
    }
}

/// Every nonempty subset of `base`, ordered by bitmask.
pub fn resolution_subsets(base: &[usize]) -> Vec<Vec<usize>> {
    (1u32..1 << base.len())
        .map(|mask| (0..base.len()).filter(|&i| mask >> i & 1 == 1).map(|i| base[i]).collect())
        .collect()
}

/// Latent-size arm: `d_ff = 2·d_m`, `d_cross = d_m/4`, `heads = d_m/8`,
/// two blocks.
pub fn scaled(base: &ModelConfig, d_model: usize, arm: ModuleArm) -> ModelConfig {
    let mut cfg = ModelConfig {
        d_model,
        d_ff: 2 * d_model,
        d_cross: d_model / 4,
        heads: (d_model / 8).max(1),
        blocks: 2,
        ..base.clone()
    };
    arm.apply(&mut cfg);
    cfg
}

/// One configuration of a sweep, shared by its repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub id: String,
    pub config: ModelConfig,
    pub repeats: usize,
}

/// One training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub arm: usize,
    pub repeat: usize,
    pub seed: u64,
}

pub fn arms(kind: AblationKind, spec: &AblationSpec, base: &ModelConfig) -> Vec<Arm> {
    match kind {
        AblationKind::Resolutions => resolution_subsets(&spec.base_resolutions)
            .into_iter()
            .map(|k| {
                let id = format!("K={}", k.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
                Arm {
                    id,
                    config: ModelConfig {
                        resolutions: k,
                        ..base.clone()
                    },
                    repeats: spec.sweep_repeats,
                }
            })
            .collect(),
        AblationKind::Modules => ModuleArm::ALL
            .iter()
            .map(|&a| {
                let mut config = base.clone();
                a.apply(&mut config);
                Arm {
                    id: a.label().into(),
                    config,
                    repeats: spec.repeats,
                }
            })
            .collect(),
        AblationKind::Scaling => spec
            .sizes
            .iter()
            .flat_map(|&d| {
                spec.scaling_arms.iter().map(move |&a| Arm {
                    id: format!("d_m={d}/{}", a.label()),
                    config: scaled(base, d, a),
                    repeats: spec.repeats,
                })
            })
            .collect(),
    }
}

/// Every run of `arms`, seeded from `(arm, repeat)`.
pub fn runs(arms: &[Arm], seed: u64) -> Vec<Run> {
    arms.iter()
        .enumerate()
        .flat_map(|(a, arm)| {
            (0..arm.repeats).map(move |r| Run {
                arm: a,
                repeat: r,
                seed: derive_seed(derive_seed(seed, a as u64), r as u64),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Score {
    /// Pooled test RMSE in original units.
    pub rmse: f64,
    pub rmse_series_mean: f64,
    pub mse: f64,
    pub mae: f64,
    pub epochs: usize,
}

/// Trains and scores one run on `data`.
pub fn run_one<T: Real>(arm: &Arm, run: &Run, data: &Prepared, train_spec: &TrainSpec) -> Result<Score> {
    let cfg = ModelConfig {
        seed: run.seed,
        ..arm.config.clone()
    };
    let spec = TrainSpec {
        seed: run.seed,
        ..train_spec.clone()
    };
    let mut model = build_model::<T>(&cfg, &data.schema)?;
    let out = train(&mut model, &data.train, &data.val, &spec, &mut NoHooks)?;
    let m = evaluate(&model, &data.test, &data.descaler(), spec.batch_size)?;
    Ok(Score {
        rmse: m.rmse,
        rmse_series_mean: m.rmse_series_mean,
        mse: m.mse,
        mae: m.mae,
        epochs: out.history.epochs.len(),
    })
}

#[derive(Copy, Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            libm::sqrt(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
        };
        Some(Stat {
            mean,
            std,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArmSummary {
    pub id: String,
    pub runs: usize,
    pub rmse: Option<Stat>,
    pub rmse_series_mean: Option<Stat>,
    /// Scores of the successful repeats, in repeat order.
    pub scores: Vec<Score>,
    /// `(repeat, error)` of failed repeats.
    pub failures: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub arms: Vec<ArmSummary>,
}

/// Groups per-run results by arm; a failed run is kept as a failure.
pub fn summarize(kind: AblationKind, arms: &[Arm], runs: &[Run], results: Vec<Result<Score>>) -> AblationReport {
    let mut out: Vec<ArmSummary> = arms
        .iter()
        .map(|a| ArmSummary {
            id: a.id.clone(),
            runs: a.repeats,
            rmse: None,
            rmse_series_mean: None,
            scores: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for (run, res) in runs.iter().zip(results) {
        let s = &mut out[run.arm];
        match res {
            Ok(score) => s.scores.push(score),
            Err(e) => s.failures.push((run.repeat, e.to_string())),
        }
    }
    for s in &mut out {
        let r: Vec<f64> = s.scores.iter().map(|x| x.rmse).collect();
        let p: Vec<f64> = s.scores.iter().map(|x| x.rmse_series_mean).collect();
        s.rmse = Stat::of(&r);
        s.rmse_series_mean = Stat::of(&p);
    }
    AblationReport { kind, arms: out }
}

/// Runs a whole sweep sequentially.
pub fn run_ablation<T: Real>(
    kind: AblationKind,
    spec: &AblationSpec,
    base: &ModelConfig,
    data: &Prepared,
    train_spec: &TrainSpec,
) -> AblationReport {
    let arms = arms(kind, spec, base);
    let runs = runs(&arms, spec.seed);
    let results = runs.iter().map(|r| run_one::<T>(&arms[r.arm], r, data, train_spec)).collect();
    summarize(kind, &arms, &runs, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn thirty_one_resolution_sets() {
        let s = resolution_subsets(&[1, 2, 4, 8, 16]);
        assert_eq!(s.len(), 31);
        let mut sorted = s.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 31);
        assert!(s.iter().all(|k| !k.is_empty()));
    }

    #[test]
    fn module_arms_toggle_flags() {
        let a = arms(AblationKind::Modules, &AblationSpec::default(), &ModelConfig::default());
        let flags: Vec<_> = a.iter().map(|a| (a.config.include_tvkt, a.config.include_cst)).collect();
        assert_eq!(flags, [(false, false), (true, false), (false, true), (true, true)]);
        assert!(a.iter().all(|a| a.repeats == 5));
    }

    #[test]
    fn scaling_grid_is_valid() {
        let a = arms(AblationKind::Scaling, &AblationSpec::default(), &ModelConfig::default());
        assert_eq!(a.len(), 12);
        for arm in &a {
            arm.config.validate().unwrap();
            let c = &arm.config;
            assert_eq!((c.d_ff, c.d_cross * 4, c.heads * 8, c.blocks), (2 * c.d_model, c.d_model, c.d_model, 2));
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = arms(AblationKind::Modules, &AblationSpec::default(), &ModelConfig::default());
        let r = runs(&a, 0);
        assert_eq!(r.len(), 20);
        let mut seeds: Vec<_> = r.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, runs(&a, 0).iter().map(|r| r.seed).collect::<Vec<_>>());
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 20);
    }

    #[test]
    fn summary_statistics_and_failures() {
        let a = arms(AblationKind::Modules, &AblationSpec { repeats: 3, ..AblationSpec::default() }, &ModelConfig::default());
        let r = runs(&a, 0);
        let results = r
            .iter()
            .map(|run| {
                if run.arm == 2 && run.repeat == 1 {
                    Err(Error::Statistics { samples: 1 })
                } else {
                    Ok(Score {
                        rmse: (run.arm * 10 + run.repeat) as f64,
                        rmse_series_mean: 1.0,
                        mse: 0.0,
                        mae: 0.0,
                        epochs: 1,
                    })
                }
            })
            .collect();
        let rep = summarize(AblationKind::Modules, &a, &r, results);
        let s = rep.arms[1].rmse.unwrap();
        assert_eq!((s.mean, s.std, s.min), (11.0, 1.0, 10.0));
        assert_eq!(rep.arms[2].failures.len(), 1);
        assert_eq!(rep.arms[2].scores.len(), 2);
        assert!(Stat::of(&[]).is_none());
        assert_eq!(Stat::of(&[2.0]).unwrap().std, 0.0);
    }
}
