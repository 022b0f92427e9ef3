//! Run configuration file.
//!
//! One TOML table per module; keys match the field names of the core
//! config types. Every table and key is optional.
//!
//! ```toml
//! [paths]
//! dataset = "data/markdown"
//! out = "runs/markdown"
//!
//! [run]
//! precision = 32
//! jobs = 4
//!
//! [data]        # PipelineSpec
//! [model]       # ModelConfig
//! [train]       # TrainSpec
//! [synth]       # series, seed, [synth.markdown] = MarkdownParams
//! [evaluate]    # split, batch_size
//! [gradcheck]   # modules, tol, max_coords, batch, corrupt, [gradcheck.model]
//! [ablation]    # kind, [ablation.sweep] = AblationSpec
//! ```

use std::path::{Path, PathBuf};

use mrt_core::ablation::{AblationKind, AblationSpec};
use mrt_core::model::ModelConfig;
use mrt_core::pipeline::PipelineSpec;
use mrt_core::synth::MarkdownParams;
use mrt_core::train::TrainSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoExt, Result};

/// Module names accepted by the gradient check, in report order.
pub const GRADCHECK_MODULES: [&str; 8] = ["mrp", "static", "tvk_global", "tvk_specific", "mixer", "encoder", "head", "end_to_end"];

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;

    fn try_from(bits: u32) -> Result<Self, String> {
        match bits {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            b => Err(format!("precision must be 32 or 64, got {b}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

impl SplitName {
    pub fn label(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: None,
            out: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub precision: Precision,
    /// Concurrent ablation runs.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            precision: Precision::F32,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub series: usize,
    pub seed: u64,
    pub markdown: MarkdownParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            series: 2000,
            seed: 0,
            markdown: MarkdownParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Split scored by `evaluate` and forecast by `predict`.
    pub split: SplitName,
    pub batch_size: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            split: SplitName::Test,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Model to check; the toy config when absent.
    pub model: Option<ModelConfig>,
    pub modules: Vec<String>,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor.
    pub max_coords: usize,
    pub batch: usize,
    /// Perturb analytic gradients by this amount (negative control).
    pub corrupt: Option<f64>,
    /// Parameter limit above which the check is refused.
    pub max_params: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            model: None,
            modules: GRADCHECK_MODULES.iter().map(|s| s.to_string()).collect(),
            tol: 1e-4,
            max_coords: 40,
            batch: 2,
            corrupt: None,
            max_params: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub kind: AblationKind,
    pub sweep: AblationSpec,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            kind: AblationKind::Modules,
            sweep: AblationSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub run: RunSection,
    pub data: PipelineSpec,
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub synth: SynthSection,
    pub evaluate: EvaluateSection,
    pub gradcheck: GradcheckSection,
    pub ablation: AblationSection,
}

/// What a command needs from the configuration.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Needs {
    Nothing,
    Dataset,
    DatasetAndCheckpoint,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { reason, .. } => Error::config(path.display().to_string(), reason),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).at(path)
    }

    /// Seed for initialization, shuffling, generation and sweeps.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self.ablation.sweep.seed = seed;
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.paths.out.join("checkpoint"))
    }

    /// Validates fields and checks that the paths a command reads exist.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        let nested = |section: &str, e: mrt_core::Error| match e {
            mrt_core::Error::Config { field, reason } => Error::config(format!("{section}.{field}"), reason),
            e => Error::config(section, e.to_string()),
        };
        self.model.validate().map_err(|e| nested("model", e))?;
        self.train.validate().map_err(|e| nested("train", e))?;
        self.data.split.validate().map_err(|e| nested("data", e))?;
        self.synth.markdown.validate().map_err(|e| nested("synth.markdown", e))?;
        if let Some(m) = &self.gradcheck.model {
            m.validate().map_err(|e| nested("gradcheck.model", e))?;
        }
        if self.data.lookback != self.model.lookback {
            return Err(Error::config("data.lookback", format!("{} differs from model.lookback = {}", self.data.lookback, self.model.lookback)));
        }
        if self.data.horizon != self.model.horizon {
            return Err(Error::config("data.horizon", format!("{} differs from model.horizon = {}", self.data.horizon, self.model.horizon)));
        }
        if self.run.jobs == 0 {
            return Err(Error::config("run.jobs", "must be at least 1"));
        }
        if self.evaluate.batch_size == 0 {
            return Err(Error::config("evaluate.batch_size", "must be at least 1"));
        }
        if !(self.gradcheck.tol > 0.0) {
            return Err(Error::config("gradcheck.tol", "must be positive"));
        }
        if self.gradcheck.batch < 2 {
            return Err(Error::config("gradcheck.batch", "must be at least 2"));
        }
        if let Some(bad) = self.gradcheck.modules.iter().find(|m| !GRADCHECK_MODULES.contains(&m.as_str())) {
            return Err(Error::config("gradcheck.modules", format!("unknown module `{bad}`; expected one of {GRADCHECK_MODULES:?}")));
        }
        if needs != Needs::Nothing {
            match &self.paths.dataset {
                None => return Err(Error::config("paths.dataset", "required by this command")),
                Some(p) if !p.is_dir() => return Err(Error::config("paths.dataset", format!("{} is not a directory", p.display()))),
                _ => {}
            }
        }
        if needs == Needs::DatasetAndCheckpoint && !self.checkpoint().is_dir() {
            return Err(Error::config("paths.checkpoint", format!("{} is not a directory", self.checkpoint().display())));
        }
        Ok(())
    }
}
