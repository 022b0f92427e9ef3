//! The `mrt` command line.
//!
//! Settings come from defaults, then the `--config` file, then flags.
//! Exit status is 0 on success, 1 on a runtime failure and 2 on an
//! invalid configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mrt_core::ablation::{arms, run_one, runs, summarize, AblationKind, Arm, Run, Score};
use mrt_core::data::{window_all, SeriesBatch, WindowRow};
use mrt_core::gradcheck::GradCheckOptions;
use mrt_core::model::{build_model, module_grad_checks, ModelConfig};
use mrt_core::pipeline::{prepare, PipelineSpec, Prepared};
use mrt_core::synth::{generate_markdown, markdown_schema};
use mrt_core::train::{evaluate, persistence_metrics, predict, train, EpochRecord, Hooks, StopReason};
use mrt_core::Real;

use crate::checkpoint;
use crate::config::{Needs, Precision, RunConfig, SplitName};
use crate::dataset::{dataset_hash, format_timestamp, read_dataset, write_dataset};
use crate::error::{Error, IoExt, Result};
use crate::report;

#[derive(Parser, Debug)]
#[command(name = "mrt", version, about = "Multiple-resolution tokenization forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML)
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling, generation and sweeps
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent ablation runs
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Floating-point width of the model
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Dataset directory
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes a checkpoint, history and split report
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint and the persistence baseline on one split
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory [default: <out>/checkpoint]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// train, val or test
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitName>,
    },
    /// Write forecasts of a checkpoint for every window of one split
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitName>,
    },
    /// Finite-difference gradient check of every module (64-bit)
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Comma-separated module names
        #[arg(long, value_delimiter = ',')]
        modules: Option<Vec<String>>,
    },
    /// Run an ablation sweep: resolutions, modules or scaling
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_kind)]
        kind: Option<AblationKind>,
    },
    /// Generate the synthetic markdown dataset
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of series
        #[arg(long)]
        series: Option<usize>,
    },
    /// Print the effective configuration
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    Precision::try_from(s.parse::<u32>().map_err(|e| e.to_string())?)
}

fn parse_split(s: &str) -> std::result::Result<SplitName, String> {
    match s {
        "train" => Ok(SplitName::Train),
        "val" => Ok(SplitName::Val),
        "test" => Ok(SplitName::Test),
        _ => Err(format!("expected train, val or test, got `{s}`")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<AblationKind, String> {
    match s {
        "resolutions" => Ok(AblationKind::Resolutions),
        "modules" => Ok(AblationKind::Modules),
        "scaling" => Ok(AblationKind::Scaling),
        _ => Err(format!("expected resolutions, modules or scaling, got `{s}`")),
    }
}

/// Defaults, then the config file, then flags.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    if let Some(o) = &common.out {
        cfg.paths.out = o.clone();
    }
    if let Some(j) = common.jobs {
        cfg.run.jobs = j;
    }
    if let Some(p) = common.precision {
        cfg.run.precision = p;
    }
    if let Some(d) = &common.dataset {
        cfg.paths.dataset = Some(d.clone());
    }
    Ok(cfg)
}

pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            cfg.validate(Needs::Dataset)?;
            match cfg.run.precision {
                Precision::F32 => cmd_train::<f32>(&cfg),
                Precision::F64 => cmd_train::<f64>(&cfg),
            }
        }
        Command::Evaluate { common, checkpoint, split } => {
            let cfg = scored_config(&common, checkpoint, split)?;
            match cfg.run.precision {
                Precision::F32 => cmd_evaluate::<f32>(&cfg),
                Precision::F64 => cmd_evaluate::<f64>(&cfg),
            }
        }
        Command::Predict { common, checkpoint, split } => {
            let cfg = scored_config(&common, checkpoint, split)?;
            match cfg.run.precision {
                Precision::F32 => cmd_predict::<f32>(&cfg),
                Precision::F64 => cmd_predict::<f64>(&cfg),
            }
        }
        Command::Gradcheck { common, modules } => {
            let mut cfg = load_config(&common)?;
            if let Some(m) = modules {
                cfg.gradcheck.modules = m.into_iter().filter(|s| !s.is_empty()).collect();
            }
            cfg.validate(Needs::Nothing)?;
            cmd_gradcheck(&cfg)
        }
        Command::Ablate { common, kind } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = kind {
                cfg.ablation.kind = k;
            }
            cfg.validate(Needs::Dataset)?;
            match cfg.run.precision {
                Precision::F32 => cmd_ablate::<f32>(&cfg),
                Precision::F64 => cmd_ablate::<f64>(&cfg),
            }
        }
        Command::Synth { common, series } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = series {
                cfg.synth.series = n;
            }
            cfg.validate(Needs::Nothing)?;
            cmd_synth(&cfg)
        }
        Command::ShowConfig { common } => {
            let cfg = load_config(&common)?;
            cfg.validate(Needs::Nothing)?;
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn scored_config(common: &Common, checkpoint: Option<PathBuf>, split: Option<SplitName>) -> Result<RunConfig> {
    let mut cfg = load_config(common)?;
    if let Some(c) = checkpoint {
        cfg.paths.checkpoint = Some(c);
    }
    if let Some(s) = split {
        cfg.evaluate.split = s;
    }
    cfg.validate(Needs::DatasetAndCheckpoint)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.paths.out.as_path();
    fs::create_dir_all(out).at(out)?;
    Ok(out)
}

fn load_data(cfg: &RunConfig, spec: &PipelineSpec) -> Result<Prepared> {
    let dir = cfg.paths.dataset.as_ref().expect("validated");
    let (schema, series) = read_dataset(dir)?;
    let data = prepare(series, &schema, spec)?;
    eprintln!(
        "data: {} train / {} val / {} test windows, {} series skipped",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.skipped
    );
    Ok(data)
}

struct Progress {
    start: Instant,
}

impl Hooks for Progress {
    fn now(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn epoch(&mut self, r: &EpochRecord) {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  {} steps  {:.1}s",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.steps,
            self.start.elapsed().as_secs_f64()
        );
    }
}

fn cmd_train<T: Real>(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let data = load_data(cfg, &cfg.data)?;
    report::write_split_report(&out.join("split.toml"), &data.report, [data.train.len(), data.val.len(), data.test.len()], data.skipped)?;
    cfg.write(&out.join("config.toml"))?;
    let mut model = build_model::<T>(&cfg.model, &data.schema)?;
    eprintln!("model: {} parameters", model.param_count());
    let outcome = train(&mut model, &data.train, &data.val, &cfg.train, &mut Progress { start: Instant::now() })?;
    let seed = cfg.train.seed;
    report::write_history(out, &format!("history-s{seed}"), &outcome.history)?;
    report::write_timing(&out.join(format!("timing-s{seed}.csv")), &outcome.wall_seconds)?;
    checkpoint::save(&cfg.checkpoint(), &model, &cfg.data)?;
    if let StopReason::NonFinite { epoch, step } = outcome.history.stop {
        return Err(Error::Core(mrt_core::Error::NonFinite { epoch, step }));
    }
    if !data.test.is_empty() {
        let descale = data.descaler();
        let m = evaluate(&model, &data.test, &descale, cfg.evaluate.batch_size)?;
        let p = persistence_metrics(&data.test, &descale)?;
        report::write_metrics(&out.join("train-metrics.csv"), &data.schema.channel_names(), &[("mrt", "test", &m), ("persistence", "test", &p)])?;
        eprintln!("test MSE {:.5} (persistence {:.5})", m.mse, p.mse);
    }
    Ok(())
}

fn split_rows(data: &Prepared, split: SplitName) -> &[WindowRow] {
    match split {
        SplitName::Train => &data.train,
        SplitName::Val => &data.val,
        SplitName::Test => &data.test,
    }
}

/// The checkpoint's model and the dataset prepared exactly as for training.
fn checkpoint_data<T: Real>(cfg: &RunConfig) -> Result<(mrt_core::model::Model<T>, Prepared)> {
    let (model, spec) = checkpoint::load::<T>(&cfg.checkpoint())?;
    let data = load_data(cfg, &spec)?;
    if data.schema != model.schema {
        let path = cfg.paths.dataset.clone().expect("validated");
        return Err(Error::format(path, "dataset schema differs from the checkpoint's schema"));
    }
    if split_rows(&data, cfg.evaluate.split).is_empty() {
        return Err(Error::Failed(format!("the {} split has no windows", cfg.evaluate.split.label())));
    }
    Ok((model, data))
}

fn cmd_evaluate<T: Real>(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let (model, data) = checkpoint_data::<T>(cfg)?;
    let split = cfg.evaluate.split;
    let rows = split_rows(&data, split);
    let descale = data.descaler();
    let m = evaluate(&model, rows, &descale, cfg.evaluate.batch_size)?;
    let p = persistence_metrics(rows, &descale)?;
    report::write_metrics(
        &out.join(format!("metrics-{}.csv", split.label())),
        &data.schema.channel_names(),
        &[("mrt", split.label(), &m), ("persistence", split.label(), &p)],
    )?;
    println!("model        mse {:.6}  mae {:.6}  rmse {:.6}", m.mse, m.mae, m.rmse);
    println!("persistence  mse {:.6}  mae {:.6}  rmse {:.6}", p.mse, p.mae, p.rmse);
    Ok(())
}

fn cmd_predict<T: Real>(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let (model, data) = checkpoint_data::<T>(cfg)?;
    let split = cfg.evaluate.split;
    let rows = split_rows(&data, split);
    let preds = predict(&model, rows, cfg.evaluate.batch_size)?;
    let descale = data.descaler();
    let channels = data.schema.channel_names();
    let path = out.join(format!("predictions-{}.csv", split.label()));
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    w.write_record(["key", "window_start", "channel", "step", "forecast", "actual"]).at(&path)?;
    for (r, p) in rows.iter().zip(&preds) {
        let key = data.keys[r.series].join("/");
        let start = format_timestamp(r.start);
        for (c, ch) in channels.iter().enumerate() {
            let a = descale(r, c);
            for j in 0..r.horizon {
                let i = c * r.horizon + j;
                let rec = [key.clone(), start.clone(), ch.to_string(), (j + 1).to_string(), a.invert(p[i]).to_string(), a.invert(r.target[i]).to_string()];
                w.write_record(&rec).at(&path)?;
            }
        }
    }
    w.flush().at(&path)?;
    eprintln!("wrote {} forecasts to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let g = &cfg.gradcheck;
    let path = out.join("gradcheck.csv");
    if g.modules.is_empty() {
        eprintln!("warning: no modules selected; the gradient check passes vacuously");
        report_gradcheck(&path, &[], g.tol)?;
        return Ok(());
    }
    let model_cfg = g.model.clone().unwrap_or_else(ModelConfig::toy);
    let schema = markdown_schema(&cfg.synth.markdown);
    let model = build_model::<f64>(&model_cfg, &schema)?;
    let n = model.param_count();
    if n > g.max_params {
        return Err(Error::config(
            "gradcheck.model",
            format!(
                "{n} parameters exceed the limit of {}; finite differences at this size are too slow. \
                 Remove [gradcheck.model] to use the toy config or shrink d_model, d_ff and blocks",
                g.max_params
            ),
        ));
    }
    let generated = generate_markdown(4 * g.batch, cfg.synth.seed, &cfg.synth.markdown)?;
    let rows = window_all(&generated.series, &schema, model_cfg.lookback, model_cfg.horizon, model_cfg.horizon)?.rows;
    if rows.len() < g.batch {
        return Err(Error::config("gradcheck.batch", format!("only {} windows available", rows.len())));
    }
    let refs: Vec<&WindowRow> = rows.iter().take(g.batch).collect();
    let batch = SeriesBatch::<f64>::from_rows(&refs)?;
    let opts = GradCheckOptions {
        tol: g.tol,
        max_coords: g.max_coords,
        corrupt: g.corrupt,
        seed: cfg.model.seed,
        ..GradCheckOptions::default()
    };
    let reports: Vec<(String, mrt_core::gradcheck::GradReport)> = module_grad_checks(&model, &batch, &opts)?
        .into_iter()
        .filter(|(name, _)| g.modules.contains(name))
        .collect();
    let rows: Vec<(String, usize, f64, bool)> = reports
        .iter()
        .map(|(name, r)| (name.clone(), r.tensors.len(), r.max_rel_err(), r.passed()))
        .collect();
    report_gradcheck(&path, &rows, g.tol)?;
    for (name, tensors, err, ok) in &rows {
        println!("{:<13} {:>3} tensors  max rel err {err:.3e}  {}", name, tensors, if *ok { "ok" } else { "FAIL" });
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.3).map(|r| r.0.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn report_gradcheck(path: &Path, rows: &[(String, usize, f64, bool)], tol: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(["module", "tensors", "max_rel_err", "tol", "passed"]).at(path)?;
    for (name, tensors, err, ok) in rows {
        w.write_record([name.clone(), tensors.to_string(), err.to_string(), tol.to_string(), ok.to_string()]).at(path)?;
    }
    w.flush().at(path)
}

/// Runs `runs` on up to `jobs` threads; results come back in run order.
pub fn run_parallel<T: Real>(arms: &[Arm], runs: &[Run], data: &Prepared, cfg: &RunConfig) -> Vec<mrt_core::Result<Score>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<mrt_core::Result<Score>>>> = runs.iter().map(|_| Mutex::new(None)).collect();
    let jobs = cfg.run.jobs.clamp(1, runs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(run) = runs.get(i) else { break };
                let arm = &arms[run.arm];
                let t = Instant::now();
                let res = run_one::<T>(arm, run, data, &cfg.train);
                match &res {
                    Ok(s) => eprintln!("[{}/{}] {} #{}: rmse {:.5} ({:.1}s)", i + 1, runs.len(), arm.id, run.repeat, s.rmse, t.elapsed().as_secs_f64()),
                    Err(e) => eprintln!("[{}/{}] {} #{}: failed: {e}", i + 1, runs.len(), arm.id, run.repeat),
                }
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every run finished"))
        .collect()
}

fn cmd_ablate<T: Real>(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let data = load_data(cfg, &cfg.data)?;
    let kind = cfg.ablation.kind;
    let sweep = &cfg.ablation.sweep;
    let arms = arms(kind, sweep, &cfg.model);
    let plan = runs(&arms, sweep.seed);
    eprintln!("{} arms, {} runs, {} jobs", arms.len(), plan.len(), cfg.run.jobs);
    let results = run_parallel::<T>(&arms, &plan, &data, cfg);
    let flat: Vec<std::result::Result<Score, String>> = results.iter().map(|r| r.clone().map_err(|e| e.to_string())).collect();
    let report = summarize(kind, &arms, &plan, results);
    let stem = format!("ablation-{}-s{}", report::kind_label(kind), sweep.seed);
    report::write_ablation(out, &stem, &report, &arms, &plan, &flat)?;
    if kind == AblationKind::Resolutions {
        report::write_resolution_summary(&out.join(format!("{stem}-summary.csv")), &sweep.base_resolutions, &report, &arms)?;
    }
    println!("{:<24} {:>4} {:>12} {:>12} {:>12}", "arm", "ok", "rmse mean", "rmse std", "rmse min");
    for a in &report.arms {
        match a.rmse {
            Some(s) => println!("{:<24} {:>4} {:>12.6} {:>12.6} {:>12.6}", a.id, a.scores.len(), s.mean, s.std, s.min),
            None => println!("{:<24} {:>4} {:>12} {:>12} {:>12}", a.id, 0, "-", "-", "-"),
        }
    }
    let failed: usize = report.arms.iter().map(|a| a.failures.len()).sum();
    if failed > 0 {
        return Err(Error::Failed(format!("{failed} of {} runs failed", plan.len())));
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let g = generate_markdown(cfg.synth.series, cfg.synth.seed, &cfg.synth.markdown)?;
    write_dataset(out, &g.schema, &g.series)?;
    let hash = dataset_hash(out)?;
    let path = out.join("dataset.sha256");
    fs::write(&path, format!("{hash}\n")).at(&path)?;
    println!("{hash}  {} series, seed {}", g.series.len(), cfg.synth.seed);
    Ok(())
}
