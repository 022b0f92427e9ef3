//! Tables and summaries written by the commands.

use std::path::Path;

use mrt_core::ablation::{AblationKind, AblationReport, Arm, Run, Score, Stat};
use mrt_core::data::SplitReport;
use mrt_core::train::{History, Metrics, StopReason};
use serde::Serialize;

use crate::error::{write_toml, IoExt, Result};

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).at(path)?;
    w.write_record(header).at(path)?;
    for r in rows {
        w.write_record(&r).at(path)?;
    }
    w.flush().at(path)
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct HistorySummary<'a> {
    best_epoch: Option<usize>,
    best_val: Option<f64>,
    epochs: usize,
    steps: usize,
    stop: &'a StopReason,
}

/// `<stem>.csv` (per-epoch losses) and `<stem>.toml` (summary). Both are
/// functions of config and seed only.
pub fn write_history(dir: &Path, stem: &str, h: &History) -> Result<()> {
    write_csv(
        &dir.join(format!("{stem}.csv")),
        &["epoch", "train_loss", "val_loss", "steps"],
        h.epochs
            .iter()
            .map(|e| vec![e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string(), e.steps.to_string()]),
    )?;
    write_csv(
        &dir.join(format!("{stem}-steps.csv")),
        &["step", "loss"],
        h.step_losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]),
    )?;
    write_toml(
        &dir.join(format!("{stem}.toml")),
        &HistorySummary {
            best_epoch: h.best_epoch,
            best_val: h.best_val,
            epochs: h.epochs.len(),
            steps: h.step_losses.len(),
            stop: &h.stop,
        },
    )
}

/// Wall-clock seconds at the end of each epoch.
pub fn write_timing(path: &Path, wall: &[f64]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "wall_seconds"],
        wall.iter().enumerate().map(|(i, s)| vec![(i + 1).to_string(), format!("{s:.3}")]),
    )
}

#[derive(Serialize)]
struct SplitEntry {
    windows: usize,
    series_or_keys: usize,
    first_key: Option<i64>,
    last_key: Option<i64>,
}

#[derive(Serialize)]
struct SplitFile {
    skipped_series: usize,
    train: SplitEntry,
    val: SplitEntry,
    test: SplitEntry,
}

/// Per-split window counts and split-key ranges.
pub fn write_split_report(path: &Path, report: &SplitReport<i64>, windows: [usize; 3], skipped: usize) -> Result<()> {
    let entry = |s: &mrt_core::data::SplitStats<i64>, w: usize| SplitEntry {
        windows: w,
        series_or_keys: s.items,
        first_key: s.first,
        last_key: s.last,
    };
    write_toml(
        path,
        &SplitFile {
            skipped_series: skipped,
            train: entry(&report.train, windows[0]),
            val: entry(&report.val, windows[1]),
            test: entry(&report.test, windows[2]),
        },
    )
}

/// One row per (model, split), with per-channel columns.
pub fn write_metrics(path: &Path, channels: &[&str], rows: &[(&str, &str, &Metrics)]) -> Result<()> {
    let mut header = vec!["model", "split", "count", "mse", "mae", "rmse", "rmse_series_mean"];
    let per: Vec<String> = channels
        .iter()
        .flat_map(|c| [format!("mse@{c}"), format!("mae@{c}")])
        .collect();
    header.extend(per.iter().map(String::as_str));
    write_csv(
        path,
        &header,
        rows.iter().map(|(model, split, m)| {
            let mut r = vec![
                model.to_string(),
                split.to_string(),
                m.count.to_string(),
                m.mse.to_string(),
                m.mae.to_string(),
                m.rmse.to_string(),
                m.rmse_series_mean.to_string(),
            ];
            for c in &m.per_channel {
                r.push(c.mse.to_string());
                r.push(c.mae.to_string());
            }
            r
        }),
    )
}

pub fn kind_label(kind: AblationKind) -> &'static str {
    match kind {
        AblationKind::Resolutions => "resolutions",
        AblationKind::Modules => "modules",
        AblationKind::Scaling => "scaling",
    }
}

fn stat_cells(s: Option<Stat>) -> [String; 3] {
    [opt(s.map(|s| s.mean)), opt(s.map(|s| s.std)), opt(s.map(|s| s.min))]
}

/// `<stem>.csv`: one row per arm with mean/std/min test RMSE;
/// `<stem>-runs.csv`: one row per run.
pub fn write_ablation(dir: &Path, stem: &str, report: &AblationReport, arms: &[Arm], runs: &[Run], results: &[std::result::Result<Score, String>]) -> Result<()> {
    write_csv(
        &dir.join(format!("{stem}.csv")),
        &[
            "arm",
            "d_model",
            "tvkt",
            "cst",
            "resolutions",
            "runs",
            "ok",
            "rmse_mean",
            "rmse_std",
            "rmse_min",
            "series_rmse_mean",
            "series_rmse_std",
            "series_rmse_min",
        ],
        report.arms.iter().zip(arms).map(|(s, a)| {
            let c = &a.config;
            let mut r = vec![
                s.id.clone(),
                c.d_model.to_string(),
                c.include_tvkt.to_string(),
                c.include_cst.to_string(),
                c.resolutions.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
                s.runs.to_string(),
                s.scores.len().to_string(),
            ];
            r.extend(stat_cells(s.rmse));
            r.extend(stat_cells(s.rmse_series_mean));
            r
        }),
    )?;
    write_csv(
        &dir.join(format!("{stem}-runs.csv")),
        &["arm", "repeat", "seed", "rmse", "rmse_series_mean", "mse", "mae", "epochs", "error"],
        runs.iter().zip(results).map(|(run, res)| {
            let mut r = vec![arms[run.arm].id.clone(), run.repeat.to_string(), run.seed.to_string()];
            match res {
                Ok(s) => r.extend([s.rmse.to_string(), s.rmse_series_mean.to_string(), s.mse.to_string(), s.mae.to_string(), s.epochs.to_string(), String::new()]),
                Err(e) => {
                    r.extend(std::iter::repeat_n(String::new(), 5));
                    r.push(e.clone());
                }
            }
            r
        }),
    )
}

/// Resolution sweep marginals: for every base resolution, mean and best
/// arm RMSE over the sets that contain it (and the mean over those that do
/// not); for every set size, mean and best arm RMSE.
pub fn write_resolution_summary(path: &Path, base: &[usize], report: &AblationReport, arms: &[Arm]) -> Result<()> {
    let scored: Vec<(&Arm, f64)> = report
        .arms
        .iter()
        .zip(arms)
        .filter_map(|(s, a)| s.rmse.map(|st| (a, st.mean)))
        .collect();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let mut rows = Vec::new();
    for &k in base {
        let with: Vec<f64> = scored.iter().filter(|(a, _)| a.config.resolutions.contains(&k)).map(|p| p.1).collect();
        let without: Vec<f64> = scored.iter().filter(|(a, _)| !a.config.resolutions.contains(&k)).map(|p| p.1).collect();
        let best = with.iter().copied().reduce(f64::min);
        rows.push(vec![
            "resolution".into(),
            k.to_string(),
            with.len().to_string(),
            opt(mean(&with)),
            opt(best),
            without.len().to_string(),
            opt(mean(&without)),
        ]);
    }
    for size in 1..=base.len() {
        let xs: Vec<f64> = scored.iter().filter(|(a, _)| a.config.resolutions.len() == size).map(|p| p.1).collect();
        let best = xs.iter().copied().reduce(f64::min);
        rows.push(vec!["set_size".into(), size.to_string(), xs.len().to_string(), opt(mean(&xs)), opt(best), String::new(), String::new()]);
    }
    write_csv(path, &["by", "value", "arms", "rmse_mean", "rmse_best", "arms_without", "rmse_mean_without"], rows)
}
