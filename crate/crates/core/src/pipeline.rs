//! Raw series to scaled, windowed, chronologically split training rows.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{fit_group_scalers, group_key, keep_longest, make_splits, window_all, Affine, GroupKey, ScalerMap, SplitReport, SplitSpec, WindowRow};
use crate::schema::{RawSeries, Schema};
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitOn {
    /// Whole series go to one split by their split key.
    #[default]
    SeriesKey,
    /// Windows go to a split by their start time.
    WindowStart,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineSpec {
    pub lookback: usize,
    pub horizon: usize,
    /// Distance between window ends; defaults to the horizon.
    pub stride: Option<usize>,
    pub split: SplitSpec,
    /// Categorical static variables whose values select a scaler group.
    pub group_vars: Vec<String>,
    /// Keep only this fraction of the longest series.
    pub keep_fraction: Option<f64>,
    pub split_on: SplitOn,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            lookback: 28,
            horizon: 24,
            stride: None,
            split: SplitSpec::default(),
            group_vars: Vec::new(),
            keep_fraction: None,
            split_on: SplitOn::SeriesKey,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub schema: Schema,
    pub scalers: ScalerMap,
    /// Scaler group of every kept series, indexed like `WindowRow::series`.
    pub groups: Vec<GroupKey>,
    /// Key of every kept series, indexed like `WindowRow::series`.
    pub keys: Vec<Vec<String>>,
    pub train: Vec<WindowRow>,
    pub val: Vec<WindowRow>,
    pub test: Vec<WindowRow>,
    /// Series too short for a single window.
    pub skipped: usize,
    pub report: SplitReport<i64>,
}

impl Prepared {
    /// Scaler that maps channel `c` of `row` back to original units.
    pub fn descaler(&self) -> impl Fn(&WindowRow, usize) -> Affine + '_ {
        move |row, c| self.scalers.observed(&self.groups[row.series], &self.schema, c)
    }
}

pub fn prepare(series: Vec<RawSeries>, schema: &Schema, spec: &PipelineSpec) -> Result<Prepared> {
    schema.validate()?;
    spec.split.validate()?;
    let (l, f) = (spec.lookback, spec.horizon);
    let stride = spec.stride.unwrap_or(f);
    for s in &series {
        s.validate(schema)?;
    }
    let series = match spec.keep_fraction {
        Some(fr) if !(fr > 0.0 && fr <= 1.0) => return Err(Error::config("keep_fraction", "must lie in (0, 1]")),
        Some(fr) => keep_longest(series, fr),
        None => series,
    };

    // which split every series (or window) belongs to, decided on raw data
    let (assign, report, fit_on): (Assign, SplitReport<i64>, Vec<RawSeries>) = match spec.split_on {
        SplitOn::SeriesKey => {
            let idx: Vec<usize> = (0..series.len()).collect();
            let s = make_splits(idx, |&i| series[i].split_key, &spec.split)?;
            let mut which = alloc::vec![0u8; series.len()];
            s.val.iter().for_each(|&i| which[i] = 1);
            s.test.iter().for_each(|&i| which[i] = 2);
            let fit = s.train.iter().map(|&i| series[i].clone()).collect();
            (Assign::Series(which), s.report, fit)
        }
        SplitOn::WindowStart => {
            let raw = window_all(&series, schema, l, f, stride)?;
            let starts: Vec<i64> = raw.rows.iter().map(|r| r.start.0).collect();
            let s = make_splits(starts, |&t| t, &spec.split)?;
            let cutoff = s.report.val.first.expect("val split is nonempty");
            let test_cut = s.report.test.first.expect("test split is nonempty");
            let fit = series
                .iter()
                .map(|r| truncate_before(r, cutoff))
                .filter(|r| !r.is_empty())
                .collect();
            (Assign::Start { val: cutoff, test: test_cut }, s.report, fit)
        }
    };

    let scalers = fit_group_scalers(&fit_on, schema, &spec.group_vars)?;
    let groups = series
        .iter()
        .map(|s| group_key(s, schema, &spec.group_vars))
        .collect::<Result<Vec<_>>>()?;
    let scaled = series
        .iter()
        .map(|s| scalers.apply(s, schema))
        .collect::<Result<Vec<_>>>()?;
    let windowed = window_all(&scaled, schema, l, f, stride)?;
    let mut out = Prepared {
        schema: schema.clone(),
        scalers,
        groups,
        keys: series.iter().map(|s| s.key.clone()).collect(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        skipped: windowed.skipped,
        report,
    };
    for row in windowed.rows {
        let split = match &assign {
            Assign::Series(which) => which[row.series],
            Assign::Start { val, test } => {
                if row.start.0 >= *test {
                    2
                } else if row.start.0 >= *val {
                    1
                } else {
                    0
                }
            }
        };
        match split {
            0 => out.train.push(row),
            1 => out.val.push(row),
            _ => out.test.push(row),
        }
    }
    if out.train.is_empty() || out.val.is_empty() || out.test.is_empty() {
        return Err(Error::config(
            "split",
            alloc::format!(
                "a split has no windows (train {}, val {}, test {})",
                out.train.len(),
                out.val.len(),
                out.test.len()
            ),
        ));
    }
    Ok(out)
}

enum Assign {
    Series(Vec<u8>),
    Start { val: i64, test: i64 },
}

fn truncate_before(s: &RawSeries, cutoff: i64) -> RawSeries {
    let n = s.timestamps.iter().take_while(|t| t.0 < cutoff).count();
    RawSeries {
        key: s.key.clone(),
        split_key: s.split_key,
        timestamps: s.timestamps[..n].to_vec(),
        observed: s.observed.iter().map(|c| c[..n].to_vec()).collect(),
        tvk: s.tvk.iter().map(|v| v.iter().map(|l| l[..n].to_vec()).collect()).collect(),
        statics: s.statics.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_markdown, MarkdownParams};
    use alloc::vec;

    fn spec() -> PipelineSpec {
        PipelineSpec {
            lookback: 16,
            horizon: 8,
            group_vars: vec!["product_group".into(), "store_type".into()],
            ..PipelineSpec::default()
        }
    }

    #[test]
    fn series_split_is_chronological_and_disjoint() {
        let g = generate_markdown(120, 0, &MarkdownParams::default()).unwrap();
        let distinct = g.series.iter().map(|s| s.split_key).collect::<alloc::collections::BTreeSet<_>>().len();
        let p = prepare(g.series, &g.schema, &spec()).unwrap();
        let max_train = p.train.iter().map(|r| r.split_key).max().unwrap();
        let min_val = p.val.iter().map(|r| r.split_key).min().unwrap();
        let max_val = p.val.iter().map(|r| r.split_key).max().unwrap();
        let min_test = p.test.iter().map(|r| r.split_key).min().unwrap();
        assert!(max_train < min_val && max_val < min_test);
        assert_eq!(p.report.train.keys + p.report.val.keys + p.report.test.keys, distinct);
    }

    #[test]
    fn descaler_recovers_raw_targets() {
        let g = generate_markdown(60, 1, &MarkdownParams::default()).unwrap();
        let raw = g.series.clone();
        let p = prepare(g.series, &g.schema, &spec()).unwrap();
        let d = p.descaler();
        for r in p.test.iter().take(10) {
            let s = &raw[r.series];
            let end = s.timestamps.iter().position(|t| *t == r.start).unwrap() + r.lookback - r.pad_len + r.horizon;
            for c in 0..2 {
                for j in 0..r.horizon {
                    let want = s.observed[c][end - r.horizon + j];
                    let got = d(r, c).invert(r.target[c * r.horizon + j]);
                    assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn scalers_ignore_held_out_data() {
        let g = generate_markdown(90, 2, &MarkdownParams::default()).unwrap();
        let a = prepare(g.series.clone(), &g.schema, &spec()).unwrap();
        let test_keys: Vec<_> = a.test.iter().map(|r| r.split_key).collect();
        let mut poisoned = g.series;
        for s in poisoned.iter_mut().filter(|s| test_keys.contains(&s.split_key)) {
            s.observed[0].iter_mut().for_each(|v| *v *= 1000.0);
        }
        let b = prepare(poisoned, &g.schema, &spec()).unwrap();
        assert_eq!(a.scalers, b.scalers);
    }

    #[test]
    fn window_start_split_orders_rows() {
        let g = generate_markdown(80, 3, &MarkdownParams::default()).unwrap();
        let s = PipelineSpec {
            split_on: SplitOn::WindowStart,
            ..spec()
        };
        let p = prepare(g.series, &g.schema, &s).unwrap();
        let last_train = p.train.iter().map(|r| r.start).max().unwrap();
        let first_val = p.val.iter().map(|r| r.start).min().unwrap();
        assert!(last_train < first_val);
    }

    #[test]
    fn unknown_group_variable_is_schema_error() {
        let g = generate_markdown(30, 0, &MarkdownParams::default()).unwrap();
        let s = PipelineSpec {
            group_vars: vec!["nope".into()],
            ..spec()
        };
        assert!(matches!(prepare(g.series, &g.schema, &s), Err(Error::Schema(_))));
    }
}
