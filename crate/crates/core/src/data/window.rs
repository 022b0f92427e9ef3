use alloc::vec::Vec;

use crate::schema::{lane, RawSeries, Schema, Timestamp, Value};
use crate::{Error, Result};

/// One fixed-size training example cut from a series, flattened
/// channel-major. Pad positions already hold canonical values.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowRow {
    /// Index of the source series in the slice given to [`window_all`].
    pub series: usize,
    pub split_key: i64,
    /// Timestamp of the first real step of the window.
    pub start: Timestamp,
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub pad_len: usize,
    /// `[C, l]`
    pub observed: Vec<f64>,
    /// `[C, l + f, V_tvk]`
    pub tvk: Vec<Value>,
    /// `[C, V_s]`
    pub statics: Vec<Value>,
    /// `[C, f]`
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Windowed {
    pub rows: Vec<WindowRow>,
    /// Series too short to yield a window.
    pub skipped: usize,
}

/// Cuts windows ending at `n, n − stride, n − 2·stride, …`, returned in
/// chronological order. Each window's final `f` steps are the target and
/// the `l` steps before them the past input. Only the tail window may reach
/// before the start of the series; its missing steps are left-padded.
/// A series shorter than `f + 1` yields nothing.
pub fn window_series(raw: &RawSeries, schema: &Schema, l: usize, f: usize, stride: usize) -> Result<Vec<WindowRow>> {
    if l == 0 || f == 0 || stride == 0 {
        return Err(Error::config("window", "lookback, horizon and stride must be positive"));
    }
    let n = raw.len();
    let mut ends = Vec::new();
    let mut e = n;
    while e > f && (e == n || e >= l + f) {
        ends.push(e);
        if e < stride {
            break;
        }
        e -= stride;
    }
    ends.reverse();
    Ok(ends.into_iter().map(|e| cut(raw, schema, l, f, e)).collect())
}

fn cut(raw: &RawSeries, schema: &Schema, l: usize, f: usize, end: usize) -> WindowRow {
    let c = schema.channels();
    let past_end = end - f;
    let past_start = past_end.saturating_sub(l);
    let pad_len = l - (past_end - past_start);
    // window slot s maps to series position origin + s when non-negative
    let origin = end as isize - (l + f) as isize;
    let pos = |s: usize| -> Option<usize> {
        let p = origin + s as isize;
        (p >= 0).then_some(p as usize)
    };

    let mut observed = Vec::with_capacity(c * l);
    let mut target = Vec::with_capacity(c * f);
    for ch in &raw.observed {
        observed.extend((0..l).map(|s| pos(s).map_or(0.0, |p| ch[p])));
        target.extend_from_slice(&ch[past_end..end]);
    }
    let v = raw.tvk.len();
    let mut tvk = Vec::with_capacity(c * (l + f) * v);
    for ci in 0..c {
        for s in 0..l + f {
            for lanes in &raw.tvk {
                tvk.push(pos(s).map_or(Value::Pad, |p| lane(lanes, ci)[p]));
            }
        }
    }
    let mut statics = Vec::with_capacity(c * raw.statics.len());
    for ci in 0..c {
        statics.extend(raw.statics.iter().map(|lanes| *lane(lanes, ci)));
    }
    WindowRow {
        series: 0,
        split_key: raw.split_key,
        start: raw.timestamps[past_start],
        channels: c,
        lookback: l,
        horizon: f,
        pad_len,
        observed,
        tvk,
        statics,
        target,
    }
}

pub fn window_all(series: &[RawSeries], schema: &Schema, l: usize, f: usize, stride: usize) -> Result<Windowed> {
    let mut out = Windowed::default();
    for (i, s) in series.iter().enumerate() {
        let rows = window_series(s, schema, l, f, stride)?;
        if rows.is_empty() {
            out.skipped += 1;
        }
        out.rows.extend(rows.into_iter().map(|mut r| {
            r.series = i;
            r
        }));
    }
    Ok(out)
}

/// Keeps the longest `fraction` of series (ties at the cut-off kept),
/// preserving input order.
pub fn keep_longest(series: Vec<RawSeries>, fraction: f64) -> Vec<RawSeries> {
    if series.is_empty() || fraction >= 1.0 {
        return series;
    }
    let mut lens: Vec<usize> = series.iter().map(RawSeries::len).collect();
    lens.sort_unstable_by(|a, b| b.cmp(a));
    let keep = (libm::ceil(fraction * lens.len() as f64) as usize).clamp(1, lens.len());
    let cutoff = lens[keep - 1];
    series.into_iter().filter(|s| s.len() >= cutoff).collect()
}
