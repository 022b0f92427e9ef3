use alloc::vec::Vec;

use crate::schema::{RawSeries, Timestamp};
use crate::{Error, Result};

const DAY: i64 = 86_400;

/// Daily opening window in seconds after midnight, `[open, close)`.
/// A window with `open > close` wraps past midnight.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpenHours {
    pub open: i64,
    pub close: i64,
}

impl OpenHours {
    pub fn is_open(&self, t: Timestamp) -> bool {
        let s = t.0.rem_euclid(DAY);
        if self.open <= self.close {
            (self.open..self.close).contains(&s)
        } else {
            s >= self.open || s < self.close
        }
    }
}

fn round_to(t: i64, period: i64) -> i64 {
    // half-up rounding on the period grid
    (t + period / 2).div_euclid(period) * period
}

/// Resamples a series whose rows are aggregation blocks onto a regular grid.
///
/// Row `i` covers `[timestamps[i], timestamps[i+1])`; the final row only
/// marks the closing boundary and its values are ignored. Observed values
/// are divided evenly across the open grid periods of the block, auxiliary
/// values are copied.
pub fn quantise_series(raw: &RawSeries, period: i64, open: Option<&OpenHours>) -> Result<RawSeries> {
    if period <= 0 {
        return Err(Error::config("period", "must be positive"));
    }
    if raw.len() < 2 {
        return Err(Error::Schema("quantisation needs at least one block and a closing boundary".into()));
    }
    let bounds: Vec<i64> = raw.timestamps.iter().map(|t| round_to(t.0, period)).collect();
    let mut out = RawSeries {
        key: raw.key.clone(),
        split_key: raw.split_key,
        timestamps: Vec::new(),
        observed: alloc::vec![Vec::new(); raw.observed.len()],
        tvk: raw.tvk.iter().map(|lanes| alloc::vec![Vec::new(); lanes.len()]).collect(),
        statics: raw.statics.clone(),
    };
    for i in 0..raw.len() - 1 {
        let slots: Vec<i64> = (bounds[i]..bounds[i + 1].max(bounds[i]))
            .step_by(period as usize)
            .filter(|&p| open.is_none_or(|o| o.is_open(Timestamp(p))))
            .collect();
        if slots.is_empty() {
            return Err(Error::Collapse {
                start: raw.timestamps[i],
                end: raw.timestamps[i + 1],
            });
        }
        let n = slots.len() as f64;
        for &p in &slots {
            out.timestamps.push(Timestamp(p));
            for (dst, src) in out.observed.iter_mut().zip(&raw.observed) {
                dst.push(src[i] / n);
            }
            for (dst, src) in out.tvk.iter_mut().zip(&raw.tvk) {
                for (d, s) in dst.iter_mut().zip(src) {
                    d.push(s[i]);
                }
            }
        }
    }
    Ok(out)
}
