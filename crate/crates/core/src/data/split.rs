use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            val_fraction: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x < 1.0;
        if !ok(self.test_fraction) || !ok(self.val_fraction) || self.test_fraction + self.val_fraction >= 1.0 {
            return Err(Error::config("split", "fractions must be positive and sum to less than 1"));
        }
        Ok(())
    }

    /// `(train, val, test)` key counts for `n` distinct keys.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // the small slack keeps products like 0.15 * 20 from rounding up to 4
        let up = |frac: f64| libm::ceil(frac * n as f64 - 1e-9) as usize;
        let (test, val) = (up(self.test_fraction), up(self.val_fraction));
        if n < 3 || test + val >= n {
            return Err(Error::SplitInfeasible { distinct: n });
        }
        Ok((n - test - val, val, test))
    }
}

/// Per-split counts and key ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitStats<K> {
    pub items: usize,
    pub keys: usize,
    pub first: Option<K>,
    pub last: Option<K>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitReport<K> {
    pub train: SplitStats<K>,
    pub val: SplitStats<K>,
    pub test: SplitStats<K>,
}

#[derive(Clone, Debug)]
pub struct Splits<T, K> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub report: SplitReport<K>,
}

/// Chronological split on the distinct values of `key`: the last keys go to
/// test, the keys immediately before them to validation, the rest to train.
/// Item order within a split follows input order.
pub fn make_splits<T, K: Ord + Clone>(items: Vec<T>, key: impl Fn(&T) -> K, spec: &SplitSpec) -> Result<Splits<T, K>> {
    let distinct: Vec<K> = items.iter().map(&key).collect::<BTreeSet<_>>().into_iter().collect();
    let (n_train, n_val, _) = spec.counts(distinct.len())?;
    let val_start = distinct[n_train].clone();
    let test_start = distinct[n_train + n_val].clone();

    let mut out = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        report: SplitReport {
            train: stats(&distinct[..n_train]),
            val: stats(&distinct[n_train..n_train + n_val]),
            test: stats(&distinct[n_train + n_val..]),
        },
    };
    for item in items {
        let k = key(&item);
        if k >= test_start {
            out.test.push(item);
        } else if k >= val_start {
            out.val.push(item);
        } else {
            out.train.push(item);
        }
    }
    out.report.train.items = out.train.len();
    out.report.val.items = out.val.len();
    out.report.test.items = out.test.len();
    Ok(out)
}

fn stats<K: Clone>(keys: &[K]) -> SplitStats<K> {
    SplitStats {
        items: 0,
        keys: keys.len(),
        first: keys.first().cloned(),
        last: keys.last().cloned(),
    }
}
