//! Partitioning a window into roughly equal patches.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Sorted, distinct, positive part counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<usize>", into = "Vec<usize>"))]
pub struct ResolutionSet(Vec<usize>);

impl ResolutionSet {
    /// Sorts `ks`; zero or repeated entries and an empty set are rejected.
    pub fn new(mut ks: Vec<usize>) -> Result<Self> {
        ks.sort_unstable();
        if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("resolutions", "need distinct positive part counts"));
        }
        Ok(Self(ks))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Σk, the number of patch tokens.
    pub fn token_count(&self) -> usize {
        self.0.iter().sum()
    }

    /// First token of each resolution within the patch-token block.
    pub fn offsets(&self) -> Vec<usize> {
        self.0
            .iter()
            .scan(0, |acc, &k| {
                let o = *acc;
                *acc += k;
                Some(o)
            })
            .collect()
    }
}

impl TryFrom<Vec<usize>> for ResolutionSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ResolutionSet> for Vec<usize> {
    fn from(r: ResolutionSet) -> Self {
        r.0
    }
}

/// Split of a length-`h` window into `k` patches of length `b` or `b + 1`
/// with `b = ⌊h/k⌋`; the `h − b·k` longer patches come first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchPlan {
    pub h: usize,
    pub k: usize,
    pub lengths: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl PatchPlan {
    pub fn new(h: usize, k: usize) -> Result<Self> {
        if k == 0 || k > h {
            return Err(Error::ResolutionTooDense { h, k });
        }
        let b = h / k;
        let long = h - b * k;
        let lengths: Vec<usize> = (0..k).map(|i| if i < long { b + 1 } else { b }).collect();
        let offsets = lengths
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        Ok(Self { h, k, lengths, offsets })
    }

    pub fn base(&self) -> usize {
        self.h / self.k
    }

    /// Every patch is widened to this length before projection.
    pub fn width(&self) -> usize {
        self.base() + 1
    }

    /// For each patch and each of its `width()` slots, the window position
    /// it reads, `None` for the single left pad of a short patch. Flattened
    /// patch-major.
    pub fn padded_index(&self) -> Vec<Option<usize>> {
        let w = self.width();
        let mut idx = Vec::with_capacity(self.k * w);
        for (&o, &n) in self.offsets.iter().zip(&self.lengths) {
            idx.extend((0..w - n).map(|_| None));
            idx.extend((o..o + n).map(Some));
        }
        idx
    }

    /// For each window position, the slot of the width-padded patch output
    /// that covers it; short patches skip their final slot.
    pub fn truncation_index(&self) -> Vec<Option<usize>> {
        let w = self.width();
        let mut idx = Vec::with_capacity(self.h);
        for (p, &n) in self.lengths.iter().enumerate() {
            idx.extend((0..n).map(|s| Some(p * w + s)));
        }
        idx
    }
}
