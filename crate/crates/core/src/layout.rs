//! Positions of the token families in the transformer input.

use alloc::vec::Vec;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TokenFamily {
    Mrp,
    Static,
    TvkGlobal,
    TvkSpecific,
    CrossSeries,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Segment {
    pub family: TokenFamily,
    pub start: usize,
    pub len: usize,
}

/// Contiguous segments in the fixed order MRP, ST, global TVKT, specific
/// TVKT, CST. Empty families are omitted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenLayout {
    pub segments: Vec<Segment>,
}

impl TokenLayout {
    pub fn push(&mut self, family: TokenFamily, len: usize) {
        if len == 0 {
            return;
        }
        let start = self.total();
        self.segments.push(Segment { family, start, len });
    }

    pub fn total(&self) -> usize {
        self.segments.last().map_or(0, |s| s.start + s.len)
    }

    pub fn segment(&self, family: TokenFamily) -> Option<Segment> {
        self.segments.iter().copied().find(|s| s.family == family)
    }

    pub fn count(&self, family: TokenFamily) -> usize {
        self.segment(family).map_or(0, |s| s.len)
    }

    pub fn family_at(&self, pos: usize) -> Option<TokenFamily> {
        self.segments
            .iter()
            .find(|s| (s.start..s.start + s.len).contains(&pos))
            .map(|s| s.family)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let mut l = TokenLayout::default();
        l.push(TokenFamily::Mrp, 24);
        l.push(TokenFamily::Static, 4);
        l.push(TokenFamily::TvkGlobal, 8);
        l.push(TokenFamily::TvkSpecific, 8);
        l.push(TokenFamily::CrossSeries, 8);
        assert_eq!(l.total(), 52);
        assert!((0..24).all(|p| l.family_at(p) == Some(TokenFamily::Mrp)));
        assert!((44..52).all(|p| l.family_at(p) == Some(TokenFamily::CrossSeries)));
        assert_eq!(l.family_at(52), None);
    }

    #[test]
    fn empty_families_are_skipped() {
        let mut l = TokenLayout::default();
        l.push(TokenFamily::Mrp, 3);
        l.push(TokenFamily::Static, 0);
        assert_eq!(l.segments.len(), 1);
        assert_eq!(l.count(TokenFamily::Static), 0);
    }
}
