//! Variable declarations and raw series.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Seconds since the Unix epoch.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Timestamp(pub i64);

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum VarKind {
    Categorical { cardinality: u32 },
    Numerical,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scope {
    /// Identical across channels.
    Global,
    /// One value per channel.
    Specific,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Group {
    Static,
    Tvk,
    Observed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariableSchema {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: VarKind,
    pub scope: Scope,
    pub group: Group,
}

impl VariableSchema {
    pub fn numerical(name: &str, scope: Scope, group: Group) -> Self {
        Self {
            name: name.into(),
            kind: VarKind::Numerical,
            scope,
            group,
        }
    }

    pub fn categorical(name: &str, cardinality: u32, scope: Scope, group: Group) -> Self {
        Self {
            name: name.into(),
            kind: VarKind::Categorical { cardinality },
            scope,
            group,
        }
    }

    /// Lanes of a variable in a series with `channels` channels.
    pub fn lanes(&self, channels: usize) -> usize {
        match self.scope {
            Scope::Global => 1,
            Scope::Specific => channels,
        }
    }

    pub fn check(&self, v: Value) -> Result<()> {
        match (self.kind, v) {
            (_, Value::Missing | Value::Pad) => Ok(()),
            (VarKind::Numerical, Value::Num(x)) if x.is_finite() => Ok(()),
            (VarKind::Categorical { cardinality }, Value::Cat(c)) if c < cardinality => Ok(()),
            _ => Err(Error::Schema(format!("value {v:?} is not valid for variable `{}`", self.name))),
        }
    }
}

/// One cell of an auxiliary variable.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    /// Category symbol in `0..cardinality`.
    Cat(u32),
    /// Not observed; embeds to a learned per-variable vector.
    Missing,
    /// Left padding; embeds to the zero vector.
    Pad,
}

impl Value {
    /// Symbol code of a categorical cell: declared symbols, then the missing
    /// symbol at `cardinality`, then the pad symbol at `cardinality + 1`.
    pub fn symbol(self, cardinality: u32) -> Option<u32> {
        match self {
            Value::Cat(c) => Some(c),
            Value::Missing => Some(cardinality),
            Value::Pad => Some(cardinality + 1),
            Value::Num(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Schema {
    pub variables: Vec<VariableSchema>,
}

impl Schema {
    pub fn new(variables: Vec<VariableSchema>) -> Result<Self> {
        let s = Self { variables };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.variables.iter().enumerate() {
            if self.variables[..i].iter().any(|o| o.name == v.name) {
                return Err(Error::Schema(format!("duplicate variable `{}`", v.name)));
            }
            if let VarKind::Categorical { cardinality: 0 } = v.kind {
                return Err(Error::Schema(format!("`{}` needs cardinality >= 1", v.name)));
            }
            if v.group == Group::Observed && v.kind != VarKind::Numerical {
                return Err(Error::Schema(format!("observed variable `{}` must be numerical", v.name)));
            }
        }
        if self.channels() == 0 {
            return Err(Error::Schema("schema declares no observed channel".into()));
        }
        Ok(())
    }

    pub fn group(&self, g: Group) -> impl Iterator<Item = &VariableSchema> {
        self.variables.iter().filter(move |v| v.group == g)
    }

    /// Observed variables are the forecast channels, in declaration order.
    pub fn channel_names(&self) -> Vec<&str> {
        self.group(Group::Observed).map(|v| v.name.as_str()).collect()
    }

    pub fn channels(&self) -> usize {
        self.group(Group::Observed).count()
    }

    pub fn tvk(&self) -> Vec<&VariableSchema> {
        self.group(Group::Tvk).collect()
    }

    pub fn statics(&self) -> Vec<&VariableSchema> {
        self.group(Group::Static).collect()
    }

    pub fn get(&self, name: &str) -> Option<&VariableSchema> {
        self.variables.iter().find(|v| v.name == name)
    }
}

/// One raw series before windowing.
///
/// Temporal auxiliary data is stored per variable as lanes: one lane for a
/// global variable, one per channel for a specific variable.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    /// Identifier tuple, e.g. (product, store, due date).
    pub key: Vec<String>,
    /// Ordered attribute used for chronological splitting.
    pub split_key: i64,
    pub timestamps: Vec<Timestamp>,
    /// `[channel][t]`
    pub observed: Vec<Vec<f64>>,
    /// `[tvk variable][lane][t]`, schema order.
    pub tvk: Vec<Vec<Vec<Value>>>,
    /// `[static variable][lane]`, schema order.
    pub statics: Vec<Vec<Value>>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let c = schema.channels();
        let n = self.len();
        let who = || self.key.join("/");
        if self.timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!("series {}: timestamps not strictly increasing", who())));
        }
        if self.observed.len() != c || self.observed.iter().any(|o| o.len() != n) {
            return Err(Error::Schema(format!("series {}: observed must be [{c}][{n}]", who())));
        }
        if self.observed.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("series {}: observed values must be present and finite", who())));
        }
        let tvk = schema.tvk();
        if self.tvk.len() != tvk.len() {
            return Err(Error::Schema(format!("series {}: expected {} tvk variables", who(), tvk.len())));
        }
        for (var, lanes) in tvk.iter().zip(&self.tvk) {
            if lanes.len() != var.lanes(c) || lanes.iter().any(|l| l.len() != n) {
                return Err(Error::Schema(format!("series {}: tvk `{}` has wrong lane layout", who(), var.name)));
            }
            for &v in lanes.iter().flatten() {
                var.check(v)?;
            }
        }
        let statics = schema.statics();
        if self.statics.len() != statics.len() {
            return Err(Error::Schema(format!("series {}: expected {} static variables", who(), statics.len())));
        }
        for (var, lanes) in statics.iter().zip(&self.statics) {
            if lanes.len() != var.lanes(c) {
                return Err(Error::Schema(format!("series {}: static `{}` has wrong lane layout", who(), var.name)));
            }
            for &v in lanes {
                var.check(v)?;
            }
        }
        Ok(())
    }
}

/// Picks the lane of `lanes` that applies to `channel`.
pub fn lane<T>(lanes: &[T], channel: usize) -> &T {
    if lanes.len() == 1 {
        &lanes[0]
    } else {
        &lanes[channel]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) fn tiny_schema() -> Schema {
        Schema::new(vec![
            VariableSchema::numerical("sales_a", Scope::Specific, Group::Observed),
            VariableSchema::numerical("sales_b", Scope::Specific, Group::Observed),
            VariableSchema::numerical("price", Scope::Specific, Group::Tvk),
            VariableSchema::categorical("dow", 7, Scope::Global, Group::Tvk),
            VariableSchema::categorical("group", 3, Scope::Global, Group::Static),
        ])
        .unwrap()
    }

    #[test]
    fn rejects_zero_cardinality_and_categorical_observed() {
        assert!(Schema::new(vec![
            VariableSchema::numerical("y", Scope::Specific, Group::Observed),
            VariableSchema::categorical("c", 0, Scope::Global, Group::Static),
        ])
        .is_err());
        assert!(Schema::new(vec![VariableSchema::categorical("y", 2, Scope::Specific, Group::Observed)]).is_err());
    }

    #[test]
    fn reserved_symbols_sit_outside_cardinality() {
        assert_eq!(Value::Missing.symbol(3), Some(3));
        assert_eq!(Value::Pad.symbol(3), Some(4));
        assert_eq!(Value::Cat(2).symbol(3), Some(2));
    }

    #[test]
    fn validate_catches_layout_errors() {
        let schema = tiny_schema();
        let mut s = RawSeries {
            key: vec!["a".into()],
            split_key: 0,
            timestamps: vec![Timestamp(0), Timestamp(1)],
            observed: vec![vec![1.0, 2.0], vec![0.0, 0.0]],
            tvk: vec![vec![vec![Value::Num(1.0); 2]; 2], vec![vec![Value::Cat(0), Value::Cat(1)]]],
            statics: vec![vec![Value::Cat(2)]],
        };
        s.validate(&schema).unwrap();
        s.statics[0][0] = Value::Cat(3);
        assert!(s.validate(&schema).is_err());
        s.statics[0][0] = Value::Missing;
        s.timestamps[1] = Timestamp(0);
        assert!(s.validate(&schema).is_err());
    }
}
