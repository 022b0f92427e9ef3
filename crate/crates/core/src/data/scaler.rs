use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::schema::{Group, RawSeries, Schema, VarKind, Value};
use crate::{Error, Result};

/// Category codes of the grouping variables, in the order requested.
pub type GroupKey = Vec<u32>;

/// `(x − mean) / std`. `degenerate` marks a fit whose variance was zero, in
/// which case `std` is 1.
#[derive(Copy, Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
    pub degenerate: bool,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        mean: 0.0,
        std: 1.0,
        degenerate: false,
    };

    /// Population mean and standard deviation.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                degenerate: true,
                ..Self::IDENTITY
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        if std > 0.0 {
            Self {
                mean,
                std,
                degenerate: false,
            }
        } else {
            Self {
                mean,
                std: 1.0,
                degenerate: true,
            }
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

type Scalers = BTreeMap<(String, usize), Affine>;

/// Affine scalers per group, per continuous variable and lane, with a
/// global fallback for groups that were not in the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalerMap {
    group_vars: Vec<String>,
    groups: BTreeMap<GroupKey, Scalers>,
    global: Scalers,
}

/// Reads the grouping key of a series from its categorical static variables.
pub fn group_key(series: &RawSeries, schema: &Schema, group_vars: &[String]) -> Result<GroupKey> {
    let statics = schema.statics();
    group_vars
        .iter()
        .map(|name| {
            let i = statics
                .iter()
                .position(|v| &v.name == name)
                .ok_or_else(|| Error::Schema(format!("group variable `{name}` is not a static variable")))?;
            match (statics[i].kind, series.statics[i][0]) {
                (VarKind::Categorical { cardinality }, v) => v
                    .symbol(cardinality)
                    .ok_or_else(|| Error::Schema(format!("group variable `{name}` holds a number"))),
                _ => Err(Error::Schema(format!("group variable `{name}` must be categorical"))),
            }
        })
        .collect()
}

/// Every continuous cell of a series as `(variable, lane, value)`.
fn continuous_cells<'a>(series: &'a RawSeries, schema: &'a Schema) -> impl Iterator<Item = (&'a str, usize, f64)> + 'a {
    let observed = schema
        .group(Group::Observed)
        .zip(&series.observed)
        .flat_map(|(v, xs)| xs.iter().map(move |&x| (v.name.as_str(), 0, x)));
    let tvk = schema
        .group(Group::Tvk)
        .zip(&series.tvk)
        .filter(|(v, _)| v.kind == VarKind::Numerical)
        .flat_map(|(v, lanes)| {
            lanes.iter().enumerate().flat_map(move |(li, xs)| {
                xs.iter().filter_map(move |x| match x {
                    Value::Num(x) => Some((v.name.as_str(), li, *x)),
                    _ => None,
                })
            })
        });
    let statics = schema
        .group(Group::Static)
        .zip(&series.statics)
        .filter(|(v, _)| v.kind == VarKind::Numerical)
        .flat_map(|(v, lanes)| {
            lanes.iter().enumerate().filter_map(move |(li, x)| match x {
                Value::Num(x) => Some((v.name.as_str(), li, *x)),
                _ => None,
            })
        });
    observed.chain(tvk).chain(statics)
}

fn fit_all<'a>(series: impl Iterator<Item = &'a RawSeries>, schema: &Schema) -> Scalers {
    let mut acc: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for s in series {
        for (name, li, x) in continuous_cells(s, schema) {
            acc.entry((name.into(), li)).or_default().push(x);
        }
    }
    acc.into_iter().map(|(k, xs)| (k, Affine::fit(&xs))).collect()
}

/// Fits scalers on the training series only.
pub fn fit_group_scalers(train: &[RawSeries], schema: &Schema, group_vars: &[String]) -> Result<ScalerMap> {
    let mut members: BTreeMap<GroupKey, Vec<&RawSeries>> = BTreeMap::new();
    for s in train {
        members.entry(group_key(s, schema, group_vars)?).or_default().push(s);
    }
    let groups = members
        .into_iter()
        .map(|(k, ss)| (k, fit_all(ss.into_iter(), schema)))
        .collect();
    Ok(ScalerMap {
        group_vars: group_vars.to_vec(),
        groups,
        global: fit_all(train.iter(), schema),
    })
}

impl ScalerMap {
    pub fn group_vars(&self) -> &[String] {
        &self.group_vars
    }

    pub fn has_group(&self, key: &GroupKey) -> bool {
        self.groups.contains_key(key)
    }

    pub fn scaler(&self, key: &GroupKey, var: &str, lane: usize) -> Affine {
        let k = (String::from(var), lane);
        self.groups
            .get(key)
            .and_then(|g| g.get(&k))
            .or_else(|| self.global.get(&k))
            .copied()
            .unwrap_or(Affine::IDENTITY)
    }

    /// Scalers fitted on zero-variance data, as `(group, variable, lane)`;
    /// the global fallback reports `None` as its group.
    pub fn flagged(&self) -> Vec<(Option<GroupKey>, String, usize)> {
        let mut out = Vec::new();
        for (g, sc) in self.groups.iter().map(|(g, s)| (Some(g), s)).chain([(None, &self.global)]) {
            for ((name, lane), a) in sc {
                if a.degenerate {
                    out.push((g.cloned(), name.clone(), *lane));
                }
            }
        }
        out
    }

    /// Flat listing for serialization; group `None` is the global fallback.
    pub fn entries(&self) -> Vec<(Option<GroupKey>, String, usize, Affine)> {
        let mut out = Vec::new();
        for (g, sc) in self.groups.iter().map(|(g, s)| (Some(g), s)).chain([(None, &self.global)]) {
            for ((name, lane), a) in sc {
                out.push((g.cloned(), name.clone(), *lane, *a));
            }
        }
        out
    }

    pub fn from_entries(group_vars: Vec<String>, entries: impl IntoIterator<Item = (Option<GroupKey>, String, usize, Affine)>) -> Self {
        let mut m = Self {
            group_vars,
            groups: BTreeMap::new(),
            global: BTreeMap::new(),
        };
        for (g, name, lane, a) in entries {
            let target = match g {
                Some(g) => m.groups.entry(g).or_default(),
                None => &mut m.global,
            };
            target.insert((name, lane), a);
        }
        m
    }

    /// Scales every continuous value of `series` with its group's scalers.
    pub fn apply(&self, series: &RawSeries, schema: &Schema) -> Result<RawSeries> {
        let key = group_key(series, schema, &self.group_vars)?;
        let mut out = series.clone();
        for (v, xs) in schema.group(Group::Observed).zip(out.observed.iter_mut()) {
            let a = self.scaler(&key, &v.name, 0);
            xs.iter_mut().for_each(|x| *x = a.apply(*x));
        }
        let scale = |name: &str, li: usize, x: &mut Value| {
            if let Value::Num(n) = x {
                *n = self.scaler(&key, name, li).apply(*n);
            }
        };
        for (v, lanes) in schema.group(Group::Tvk).zip(out.tvk.iter_mut()) {
            for (li, xs) in lanes.iter_mut().enumerate() {
                xs.iter_mut().for_each(|x| scale(&v.name, li, x));
            }
        }
        for (v, lanes) in schema.group(Group::Static).zip(out.statics.iter_mut()) {
            for (li, x) in lanes.iter_mut().enumerate() {
                scale(&v.name, li, x);
            }
        }
        Ok(out)
    }

    /// Scaler of observed channel `channel` for a group.
    pub fn observed(&self, key: &GroupKey, schema: &Schema, channel: usize) -> Affine {
        let names = schema.channel_names();
        self.scaler(key, names[channel], 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Scope, Timestamp, VariableSchema};
    use alloc::vec;

    fn schema() -> Schema {
        Schema::new(vec![
            VariableSchema::numerical("y", Scope::Specific, Group::Observed),
            VariableSchema::numerical("price", Scope::Specific, Group::Tvk),
            VariableSchema::categorical("store", 3, Scope::Global, Group::Static),
        ])
        .unwrap()
    }

    fn series(store: u32, ys: &[f64]) -> RawSeries {
        RawSeries {
            key: vec![],
            split_key: 0,
            timestamps: (0..ys.len() as i64).map(Timestamp).collect(),
            observed: vec![ys.to_vec()],
            tvk: vec![vec![ys.iter().map(|&y| Value::Num(2.0 * y)).collect()]],
            statics: vec![vec![Value::Cat(store)]],
        }
    }

    #[test]
    fn fit_examples() {
        assert_eq!(
            Affine::fit(&[1.0, 3.0]),
            Affine {
                mean: 2.0,
                std: 1.0,
                degenerate: false
            }
        );
        let c = Affine::fit(&[5.0, 5.0, 5.0]);
        assert_eq!((c.mean, c.std, c.degenerate), (5.0, 1.0, true));
    }

    #[test]
    fn groups_fit_independently_with_global_fallback() {
        let s = schema();
        let g = vec![String::from("store")];
        let train = vec![series(0, &[1.0, 3.0]), series(1, &[10.0, 30.0])];
        let m = fit_group_scalers(&train, &s, &g).unwrap();
        let a = m.scaler(&vec![0], "y", 0);
        let b = m.scaler(&vec![1], "y", 0);
        assert_ne!(a, b);
        let own = m.apply(&train[1], &s).unwrap();
        assert_ne!(own.observed[0][0], a.apply(10.0));
        assert_eq!(m.scaler(&vec![2], "y", 0), Affine::fit(&[1.0, 3.0, 10.0, 30.0]));
        assert_eq!(m.scaler(&vec![0], "price", 0).mean, 4.0);
    }

    #[test]
    fn flags_constant_variables() {
        let s = schema();
        let m = fit_group_scalers(&[series(0, &[5.0, 5.0, 5.0])], &s, &[String::from("store")]).unwrap();
        let flagged = m.flagged();
        assert!(flagged.iter().any(|(g, n, _)| g.is_some() && n == "y"));
    }

    #[test]
    fn entries_round_trip() {
        let s = schema();
        let m = fit_group_scalers(&[series(0, &[1.0, 2.0]), series(1, &[4.0, 9.0])], &s, &[String::from("store")]).unwrap();
        let back = ScalerMap::from_entries(m.group_vars().to_vec(), m.entries());
        assert_eq!(back, m);
    }
}
