//! CSV dataset directories.
//!
//! A dataset is a directory with a schema manifest and one CSV per group:
//!
//! - `schema.toml`: `[[variables]]` with `name`, `kind`, `cardinality`,
//!   `scope`, `group`
//! - `static.csv`: `key,split_key,<static columns>`, one row per series
//! - `observed.csv`: `key,timestamp,<channel names>`
//! - `tvk.csv`: `key,timestamp,<tvk columns>`, aligned with `observed.csv`
//!
//! Specific auxiliary variables take one column per channel, named `var@channel`.
//! Keys are the key tuple joined with `/`. Empty cells are missing values;
//! categorical cells hold the symbol index.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat};
use mrt_core::{Group, RawSeries, Schema, Scope, Timestamp, Value, VarKind, VariableSchema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_toml, write_toml, Error, IoExt, Result};

pub const MANIFEST: &str = "schema.toml";
pub const STATIC: &str = "static.csv";
pub const OBSERVED: &str = "observed.csv";
pub const TVK: &str = "tvk.csv";
pub const FILES: [&str; 4] = [MANIFEST, STATIC, OBSERVED, TVK];
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    variables: Vec<VariableSchema>,
}

pub fn write_manifest(path: &Path, schema: &Schema) -> Result<()> {
    write_toml(
        path,
        &Manifest {
            format_version: FORMAT_VERSION,
            variables: schema.variables.clone(),
        },
    )
}

pub fn read_manifest(path: &Path) -> Result<Schema> {
    let m: Manifest = read_toml(path)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format_version {}", m.format_version)));
    }
    Ok(Schema::new(m.variables)?)
}

pub fn format_timestamp(t: Timestamp) -> String {
    match DateTime::from_timestamp(t.0, 0) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => t.0.to_string(),
    }
}

/// ISO-8601 with offset, or naive date-time / date read as UTC.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(Timestamp(dt.timestamp()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Timestamp(dt.and_utc().timestamp()));
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| Timestamp(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()))
}

/// `(variable index within its group, lane)` for every data column.
fn columns(schema: &Schema, group: Group) -> Vec<(String, usize, usize)> {
    let channels = schema.channel_names();
    let mut out = Vec::new();
    for (i, v) in schema.group(group).enumerate() {
        // an observed variable is itself one channel
        if v.scope == Scope::Global || group == Group::Observed {
            out.push((v.name.clone(), i, 0));
        } else {
            for (c, ch) in channels.iter().enumerate() {
                out.push((format!("{}@{ch}", v.name), i, c));
            }
        }
    }
    out
}

fn format_value(v: Value) -> String {
    match v {
        Value::Num(x) => x.to_string(),
        Value::Cat(c) => c.to_string(),
        Value::Missing | Value::Pad => String::new(),
    }
}

fn parse_value(var: &VariableSchema, cell: &str) -> Option<Value> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Some(Value::Missing);
    }
    match var.kind {
        VarKind::Numerical => cell.parse::<f64>().ok().filter(|x| x.is_finite()).map(Value::Num),
        VarKind::Categorical { cardinality } => cell.parse::<u32>().ok().filter(|&c| c < cardinality).map(Value::Cat),
    }
}

fn join_key(key: &[String], path: &Path) -> Result<String> {
    if key.iter().any(|k| k.contains('/')) {
        return Err(Error::format(path, format!("key part in {key:?} contains `/`")));
    }
    Ok(key.join("/"))
}

/// Writes `series` as a dataset directory, creating it if needed.
pub fn write_dataset(dir: &Path, schema: &Schema, series: &[RawSeries]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    write_manifest(&dir.join(MANIFEST), schema)?;
    for s in series {
        s.validate(schema)?;
    }

    let path = dir.join(STATIC);
    let cols = columns(schema, Group::Static);
    let mut w = csv::Writer::from_path(&path).at(&path)?;
    let mut header = vec!["key".to_string(), "split_key".to_string()];
    header.extend(cols.iter().map(|c| c.0.clone()));
    w.write_record(&header).at(&path)?;
    for s in series {
        let mut rec = vec![join_key(&s.key, &path)?, s.split_key.to_string()];
        rec.extend(cols.iter().map(|&(_, v, lane)| format_value(s.statics[v][lane])));
        w.write_record(&rec).at(&path)?;
    }
    w.flush().at(&path)?;

    for (file, group) in [(OBSERVED, Group::Observed), (TVK, Group::Tvk)] {
        let path = dir.join(file);
        let cols = columns(schema, group);
        let mut w = csv::Writer::from_path(&path).at(&path)?;
        let mut header = vec!["key".to_string(), "timestamp".to_string()];
        header.extend(cols.iter().map(|c| c.0.clone()));
        w.write_record(&header).at(&path)?;
        for s in series {
            let key = join_key(&s.key, &path)?;
            for (t, ts) in s.timestamps.iter().enumerate() {
                let mut rec = vec![key.clone(), format_timestamp(*ts)];
                for &(_, v, lane) in &cols {
                    rec.push(match group {
                        Group::Observed => s.observed[v][t].to_string(),
                        _ => format_value(s.tvk[v][lane][t]),
                    });
                }
                w.write_record(&rec).at(&path)?;
            }
        }
        w.flush().at(&path)?;
    }
    Ok(())
}

/// Maps every expected column to its position in `header`.
fn locate(path: &Path, header: &csv::StringRecord, lead: &[&str], cols: &[(String, usize, usize)]) -> Result<Vec<usize>> {
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    if pos.len() != header.len() {
        return Err(Error::format(path, "duplicate column names"));
    }
    let mut out = Vec::new();
    for name in lead.iter().copied().chain(cols.iter().map(|c| c.0.as_str())) {
        out.push(*pos.get(name).ok_or_else(|| Error::format(path, format!("missing column `{name}`")))?);
    }
    if let Some(extra) = header.iter().find(|h| !lead.contains(&h.trim()) && !cols.iter().any(|c| c.0 == h.trim())) {
        return Err(Error::format(path, format!("unknown column `{extra}`")));
    }
    Ok(out)
}

/// Reads a dataset directory written by [`write_dataset`] or by hand.
pub fn read_dataset(dir: &Path) -> Result<(Schema, Vec<RawSeries>)> {
    let schema = read_manifest(&dir.join(MANIFEST))?;
    let c = schema.channels();
    let statics = schema.statics();
    let tvk = schema.tvk();

    let path = dir.join(STATIC);
    let cols = columns(&schema, Group::Static);
    let mut r = csv::Reader::from_path(&path).at(&path)?;
    let at = locate(&path, r.headers().at(&path)?, &["key", "split_key"], &cols)?;
    let mut series = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.at(&path)?;
        let bad = |what: String| Error::format(&path, format!("row {}: {what}", line + 1));
        let key = rec[at[0]].trim().to_string();
        if index.insert(key.clone(), series.len()).is_some() {
            return Err(bad(format!("duplicate key `{key}`")));
        }
        let split_key: i64 = rec[at[1]].trim().parse().map_err(|_| bad(format!("bad split_key `{}`", &rec[at[1]])))?;
        let mut st: Vec<Vec<Value>> = statics.iter().map(|v| vec![Value::Missing; v.lanes(c)]).collect();
        for (&(ref name, v, lane), &i) in cols.iter().zip(&at[2..]) {
            st[v][lane] = parse_value(statics[v], &rec[i]).ok_or_else(|| bad(format!("bad value `{}` in `{name}`", &rec[i])))?;
        }
        series.push(RawSeries {
            key: key.split('/').map(String::from).collect(),
            split_key,
            timestamps: Vec::new(),
            observed: vec![Vec::new(); c],
            tvk: tvk.iter().map(|v| vec![Vec::new(); v.lanes(c)]).collect(),
            statics: st,
        });
    }

    let path = dir.join(OBSERVED);
    let cols = columns(&schema, Group::Observed);
    let mut r = csv::Reader::from_path(&path).at(&path)?;
    let at = locate(&path, r.headers().at(&path)?, &["key", "timestamp"], &cols)?;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.at(&path)?;
        let bad = |what: String| Error::format(&path, format!("row {}: {what}", line + 1));
        let key = rec[at[0]].trim();
        let s = &mut series[*index.get(key).ok_or_else(|| bad(format!("key `{key}` is not in {STATIC}")))?];
        let ts = parse_timestamp(&rec[at[1]]).ok_or_else(|| bad(format!("bad timestamp `{}`", &rec[at[1]])))?;
        s.timestamps.push(ts);
        for (&(ref name, v, _), &i) in cols.iter().zip(&at[2..]) {
            let x: f64 = rec[i]
                .trim()
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| bad(format!("observed `{name}` must be a finite number, got `{}`", &rec[i])))?;
            s.observed[v].push(x);
        }
    }

    let path = dir.join(TVK);
    let cols = columns(&schema, Group::Tvk);
    let mut r = csv::Reader::from_path(&path).at(&path)?;
    let at = locate(&path, r.headers().at(&path)?, &["key", "timestamp"], &cols)?;
    let mut filled = vec![0usize; series.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.at(&path)?;
        let bad = |what: String| Error::format(&path, format!("row {}: {what}", line + 1));
        let key = rec[at[0]].trim();
        let si = *index.get(key).ok_or_else(|| bad(format!("key `{key}` is not in {STATIC}")))?;
        let s = &mut series[si];
        let ts = parse_timestamp(&rec[at[1]]).ok_or_else(|| bad(format!("bad timestamp `{}`", &rec[at[1]])))?;
        if s.timestamps.get(filled[si]) != Some(&ts) {
            return Err(bad(format!("timestamp `{}` of `{key}` does not line up with {OBSERVED}", &rec[at[1]])));
        }
        filled[si] += 1;
        for (&(ref name, v, lane), &i) in cols.iter().zip(&at[2..]) {
            let val = parse_value(tvk[v], &rec[i]).ok_or_else(|| bad(format!("bad value `{}` in `{name}`", &rec[i])))?;
            s.tvk[v][lane].push(val);
        }
    }
    for (s, &n) in series.iter().zip(&filled) {
        if n != s.len() {
            return Err(Error::format(&path, format!("`{}` has {n} rows, {OBSERVED} has {}", s.key.join("/"), s.len())));
        }
        s.validate(&schema)?;
    }
    Ok((schema, series))
}

/// SHA-256 over the dataset files in a fixed order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for f in FILES {
        let path: PathBuf = dir.join(f);
        let bytes = fs::read(&path).at(&path)?;
        h.update(f.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}
