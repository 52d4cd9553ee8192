//! Run records and their CSV/JSON reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => bail!("unknown report format `{s}` (csv, json)"),
        }
    }
}

/// What one replica saw.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    /// Membership in each target tube.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tubes: Vec<bool>,
    /// `1_tube * dP/dQ` per target under the tilted law.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tilted_weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_a: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_c: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_free_energy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A plot-ready table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    #[serde(with = "float::rows")]
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub wall_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub replicas: usize,
    pub outcomes: Vec<ReplicaOutcome>,
    pub estimates: Vec<Estimate>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub tables: BTreeMap<String, Table>,
    pub metrics: Metrics,
}

impl RunRecord {
    pub fn new(kind: &str, config_hash: String, seed: u64, replicas: usize) -> Self {
        Self {
            kind: kind.to_string(),
            config_hash,
            seed,
            replicas,
            ..Self::default()
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Every replica accounted for exactly once.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.outcomes.is_empty() {
            return Ok(());
        }
        if self.outcomes.len() != self.replicas {
            bail!("{} outcomes for {} replicas", self.outcomes.len(), self.replicas);
        }
        for (k, o) in self.outcomes.iter().enumerate() {
            if o.replica != k as u64 {
                bail!("outcome {k} belongs to replica {}", o.replica);
            }
        }
        Ok(())
    }

    /// SHA-256 of the record without timing metrics.
    pub fn content_hash(&self) -> String {
        let mut r = self.clone();
        r.metrics = Metrics::default();
        hex::encode(Sha256::digest(serde_json::to_vec(&r).expect("record serializes")))
    }
}

fn write_csv(path: &Path, columns: &[String], rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cols(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

/// Writes the record under `dir` and returns the files created.
pub fn emit_report(record: &RunRecord, format: Format, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = if record.kind.is_empty() { "run" } else { &record.kind };
    let mut out = Vec::new();
    match format {
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            let text = serde_json::to_string_pretty(record)?;
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            out.push(path);
        }
        Format::Csv => {
            let path = dir.join(format!("{stem}_estimates.csv"));
            write_csv(
                &path,
                &cols(&["name", "value", "std_err", "lower", "upper"]),
                record.estimates.iter().map(|e| {
                    vec![
                        e.name.clone(),
                        e.value.to_string(),
                        e.std_err.to_string(),
                        e.lower.to_string(),
                        e.upper.to_string(),
                    ]
                }),
            )?;
            out.push(path);
            let path = dir.join(format!("{stem}_checks.csv"));
            write_csv(
                &path,
                &cols(&["name", "passed", "detail"]),
                record
                    .checks
                    .iter()
                    .map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]),
            )?;
            out.push(path);
            let path = dir.join(format!("{stem}_outcomes.csv"));
            write_csv(
                &path,
                &cols(&[
                    "replica",
                    "tubes",
                    "tilted_weights",
                    "event_a",
                    "event_c",
                    "max_free_energy",
                    "front_shift",
                ]),
                record.outcomes.iter().map(|o| {
                    let tubes: Vec<String> = o.tubes.iter().map(|b| u8::from(*b).to_string()).collect();
                    let w: Vec<String> = o.tilted_weights.iter().map(f64::to_string).collect();
                    vec![
                        o.replica.to_string(),
                        tubes.join(";"),
                        w.join(";"),
                        opt(&o.event_a),
                        opt(&o.event_c),
                        opt(&o.max_free_energy),
                        opt(&o.front_shift),
                    ]
                }),
            )?;
            out.push(path);
            for (name, table) in &record.tables {
                let path = dir.join(format!("{stem}_{name}.csv"));
                write_csv(
                    &path,
                    &table.columns,
                    table.rows.iter().map(|r| r.iter().map(f64::to_string).collect()),
                )?;
                out.push(path);
            }
        }
    }
    Ok(out)
}

pub fn load_record(path: &Path) -> anyhow::Result<RunRecord> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Serde adapters writing non-finite floats as `"inf"`, `"-inf"`, `"nan"`,
/// which plain JSON numbers cannot hold.
pub mod float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::custom(format!("not a float: {s}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod rows {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
            let r: Vec<Vec<Repr>> = v.iter().map(|row| row.iter().map(|x| to_repr(*x)).collect()).collect();
            r.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
            Vec::<Vec<Repr>>::deserialize(d)?
                .into_iter()
                .map(|row| row.into_iter().map(from_repr).collect())
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Wrapped {
        #[serde(with = "float")]
        v: f64,
        #[serde(with = "float::rows")]
        rows: Vec<Vec<f64>>,
    }

    #[test]
    fn non_finite_floats_survive_json() {
        let w = Wrapped {
            v: f64::NEG_INFINITY,
            rows: vec![vec![1.5, f64::INFINITY], vec![0.1 + 0.2]],
        };
        let text = serde_json::to_string(&w).unwrap();
        assert_eq!(text, r#"{"v":"-inf","rows":[[1.5,"inf"],[0.30000000000000004]]}"#);
        assert_eq!(serde_json::from_str::<Wrapped>(&text).unwrap(), w);
        let nan: Wrapped = serde_json::from_str(r#"{"v":"nan","rows":[]}"#).unwrap();
        assert!(nan.v.is_nan());
        assert!(serde_json::from_str::<Wrapped>(r#"{"v":"big","rows":[]}"#).is_err());
    }

    #[test]
    fn validate_counts_replicas() {
        let mut r = RunRecord::new("tube", String::new(), 1, 2);
        assert!(r.validate().is_ok());
        r.outcomes = vec![ReplicaOutcome::default()];
        assert!(r.validate().is_err());
        r.outcomes.push(ReplicaOutcome {
            replica: 1,
            ..ReplicaOutcome::default()
        });
        assert!(r.validate().is_ok());
        r.outcomes.swap(0, 1);
        assert!(r.validate().is_err());
    }

    #[test]
    fn content_hash_ignores_metrics() {
        let mut r = RunRecord::new("cost", "abc".into(), 1, 0);
        let h = r.content_hash();
        r.metrics.wall_seconds = 3.0;
        assert_eq!(r.content_hash(), h);
        r.check("x", true, "");
        assert_ne!(r.content_hash(), h);
        assert!(r.all_passed());
        r.check("y", false, "");
        assert!(!r.all_passed());
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert_eq!("JSON".parse::<Format>().unwrap(), Format::Json);
        assert!("xml".parse::<Format>().is_err());
    }
}
