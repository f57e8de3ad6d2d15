//! Experiment files: a simulation config plus output settings, in TOML or JSON,
//! optionally layered over a named preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use colme_core::protocol::SimConfig;
use serde::Deserialize;
use serde_json::{json, Map, Value};

/// Curves that can be written to `trajectory.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    Simulated,
    Local,
    Ideal,
    OracleRr,
    OracleRrr,
}

impl Curve {
    pub fn name(&self) -> &'static str {
        match self {
            Curve::Simulated => "simulated",
            Curve::Local => "local",
            Curve::Ideal => "ideal",
            Curve::OracleRr => "oracle_rr",
            Curve::OracleRrr => "oracle_rrr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { base, count } => (*base..*base + *count).collect(),
        }
    }
}

/// Settings that are not part of the simulation itself.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct Extras {
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seeds: Option<SeedSpec>,
    #[serde(default)]
    curves: Option<Vec<Curve>>,
    #[serde(default)]
    stride: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub sim: SimConfig,
    pub output: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub curves: Vec<Curve>,
    pub stride: u64,
}

const EXTRA_KEYS: [&str; 4] = ["output", "seeds", "curves", "stride"];

/// Experiment-setup defaults: three classes with means 1/5, 2/5, 4/5, sigma = 1/2,
/// eps = 1, delta = 1e-6, PM1 with keep-last weights and round robin.
fn preset(name: &str) -> Result<Value> {
    match name {
        "fig1" => Ok(json!({
            "agents": 200,
            "t_max": 30000,
            "class_means": [0.2, 0.4, 0.8],
            "sigma": 0.5,
            "assignment": {"kind": "uniform_random", "classes": 3},
            "mechanism": "pm1",
            "weights": "non_mom",
            "schedule": "rr",
            "noise": "gaussian",
            "epsilon": 1.0,
            "delta": 1e-6,
            "scale_pm2_budget": true,
            "theta": {"kind": "log_decay", "c": 0.05},
            "variance": "known",
            "seeds": {"base": 0, "count": 20},
            "curves": ["simulated", "local", "ideal", "oracle_rr"],
        })),
        other => bail!("unknown preset {other:?} (available: fig1)"),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Tagged enums are replaced wholesale so that fields of another variant do not linger.
                    Some(slot) if slot.is_object() && v.is_object() && !v.as_object().unwrap().contains_key("kind") => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_document(path: &Path, text: &str) -> Result<Value> {
    let is_json = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(text).with_context(|| format!("{} is not valid JSON", path.display()))
    } else {
        let v: toml::Value = toml::from_str(text).with_context(|| format!("{} is not valid TOML", path.display()))?;
        serde_json::to_value(v).context("converting TOML document")
    }
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_value(parse_document(path, &text)?)
    }

    pub fn from_value(doc: Value) -> Result<Self> {
        let Value::Object(mut doc) = doc else { bail!("config must be a table/object at the top level") };
        let mut merged = match doc.remove("preset") {
            Some(Value::String(name)) => preset(&name)?,
            Some(other) => bail!("preset must be a string, got {other}"),
            None => Value::Object(Map::new()),
        };
        merge(&mut merged, Value::Object(doc));
        let Value::Object(mut all) = merged else { unreachable!() };
        let mut extras = Map::new();
        for k in EXTRA_KEYS {
            if let Some(v) = all.remove(k) {
                extras.insert(k.to_string(), v);
            }
        }
        let extras: Extras = serde_json::from_value(Value::Object(extras)).context("invalid output settings")?;
        let sim: SimConfig = serde_json::from_value(Value::Object(all)).context("invalid simulation settings")?;
        sim.validate().context("invalid simulation settings")?;
        let stride = extras.stride.unwrap_or(10);
        if stride == 0 {
            bail!("stride must be at least 1");
        }
        let seeds = extras.seeds.map(|s| s.seeds()).unwrap_or_else(|| vec![0]);
        Ok(Self {
            sim,
            output: extras.output,
            seeds,
            curves: extras.curves.unwrap_or_else(|| vec![Curve::Simulated, Curve::Local, Curve::Ideal]),
            stride,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use colme_core::protocol::Schedule;

    #[test]
    fn preset_then_overrides() {
        let e = Experiment::from_value(json!({"preset": "fig1", "agents": 15, "t_max": 10000, "schedule": "rrr"})).unwrap();
        assert_eq!(e.sim.agents, 15);
        assert_eq!(e.sim.t_max, 10000);
        assert_eq!(e.sim.schedule, Schedule::RestrictedRoundRobin);
        assert_eq!(e.seeds, (0..20).collect::<Vec<_>>());
        assert_eq!(e.sim.class_means, vec![0.2, 0.4, 0.8]);
    }

    #[test]
    fn tagged_tables_are_replaced() {
        let e = Experiment::from_value(json!({"preset": "fig1", "theta": {"kind": "constant", "theta": 0.05}})).unwrap();
        assert_eq!(e.sim.theta.theta(100), 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Experiment::from_value(json!({"agents": 4, "agnets": 5})).is_err());
        assert!(Experiment::from_value(json!({"preset": "fig2"})).is_err());
        assert!(Experiment::from_value(json!({"agents": 1})).is_err());
    }

    #[test]
    fn seeds_as_list_or_range() {
        let e = Experiment::from_value(json!({"seeds": [4, 9]})).unwrap();
        assert_eq!(e.seeds, vec![4, 9]);
        let e = Experiment::from_value(json!({"seeds": {"base": 3, "count": 2}})).unwrap();
        assert_eq!(e.seeds, vec![3, 4]);
    }

    #[test]
    fn toml_documents_parse() {
        let doc = parse_document(Path::new("x.toml"), "agents = 6\nt_max = 50\n[assignment]\nkind = \"explicit\"\nclasses = [0,0,1,1,2,2]\n").unwrap();
        let e = Experiment::from_value(doc).unwrap();
        assert_eq!(e.sim.agents, 6);
    }
}
