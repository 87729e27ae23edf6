//! Experiment configuration: registry defaults, then a flat `key = value`
//! file, then command-line overrides (the flag wins).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use bessel_lab::pathsim::ConstructionChoice;
use serde::Serialize;

use crate::experiments::{find_experiment, registry};

/// Keys accepted in configuration files (same spelling as the long flags).
pub const CONFIG_KEYS: &[&str] = &[
    "experiment",
    "mu",
    "paths",
    "steps",
    "horizon",
    "seed",
    "eps",
    "out",
    "workers",
    "as_printed",
    "construction",
    "zero_threshold_rule",
];

/// A configuration problem the user has to fix (maps to exit status 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

/// How the zero threshold recorded on each path is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum ZeroThresholdRule {
    /// Whatever the construction reports (exact zero detection).
    Construction,
    /// A fixed level.
    Fixed(f64),
    /// `k·√Δt` with `Δt = horizon / steps`.
    SqrtDt(f64),
}

impl ZeroThresholdRule {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let text = text.trim();
        if text == "construction" {
            return Ok(Self::Construction);
        }
        let (kind, value) =
            match text.split_once(':') {
                Some(pair) => pair,
                None => return usage(format!(
                    "zero_threshold_rule '{text}': expected construction, fixed:<x> or sqrt-dt:<k>"
                )),
            };
        let v: f64 = value.trim().parse().map_err(|_| {
            UsageError(format!(
                "zero_threshold_rule '{text}': '{value}' is not a number"
            ))
        })?;
        if !(v > 0.0 && v.is_finite()) {
            return usage(format!(
                "zero_threshold_rule '{text}': value must be positive"
            ));
        }
        match kind.trim() {
            "fixed" => Ok(Self::Fixed(v)),
            "sqrt-dt" => Ok(Self::SqrtDt(v)),
            other => usage(format!("zero_threshold_rule: unknown rule '{other}'")),
        }
    }

    /// Threshold to hand to the simulator, if any.
    pub fn threshold(&self, dt_max: f64) -> Option<f64> {
        match *self {
            Self::Construction => None,
            Self::Fixed(v) => Some(v),
            Self::SqrtDt(k) => Some(k * dt_max.sqrt()),
        }
    }
}

impl fmt::Display for ZeroThresholdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Construction => f.write_str("construction"),
            Self::Fixed(v) => write!(f, "fixed:{v}"),
            Self::SqrtDt(k) => write!(f, "sqrt-dt:{k}"),
        }
    }
}

/// Fully resolved configuration of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub mu: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub zero_threshold_rule: ZeroThresholdRule,
    pub construction: ConstructionChoice,
    /// Evaluate the uncorrected printed weights where an experiment supports it.
    pub as_printed: bool,
    /// Output directory (not part of the report).
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (not part of the report: results do not depend on it).
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Default seed of every experiment.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Parse a flat `key = value` file; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, UsageError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!(
                "config line {}: expected key = value, got '{raw}'",
                no + 1
            ));
        };
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return usage(format!(
                "config line {}: unknown key '{}' (known: {})",
                no + 1,
                k.trim(),
                CONFIG_KEYS.join(", ")
            ));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return usage(format!("config line {}: duplicate key '{key}'", no + 1));
        }
    }
    Ok(out)
}

/// Read and parse a configuration file.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
    parse_key_values(&text)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.parse()
        .map_err(|_| UsageError(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, UsageError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => usage(format!("{key}: expected true/false, got '{v}'")),
    }
}

fn parse_construction(v: &str) -> Result<ConstructionChoice, UsageError> {
    match v.to_ascii_lowercase().replace('_', "-").as_str() {
        "auto" => Ok(ConstructionChoice::Auto),
        "direct" => Ok(ConstructionChoice::Direct),
        "time-change" | "timechange" => Ok(ConstructionChoice::TimeChange),
        _ => usage(format!(
            "construction: expected auto, direct or time-change, got '{v}'"
        )),
    }
}

impl ExperimentConfig {
    /// Registry defaults for `experiment_id`.
    pub fn defaults(experiment_id: &str) -> Result<Self, UsageError> {
        let Some(info) = find_experiment(experiment_id) else {
            let ids: Vec<&str> = registry().iter().map(|e| e.id).collect();
            return usage(format!(
                "unknown experiment '{experiment_id}'; valid experiments: {}",
                ids.join(", ")
            ));
        };
        let d = info.defaults;
        Ok(Self {
            experiment_id: info.id.to_string(),
            mu: d.mu,
            n_paths: d.n_paths,
            n_steps: d.n_steps,
            horizon: d.horizon,
            seed: DEFAULT_SEED,
            epsilon: d.epsilon,
            zero_threshold_rule: ZeroThresholdRule::Construction,
            construction: ConstructionChoice::Auto,
            as_printed: false,
            output_dir: None,
            workers: None,
        })
    }

    /// Layer `file` and then `flags` over the registry defaults.
    /// The experiment id comes from the flags, else from the file.
    pub fn resolve(
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self, UsageError> {
        let mut merged = file.clone();
        for (k, v) in flags {
            merged.insert(k.clone(), v.clone());
        }
        let Some(id) = merged.get("experiment") else {
            let ids: Vec<&str> = registry().iter().map(|e| e.id).collect();
            return usage(format!(
                "no experiment given; valid experiments: {}",
                ids.join(", ")
            ));
        };
        let mut cfg = Self::defaults(id)?;
        for (k, v) in &merged {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration of a raw path dump: one path of 1000 steps on `[0, 1]`
    /// unless overridden. The `experiment` key is not used.
    pub fn for_dump(
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
    ) -> Result<Self, UsageError> {
        let mut cfg = Self {
            experiment_id: "dump-paths".to_string(),
            mu: 0.5,
            n_paths: 1,
            n_steps: 1000,
            horizon: 1.0,
            seed: DEFAULT_SEED,
            epsilon: 0.02,
            zero_threshold_rule: ZeroThresholdRule::Construction,
            construction: ConstructionChoice::Auto,
            as_printed: false,
            output_dir: None,
            workers: None,
        };
        let mut merged = file.clone();
        for (k, v) in flags {
            merged.insert(k.clone(), v.clone());
        }
        for (k, v) in &merged {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<(), UsageError> {
        match key {
            "experiment" => {}
            "mu" => self.mu = parse_num(key, v)?,
            "paths" => self.n_paths = parse_num(key, v)?,
            "steps" => self.n_steps = parse_num(key, v)?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "eps" => self.epsilon = parse_num(key, v)?,
            "out" => self.output_dir = Some(PathBuf::from(v)),
            "workers" => self.workers = Some(parse_num(key, v)?),
            "as_printed" => self.as_printed = parse_bool(key, v)?,
            "construction" => self.construction = parse_construction(v)?,
            "zero_threshold_rule" => self.zero_threshold_rule = ZeroThresholdRule::parse(v)?,
            other => return usage(format!("unknown configuration key '{other}'")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return usage(format!("mu must lie in (0,1), got {}", self.mu));
        }
        if self.n_paths == 0 {
            return usage("paths must be positive");
        }
        if self.n_steps == 0 {
            return usage("steps must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return usage(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.epsilon > 0.0) {
            return usage(format!("eps must be positive, got {}", self.epsilon));
        }
        if self.workers == Some(0) {
            return usage("workers must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn parses_comments_and_blank_lines() {
        let m = parse_key_values("# sweep\nmu = 0.25\n\n paths=100 # small\nas-printed = yes\n")
            .unwrap();
        assert_eq!(
            m,
            map(&[("mu", "0.25"), ("paths", "100"), ("as_printed", "yes")])
        );
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(parse_key_values("colour = red")
            .unwrap_err()
            .0
            .contains("unknown key"));
        assert!(parse_key_values("mu=0.2\nmu=0.3")
            .unwrap_err()
            .0
            .contains("duplicate"));
        assert!(parse_key_values("mu 0.2").is_err());
    }

    #[test]
    fn flag_wins_over_file_over_defaults() {
        let file = map(&[("experiment", "beta-law"), ("mu", "0.25"), ("paths", "10")]);
        let flags = map(&[("paths", "20")]);
        let cfg = ExperimentConfig::resolve(&file, &flags).unwrap();
        assert_eq!(cfg.mu, 0.25);
        assert_eq!(cfg.n_paths, 20);
        let defaults = ExperimentConfig::defaults("beta-law").unwrap();
        assert_eq!(cfg.n_steps, defaults.n_steps);
    }

    #[test]
    fn unknown_experiment_lists_registry() {
        let err = ExperimentConfig::resolve(&map(&[("experiment", "nope")]), &BTreeMap::new())
            .unwrap_err();
        assert!(
            err.0.contains("beta-law") && err.0.contains("z-tower"),
            "{err}"
        );
    }

    #[test]
    fn validation_errors() {
        for (k, v) in [
            ("mu", "1.0"),
            ("paths", "0"),
            ("horizon", "-1"),
            ("eps", "0"),
            ("workers", "0"),
        ] {
            let r = ExperimentConfig::resolve(
                &map(&[("experiment", "beta-law"), (k, v)]),
                &BTreeMap::new(),
            );
            assert!(r.is_err(), "{k}={v} accepted");
        }
        assert!(ExperimentConfig::resolve(
            &map(&[("experiment", "beta-law"), ("mu", "abc")]),
            &BTreeMap::new()
        )
        .is_err());
    }

    #[test]
    fn zero_threshold_rules() {
        assert_eq!(
            ZeroThresholdRule::parse("construction").unwrap(),
            ZeroThresholdRule::Construction
        );
        assert_eq!(
            ZeroThresholdRule::parse("fixed:0.01").unwrap(),
            ZeroThresholdRule::Fixed(0.01)
        );
        let r = ZeroThresholdRule::parse("sqrt-dt:3").unwrap();
        assert!((r.threshold(1e-4).unwrap() - 0.03).abs() < 1e-15);
        assert!(ZeroThresholdRule::parse("fixed:-1").is_err());
        assert!(ZeroThresholdRule::parse("other:1").is_err());
        assert_eq!(ZeroThresholdRule::parse(&r.to_string()).unwrap(), r);
    }
}
