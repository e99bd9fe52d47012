//! Run configuration: a flat `key = value` file (one key per line, `#`
//! comments) or a flat JSON object with the same keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{SyntheticParams, DEFAULT_LEVEL};
use crate::sgd::{CertificatePolicy, OutputOption, ProjectionMode, DEFAULT_EVAL_PERIOD};

pub type RawConfig = BTreeMap<String, String>;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses either format; JSON is recognized by a leading `{`.
pub fn parse_raw(text: &str, origin: &str) -> Result<RawConfig> {
    if text.trim_start().starts_with('{') {
        return parse_json(text, origin);
    }
    let mut out = RawConfig::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.into(),
            line: k + 1,
            message: "expected `key = value`".into(),
        })?;
        insert(&mut out, key.trim(), value.trim(), origin)?;
    }
    Ok(out)
}

fn parse_json(text: &str, origin: &str) -> Result<RawConfig> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| config_err(format!("{origin}: JSON config must be an object")))?;
    let mut out = RawConfig::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            _ => return Err(config_err(format!("{origin}: key {k:?} must be a string, number or boolean"))),
        };
        insert(&mut out, k, &s, origin)?;
    }
    Ok(out)
}

fn insert(map: &mut RawConfig, key: &str, value: &str, origin: &str) -> Result<()> {
    if key.is_empty() {
        return Err(config_err(format!("{origin}: empty key")));
    }
    if map.insert(key.to_string(), value.to_string()).is_some() {
        return Err(config_err(format!("{origin}: key {key:?} given twice")));
    }
    Ok(())
}

/// Applies `key=value` overrides on top of a parsed file.
pub fn apply_overrides(raw: &mut RawConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {o:?} is not `key=value`")))?;
        raw.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticSource {
    File(PathBuf),
    Params(SyntheticParams),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemConfig {
    Synthetic { source: SyntheticSource, sigma: Option<f64> },
    MovieLens { ratings: PathBuf, tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    Value(f64),
    /// The theorem's fixed step for the instance (synthetic only).
    Theorem,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSize {
    Value(usize),
    /// Fraction of the observed entries (matrix completion).
    Fraction(f64),
    /// The theorem's batch floor (synthetic only).
    Theorem,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPoint {
    Optimum,
    /// Within `radius` of the optimum; `None` means half the warm-start radius.
    Warm { radius: Option<f64> },
    /// Mean-filled matrix, top-r singular triplets.
    Svd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Fixed,
    InverseSqrt,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfigFile {
    pub problem: ProblemConfig,
    pub iterations: usize,
    pub eta: StepSize,
    pub schedule: ScheduleKind,
    pub batch: BatchSize,
    /// `None`: the instance's optimal rank.
    pub rank: Option<usize>,
    pub seed: u64,
    pub output: OutputOption,
    pub eval_period: usize,
    pub certificate: CertificatePolicy,
    pub mode: ProjectionMode,
    pub shadow: bool,
    pub tie_tolerance: Option<f64>,
    pub lanczos_tol: Option<f64>,
    pub start: StartPoint,
    pub c1: f64,
    pub c2: f64,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub solution: Option<PathBuf>,
}

struct Taker<'a> {
    map: RawConfig,
    base: &'a Path,
}

impl Taker<'_> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(format!("bad value {v:?} for {key}"))),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| config_err(format!("missing required key {key}")))
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>> {
        match self.parse::<f64>(key)? {
            Some(v) if !v.is_finite() => Err(config_err(format!("{key} must be finite"))),
            v => Ok(v),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                self.base.join(p)
            }
        })
    }

    fn finish(self, context: &str) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
        Err(config_err(format!("unknown key(s) for {context}: {}", keys.join(", "))))
    }
}

impl RunConfigFile {
    /// Relative paths are resolved against `base`.
    pub fn from_raw(raw: RawConfig, base: &Path) -> Result<Self> {
        let mut t = Taker { map: raw, base };
        let kind = t.take("problem").ok_or_else(|| config_err("missing required key problem"))?;
        let problem = match kind.as_str() {
            "synthetic" => {
                let sigma = t.float("sigma")?;
                let source = match t.path("instance") {
                    Some(p) => SyntheticSource::File(p),
                    None => {
                        let mut p = SyntheticParams::new(
                            t.required("n")?,
                            t.required("r_star")?,
                            t.float("delta")?.ok_or_else(|| config_err("missing required key delta"))?,
                            t.parse("instance_seed")?.unwrap_or(0),
                        );
                        p.level = t.float("level")?.unwrap_or(DEFAULT_LEVEL);
                        SyntheticSource::Params(p)
                    }
                };
                ProblemConfig::Synthetic { source, sigma }
            }
            "movielens" => ProblemConfig::MovieLens {
                ratings: t.path("ratings").ok_or_else(|| config_err("missing required key ratings"))?,
                tau: t.float("tau")?.ok_or_else(|| config_err("missing required key tau"))?,
            },
            other => return Err(config_err(format!("unknown problem {other:?} (expected synthetic or movielens)"))),
        };
        let synthetic = matches!(problem, ProblemConfig::Synthetic { .. });

        let eta = match t.take("eta").as_deref() {
            None => return Err(config_err("missing required key eta")),
            Some("theorem") => StepSize::Theorem,
            Some(v) => StepSize::Value(v.parse().map_err(|_| config_err(format!("bad value {v:?} for eta")))?),
        };
        let batch = match t.take("batch").as_deref() {
            None => return Err(config_err("missing required key batch")),
            Some("theorem") => BatchSize::Theorem,
            Some(v) if v.ends_with('%') => {
                let pct: f64 = v[..v.len() - 1]
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("bad batch percentage {v:?}")))?;
                if !(pct > 0.0 && pct <= 100.0) {
                    return Err(config_err(format!("batch percentage must be in (0, 100], got {v}")));
                }
                BatchSize::Fraction(pct / 100.0)
            }
            Some(v) => BatchSize::Value(v.parse().map_err(|_| config_err(format!("bad value {v:?} for batch")))?),
        };
        let schedule = match t.take("schedule").as_deref() {
            None | Some("fixed") => ScheduleKind::Fixed,
            Some("inverse-sqrt") => ScheduleKind::InverseSqrt,
            Some(v) => return Err(config_err(format!("unknown schedule {v:?} (fixed or inverse-sqrt)"))),
        };
        let output = match t.take("output").as_deref() {
            None | Some("II") | Some("2") => OutputOption::II,
            Some("I") | Some("1") => OutputOption::I,
            Some(v) => return Err(config_err(format!("unknown output option {v:?} (I or II)"))),
        };
        let max_rank = t.parse("max_rank")?;
        let certificate = match t.take("certificate").as_deref() {
            None | Some("escalate") => CertificatePolicy::Escalate { max_rank },
            Some(v) if max_rank.is_some() => {
                return Err(config_err(format!("max_rank only applies to certificate = escalate, not {v}")))
            }
            Some("dense-fallback") => CertificatePolicy::DenseFallback,
            Some("strict") => CertificatePolicy::Strict,
            Some(v) => return Err(config_err(format!("unknown certificate policy {v:?}"))),
        };
        let mode = match t.take("mode").as_deref() {
            None | Some("lowrank") => ProjectionMode::LowRank,
            Some("dense") => ProjectionMode::Dense,
            Some(v) => return Err(config_err(format!("unknown projection mode {v:?} (lowrank or dense)"))),
        };
        let start = match (t.take("start").as_deref(), synthetic) {
            (None, true) | (Some("warm"), true) => StartPoint::Warm {
                radius: t.float("start_radius")?,
            },
            (Some("optimum"), true) => StartPoint::Optimum,
            (None, false) | (Some("svd"), false) => StartPoint::Svd,
            (Some(v), _) => return Err(config_err(format!("start {v:?} is not available for problem {kind}"))),
        };
        if !synthetic && (eta == StepSize::Theorem || batch == BatchSize::Theorem) {
            return Err(config_err("eta/batch = theorem need a known optimum (synthetic problems only)"));
        }
        if synthetic && matches!(batch, BatchSize::Fraction(_)) {
            return Err(config_err("batch percentages apply to matrix completion only"));
        }
        let cfg = Self {
            problem,
            iterations: t.required("iterations")?,
            eta,
            schedule,
            batch,
            rank: t.parse("rank")?,
            seed: t.parse("seed")?.unwrap_or(0),
            output,
            eval_period: t.parse("eval_period")?.unwrap_or(DEFAULT_EVAL_PERIOD),
            certificate,
            mode,
            shadow: t.parse("shadow")?.unwrap_or(false),
            tie_tolerance: t.float("tie_tolerance")?,
            lanczos_tol: t.float("lanczos_tol")?,
            start,
            c1: t.float("c1")?.unwrap_or(1.0),
            c2: t.float("c2")?.unwrap_or(1.0),
            trace: t.path("trace"),
            summary: t.path("summary"),
            solution: t.path("solution"),
        };
        t.finish(&format!("problem {kind}"))?;
        if !synthetic && cfg.rank.is_none() {
            return Err(config_err("missing required key rank"));
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str, origin: &str, base: &Path, overrides: &[String]) -> Result<Self> {
        let mut raw = parse_raw(text, origin)?;
        apply_overrides(&mut raw, overrides)?;
        Self::from_raw(raw, base)
    }

    pub fn read(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, &path.display().to_string(), base, overrides)
    }
}

/// Shipped presets: the three low-rank settings of the MovieLens100K
/// experiments and a small synthetic smoke run.
pub const PRESETS: &[(&str, &str)] = &[
    ("movielens-tau3000", include_str!("../../presets/movielens-tau3000.conf")),
    ("movielens-tau3500", include_str!("../../presets/movielens-tau3500.conf")),
    ("movielens-tau4000", include_str!("../../presets/movielens-tau4000.conf")),
    ("synthetic-smoke", include_str!("../../presets/synthetic-smoke.conf")),
];

pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(k, _)| *k == name)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(k, _)| *k).collect();
            config_err(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })
}
