//! Run configuration: a TOML file with dotted sections.
//!
//! ```toml
//! [run]
//! seed = 7
//! output = "out/constant"
//! tasks = ["geom-check", "solve-linear"]
//!
//! [problem]
//! preset = "constant"
//!
//! [solve]
//! method = "fd"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{make_ball, make_interval, DomainSpec};
use crate::paths::ReflectionScheme;
use crate::point::Point;
use crate::presets::{self, Preset};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GeomCheck,
    Paths,
    Lift,
    StarCheck,
    SolveLinear,
    SolvePenalized,
    SolveNonlinear,
    Residual,
    Compare,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GeomCheck => "geom-check",
            Task::Paths => "paths",
            Task::Lift => "lift",
            Task::StarCheck => "star-check",
            Task::SolveLinear => "solve-linear",
            Task::SolvePenalized => "solve-penalized",
            Task::SolveNonlinear => "solve-nonlinear",
            Task::Residual => "residual",
            Task::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fd,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathScheme {
    Reflected,
    Penalized,
    Coupled,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fd" => Ok(Method::Fd),
            "mc" => Ok(Method::Mc),
            _ => Err(format!("unknown method `{s}` (expected fd or mc)")),
        }
    }
}

impl std::str::FromStr for PathScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "reflected" => Ok(PathScheme::Reflected),
            "penalized" => Ok(PathScheme::Penalized),
            "coupled" => Ok(PathScheme::Coupled),
            _ => Err(format!(
                "unknown scheme `{s}` (expected reflected, penalized or coupled)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub deterministic_reduction: bool,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: None,
            output: default_output(),
            workers: None,
            deterministic_reduction: false,
            tasks: default_tasks(),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_tasks() -> Vec<Task> {
    vec![Task::GeomCheck, Task::SolveLinear]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub kind: String,
    pub params: Vec<f64>,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            kind: "interval".into(),
            params: vec![-1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub preset: String,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            preset: "constant".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub method: Method,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self { method: Method::Fd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdSection {
    pub space_nodes: usize,
    pub time_nodes: usize,
    pub theta: f64,
}

impl Default for FdSection {
    fn default() -> Self {
        Self {
            space_nodes: 201,
            time_nodes: 401,
            theta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub dt: f64,
    pub scheme: ReflectionScheme,
    pub se_cap: f64,
    pub eval_t: Vec<f64>,
    pub eval_x: Vec<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            dt: 1e-3,
            scheme: ReflectionScheme::Mirror,
            se_cap: 0.05,
            eval_t: vec![0.0],
            eval_x: vec![-1.0, -0.8, -0.6, -0.4, -0.2, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenalizedSection {
    pub n: Vec<f64>,
}

impl Default for PenalizedSection {
    fn default() -> Self {
        Self {
            n: vec![8.0, 32.0, 128.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSection {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub time_nodes: usize,
    pub space_nodes: usize,
    pub distance_paths: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self {
            method: Method::Fd,
            tol: 1e-3,
            max_iter: 8,
            time_nodes: 11,
            space_nodes: 21,
            distance_paths: 4200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftSection {
    pub nodes: usize,
    pub slices: usize,
}

impl Default for LiftSection {
    fn default() -> Self {
        Self {
            nodes: 2001,
            slices: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub scheme: PathScheme,
    pub n: f64,
    pub dt: f64,
    pub horizon: f64,
    pub count: usize,
    pub x0: Vec<f64>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            scheme: PathScheme::Coupled,
            n: 32.0,
            dt: 1e-3,
            horizon: 1.0,
            count: 1000,
            x0: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub samples: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { samples: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub se_multiplier: f64,
    pub bias: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            se_multiplier: 3.0,
            bias: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run: Option<RunSection>,
    #[serde(default)]
    domain: DomainSection,
    #[serde(default)]
    problem: ProblemSection,
    #[serde(default)]
    solve: SolveSection,
    #[serde(default)]
    fd: FdSection,
    #[serde(default)]
    mc: McSection,
    #[serde(default)]
    penalized: PenalizedSection,
    #[serde(default)]
    picard: PicardSection,
    #[serde(default)]
    lift: LiftSection,
    #[serde(default)]
    paths: PathsSection,
    #[serde(default)]
    geometry: GeometrySection,
    #[serde(default)]
    compare: CompareSection,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub workers: Option<usize>,
    pub deterministic_reduction: bool,
    pub tasks: Vec<Task>,
    pub domain: DomainSection,
    pub problem: ProblemSection,
    pub solve: SolveSection,
    pub fd: FdSection,
    pub mc: McSection,
    pub penalized: PenalizedSection,
    pub picard: PicardSection,
    pub lift: LiftSection,
    pub paths: PathsSection,
    pub geometry: GeometrySection,
    pub compare: CompareSection,
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

fn positive_count(key: &str, v: usize) -> Result<(), ConfigError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(key, "must be positive"))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_seeded(text, None)
    }

    /// Like [`RunConfig::from_toml`], with `seed` taking precedence over
    /// `run.seed`.
    pub fn from_toml_seeded(text: &str, seed: Option<u64>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let run = raw.run.unwrap_or_default();
        let seed = seed.or(run.seed).ok_or(ConfigError::Missing("run.seed"))?;
        let cfg = RunConfig {
            seed,
            output: run.output,
            workers: run.workers,
            deterministic_reduction: run.deterministic_reduction,
            tasks: run.tasks,
            domain: raw.domain,
            problem: raw.problem,
            solve: raw.solve,
            fd: raw.fd,
            mc: raw.mc,
            penalized: raw.penalized,
            picard: raw.picard,
            lift: raw.lift,
            paths: raw.paths,
            geometry: raw.geometry,
            compare: raw.compare,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative `run.output` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_seeded(path, None)
    }

    pub fn load_seeded(path: &Path, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_seeded(&text, seed)?;
        if cfg.output.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output = dir.join(&cfg.output);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let raw = RawConfig {
            run: Some(RunSection {
                seed: Some(self.seed),
                output: self.output.clone(),
                workers: self.workers,
                deterministic_reduction: self.deterministic_reduction,
                tasks: self.tasks.clone(),
            }),
            domain: self.domain.clone(),
            problem: self.problem.clone(),
            solve: self.solve.clone(),
            fd: self.fd.clone(),
            mc: self.mc.clone(),
            penalized: self.penalized.clone(),
            picard: self.picard.clone(),
            lift: self.lift.clone(),
            paths: self.paths.clone(),
            geometry: self.geometry.clone(),
            compare: self.compare.clone(),
        };
        toml::to_string(&raw).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(w) = self.workers {
            positive_count("run.workers", w)?;
        }
        if self.tasks.is_empty() {
            return Err(invalid("run.tasks", "must list at least one task"));
        }
        self.domain_spec()?;
        self.preset()?;
        positive_count("fd.space_nodes", self.fd.space_nodes)?;
        positive_count("fd.time_nodes", self.fd.time_nodes)?;
        if !(0.0..=1.0).contains(&self.fd.theta) {
            return Err(invalid("fd.theta", "must lie in [0, 1]"));
        }
        positive_count("mc.paths", self.mc.paths)?;
        positive("mc.dt", self.mc.dt)?;
        positive("mc.se_cap", self.mc.se_cap)?;
        if self.mc.eval_x.is_empty() {
            return Err(invalid("mc.eval_x", "must not be empty"));
        }
        if self.mc.eval_t.is_empty() {
            return Err(invalid("mc.eval_t", "must not be empty"));
        }
        for n in &self.penalized.n {
            positive("penalized.n", *n)?;
        }
        positive("picard.tol", self.picard.tol)?;
        positive_count("picard.max_iter", self.picard.max_iter)?;
        positive_count("picard.distance_paths", self.picard.distance_paths)?;
        if self.picard.time_nodes < 2 {
            return Err(invalid("picard.time_nodes", "needs at least 2"));
        }
        if self.picard.space_nodes < 3 {
            return Err(invalid("picard.space_nodes", "needs at least 3"));
        }
        if self.lift.nodes < 3 {
            return Err(invalid("lift.nodes", "needs at least 3"));
        }
        positive_count("lift.slices", self.lift.slices)?;
        positive("paths.n", self.paths.n)?;
        positive("paths.dt", self.paths.dt)?;
        positive("paths.horizon", self.paths.horizon)?;
        positive_count("paths.count", self.paths.count)?;
        positive_count("geometry.samples", self.geometry.samples)?;
        positive("compare.se_multiplier", self.compare.se_multiplier)?;
        if !(self.compare.bias >= 0.0) {
            return Err(invalid("compare.bias", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec, ConfigError> {
        let p = &self.domain.params;
        match self.domain.kind.as_str() {
            "interval" => {
                if p.len() != 2 {
                    return Err(invalid("domain.params", "interval takes [a, b]"));
                }
                make_interval(p[0], p[1]).map_err(|e| invalid("domain.params", e.to_string()))
            }
            "ball" => {
                if p.len() < 2 || p.len() > 4 {
                    return Err(invalid(
                        "domain.params",
                        "ball takes [c1, .., cN, radius] with N <= 3",
                    ));
                }
                let (c, r) = p.split_at(p.len() - 1);
                make_ball(Point::from_slice(c), r[0])
                    .map_err(|e| invalid("domain.params", e.to_string()))
            }
            other => Err(invalid("domain.kind", format!("unknown kind '{other}'"))),
        }
    }

    pub fn preset(&self) -> Result<Preset, ConfigError> {
        presets::lookup(&self.problem.preset).ok_or_else(|| {
            invalid(
                "problem.preset",
                format!(
                    "unknown preset '{}'; known: {}",
                    self.problem.preset,
                    presets::names().join(", ")
                ),
            )
        })
    }
}
