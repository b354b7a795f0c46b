//! Experiment configuration files.
//!
//! A config file is TOML with one `[experiment.<name>]` table per
//! experiment. Other top-level tables are left to the CLI.
//!
//! ```toml
//! [experiment.step_sizes]
//! n = [5]
//! p = [0.7]
//! policies = ["best", "polyak", "constant", "diminishing", "backtracking"]
//! horizon = 2000
//! trials = 10
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::sim::LengthLaw;
use crate::solver::InitRule;
use crate::stepsize::BacktrackingParams;
use crate::{Error, Result};

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "SUBGRAD_SYSID_OUTPUT_DIR";

/// Step-size rule as written in a config. Constant and diminishing steps
/// without an explicit value are scaled from the theory per trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Best,
    Polyak,
    Constant(Option<f64>),
    Diminishing(Option<f64>),
    Backtracking,
}

impl PolicySpec {
    pub fn all() -> Vec<PolicySpec> {
        vec![
            PolicySpec::Best,
            PolicySpec::Polyak,
            PolicySpec::Constant(None),
            PolicySpec::Diminishing(None),
            PolicySpec::Backtracking,
        ]
    }

    /// File-name friendly label.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Best => "best".into(),
            PolicySpec::Polyak => "polyak".into(),
            PolicySpec::Constant(None) => "constant".into(),
            PolicySpec::Constant(Some(b)) => format!("constant-{b}"),
            PolicySpec::Diminishing(None) => "diminishing".into(),
            PolicySpec::Diminishing(Some(b)) => format!("diminishing-{b}"),
            PolicySpec::Backtracking => "backtracking".into(),
        }
    }

    pub fn needs_truth(&self) -> bool {
        matches!(self, PolicySpec::Best | PolicySpec::Polyak)
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_positive(s: &str, what: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("{what} must be a positive number, got {s:?}"))),
    }
}

/// Accepts `best`, `polyak`, `backtracking`, `constant[=β]`,
/// `diminishing[=β₀]`.
impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = match s.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        let value = value.map(|v| parse_positive(v, name)).transpose()?;
        match (name.to_ascii_lowercase().as_str(), value) {
            ("best", None) => Ok(PolicySpec::Best),
            ("polyak", None) => Ok(PolicySpec::Polyak),
            ("backtracking", None) => Ok(PolicySpec::Backtracking),
            ("constant", v) => Ok(PolicySpec::Constant(v)),
            ("diminishing", v) => Ok(PolicySpec::Diminishing(v)),
            _ => Err(Error::Config(format!("unknown policy {s:?}"))),
        }
    }
}

/// Accepts `gaussian`, `state_scaled`, `fixed=m`.
pub fn parse_length_law(s: &str) -> Result<LengthLaw> {
    match s.split_once('=') {
        Some(("fixed", m)) => Ok(LengthLaw::FixedMagnitude(parse_positive(m, "fixed magnitude")?)),
        None if s == "gaussian" => Ok(LengthLaw::Gaussian),
        None if s == "state_scaled" => Ok(LengthLaw::StateScaledGaussian),
        _ => Err(Error::Config(format!("unknown length law {s:?}"))),
    }
}

/// Accepts `zeros` or `gaussian=s`.
pub fn parse_init(s: &str) -> Result<InitRule> {
    match s.split_once('=') {
        Some(("gaussian", v)) => Ok(InitRule::GaussianScaled(parse_positive(v, "init scale")?)),
        None if s == "zeros" => Ok(InitRule::Zeros),
        _ => Err(Error::Config(format!("unknown init rule {s:?}"))),
    }
}

/// Where the minimum solution gap window begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowStart {
    /// The burn-in estimate with unit constants and `κ = 1`.
    Theory,
    /// The empirical burn-in from the recovery certificate.
    Empirical,
    Fixed(usize),
}

impl FromStr for WindowStart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(WindowStart::Theory),
            "empirical" => Ok(WindowStart::Empirical),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(WindowStart::Fixed)
                .ok_or_else(|| Error::Config(format!("bad window_start {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawWindow {
    Index(usize),
    Name(String),
}

/// One `[experiment.<name>]` table as written.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    n: Option<Vec<usize>>,
    p: Option<Vec<f64>>,
    policies: Option<Vec<String>>,
    horizon: Option<usize>,
    trials: Option<usize>,
    trajectories_per_system: Option<usize>,
    base_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    plot: Option<bool>,
    workers: Option<usize>,
    init: Option<String>,
    window_start: Option<RawWindow>,
    length_law: Option<String>,
    c_scale: Option<f64>,
    certificate: Option<bool>,
    certificate_dirs: Option<usize>,
    certificate_streak: Option<usize>,
    slope_window: Option<usize>,
    ridge: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct ExperimentFile {
    #[serde(default)]
    experiment: BTreeMap<String, ExperimentSection>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub n_list: Vec<usize>,
    pub p_list: Vec<f64>,
    pub policies: Vec<PolicySpec>,
    pub horizon: usize,
    /// Number of systems per `(n, p)` pair.
    pub trials: usize,
    pub trajectories_per_system: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub plot: bool,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    pub init: InitRule,
    pub window_start: WindowStart,
    pub length_law: LengthLaw,
    /// Multiplier for theory-scaled constant and diminishing steps.
    pub c_scale: f64,
    pub certificate: bool,
    pub certificate_dirs: usize,
    pub certificate_streak: usize,
    pub slope_window: usize,
    pub ridge: f64,
    pub backtracking: BacktrackingParams,
}

pub fn default_output_root() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("output"))
}

impl ExperimentConfig {
    /// Defaults: `n = 5`, `p = 0.7`, all five policies, `T̄ = 2000`, 10
    /// trials.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        Self {
            output_dir: default_output_root().join(&name),
            name,
            n_list: vec![5],
            p_list: vec![0.7],
            policies: PolicySpec::all(),
            horizon: 2000,
            trials: 10,
            trajectories_per_system: 1,
            base_seed: 0,
            plot: true,
            workers: 0,
            init: InitRule::Zeros,
            window_start: WindowStart::Theory,
            length_law: LengthLaw::Gaussian,
            c_scale: 1.0,
            certificate: true,
            certificate_dirs: 256,
            certificate_streak: 10,
            slope_window: 200,
            ridge: 0.0,
            backtracking: BacktrackingParams::default(),
        }
    }

    pub fn from_section(name: &str, s: &ExperimentSection) -> Result<Self> {
        let mut c = Self::new(name);
        if let Some(v) = &s.n {
            c.n_list = v.clone();
        }
        if let Some(v) = &s.p {
            c.p_list = v.clone();
        }
        if let Some(v) = &s.policies {
            c.policies = v.iter().map(|p| p.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = s.horizon {
            c.horizon = v;
        }
        if let Some(v) = s.trials {
            c.trials = v;
        }
        if let Some(v) = s.trajectories_per_system {
            c.trajectories_per_system = v;
        }
        if let Some(v) = s.base_seed {
            c.base_seed = v;
        }
        if let Some(v) = &s.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = s.plot {
            c.plot = v;
        }
        if let Some(v) = s.workers {
            c.workers = v;
        }
        if let Some(v) = &s.init {
            c.init = parse_init(v)?;
        }
        if let Some(v) = &s.window_start {
            c.window_start = match v {
                RawWindow::Index(k) => format!("{k}").parse()?,
                RawWindow::Name(k) => k.parse()?,
            };
        }
        if let Some(v) = &s.length_law {
            c.length_law = parse_length_law(v)?;
        }
        if let Some(v) = s.c_scale {
            c.c_scale = v;
        }
        if let Some(v) = s.certificate {
            c.certificate = v;
        }
        if let Some(v) = s.certificate_dirs {
            c.certificate_dirs = v;
        }
        if let Some(v) = s.certificate_streak {
            c.certificate_streak = v;
        }
        if let Some(v) = s.slope_window {
            c.slope_window = v;
        }
        if let Some(v) = s.ridge {
            c.ridge = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("experiment {:?}: {m}", self.name)));
        if self.n_list.is_empty() || self.p_list.is_empty() || self.policies.is_empty() {
            return fail("n, p and policies must be non-empty");
        }
        if self.n_list.contains(&0) {
            return fail("dimensions must be at least 1");
        }
        if self.p_list.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return fail("p must lie in (0, 1)");
        }
        if self.horizon < 2 {
            return fail("horizon must be at least 2");
        }
        if self.trials == 0 || self.trajectories_per_system == 0 {
            return fail("trials and trajectories_per_system must be at least 1");
        }
        if !(self.c_scale > 0.0 && self.c_scale.is_finite()) {
            return fail("c_scale must be positive");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return fail("ridge must be nonnegative");
        }
        if self.certificate && (self.certificate_dirs == 0 || self.certificate_streak == 0) {
            return fail("certificate_dirs and certificate_streak must be at least 1");
        }
        if self.window_start == WindowStart::Empirical && !self.certificate {
            return fail("window_start = \"empirical\" needs certificate = true");
        }
        Ok(())
    }
}

/// Parses every `[experiment.<name>]` table, in name order.
pub fn parse_experiments(text: &str) -> Result<Vec<ExperimentConfig>> {
    let file: ExperimentFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.experiment
        .iter()
        .map(|(name, section)| ExperimentConfig::from_section(name, section))
        .collect()
}

pub fn load_experiments(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiments(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_round_trip() {
        for spec in [
            "best",
            "polyak",
            "constant",
            "diminishing",
            "backtracking",
            "constant=0.01",
        ] {
            let p: PolicySpec = spec.parse().unwrap();
            assert_eq!(p.label().replace('-', "="), spec);
        }
        assert!("best=1".parse::<PolicySpec>().is_err());
        assert!("constant=-1".parse::<PolicySpec>().is_err());
        assert!("newton".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn parses_sections_with_defaults() {
        let text = r#"
            [experiment.b]
            n = [5]
            p = [0.5, 0.7, 0.8]
            policies = ["polyak"]
            horizon = 300
            window_start = 5
            output_dir = "/tmp/x"

            [experiment.a]
            trials = 2
            window_start = "empirical"
            length_law = "fixed=0.5"
            init = "gaussian=1"

            [identify]
            policy = "best"
        "#;
        let cfgs = parse_experiments(text).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[0].name, "a");
        assert_eq!(cfgs[0].trials, 2);
        assert_eq!(cfgs[0].window_start, WindowStart::Empirical);
        assert_eq!(cfgs[0].length_law, LengthLaw::FixedMagnitude(0.5));
        assert_eq!(cfgs[0].init, InitRule::GaussianScaled(1.0));
        assert_eq!(cfgs[0].policies.len(), 5);
        assert_eq!(cfgs[1].p_list, vec![0.5, 0.7, 0.8]);
        assert_eq!(cfgs[1].window_start, WindowStart::Fixed(5));
        assert_eq!(cfgs[1].output_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejects_bad_sections() {
        assert!(parse_experiments("[experiment.a]\nhorizon = 1\n").is_err());
        assert!(parse_experiments("[experiment.a]\nbogus = 1\n").is_err());
        assert!(parse_experiments("[experiment.a]\np = [1.0]\n").is_err());
        assert!(parse_experiments("[experiment.a]\ncertificate = false\nwindow_start = \"empirical\"\n").is_err());
        assert!(parse_experiments("[experiment.a]\nwindow_start = 0\n").is_err());
    }
}
