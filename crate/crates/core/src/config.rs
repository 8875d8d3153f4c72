//! TOML experiment configuration.

use crate::apriori::{AprioriProblem, NonlinearitySpec};
use crate::coefficient::{Regime, DEFAULT_NUMERIC_CAP};
use crate::grid::EigenvalueGrid;
use crate::kirchhoff::LiftOptions;
use crate::moduli::{ContinuityModulus, ModulusSpec, WeightFunction, WeightSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Params,
    Construct,
    VerifyLinear,
    LiftKirchhoff,
    Apriori,
    Classify,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Classify,
        Stage::Params,
        Stage::Construct,
        Stage::VerifyLinear,
        Stage::LiftKirchhoff,
        Stage::Apriori,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Params => "params",
            Stage::Construct => "construct",
            Stage::VerifyLinear => "verify-linear",
            Stage::LiftKirchhoff => "lift-kirchhoff",
            Stage::Apriori => "apriori",
            Stage::Classify => "classify",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.iter().copied().find(|st| st.name() == s.trim())
    }

    /// Stages this one needs, in pipeline order.
    pub fn closure(stages: &[Stage]) -> Vec<Stage> {
        let mut v: Vec<Stage> = Vec::new();
        for &s in stages {
            let needs: &[Stage] = match s {
                Stage::Construct => &[Stage::Params],
                Stage::VerifyLinear | Stage::LiftKirchhoff => &[Stage::Params, Stage::Construct],
                _ => &[],
            };
            v.extend(needs);
            v.push(s);
        }
        v.sort_by_key(|s| Stage::ALL.iter().position(|x| x == s));
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "lift_intervals")]
    pub grid_intervals: usize,
    #[serde(default = "closure_points")]
    pub closure_points: usize,
    #[serde(default = "omega_pairs")]
    pub omega_pairs: usize,
    #[serde(default = "seed")]
    pub seed: u64,
    #[serde(default = "yes")]
    pub round_trip: bool,
}

fn one() -> f64 {
    1.0
}
fn lift_intervals() -> usize {
    8192
}
fn closure_points() -> usize {
    20_000
}
fn omega_pairs() -> usize {
    10_000
}
fn seed() -> u64 {
    7
}
fn yes() -> bool {
    true
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            lambda1: 1.0,
            grid_intervals: lift_intervals(),
            closure_points: closure_points(),
            omega_pairs: omega_pairs(),
            seed: seed(),
            round_trip: true,
        }
    }
}

impl LiftConfig {
    pub fn options(&self) -> LiftOptions {
        LiftOptions {
            lambda1: self.lambda1,
            grid_intervals: self.grid_intervals,
            closure_points: self.closure_points,
            omega_pairs: self.omega_pairs,
            seed: self.seed,
            round_trip: self.round_trip,
        }
    }
}

/// Galerkin problem for the a priori stage. Anything left out falls back
/// to the regime's desk problem.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AprioriConfig {
    pub omega: Option<ModulusSpec>,
    pub phi: Option<WeightSpec>,
    pub m: Option<NonlinearitySpec>,
    pub lambdas: Option<Vec<f64>>,
    pub u0: Option<Vec<f64>>,
    pub u1: Option<Vec<f64>>,
    pub r0: Option<f64>,
    pub kernel_sharpness: Option<f64>,
    pub time_points: Option<usize>,
    pub tau_points: Option<usize>,
    pub horizon: Option<f64>,
}

impl AprioriConfig {
    /// Both desk problems use the Lipschitz modulus.
    pub fn omega_spec(&self) -> ModulusSpec {
        self.omega.clone().unwrap_or(ModulusSpec::Power { alpha: 1.0 })
    }

    pub fn problem(&self, regime: Regime) -> AprioriProblem {
        let mut p = match regime {
            Regime::Sh => AprioriProblem::sh_desk(),
            Regime::Wh => AprioriProblem::wh_desk(),
        };
        p.omega = ContinuityModulus::from_spec(&self.omega_spec());
        if let Some(f) = &self.phi {
            p.phi = WeightFunction::from_spec(f);
        }
        if let Some(m) = &self.m {
            p.m = m.clone();
        }
        if let Some(l) = &self.lambdas {
            p.lambdas = l.clone();
            if self.u0.is_none() {
                p.u0 = l.iter().map(|x| (-x).exp()).collect();
            }
            if self.u1.is_none() {
                p.u1 = vec![0.0; l.len()];
            }
        }
        if let Some(u) = &self.u0 {
            p.u0 = u.clone();
        }
        if let Some(u) = &self.u1 {
            p.u1 = u.clone();
        }
        if let Some(r) = self.r0 {
            p.r0 = r;
        }
        p
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub omega: ModulusSpec,
    pub phi: WeightSpec,
    pub grid: EigenvalueGrid,
    pub depth: usize,
    #[serde(default = "default_cap")]
    pub numeric_cap: f64,
    /// samples per smooth piece of every mode trace
    #[serde(default = "default_density")]
    pub sample_density: usize,
    /// points of the exported coefficient
    #[serde(default = "default_coef_points")]
    pub coefficient_points: usize,
    pub betas: Vec<f64>,
    pub rs: Vec<f64>,
    pub output: Option<PathBuf>,
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub lift: LiftConfig,
    #[serde(default)]
    pub apriori: AprioriConfig,
}

fn default_cap() -> f64 {
    DEFAULT_NUMERIC_CAP
}
fn default_density() -> usize {
    64
}
fn default_coef_points() -> usize {
    2001
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let c: ExperimentConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.depth < 1 {
            return bad("depth must be at least 1");
        }
        if self.betas.is_empty() || self.rs.is_empty() {
            return bad("betas and rs must be nonempty");
        }
        if self.betas.iter().chain(&self.rs).any(|x| !x.is_finite() || *x < 0.0) {
            return bad("betas and rs must be finite and nonnegative");
        }
        if !(self.numeric_cap > 1.0) {
            return bad("numeric_cap must exceed 1");
        }
        if self.sample_density < 2 || self.coefficient_points < 2 {
            return bad("sample counts must be at least 2");
        }
        match self.omega {
            ModulusSpec::Power { alpha } if !(alpha > 0.0 && alpha <= 1.0) => return bad("power modulus needs 0 < alpha <= 1"),
            ModulusSpec::PowerLog { p } | ModulusSpec::InverseLog { p } if !(p > 0.0) => {
                return bad("log modulus needs p > 0")
            }
            _ => {}
        }
        match self.phi {
            WeightSpec::Power { exponent } | WeightSpec::PowerOverLog { exponent } | WeightSpec::LogPower { exponent }
                if !(exponent > 0.0) =>
            {
                return bad("weight exponent must be positive")
            }
            _ => {}
        }
        if let Some(a) = self.apriori.kernel_sharpness {
            if !(a > 0.0) {
                return bad("kernel_sharpness must be positive");
            }
        }
        if let Some(s) = &self.stages {
            if s.is_empty() {
                return bad("stages must be nonempty when given");
            }
        }
        Ok(())
    }

    pub fn omega_fn(&self) -> ContinuityModulus {
        ContinuityModulus::from_spec(&self.omega)
    }

    pub fn phi_fn(&self) -> WeightFunction {
        WeightFunction::from_spec(&self.phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SH: &str = r#"
regime = "sh"
depth = 3
betas = [0.5, 0.6, 0.75, 1.0]
rs = [0, 0.5, 1, 2]
omega = { kind = "power", alpha = 0.5 }
phi = { kind = "power_over_log", exponent = 0.5 }
grid = { kind = "pow2" }
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(SH).unwrap();
        assert_eq!(c.regime, Regime::Sh);
        assert_eq!(c.numeric_cap, DEFAULT_NUMERIC_CAP);
        assert_eq!(c.lift.grid_intervals, 8192);
        assert!(c.stages.is_none());
        let p = c.apriori.problem(c.regime);
        assert_eq!(p.lambdas.len(), 8);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(ExperimentConfig::from_toml(&format!("{SH}\nbogus = 1\n")), Err(ConfigError::Parse(_))));
        let bad = SH.replace("depth = 3", "depth = 0");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Invalid(_))));
        let bad = SH.replace("alpha = 0.5", "alpha = 1.5");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(ConfigError::Invalid(_))));
        let bad = SH.replace("kind = \"pow2\"", "kind = \"fibonacci\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn stage_closure_orders_and_fills() {
        let v = Stage::closure(&[Stage::Apriori, Stage::VerifyLinear]);
        assert_eq!(v, vec![Stage::Params, Stage::Construct, Stage::VerifyLinear, Stage::Apriori]);
        assert_eq!(Stage::parse("lift-kirchhoff"), Some(Stage::LiftKirchhoff));
        assert_eq!(Stage::parse("nope"), None);
    }
}
