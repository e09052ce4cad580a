//! Experiment configuration.
//!
//! Configs are TOML documents: a few top-level keys plus one table per
//! concern. Unknown keys anywhere are errors, so a manifest written by the
//! runner always describes exactly what was run. See `docs/formats.md` for
//! the full key list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_coefficient_expr, CoefficientExpr, ExprError};
use crate::gbm::{FamilySpec, VolatilityBand};
use crate::grid::{EndpointRule, TimeGrid};
use crate::ito::make_test_function;
use crate::rgsde::{Coefficient, ObstacleSpec, RGSDEProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("`{key}`: {message}")]
    Range { key: String, message: String },

    #[error("missing required key `{0}`")]
    Missing(String),

    #[error("`{key}`: {source}")]
    Expr { key: String, source: ExprError },
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Picard,
    Expectation,
    Capacity,
    CheckIto,
    CheckBdg,
    CheckQv,
    Compare,
    Stability,
    Gheat,
    Skorokhod,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::Simulate,
        ExperimentKind::Picard,
        ExperimentKind::Expectation,
        ExperimentKind::Capacity,
        ExperimentKind::CheckIto,
        ExperimentKind::CheckBdg,
        ExperimentKind::CheckQv,
        ExperimentKind::Compare,
        ExperimentKind::Stability,
        ExperimentKind::Gheat,
        ExperimentKind::Skorokhod,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Picard => "picard",
            ExperimentKind::Expectation => "expectation",
            ExperimentKind::Capacity => "capacity",
            ExperimentKind::CheckIto => "check_ito",
            ExperimentKind::CheckBdg => "check_bdg",
            ExperimentKind::CheckQv => "check_qv",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Gheat => "gheat",
            ExperimentKind::Skorokhod => "skorokhod",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
    /// Number of grids in refinement studies; level `i` has `steps·2^i` steps.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    1
}

impl GridSpec {
    pub fn grid(&self, level: usize) -> crate::Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.steps << level)
    }
}

fn default_band() -> VolatilityBand {
    VolatilityBand { sigma_low_sq: 0.25, sigma_high_sq: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    #[serde(default)]
    pub s0: f64,
    #[serde(default = "zero_expr")]
    pub f: String,
    #[serde(default = "zero_expr")]
    pub h: String,
    #[serde(default = "zero_expr")]
    pub g: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_lipschitz: Option<f64>,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self { s0: 0.0, f: zero_expr(), h: zero_expr(), g: zero_expr(), f_lipschitz: None, h_lipschitz: None, g_lipschitz: None }
    }
}

fn zero_expr() -> String {
    "0".into()
}

fn one_expr() -> String {
    "1".into()
}

/// Coefficients are expressions in `t, x, b, qv`; the optional
/// `*_lipschitz` keys declare bounds for the audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "zero_expr")]
    pub f: String,
    #[serde(default = "zero_expr")]
    pub h: String,
    #[serde(default = "one_expr")]
    pub g: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_lipschitz: Option<f64>,
    #[serde(default)]
    pub obstacle: ObstacleConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            x0: 0.0,
            f: zero_expr(),
            h: zero_expr(),
            g: one_expr(),
            f_lipschitz: None,
            h_lipschitz: None,
            g_lipschitz: None,
            obstacle: ObstacleConfig::default(),
        }
    }
}

fn coefficient(key: &str, text: &str, bound: Option<f64>) -> Result<Coefficient, ConfigError> {
    parse_coefficient_expr(text, bound)
        .map(Coefficient::from_expr)
        .map_err(|source| ConfigError::Expr { key: key.into(), source })
}

impl ProblemConfig {
    /// Builds the problem; `prefix` names the table in error messages.
    pub fn build(&self, prefix: &str) -> Result<RGSDEProblem, ConfigError> {
        let k = |name: &str| format!("{prefix}.{name}");
        let o = &self.obstacle;
        let obstacle = ObstacleSpec {
            s0: o.s0,
            drift: coefficient(&k("obstacle.f"), &o.f, o.f_lipschitz)?,
            qv_drift: coefficient(&k("obstacle.h"), &o.h, o.h_lipschitz)?,
            diffusion: coefficient(&k("obstacle.g"), &o.g, o.g_lipschitz)?,
        };
        if !self.x0.is_finite() || !o.s0.is_finite() {
            return Err(range(&k("x0"), "initial values must be finite"));
        }
        if o.s0 > self.x0 {
            return Err(range(&k("obstacle.s0"), format!("obstacle start {} exceeds x0 = {}", o.s0, self.x0)));
        }
        for (name, bound) in [("f_lipschitz", self.f_lipschitz), ("h_lipschitz", self.h_lipschitz), ("g_lipschitz", self.g_lipschitz)] {
            if bound.is_some_and(|b| !(b >= 0.0)) {
                return Err(range(&k(name), "Lipschitz bound must be nonnegative"));
            }
        }
        Ok(RGSDEProblem {
            x0: self.x0,
            drift: coefficient(&k("f"), &self.f, self.f_lipschitz)?,
            qv_drift: coefficient(&k("h"), &self.h, self.h_lipschitz)?,
            diffusion: coefficient(&k("g"), &self.g, self.g_lipschitz)?,
            obstacle,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Moment order for stability gaps.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub rule: EndpointRule,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    100
}
fn default_p() -> f64 {
    3.0
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { tol: default_tol(), max_iter: default_max_iter(), p: default_p(), rule: EndpointRule::Left }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoConfig {
    /// Test function tags; `smooth_bump` and `polynomial` take `params`.
    #[serde(default = "default_functions")]
    pub functions: Vec<String>,
    #[serde(default)]
    pub params: Vec<f64>,
}

fn default_functions() -> Vec<String> {
    vec!["quadratic".into(), "cubic".into(), "positive_part_cubed".into()]
}

impl Default for ItoConfig {
    fn default() -> Self {
        Self { functions: default_functions(), params: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdgConfig {
    #[serde(default = "default_bdg_p")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    /// Integrand expression in `t, b, qv`.
    #[serde(default = "one_expr")]
    pub eta: String,
}

fn default_bdg_p() -> f64 {
    2.0
}

impl Default for BdgConfig {
    fn default() -> Self {
        Self { p: default_bdg_p(), constant: None, eta: one_expr() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_nx")]
    pub nx: usize,
}

fn default_half_width() -> f64 {
    6.0
}
fn default_nx() -> usize {
    600
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self { x0: 0.0, half_width: default_half_width(), nx: default_nx() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Terminal payoff in `t, x, b, qv` (expectation), or `φ(x)` (gheat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    /// Capacity event: holds where the expression is positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    pub grid: GridSpec,
    #[serde(default = "default_band")]
    pub band: VolatilityBand,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem2: Option<ProblemConfig>,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub ito: ItoConfig,
    #[serde(default)]
    pub bdg: BdgConfig,
    #[serde(default)]
    pub pde: PdeConfig,
}

fn default_paths() -> usize {
    1
}

/// Upper bound on the finest grid size of any study.
pub const MAX_STEPS: usize = 10_000_000;

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn serialize_config(spec: &ExperimentSpec) -> String {
    toml::to_string(spec).expect("spec serializes to TOML")
}

fn parse_field(key: &str, text: &str) -> Result<CoefficientExpr, ConfigError> {
    parse_coefficient_expr(text, None).map_err(|source| ConfigError::Expr { key: key.into(), source })
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.grid;
        if !(g.horizon > 0.0) || !g.horizon.is_finite() {
            return Err(range("grid.horizon", format!("must be positive, got {}", g.horizon)));
        }
        if g.steps == 0 {
            return Err(range("grid.steps", "must be at least 1"));
        }
        if g.levels == 0 || g.levels > 20 {
            return Err(range("grid.levels", format!("must be in 1..=20, got {}", g.levels)));
        }
        if g.steps.checked_shl(g.levels as u32 - 1).is_none_or(|n| n > MAX_STEPS || n >> (g.levels - 1) != g.steps) {
            return Err(range("grid.steps", format!("finest grid exceeds {MAX_STEPS} steps")));
        }
        if self.paths == 0 {
            return Err(range("paths", "must be at least 1"));
        }
        self.band.validate().map_err(|e| range("band", e.to_string()))?;
        if self.family.constants == 0 && self.family.bang_bang.is_empty() && self.family.random_switch.is_empty() {
            return Err(range("family", "control family is empty"));
        }
        crate::gbm::build_family(&self.family, self.band).map_err(|e| range("family", e.to_string()))?;
        let t = &self.tolerance;
        if !(t.tol > 0.0) {
            return Err(range("tolerance.tol", "must be positive"));
        }
        if t.max_iter == 0 {
            return Err(range("tolerance.max_iter", "must be at least 1"));
        }
        if !(t.p > 2.0) || !t.p.is_finite() {
            return Err(range("tolerance.p", format!("moment order must exceed 2, got {}", t.p)));
        }
        if !(self.pde.half_width > 0.0) {
            return Err(range("pde.half_width", "must be positive"));
        }
        if self.pde.nx < 16 {
            return Err(range("pde.nx", "must be at least 16"));
        }
        if !(self.bdg.p >= 1.0) {
            return Err(range("bdg.p", "must be at least 1"));
        }
        if self.bdg.constant.is_some_and(|c| !(c > 0.0)) {
            return Err(range("bdg.constant", "must be positive"));
        }
        parse_field("bdg.eta", &self.bdg.eta)?;
        for tag in &self.ito.functions {
            make_test_function(tag, &self.ito.params).map_err(|e| range("ito.functions", e.to_string()))?;
        }
        self.problem.build("problem")?;
        if let Some(p2) = &self.problem2 {
            p2.build("problem2")?;
        }
        if let Some(p) = &self.payoff {
            parse_field("payoff", p)?;
        }
        if let Some(e) = &self.event {
            parse_field("event", e)?;
        }
        if let Some(kind) = self.kind {
            self.validate_for(kind)?;
        }
        Ok(())
    }

    /// Checks the keys a particular experiment needs.
    pub fn validate_for(&self, kind: ExperimentKind) -> Result<(), ConfigError> {
        use ExperimentKind::*;
        match kind {
            Expectation | Gheat if self.payoff.is_none() => return Err(ConfigError::Missing("payoff".into())),
            Capacity if self.event.is_none() => return Err(ConfigError::Missing("event".into())),
            Compare | Stability if self.problem2.is_none() => return Err(ConfigError::Missing("problem2".into())),
            _ => {}
        }
        if matches!(kind, Expectation | Capacity | CheckIto | CheckBdg | CheckQv | Stability) && self.paths < 2 {
            return Err(range("paths", format!("{} needs at least 2 paths", kind.name())));
        }
        if kind == CheckBdg && self.bdg.p < 2.0 {
            return Err(range("bdg.p", "the dB bound needs p >= 2"));
        }
        if kind == Gheat {
            let payoff = parse_field("payoff", self.payoff.as_deref().unwrap_or("0"))?;
            if payoff.tree.uses(crate::expr::Var::B) || payoff.tree.uses(crate::expr::Var::Qv) {
                return Err(range("payoff", "gheat payoffs are functions of x only"));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<RGSDEProblem, ConfigError> {
        self.problem.build("problem")
    }

    pub fn problem2(&self) -> Result<RGSDEProblem, ConfigError> {
        self.problem2.as_ref().ok_or_else(|| ConfigError::Missing("problem2".into()))?.build("problem2")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 42

[grid]
horizon = 1.0
steps = 1000

[problem]
f = "0"
h = "0"
g = "1"

[problem.obstacle]
s0 = 0.0
"#;

    #[test]
    fn minimal_simulate_config() {
        let spec = parse_config(MINIMAL).unwrap();
        assert_eq!(spec.seed, 42);
        assert_eq!(spec.grid.steps, 1000);
        assert_eq!(spec.band.sigma_high_sq, 1.0);
        assert_eq!(spec.family, FamilySpec::default());
        assert_eq!(spec.tolerance.p, 3.0);
        assert_eq!(spec.tolerance.tol, 1e-8);
        assert_eq!(spec.tolerance.rule, EndpointRule::Left);
        spec.validate_for(ExperimentKind::Simulate).unwrap();
        let p = spec.problem().unwrap();
        assert_eq!(p.diffusion.eval(0.0, 3.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("sigma = 0.5\n{MINIMAL}");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
        let nested = MINIMAL.replace("s0 = 0.0", "s0 = 0.0\nslope = 1");
        assert!(parse_config(&nested).unwrap_err().to_string().contains("slope"));
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = parse_config(&MINIMAL.replace("steps = 1000", "steps = 0")).unwrap_err();
        assert!(matches!(&err, ConfigError::Range { key, .. } if key == "grid.steps"), "{err}");
        let err = parse_config(&MINIMAL.replace("horizon = 1.0", "horizon = -1.0")).unwrap_err();
        assert!(matches!(&err, ConfigError::Range { key, .. } if key == "grid.horizon"));
        let err = parse_config(&MINIMAL.replace("s0 = 0.0", "s0 = 1.0")).unwrap_err();
        assert!(matches!(&err, ConfigError::Range { key, .. } if key == "problem.obstacle.s0"));
        let err = parse_config(&format!("{MINIMAL}\n[tolerance]\np = 2.0\n")).unwrap_err();
        assert!(matches!(&err, ConfigError::Range { key, .. } if key == "tolerance.p"));
    }

    #[test]
    fn missing_and_bad_expressions() {
        let err = parse_config("seed = 1\n").unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
        let err = parse_config(&MINIMAL.replace("g = \"1\"", "g = \"1 +\"")).unwrap_err();
        assert!(matches!(&err, ConfigError::Expr { key, .. } if key == "problem.g"), "{err}");
        let mut spec = parse_config(MINIMAL).unwrap();
        assert_eq!(spec.validate_for(ExperimentKind::Compare), Err(ConfigError::Missing("problem2".into())));
        spec.payoff = Some("b*b".into());
        assert!(spec.validate_for(ExperimentKind::Gheat).is_err());
    }

    #[test]
    fn round_trip() {
        let mut spec = parse_config(MINIMAL).unwrap();
        spec.kind = Some(ExperimentKind::Compare);
        spec.problem2 = Some(ProblemConfig { x0: 0.5, f: "-x".into(), f_lipschitz: Some(1.0), ..Default::default() });
        spec.payoff = Some("b*b".into());
        spec.tolerance.tol = 1.0 / 3.0 * 1e-9;
        spec.family.bang_bang = vec![0.1];
        let text = serialize_config(&spec);
        assert_eq!(parse_config(&text).unwrap(), spec);
    }

    #[test]
    fn kind_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::from_name(k.name()), Some(k));
        }
        assert_eq!(ExperimentKind::from_name("nope"), None);
    }
}
