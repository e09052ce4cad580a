//! Discrete check of the Itô formula for reflected G-Itô processes:
//!
//! ```text
//! Φ(X_T) − Φ(X_0) = ∫Φ′(X) f du + ∫Φ′(X) h d<B> + ∫Φ′(X) g dB
//!                 + ∫Φ′(X) dK + ½∫Φ″(X) g² d<B>
//! ```
//!
//! Every integral is a left-endpoint sum on the solution grid; the residual
//! is the absolute gap between the two sides.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbm::GScenario;
use crate::grid::{ensure_same_grid, riemann_sum_vn, EndpointRule, SamplePath};
use crate::rgsde::{RGSDEProblem, RGSDESolution};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    BoundedLipschitzDerivs,
    PolynomialGrowth,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestFunctionKind {
    Quadratic,
    Cubic,
    /// `(x⁺)³`
    PositivePartCubed,
    /// `exp(−(x − center)² / (2 width²))`
    SmoothBump { center: f64, width: f64 },
    /// `Σ coeffs[i] xⁱ`
    Polynomial(Vec<f64>),
}

impl fmt::Display for TestFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunctionKind::Quadratic => f.write_str("quadratic"),
            TestFunctionKind::Cubic => f.write_str("cubic"),
            TestFunctionKind::PositivePartCubed => f.write_str("positive_part_cubed"),
            TestFunctionKind::SmoothBump { center, width } => write!(f, "smooth_bump({center};{width})"),
            TestFunctionKind::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "polynomial({})", parts.join(";"))
            }
        }
    }
}

/// `Φ` with its first two derivatives.
#[derive(Clone)]
pub struct TestFunction {
    pub phi: RealFn,
    pub dphi: RealFn,
    pub d2phi: RealFn,
    pub kind: TestFunctionKind,
    pub growth: GrowthClass,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("kind", &self.kind).field("growth", &self.growth).finish()
    }
}

fn arc(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> RealFn {
    Arc::new(f)
}

impl TestFunction {
    pub fn new(kind: TestFunctionKind) -> Result<Self> {
        use GrowthClass::*;
        let (phi, dphi, d2phi, growth) = match &kind {
            TestFunctionKind::Quadratic => (arc(|x| x * x), arc(|x| 2.0 * x), arc(|_| 2.0), PolynomialGrowth),
            TestFunctionKind::Cubic => (arc(|x| x * x * x), arc(|x| 3.0 * x * x), arc(|x| 6.0 * x), PolynomialGrowth),
            TestFunctionKind::PositivePartCubed => (
                arc(|x: f64| x.max(0.0).powi(3)),
                arc(|x: f64| 3.0 * x.max(0.0).powi(2)),
                arc(|x: f64| 6.0 * x.max(0.0)),
                PolynomialGrowth,
            ),
            TestFunctionKind::SmoothBump { center, width } => {
                if !(*width > 0.0) {
                    return Err(Error::invalid("bump width must be positive"));
                }
                let (c, w2) = (*center, width * width);
                (
                    arc(move |x| (-(x - c).powi(2) / (2.0 * w2)).exp()),
                    arc(move |x| -(x - c) / w2 * (-(x - c).powi(2) / (2.0 * w2)).exp()),
                    arc(move |x| ((x - c).powi(2) / w2 - 1.0) / w2 * (-(x - c).powi(2) / (2.0 * w2)).exp()),
                    BoundedLipschitzDerivs,
                )
            }
            TestFunctionKind::Polynomial(coeffs) => {
                if coeffs.is_empty() {
                    return Err(Error::invalid("polynomial needs at least one coefficient"));
                }
                let c0 = coeffs.clone();
                let c1: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
                let c2: Vec<f64> = c1.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
                let growth = if coeffs.len() <= 2 { BoundedLipschitzDerivs } else { PolynomialGrowth };
                (arc(move |x| horner(&c0, x)), arc(move |x| horner(&c1, x)), arc(move |x| horner(&c2, x)), growth)
            }
        };
        Ok(Self { phi, dphi, d2phi, kind, growth })
    }

    /// Compares the analytic derivatives with central differences at 17
    /// points of `[-2, 2]`. Returns the worst relative error.
    pub fn derivative_audit(&self) -> f64 {
        const H: f64 = 1e-5;
        (0..17)
            .map(|i| -2.0 + 0.25 * i as f64 + 0.01)
            .map(|x| {
                let fd1 = ((self.phi)(x + H) - (self.phi)(x - H)) / (2.0 * H);
                let fd2 = ((self.dphi)(x + H) - (self.dphi)(x - H)) / (2.0 * H);
                let e1 = (fd1 - (self.dphi)(x)).abs() / (self.dphi)(x).abs().max(1.0);
                let e2 = (fd2 - (self.d2phi)(x)).abs() / (self.d2phi)(x).abs().max(1.0);
                e1.max(e2)
            })
            .fold(0.0, f64::max)
    }

    pub fn label(&self) -> String {
        self.kind.to_string()
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Relative error allowed by the derivative audit.
pub const DERIVATIVE_AUDIT_TOL: f64 = 1e-6;

/// Builds a fixture by tag name: `quadratic`, `cubic`,
/// `positive_part_cubed`, `smooth_bump` (params: center, width) or
/// `polynomial` (params: coefficients from degree 0 up).
pub fn make_test_function(tag: &str, params: &[f64]) -> Result<TestFunction> {
    let kind = match tag {
        "quadratic" => TestFunctionKind::Quadratic,
        "cubic" => TestFunctionKind::Cubic,
        "positive_part_cubed" => TestFunctionKind::PositivePartCubed,
        "smooth_bump" => TestFunctionKind::SmoothBump {
            center: params.first().copied().unwrap_or(0.0),
            width: params.get(1).copied().unwrap_or(1.0),
        },
        "polynomial" => TestFunctionKind::Polynomial(params.to_vec()),
        other => return Err(Error::invalid(format!("unknown test function `{other}`"))),
    };
    let f = TestFunction::new(kind)?;
    let err = f.derivative_audit();
    if err > DERIVATIVE_AUDIT_TOL {
        return Err(Error::invalid(format!("derivative audit failed for {tag}: relative error {err:e}")));
    }
    Ok(f)
}

/// `|Φ(X_T) − Φ(X_0) − RHS|` for a solution of `problem` on `scenario`.
pub fn ito_residual(phi: &TestFunction, sol: &RGSDESolution, problem: &RGSDEProblem, scenario: &GScenario) -> Result<f64> {
    ensure_same_grid(sol.x.grid(), scenario.grid())?;
    let grid = scenario.grid();
    let times = grid.times();
    let (xs, b, qv) = (sol.x.values(), scenario.b.values(), scenario.qv.values());
    let mut rhs = 0.0;
    for k in 0..grid.steps() {
        let (t, x) = (times[k], xs[k]);
        let f = problem.drift.eval(t, x, b[k], qv[k]);
        let h = problem.qv_drift.eval(t, x, b[k], qv[k]);
        let g = problem.diffusion.eval(t, x, b[k], qv[k]);
        let dqv = scenario.dqv(k);
        let d1 = (phi.dphi)(x);
        rhs += d1 * f * grid.dt(k) + d1 * h * dqv + d1 * g * scenario.db[k] + 0.5 * (phi.d2phi)(x) * g * g * dqv;
    }
    let dphi_x = SamplePath::new(grid.clone(), xs.iter().map(|&x| (phi.dphi)(x)).collect())?;
    rhs += riemann_sum_vn(&dphi_x, sol.k.path(), EndpointRule::Left)?;
    let lhs = (phi.phi)(sol.x.last()) - (phi.phi)(sol.x.first());
    let residual = (lhs - rhs).abs();
    if !residual.is_finite() {
        return Err(Error::NonFinite { context: format!("Itô residual for {}", phi.label()), time: grid.horizon() });
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        let q = make_test_function("quadratic", &[]).unwrap();
        assert_eq!(((q.phi)(3.0), (q.dphi)(3.0), (q.d2phi)(3.0)), (9.0, 6.0, 2.0));

        let p = make_test_function("positive_part_cubed", &[]).unwrap();
        assert_eq!(((p.phi)(2.0), (p.dphi)(2.0), (p.d2phi)(2.0)), (8.0, 12.0, 12.0));
        assert_eq!(((p.phi)(-2.0), (p.dphi)(-2.0), (p.d2phi)(-2.0)), (0.0, 0.0, 0.0));
        assert_eq!(p.growth, GrowthClass::PolynomialGrowth);

        let c = make_test_function("polynomial", &[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(((c.phi)(2.0), (c.d2phi)(2.0)), (8.0, 12.0));
        assert_eq!(c.growth, GrowthClass::PolynomialGrowth);

        let bump = make_test_function("smooth_bump", &[0.5, 0.7]).unwrap();
        assert_eq!(bump.growth, GrowthClass::BoundedLipschitzDerivs);
        assert_eq!((bump.phi)(0.5), 1.0);

        assert!(make_test_function("quartic", &[]).is_err());
        assert!(make_test_function("smooth_bump", &[0.0, -1.0]).is_err());
    }

    #[test]
    fn derivative_audit_passes_for_all_fixtures() {
        for (tag, params) in [
            ("quadratic", vec![]),
            ("cubic", vec![]),
            ("positive_part_cubed", vec![]),
            ("smooth_bump", vec![0.1, 0.5]),
            ("polynomial", vec![1.0, -2.0, 0.5, 0.25]),
        ] {
            let f = make_test_function(tag, &params).unwrap();
            assert!(f.derivative_audit() <= DERIVATIVE_AUDIT_TOL, "{tag}");
        }
    }

    #[test]
    fn audit_catches_wrong_derivatives() {
        let mut f = TestFunction::new(TestFunctionKind::Quadratic).unwrap();
        f.dphi = arc(|x| 2.1 * x);
        assert!(f.derivative_audit() > 1e-2);
    }
}
