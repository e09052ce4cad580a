//! Reflected SDEs driven by G-Brownian motion,
//!
//! ```text
//! X_t = x + ∫ f(X) ds + ∫ h(X) d<B> + ∫ g(X) dB + K_t,   X ≥ S,
//! ```
//!
//! with `K` increasing from zero and acting only when `X` sits on the
//! obstacle `S`. On the grid the pusher is built from the representation
//! `K_t = max_{u≤t} (Y_u − S_u)⁻`, where `Y` accumulates the drift,
//! QV-drift and diffusion terms evaluated along the reflected state.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{CoefficientExpr, Vars};
use crate::gbm::GScenario;
use crate::grid::{write_columns, EndpointRule, IncreasingPath, SamplePath};
use crate::skorokhod::{flat_off_residual, reflect_lower, reflect_step, Barrier, ReflectedPair};

type CoefFn = dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync;

/// A coefficient `(t, x, B_t, <B>_t) ↦ value` with a declared Lipschitz
/// bound in `x`.
#[derive(Clone)]
pub struct Coefficient {
    eval: Arc<CoefFn>,
    pub lipschitz_bound: f64,
    pub label: String,
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Coefficient")
            .field("label", &self.label)
            .field("lipschitz_bound", &self.lipschitz_bound)
            .finish()
    }
}

/// Sampling box for the Lipschitz audit.
#[derive(Debug, Clone, Copy)]
pub struct ProbeBox {
    pub horizon: f64,
    pub radius: f64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self { horizon: 1.0, radius: 5.0 }
    }
}

/// Relative slack allowed by the Lipschitz audit.
pub const LIPSCHITZ_AUDIT_SLACK: f64 = 0.05;

impl Coefficient {
    pub fn new(
        label: impl Into<String>,
        lipschitz_bound: f64,
        f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { eval: Arc::new(f), lipschitz_bound, label: label.into() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("{c}"), 0.0, move |_, _, _, _| c)
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Evaluation errors of the expression (division by zero, negative
    /// square root) surface as NaN and abort the path that hits them.
    pub fn from_expr(expr: CoefficientExpr) -> Self {
        let label = expr.source.clone();
        let bound = expr.lipschitz_bound.unwrap_or(f64::INFINITY);
        let tree = expr.tree;
        Self::new(label, bound, move |t, x, b, qv| tree.eval(&Vars { t, x, b, qv }).unwrap_or(f64::NAN))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, b: f64, qv: f64) -> f64 {
        (self.eval)(t, x, b, qv)
    }

    /// Largest finite-difference slope in `x` over a lattice in the box.
    pub fn max_slope(&self, probe: &ProbeBox) -> f64 {
        const H: f64 = 1e-4;
        let r = probe.radius;
        let mut worst = 0.0f64;
        for it in 0..5 {
            let t = probe.horizon * it as f64 / 4.0;
            for ib in 0..3 {
                let b = -r + r * ib as f64;
                for iq in 0..3 {
                    let qv = probe.horizon * iq as f64 / 2.0;
                    for ix in 0..17 {
                        let x = -r + 2.0 * r * ix as f64 / 16.0;
                        let slope = (self.eval(t, x + H, b, qv) - self.eval(t, x - H, b, qv)).abs() / (2.0 * H);
                        if slope.is_finite() {
                            worst = worst.max(slope);
                        }
                    }
                }
            }
        }
        worst
    }

    /// Logs a warning and returns the observed slope when it exceeds the
    /// declared bound by more than [`LIPSCHITZ_AUDIT_SLACK`].
    pub fn audit_lipschitz(&self, probe: &ProbeBox) -> Option<f64> {
        if !self.lipschitz_bound.is_finite() {
            return None;
        }
        let slope = self.max_slope(probe);
        if slope > self.lipschitz_bound * (1.0 + LIPSCHITZ_AUDIT_SLACK) {
            log::warn!(
                "coefficient `{}` has slope {slope:.4} in x, above its declared Lipschitz bound {}",
                self.label,
                self.lipschitz_bound
            );
            Some(slope)
        } else {
            None
        }
    }
}

/// The obstacle as a G-Itô process
/// `S_t = s0 + ∫ f_S ds + ∫ h_S d<B> + ∫ g_S dB`.
#[derive(Debug, Clone)]
pub struct ObstacleSpec {
    pub s0: f64,
    pub drift: Coefficient,
    pub qv_drift: Coefficient,
    pub diffusion: Coefficient,
}

impl ObstacleSpec {
    pub fn constant(s0: f64) -> Self {
        Self { s0, drift: Coefficient::zero(), qv_drift: Coefficient::zero(), diffusion: Coefficient::zero() }
    }
}

#[derive(Debug, Clone)]
pub struct RGSDEProblem {
    pub x0: f64,
    pub drift: Coefficient,
    pub qv_drift: Coefficient,
    pub diffusion: Coefficient,
    pub obstacle: ObstacleSpec,
}

impl RGSDEProblem {
    pub fn new(
        x0: f64,
        drift: Coefficient,
        qv_drift: Coefficient,
        diffusion: Coefficient,
        obstacle: ObstacleSpec,
    ) -> Result<Self> {
        let p = Self { x0, drift, qv_drift, diffusion, obstacle };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() || !self.obstacle.s0.is_finite() {
            return Err(Error::invalid("initial values must be finite"));
        }
        if self.obstacle.s0 > self.x0 {
            return Err(Error::invalid(format!(
                "obstacle starts above the initial value ({} > {})",
                self.obstacle.s0, self.x0
            )));
        }
        Ok(())
    }

    /// Audits every coefficient; returns the labels that failed.
    pub fn audit(&self, probe: &ProbeBox) -> Vec<String> {
        [&self.drift, &self.qv_drift, &self.diffusion, &self.obstacle.drift, &self.obstacle.qv_drift, &self.obstacle.diffusion]
            .into_iter()
            .filter(|c| c.audit_lipschitz(probe).is_some())
            .map(|c| c.label.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionDiagnostics {
    /// Right-endpoint flat-off sum; `0.0` by construction.
    pub flat_off_right: f64,
    /// Left-endpoint flat-off sum, an `O(mesh)` diagnostic.
    pub flat_off_left: f64,
    pub k_representation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RGSDESolution {
    pub x: SamplePath,
    pub k: IncreasingPath,
    /// Unreflected accumulation `x0 + Σ f Δt + Σ h Δ<B> + Σ g ΔB`.
    pub y: SamplePath,
    pub obstacle: SamplePath,
    pub diagnostics: SolutionDiagnostics,
}

impl RGSDESolution {
    fn assemble(y: Vec<f64>, x: Vec<f64>, k: Vec<f64>, obstacle: SamplePath) -> Result<Self> {
        let grid = obstacle.grid().clone();
        let x = SamplePath::new(grid.clone(), x)?;
        let k = IncreasingPath::new_unchecked(SamplePath::new(grid.clone(), k)?);
        let y = SamplePath::new(grid, y)?;
        let pair = ReflectedPair { x, k, obstacle, barrier: Barrier::Lower };
        let diagnostics = SolutionDiagnostics {
            flat_off_right: flat_off_residual(&pair, &pair.obstacle, EndpointRule::Right)?,
            flat_off_left: flat_off_residual(&pair, &pair.obstacle, EndpointRule::Left)?,
            k_representation: representation_gap(y.values(), pair.obstacle.values(), pair.k.values()),
        };
        Ok(Self { x: pair.x, k: pair.k, y, obstacle: pair.obstacle, diagnostics })
    }

    pub fn as_pair(&self) -> ReflectedPair {
        ReflectedPair { x: self.x.clone(), k: self.k.clone(), obstacle: self.obstacle.clone(), barrier: Barrier::Lower }
    }

    /// CSV with header `t,x,k,y,s`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_columns(
            out,
            &["t", "x", "k", "y", "s"],
            &[self.x.grid().times(), self.x.values(), self.k.values(), self.y.values(), self.obstacle.values()],
        )
    }
}

fn check_finite(v: f64, who: &Coefficient, t: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { context: format!("coefficient `{}`", who.label), time: t })
    }
}

/// Left-endpoint Euler discretization of the obstacle.
pub fn simulate_obstacle(spec: &ObstacleSpec, scenario: &GScenario) -> Result<SamplePath> {
    let grid = scenario.grid();
    let times = grid.times();
    let (b, qv) = (scenario.b.values(), scenario.qv.values());
    let mut s = Vec::with_capacity(grid.len());
    s.push(spec.s0);
    for k in 0..grid.steps() {
        let (t, sk) = (times[k], s[k]);
        let f = check_finite(spec.drift.eval(t, sk, b[k], qv[k]), &spec.drift, t)?;
        let h = check_finite(spec.qv_drift.eval(t, sk, b[k], qv[k]), &spec.qv_drift, t)?;
        let g = check_finite(spec.diffusion.eval(t, sk, b[k], qv[k]), &spec.diffusion, t)?;
        let next = advance(sk, f, h, g, grid.dt(k), scenario.dqv(k), scenario.db[k]);
        if !next.is_finite() {
            return Err(Error::NonFinite { context: "obstacle".into(), time: times[k + 1] });
        }
        s.push(next);
    }
    SamplePath::new(grid.clone(), s)
}

#[inline]
fn advance(y: f64, f: f64, h: f64, g: f64, dt: f64, dqv: f64, db: f64) -> f64 {
    y + f * dt + h * dqv + g * db
}

/// Coefficient increments on step `k` evaluated at state `x`.
#[inline]
fn step_increment(problem: &RGSDEProblem, scenario: &GScenario, k: usize, x: f64, y: f64) -> Result<f64> {
    let grid = scenario.grid();
    let t = grid.times()[k];
    let (b, qv) = (scenario.b.values()[k], scenario.qv.values()[k]);
    let f = check_finite(problem.drift.eval(t, x, b, qv), &problem.drift, t)?;
    let h = check_finite(problem.qv_drift.eval(t, x, b, qv), &problem.qv_drift, t)?;
    let g = check_finite(problem.diffusion.eval(t, x, b, qv), &problem.diffusion, t)?;
    let next = advance(y, f, h, g, grid.dt(k), scenario.dqv(k), scenario.db[k]);
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFinite { context: "solution".into(), time: grid.times()[k + 1] })
    }
}

/// Reflected Euler scheme: coefficients at the left endpoint along the
/// reflected state, pusher by the running-max representation.
pub fn euler_reflected(problem: &RGSDEProblem, scenario: &GScenario) -> Result<RGSDESolution> {
    problem.validate()?;
    let s = simulate_obstacle(&problem.obstacle, scenario)?;
    let n = scenario.grid().len();
    let sv = s.values();
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut kv = Vec::with_capacity(n);
    let mut yk = problem.x0;
    let mut push = 0.0;
    for (k, &sk) in sv.iter().enumerate() {
        let (xk, pk) = reflect_step(yk, sk, push);
        push = pk;
        y.push(yk);
        x.push(xk);
        kv.push(pk);
        if k + 1 < n {
            yk = step_increment(problem, scenario, k, xk, yk)?;
        }
    }
    RGSDESolution::assemble(y, x, kv, s)
}

fn representation_gap(y: &[f64], s: &[f64], k: &[f64]) -> f64 {
    let mut running = 0.0f64;
    let mut worst = 0.0f64;
    for ((yi, si), ki) in y.iter().zip(s).zip(k) {
        running = running.max(si - yi);
        worst = worst.max((ki - running).abs());
    }
    worst
}

/// `max_t |k_t − max_{u≤t} (y_u − s_u)⁻|`.
pub fn k_representation_residual(sol: &RGSDESolution, obstacle: &SamplePath) -> Result<f64> {
    crate::grid::ensure_same_grid(sol.y.grid(), obstacle.grid())?;
    Ok(representation_gap(sol.y.values(), obstacle.values(), sol.k.values()))
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: RGSDESolution,
    /// `max_t |X^{n+1}_t − X^n_t|` for every iteration performed.
    pub distances: Vec<f64>,
}

/// Picard iteration started from `X⁰ ≡ x0`.
pub fn picard_solve(problem: &RGSDEProblem, scenario: &GScenario, tol: f64, max_iter: usize) -> Result<PicardOutcome> {
    let start = SamplePath::constant(scenario.grid(), problem.x0);
    picard_solve_from(problem, scenario, &start, tol, max_iter)
}

/// Picard iteration from an arbitrary initial iterate. Each sweep evaluates
/// the coefficients along the previous iterate and reflects the result at
/// the obstacle; it stops once successive iterates are within `tol` in the
/// sup norm.
pub fn picard_solve_from(
    problem: &RGSDEProblem,
    scenario: &GScenario,
    initial: &SamplePath,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome> {
    problem.validate()?;
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    crate::grid::ensure_same_grid(initial.grid(), scenario.grid())?;
    let s = simulate_obstacle(&problem.obstacle, scenario)?;
    let n = scenario.grid().len();
    let mut prev = initial.values().to_vec();
    let mut y = vec![0.0; n];
    let mut distances = Vec::new();
    for _ in 0..max_iter {
        y[0] = problem.x0;
        for k in 0..n - 1 {
            y[k + 1] = step_increment(problem, scenario, k, prev[k], y[k])?;
        }
        let (x, kv) = reflect_lower(&y, s.values());
        let d = x.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        distances.push(d);
        prev = x;
        if d < tol {
            let solution = RGSDESolution::assemble(y, prev, kv, s)?;
            return Ok(PicardOutcome { solution, distances });
        }
    }
    Err(Error::NoConvergence { distances })
}

/// `max_t (X¹_t − X²_t)⁺` for the Euler solutions of two problems on the
/// same scenario. Both problems must share the diffusion coefficient.
pub fn comparison_violation(p1: &RGSDEProblem, p2: &RGSDEProblem, scenario: &GScenario) -> Result<f64> {
    if p1.diffusion.label != p2.diffusion.label {
        return Err(Error::invalid(format!(
            "comparison needs a shared diffusion coefficient (`{}` vs `{}`)",
            p1.diffusion.label, p2.diffusion.label
        )));
    }
    let a = euler_reflected(p1, scenario)?;
    let b = euler_reflected(p2, scenario)?;
    Ok(a.x.values().iter().zip(b.x.values()).map(|(x1, x2)| (x1 - x2).max(0.0)).fold(0.0, f64::max))
}

/// Monte Carlo mean over `scenarios` of `max_t |X¹_t − X²_t|^p`, `p > 2`.
pub fn stability_gap(p1: &RGSDEProblem, p2: &RGSDEProblem, scenarios: &[GScenario], p: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::invalid(format!("moment order must exceed 2, got {p}")));
    }
    if scenarios.is_empty() {
        return Err(Error::invalid("stability gap needs at least one scenario"));
    }
    let gaps = crate::par_map(scenarios.len(), |i| -> Result<f64> {
        let a = euler_reflected(p1, &scenarios[i])?;
        let b = euler_reflected(p2, &scenarios[i])?;
        Ok(a.x.sup_distance(&b.x)?.powf(p))
    });
    let mut total = 0.0;
    for g in gaps {
        total += g?;
    }
    Ok(total / scenarios.len() as f64)
}
