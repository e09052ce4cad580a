//! Upper expectations over a finite control family, capacities, the
//! `M^p_G` norm, BDG-type bound checks, and an explicit finite-difference
//! solver for the G-heat equation `∂u/∂t = G(∂²u/∂x²)`.
//!
//! All Monte Carlo estimators use common random numbers: path `i` sees the
//! same normal draws under every control. With that coupling the
//! sublinear-expectation axioms (monotonicity, positive homogeneity,
//! constant translation, subadditivity) hold exactly for the estimator,
//! not only in distribution.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbm::{g_function, simulate_scenario, GScenario, VolatilityBand, VolatilityControl};
use crate::grid::{neumaier_sum, write_columns, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEstimate {
    pub label: String,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Per-control means and their sup/inf over the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub per_control: Vec<ControlEstimate>,
    pub upper: f64,
    pub lower: f64,
    pub argmax: String,
}

impl EstimateRecord {
    /// Builds the record from raw per-control samples.
    pub fn from_samples(labels: Vec<String>, samples: &[Vec<f64>]) -> Result<Self> {
        if labels.is_empty() || labels.len() != samples.len() {
            return Err(Error::invalid("estimate needs one sample set per control"));
        }
        let per_control: Vec<ControlEstimate> = labels
            .into_iter()
            .zip(samples)
            .map(|(label, xs)| {
                let (mean, se) = mean_and_se(xs);
                ControlEstimate { label, mean, se, n: xs.len() }
            })
            .collect();
        let best = per_control.iter().enumerate().fold(0, |b, (i, c)| if c.mean > per_control[b].mean { i } else { b });
        let upper = per_control[best].mean;
        let lower = per_control.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
        let argmax = per_control[best].label.clone();
        Ok(Self { per_control, upper, lower, argmax })
    }

    /// Control attaining the smallest mean.
    pub fn argmin(&self) -> &str {
        let worst = self
            .per_control
            .iter()
            .enumerate()
            .fold(0, |b, (i, c)| if c.mean < self.per_control[b].mean { i } else { b });
        &self.per_control[worst].label
    }

    /// Standard error of the control attaining the upper value.
    pub fn upper_se(&self) -> f64 {
        self.per_control.iter().find(|c| c.label == self.argmax).map_or(f64::NAN, |c| c.se)
    }

    pub fn lower_se(&self) -> f64 {
        let label = self.argmin();
        self.per_control.iter().find(|c| c.label == label).map_or(f64::NAN, |c| c.se)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

pub(crate) fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_inputs(family: &[VolatilityControl], n_paths: usize) -> Result<()> {
    if family.is_empty() {
        return Err(Error::invalid("control family is empty"));
    }
    if n_paths < 2 {
        return Err(Error::invalid(format!("need at least 2 paths, got {n_paths}")));
    }
    Ok(())
}

/// Evaluates `payoff` on paths `0..n_paths` of every control.
pub fn sample_family<F>(
    payoff: F,
    family: &[VolatilityControl],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&GScenario) -> f64 + Sync,
{
    family
        .iter()
        .map(|control| {
            let values = crate::par_map(n_paths, |i| payoff(&simulate_scenario(control, grid, seed, i as u64)));
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("payoff under control {control} on path {i}"),
                    time: grid.horizon(),
                });
            }
            Ok(values)
        })
        .collect()
}

/// `Ê[φ] = max over the family of the Monte Carlo mean of φ`.
pub fn upper_expectation<F>(
    payoff: F,
    family: &[VolatilityControl],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EstimateRecord>
where
    F: Fn(&GScenario) -> f64 + Sync,
{
    check_inputs(family, n_paths)?;
    let samples = sample_family(payoff, family, grid, n_paths, seed)?;
    EstimateRecord::from_samples(family.iter().map(|c| c.label()).collect(), &samples)
}

/// Scenarios for a whole family, kept in memory so that many payoffs can
/// be estimated against identical paths.
pub struct ScenarioBank {
    labels: Vec<String>,
    scenarios: Vec<Vec<GScenario>>,
}

impl ScenarioBank {
    pub fn simulate(family: &[VolatilityControl], grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<Self> {
        check_inputs(family, n_paths)?;
        Ok(Self {
            labels: family.iter().map(|c| c.label()).collect(),
            scenarios: family.iter().map(|c| crate::gbm::simulate_ensemble(c, grid, seed, n_paths)).collect(),
        })
    }

    pub fn scenarios(&self) -> &[Vec<GScenario>] {
        &self.scenarios
    }

    pub fn estimate(&self, payoff: impl Fn(&GScenario) -> f64) -> Result<EstimateRecord> {
        let samples: Vec<Vec<f64>> = self.scenarios.iter().map(|paths| paths.iter().map(&payoff).collect()).collect();
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "payoff".into(), time: f64::NAN });
        }
        EstimateRecord::from_samples(self.labels.clone(), &samples)
    }
}

/// `C̄(A) = max over the family of the empirical frequency of A`.
pub fn capacity<E>(event: E, family: &[VolatilityControl], grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<f64>
where
    E: Fn(&GScenario) -> bool + Sync,
{
    Ok(capacity_record(event, family, grid, n_paths, seed)?.upper)
}

/// Per-control event frequencies.
pub fn capacity_record<E>(
    event: E,
    family: &[VolatilityControl],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<EstimateRecord>
where
    E: Fn(&GScenario) -> bool + Sync,
{
    upper_expectation(|s| if event(s) { 1.0 } else { 0.0 }, family, grid, n_paths, seed)
}

const CHUNK: usize = 512;

/// `max over controls of mean_i |η(path_i, k)|^p` at every grid instant `k`.
pub fn pointwise_upper_moment<F>(
    eta: F,
    p: f64,
    family: &[VolatilityControl],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&GScenario, usize) -> f64 + Sync,
{
    check_inputs(family, n_paths)?;
    let mut upper = vec![f64::NEG_INFINITY; grid.len()];
    for control in family {
        let mut sums = vec![0.0; grid.len()];
        for start in (0..n_paths).step_by(CHUNK) {
            let len = CHUNK.min(n_paths - start);
            let rows = crate::par_map(len, |j| {
                let s = simulate_scenario(control, grid, seed, (start + j) as u64);
                (0..grid.len()).map(|k| eta(&s, k).abs().powf(p)).collect::<Vec<f64>>()
            });
            for row in rows {
                for (acc, v) in sums.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        for (u, s) in upper.iter_mut().zip(&sums) {
            let mean = s / n_paths as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite { context: format!("process moment under control {control}"), time: f64::NAN });
            }
            *u = u.max(mean);
        }
    }
    Ok(upper)
}

/// `(1/T ∫₀ᵀ Ê|η_t|^p dt)^{1/p}` with trapezoidal time averaging.
pub fn mg_norm<F>(eta: F, p: f64, family: &[VolatilityControl], grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<f64>
where
    F: Fn(&GScenario, usize) -> f64 + Sync,
{
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("norm order must be at least 1, got {p}")));
    }
    let m = pointwise_upper_moment(eta, p, family, grid, n_paths, seed)?;
    let integral = neumaier_sum((0..grid.steps()).map(|k| 0.5 * (m[k] + m[k + 1]) * grid.dt(k)));
    Ok((integral / grid.horizon()).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    /// `dB`
    Brownian,
    /// `d<B>`
    QuadraticVariation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdgReport {
    pub integrator: Integrator,
    pub p: f64,
    /// Constant multiplying the `dB` bound; 1 for `d<B>`.
    pub constant: f64,
    /// `Ê[sup_{u≤T} |∫₀ᵘ η dI|^p]`
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Default constant for the `dB` bound: Doob's 4 at `p = 2`, otherwise
/// `(p/(p−1))^p · p^{p/2}`.
pub fn default_bdg_constant(p: f64) -> f64 {
    if p == 2.0 {
        4.0
    } else {
        (p / (p - 1.0)).powf(p) * p.powf(p / 2.0)
    }
}

/// Estimates both sides of the moment bound for the running supremum of
/// `∫ η dB` (or `∫ η d<B>`) on `[0, T]`:
///
/// ```text
/// d<B>:  Ê[sup|∫η d<B>|^p] ≤ (σ̄²)^p T^{p−1} ∫ Ê|η|^p du
/// dB:    Ê[sup|∫η dB|^p]   ≤ C_p (σ̄²)^{p/2} T^{p/2−1} ∫ Ê|η|^p du
/// ```
///
/// With `σ̄² = 1` these are the usual G-framework bounds. The integrals
/// use left-endpoint sums.
#[allow(clippy::too_many_arguments)]
pub fn bdg_check<F>(
    eta: F,
    p: f64,
    integrator: Integrator,
    constant: Option<f64>,
    family: &[VolatilityControl],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<BdgReport>
where
    F: Fn(&GScenario, usize) -> f64 + Sync,
{
    let min_p = match integrator {
        Integrator::Brownian => 2.0,
        Integrator::QuadraticVariation => 1.0,
    };
    if !(p >= min_p) {
        return Err(Error::invalid(format!("p = {p} is below {min_p} for the {integrator:?} bound")));
    }
    check_inputs(family, n_paths)?;
    let high = family[0].band().sigma_high_sq;
    let lhs_record = upper_expectation(
        |s| {
            let mut running = 0.0f64;
            let mut sup = 0.0f64;
            for k in 0..s.grid().steps() {
                let d = match integrator {
                    Integrator::Brownian => s.db[k],
                    Integrator::QuadraticVariation => s.dqv(k),
                };
                running += eta(s, k) * d;
                sup = sup.max(running.abs());
            }
            sup.powf(p)
        },
        family,
        grid,
        n_paths,
        seed,
    )?;
    let moments = pointwise_upper_moment(&eta, p, family, grid, n_paths, seed)?;
    let integral = grid.integrate_left(&moments);
    let horizon = grid.horizon();
    let (c, rhs) = match integrator {
        Integrator::QuadraticVariation => (1.0, high.powf(p) * horizon.powf(p - 1.0) * integral),
        Integrator::Brownian => {
            let c = constant.unwrap_or_else(|| default_bdg_constant(p));
            (c, c * high.powf(p / 2.0) * horizon.powf(p / 2.0 - 1.0) * integral)
        }
    };
    let lhs = lhs_record.upper;
    let ratio = if rhs == 0.0 && lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(BdgReport { integrator, p, constant: c, lhs, lhs_se: lhs_record.upper_se(), rhs, ratio })
}

/// Values of the G-heat solution at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub band: VolatilityBand,
}

impl PdeSolution {
    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    /// Linear interpolation of `u(T, ·)`.
    pub fn value_at(&self, x: f64) -> f64 {
        let dx = self.dx();
        let last = self.xs.len() - 1;
        let pos = ((x - self.xs[0]) / dx).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last - 1);
        let w = pos - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// CSV with header `x,u`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_columns(out, &["x", "u"], &[&self.xs, &self.values])
    }
}

/// Explicit scheme `u ← u + Δt·G(D²u)` on `nx` intervals of
/// `[x0 − half_width, x0 + half_width]`, with `Δt ≤ 0.9·Δx²/(2σ̄²)` and
/// linear extrapolation at the two boundary nodes. `u(T, x)` approximates
/// `Ê[φ(x + B_T)]`.
pub fn gheat_solve(
    payoff: impl Fn(f64) -> f64,
    band: VolatilityBand,
    horizon: f64,
    x0: f64,
    half_width: f64,
    nx: usize,
) -> Result<PdeSolution> {
    band.validate()?;
    if nx < 16 {
        return Err(Error::invalid(format!("need at least 16 space intervals, got {nx}")));
    }
    if !(half_width > 0.0) || !(horizon > 0.0) {
        return Err(Error::invalid("half_width and horizon must be positive"));
    }
    let dx = 2.0 * half_width / nx as f64;
    let xs: Vec<f64> = (0..=nx).map(|i| x0 - half_width + i as f64 * dx).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| payoff(x)).collect();
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("payoff at x = {}", xs[i]), time: 0.0 });
    }
    let dt_max = 0.9 * dx * dx / (2.0 * band.sigma_high_sq);
    let steps = (horizon / dt_max).ceil() as usize;
    let dt = horizon / steps as f64;
    let inv_dx2 = 1.0 / (dx * dx);
    let mut next = u.clone();
    for _ in 0..steps {
        for i in 1..nx {
            let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2;
            next[i] = u[i] + dt * g_function(d2, &band);
        }
        next[0] = 2.0 * next[1] - next[2];
        next[nx] = 2.0 * next[nx - 1] - next[nx - 2];
        std::mem::swap(&mut u, &mut next);
    }
    Ok(PdeSolution { xs, values: u, dt, steps, band })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbm::{build_family, FamilySpec};

    fn band() -> VolatilityBand {
        VolatilityBand::with_lower(0.25).unwrap()
    }

    #[test]
    fn record_assembly() {
        let r = EstimateRecord::from_samples(
            vec!["a".into(), "b".into(), "c".into()],
            &[vec![1.0, 3.0], vec![5.0, 5.0], vec![-1.0, 0.0]],
        )
        .unwrap();
        assert_eq!(r.upper, 5.0);
        assert_eq!(r.lower, -0.5);
        assert_eq!(r.argmax, "b");
        assert_eq!(r.argmin(), "c");
        assert_eq!(r.per_control[1].se, 0.0);
        assert!((r.per_control[0].se - 1.0).abs() < 1e-15);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["per_control"][0]["label"], "a");
        assert_eq!(json["per_control"][0]["n"], 2);
        assert_eq!(json["argmax"], "b");
        for key in ["upper", "lower"] {
            assert!(json[key].is_number());
        }
    }

    #[test]
    fn trivial_capacities() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let fam = build_family(&FamilySpec { constants: 3, ..Default::default() }, band()).unwrap();
        assert_eq!(capacity(|_| true, &fam, &grid, 100, 1).unwrap(), 1.0);
        assert_eq!(capacity(|_| false, &fam, &grid, 100, 1).unwrap(), 0.0);
    }

    #[test]
    fn input_validation() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let fam = build_family(&FamilySpec::default(), band()).unwrap();
        assert!(upper_expectation(|s| s.b.last(), &[], &grid, 10, 0).is_err());
        assert!(upper_expectation(|s| s.b.last(), &fam, &grid, 1, 0).is_err());
        assert!(upper_expectation(|s| 1.0 / (s.b.last() - s.b.last()), &fam, &grid, 10, 0).is_err());
        assert!(mg_norm(|_, _| 1.0, 0.5, &fam, &grid, 10, 0).is_err());
        assert!(bdg_check(|_, _| 1.0, 1.5, Integrator::Brownian, None, &fam, &grid, 10, 0).is_err());
        assert!(bdg_check(|_, _| 1.0, 0.5, Integrator::QuadraticVariation, None, &fam, &grid, 10, 0).is_err());
        assert!(gheat_solve(|x| x, band(), 1.0, 0.0, 6.0, 8).is_err());
        assert!(gheat_solve(|x| 1.0 / x, band(), 1.0, 0.0, 6.0, 600).is_err());
    }

    #[test]
    fn mg_norm_of_constant_is_one() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let fam = build_family(&FamilySpec { constants: 3, ..Default::default() }, band()).unwrap();
        for p in [1.0, 2.0, 3.5] {
            let v = mg_norm(|_, _| 1.0, p, &fam, &grid, 20, 4).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn bdg_zero_integrand() {
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let fam = build_family(&FamilySpec::default(), band()).unwrap();
        for integrator in [Integrator::Brownian, Integrator::QuadraticVariation] {
            let r = bdg_check(|_, _| 0.0, 2.0, integrator, None, &fam, &grid, 50, 0).unwrap();
            assert_eq!(r.lhs, 0.0);
            assert_eq!(r.ratio, 0.0);
        }
        assert_eq!(default_bdg_constant(2.0), 4.0);
        assert!((default_bdg_constant(3.0) - 1.5f64.powi(3) * 3.0f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn gheat_preserves_linear_payoffs() {
        let sol = gheat_solve(|x| 2.0 * x - 0.5, band(), 1.0, 0.3, 4.0, 64).unwrap();
        for (x, u) in sol.xs.iter().zip(&sol.values) {
            assert!((u - (2.0 * x - 0.5)).abs() < 1e-10);
        }
        assert!(sol.dt <= sol.dx().powi(2) / 2.0);
    }
}
