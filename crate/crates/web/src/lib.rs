//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations are exposed: a reflected path under a constant
//! volatility, a G-heat profile, and a family upper expectation next to its
//! PDE value. Results are flat `Float64Array`s so the page can plot them
//! without any glue code.

use greflect::gbm::{build_family, simulate_scenario, FamilySpec, VolatilityBand, VolatilityControl};
use greflect::gexpect::{gheat_solve, upper_expectation};
use greflect::rgsde::{euler_reflected, Coefficient, ObstacleSpec, RGSDEProblem};
use greflect::TimeGrid;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Reflected path `dX = f dt + g dB + dK` above a constant obstacle.
///
/// Returns `[t..., b..., x..., k...]`, four blocks of `steps + 1` values.
#[allow(clippy::too_many_arguments)]
pub fn reflected_path_native(
    x0: f64,
    obstacle: f64,
    drift: &str,
    diffusion: &str,
    sigma_sq: f64,
    horizon: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let coef = |text: &str| {
        greflect::expr::parse_coefficient_expr(text, None).map(Coefficient::from_expr).map_err(|e| e.to_string())
    };
    let problem = RGSDEProblem::new(x0, coef(drift)?, Coefficient::zero(), coef(diffusion)?, ObstacleSpec::constant(obstacle))
        .map_err(|e| e.to_string())?;
    let band = VolatilityBand::new(sigma_sq.min(1.0), sigma_sq.max(1.0)).map_err(|e| e.to_string())?;
    let control = VolatilityControl::constant(sigma_sq, band).map_err(|e| e.to_string())?;
    let grid = TimeGrid::uniform(horizon, steps).map_err(|e| e.to_string())?;
    let scenario = simulate_scenario(&control, &grid, seed, 0);
    let sol = euler_reflected(&problem, &scenario).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(4 * grid.len());
    out.extend_from_slice(grid.times());
    out.extend_from_slice(scenario.b.values());
    out.extend_from_slice(sol.x.values());
    out.extend_from_slice(sol.k.values());
    Ok(out)
}

/// G-heat profile `u(T, ·)` for a payoff expression in `x`.
///
/// Returns `[x..., u...]`, two blocks of `nx + 1` values.
pub fn gheat_profile_native(payoff: &str, sigma_low_sq: f64, horizon: f64, half_width: f64, nx: usize) -> Result<Vec<f64>, String> {
    let phi = greflect::expr::parse_coefficient_expr(payoff, None).map_err(|e| e.to_string())?;
    let phi = Coefficient::from_expr(phi);
    let band = VolatilityBand::with_lower(sigma_low_sq).map_err(|e| e.to_string())?;
    let sol = gheat_solve(|x| phi.eval(horizon, x, 0.0, 0.0), band, horizon, 0.0, half_width, nx).map_err(|e| e.to_string())?;
    let mut out = sol.xs.clone();
    out.extend_from_slice(&sol.values);
    Ok(out)
}

/// Upper expectation of `φ(B_T)` over `constants` evenly spaced constant
/// volatilities, next to the G-heat value at 0.
///
/// Returns `[upper, upper_se, lower, pde, mean_0, ..., mean_{m-1}]`.
pub fn upper_expectation_native(payoff: &str, sigma_low_sq: f64, constants: usize, paths: usize, seed: u64) -> Result<Vec<f64>, String> {
    let phi = greflect::expr::parse_coefficient_expr(payoff, None).map_err(|e| e.to_string())?;
    let phi = Coefficient::from_expr(phi);
    let band = VolatilityBand::with_lower(sigma_low_sq).map_err(|e| e.to_string())?;
    let family = build_family(&FamilySpec { constants, ..Default::default() }, band).map_err(|e| e.to_string())?;
    let grid = TimeGrid::uniform(1.0, 100).map_err(|e| e.to_string())?;
    let record = upper_expectation(|s| phi.eval(1.0, s.b.last(), s.b.last(), s.qv.last()), &family, &grid, paths, seed)
        .map_err(|e| e.to_string())?;
    let pde = gheat_solve(|x| phi.eval(1.0, x, x, 0.0), band, 1.0, 0.0, 6.0, 300).map_err(|e| e.to_string())?;
    let mut out = vec![record.upper, record.upper_se(), record.lower, pde.value_at(0.0)];
    out.extend(record.per_control.iter().map(|c| c.mean));
    Ok(out)
}

#[wasm_bindgen(js_name = reflectedPath)]
#[allow(clippy::too_many_arguments)]
pub fn reflected_path(
    x0: f64,
    obstacle: f64,
    drift: &str,
    diffusion: &str,
    sigma_sq: f64,
    horizon: f64,
    steps: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    reflected_path_native(x0, obstacle, drift, diffusion, sigma_sq, horizon, steps, seed as u64).map_err(js_err)
}

#[wasm_bindgen(js_name = gheatProfile)]
pub fn gheat_profile(payoff: &str, sigma_low_sq: f64, horizon: f64, half_width: f64, nx: usize) -> Result<Vec<f64>, JsError> {
    gheat_profile_native(payoff, sigma_low_sq, horizon, half_width, nx).map_err(js_err)
}

#[wasm_bindgen(js_name = upperExpectation)]
pub fn upper_expectation_js(payoff: &str, sigma_low_sq: f64, constants: usize, paths: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    upper_expectation_native(payoff, sigma_low_sq, constants, paths, seed as u64).map_err(js_err)
}
