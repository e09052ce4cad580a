//! Runs one configured experiment and writes its outputs.
//!
//! Every output is rendered in memory first and written only once the whole
//! computation has succeeded, so an aborted run leaves no partial files.
//! Column layouts are listed in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ConfigError, ExperimentKind, ExperimentSpec};
use crate::error::{Error, Result};
use crate::expr::parse_coefficient_expr;
use crate::gbm::{build_family, qv_identity_residual, simulate_ensemble, simulate_scenario, GScenario, VolatilityControl};
use crate::gexpect::{bdg_check, gheat_solve, mean_and_se, upper_expectation, Integrator};
use crate::grid::{grid_quadratic_variation, EndpointRule, TimeGrid};
use crate::ito::{ito_residual, make_test_function};
use crate::rgsde::{
    comparison_violation, euler_reflected, picard_solve, simulate_obstacle, stability_gap, Coefficient, RGSDEProblem,
};
use crate::skorokhod::{flat_off_residual, skorokhod_map};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Files written by a successful run, in write order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub files: Vec<PathBuf>,
}

struct Output {
    files: Vec<(&'static str, String)>,
}

impl Output {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &'static str, body: String) {
        self.files.push((name, body));
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact: &'static str,
    version: &'static str,
    kind: &'static str,
    seed: u64,
    files: Vec<&'static str>,
    spec: &'a ExperimentSpec,
}

/// Runs `spec` and writes its outputs to `out_dir`, which is created if
/// needed. The spec must name its kind.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunReport> {
    let kind = spec.kind.ok_or_else(|| ConfigError::Missing("kind".into()))?;
    spec.validate()?;
    log::info!("running {} (seed {}, {} paths)", kind.name(), spec.seed, spec.paths);
    let mut out = Output::new();
    match kind {
        ExperimentKind::Simulate => simulate(spec, &mut out)?,
        ExperimentKind::Skorokhod => skorokhod(spec, &mut out)?,
        ExperimentKind::Picard => picard(spec, &mut out)?,
        ExperimentKind::Expectation => expectation(spec, &mut out)?,
        ExperimentKind::Capacity => capacity(spec, &mut out)?,
        ExperimentKind::CheckIto => check_ito(spec, &mut out)?,
        ExperimentKind::CheckBdg => check_bdg(spec, &mut out)?,
        ExperimentKind::CheckQv => check_qv(spec, &mut out)?,
        ExperimentKind::Compare => compare(spec, &mut out)?,
        ExperimentKind::Stability => stability(spec, &mut out)?,
        ExperimentKind::Gheat => gheat(spec, &mut out)?,
    }
    let manifest = Manifest {
        artifact: "greflect",
        version: VERSION,
        kind: kind.name(),
        seed: spec.seed,
        files: out.files.iter().map(|(n, _)| *n).collect(),
        spec,
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    body.push('\n');
    out.add("manifest.json", body);
    write_all(out_dir, &out).map(|files| RunReport { kind, files })
}

fn write_all(dir: &Path, out: &Output) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in &out.files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, body) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
        written.push(path);
    }
    Ok(written)
}

fn family(spec: &ExperimentSpec) -> Result<Vec<VolatilityControl>> {
    build_family(&spec.family, spec.band)
}

fn levels(spec: &ExperimentSpec) -> Result<Vec<TimeGrid>> {
    (0..spec.grid.levels).map(|i| spec.grid.grid(i)).collect()
}

fn expression(key: &str, text: &str) -> Result<Coefficient> {
    parse_coefficient_expr(text, None)
        .map(Coefficient::from_expr)
        .map_err(|source| ConfigError::Expr { key: key.into(), source }.into())
}

fn audited_problem(spec: &ExperimentSpec, second: bool) -> Result<RGSDEProblem> {
    let p = if second { spec.problem2()? } else { spec.problem()? };
    for warning in p.audit(&Default::default()) {
        log::warn!("{warning}");
    }
    Ok(p)
}

fn csv(header: &str) -> String {
    format!("{header}\n")
}

/// Runs `f` on paths `0..n` of `control` in parallel, keeping path order.
fn per_path<T: Send>(
    control: &VolatilityControl,
    grid: &TimeGrid,
    spec: &ExperimentSpec,
    f: impl Fn(&GScenario) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    crate::par_map(spec.paths, |i| f(&simulate_scenario(control, grid, spec.seed, i as u64))).into_iter().collect()
}

fn simulate(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let problem = audited_problem(spec, false)?;
    let grid = spec.grid.grid(0)?;
    let mut body = csv("control,path,t,b,qv,sigma_sq,y,s,x,k");
    for control in family(spec)? {
        let label = control.label();
        let rows = per_path(&control, &grid, spec, |s| Ok((s.clone(), euler_reflected(&problem, s)?)))?;
        for (path, (s, sol)) in rows.iter().enumerate() {
            let t = grid.times();
            let cols = [s.b.values(), s.qv.values(), s.sigma_sq.values(), sol.y.values(), sol.obstacle.values(), sol.x.values(), sol.k.values()];
            for k in 0..grid.len() {
                write!(body, "{label},{path},{}", t[k]).unwrap();
                for c in &cols {
                    write!(body, ",{}", c[k]).unwrap();
                }
                body.push('\n');
            }
        }
    }
    out.add("paths.csv", body);
    Ok(())
}

fn skorokhod(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let problem = audited_problem(spec, false)?;
    let grid = spec.grid.grid(0)?;
    let mut paths = csv("control,path,t,y,s,x,k");
    let mut summary = csv("control,path,x_final,k_final,flat_off_left,flat_off_right");
    for control in family(spec)? {
        let label = control.label();
        let rows = per_path(&control, &grid, spec, |sc| {
            let s = simulate_obstacle(&problem.obstacle, sc)?;
            let y = sc.b.map(|b| problem.x0 + b);
            let pair = skorokhod_map(&y, &s)?;
            let left = flat_off_residual(&pair, &s, EndpointRule::Left)?;
            let right = flat_off_residual(&pair, &s, EndpointRule::Right)?;
            Ok((y, pair, left, right))
        })?;
        for (path, (y, pair, left, right)) in rows.iter().enumerate() {
            for (k, t) in grid.times().iter().enumerate() {
                writeln!(
                    paths,
                    "{label},{path},{t},{},{},{},{}",
                    y.values()[k],
                    pair.obstacle.values()[k],
                    pair.x.values()[k],
                    pair.k.values()[k]
                )
                .unwrap();
            }
            writeln!(summary, "{label},{path},{},{},{left},{right}", pair.x.last(), pair.k.path().last()).unwrap();
        }
    }
    out.add("reflected.csv", paths);
    out.add("skorokhod_summary.csv", summary);
    Ok(())
}

fn picard(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let problem = audited_problem(spec, false)?;
    let grid = spec.grid.grid(0)?;
    let tol = &spec.tolerance;
    let mut trace = csv("control,path,iteration,distance");
    let mut summary = csv("control,path,iterations,final_distance,sup_distance_to_euler");
    for control in family(spec)? {
        let label = control.label();
        let rows = per_path(&control, &grid, spec, |s| {
            let outcome = picard_solve(&problem, s, tol.tol, tol.max_iter)?;
            let euler = euler_reflected(&problem, s)?;
            let gap = outcome.solution.x.sup_distance(&euler.x)?;
            Ok((outcome.distances, gap))
        })?;
        for (path, (distances, gap)) in rows.iter().enumerate() {
            for (i, d) in distances.iter().enumerate() {
                writeln!(trace, "{label},{path},{},{d}", i + 1).unwrap();
            }
            writeln!(summary, "{label},{path},{},{},{gap}", distances.len(), distances.last().unwrap()).unwrap();
        }
    }
    out.add("picard_trace.csv", trace);
    out.add("picard.csv", summary);
    Ok(())
}

/// Terminal functional `φ(T, X_T, B_T, <B>_T)`; the solution of the
/// configured problem is computed only when `φ` reads `x`.
fn terminal_functional(spec: &ExperimentSpec, key: &str, text: &str) -> Result<impl Fn(&GScenario) -> f64 + Sync> {
    let phi = expression(key, text)?;
    let uses_x = parse_coefficient_expr(text, None).map(|e| e.tree.uses(crate::expr::Var::X)).unwrap_or(false);
    let problem = if uses_x { Some(audited_problem(spec, false)?) } else { None };
    Ok(move |s: &GScenario| {
        let x = match &problem {
            Some(p) => match euler_reflected(p, s) {
                Ok(sol) => sol.x.last(),
                Err(_) => f64::NAN,
            },
            None => 0.0,
        };
        phi.eval(s.grid().horizon(), x, s.b.last(), s.qv.last())
    })
}

fn expectation(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let payoff = terminal_functional(spec, "payoff", spec.payoff.as_deref().unwrap_or("0"))?;
    let record = upper_expectation(payoff, &family(spec)?, &spec.grid.grid(0)?, spec.paths, spec.seed)?;
    out.add("expectation.json", record.to_json() + "\n");
    Ok(())
}

fn capacity(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let event = terminal_functional(spec, "event", spec.event.as_deref().unwrap_or("0"))?;
    let indicator = |s: &GScenario| {
        let v = event(s);
        if v.is_nan() {
            f64::NAN
        } else if v > 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let record = upper_expectation(indicator, &family(spec)?, &spec.grid.grid(0)?, spec.paths, spec.seed)?;
    out.add("capacity.json", record.to_json() + "\n");
    Ok(())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn check_ito(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let problem = audited_problem(spec, false)?;
    let functions = spec
        .ito
        .functions
        .iter()
        .map(|tag| make_test_function(tag, &spec.ito.params))
        .collect::<Result<Vec<_>>>()?;
    let family = family(spec)?;
    let mut body = csv("phi,mesh,median_residual,p90_residual,n_paths");
    for grid in levels(spec)? {
        let mut residuals = vec![Vec::new(); functions.len()];
        for control in &family {
            let rows = per_path(control, &grid, spec, |s| {
                let sol = euler_reflected(&problem, s)?;
                functions.iter().map(|phi| ito_residual(phi, &sol, &problem, s)).collect::<Result<Vec<f64>>>()
            })?;
            for row in rows {
                for (acc, r) in residuals.iter_mut().zip(row) {
                    acc.push(r);
                }
            }
        }
        for (phi, mut r) in functions.iter().zip(residuals) {
            r.sort_by(f64::total_cmp);
            writeln!(body, "{},{},{},{},{}", phi.label(), grid.mesh(), quantile(&r, 0.5), quantile(&r, 0.9), r.len()).unwrap();
        }
    }
    out.add("ito_study.csv", body);
    Ok(())
}

fn check_bdg(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let eta = expression("bdg.eta", &spec.bdg.eta)?;
    let grid = spec.grid.grid(0)?;
    let family = family(spec)?;
    let integrand = |s: &GScenario, k: usize| eta.eval(s.grid().times()[k], 0.0, s.b.values()[k], s.qv.values()[k]);
    let reports = [Integrator::Brownian, Integrator::QuadraticVariation]
        .into_iter()
        .map(|i| bdg_check(integrand, spec.bdg.p, i, spec.bdg.constant, &family, &grid, spec.paths, spec.seed))
        .collect::<Result<Vec<_>>>()?;
    out.add("bdg.json", serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n");
    Ok(())
}

fn check_qv(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let mut body = csv("control,mesh,n_paths,mean_grid_qv,rms_limit_part,max_exact_part");
    for control in family(spec)? {
        for grid in levels(spec)? {
            let scenarios = simulate_ensemble(&control, &grid, spec.seed, spec.paths);
            let mut sq = 0.0;
            let mut exact = 0.0f64;
            let mut realized = Vec::with_capacity(scenarios.len());
            for s in &scenarios {
                let r = qv_identity_residual(s);
                if !r.limit_part.is_finite() || !r.exact_part.is_finite() {
                    return Err(Error::NonFinite { context: "quadratic variation".into(), time: grid.horizon() });
                }
                sq += r.limit_part * r.limit_part;
                exact = exact.max(r.exact_part.abs());
                realized.push(grid_quadratic_variation(&s.b));
            }
            let rms = (sq / scenarios.len() as f64).sqrt();
            let (mean, _) = mean_and_se(&realized);
            writeln!(body, "{},{},{},{mean},{rms},{exact}", control.label(), grid.mesh(), scenarios.len()).unwrap();
        }
    }
    out.add("qv_study.csv", body);
    Ok(())
}

fn compare(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let (p1, p2) = (audited_problem(spec, false)?, audited_problem(spec, true)?);
    let mut body = csv("control,mesh,n_paths,mean_max_violation,max_max_violation");
    for control in family(spec)? {
        for grid in levels(spec)? {
            let v = per_path(&control, &grid, spec, |s| comparison_violation(&p1, &p2, s))?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let max = v.iter().copied().fold(0.0, f64::max);
            writeln!(body, "{},{},{},{mean},{max}", control.label(), grid.mesh(), v.len()).unwrap();
        }
    }
    out.add("comparison.csv", body);
    Ok(())
}

fn stability(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let (p1, p2) = (audited_problem(spec, false)?, audited_problem(spec, true)?);
    let p = spec.tolerance.p;
    let mut body = csv("mesh,n_paths,p,gap,gap_root");
    for grid in levels(spec)? {
        let mut gap = 0.0f64;
        for control in family(spec)? {
            let scenarios = simulate_ensemble(&control, &grid, spec.seed, spec.paths);
            gap = gap.max(stability_gap(&p1, &p2, &scenarios, p)?);
        }
        writeln!(body, "{},{},{p},{gap},{}", grid.mesh(), spec.paths, gap.powf(1.0 / p)).unwrap();
    }
    out.add("stability.csv", body);
    Ok(())
}

fn gheat(spec: &ExperimentSpec, out: &mut Output) -> Result<()> {
    let phi = expression("payoff", spec.payoff.as_deref().unwrap_or("0"))?;
    let pde = &spec.pde;
    let horizon = spec.grid.horizon;
    let sol = gheat_solve(|x| phi.eval(horizon, x, 0.0, 0.0), spec.band, horizon, pde.x0, pde.half_width, pde.nx)?;
    if let Some(i) = sol.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: format!("G-heat solution at x = {}", sol.xs[i]), time: horizon });
    }
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    out.add("gheat.csv", String::from_utf8(buf).expect("csv is utf-8"));
    Ok(())
}
