//! Time grids, paths observed on them, and Riemann–Stieltjes sums against
//! increasing and bounded-variation integrators.
//!
//! Everything in the crate is a grid-level object: a path is a dense vector
//! of values aligned with the instants of a [`TimeGrid`].

use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which endpoint of `[t_j, t_{j+1})` supplies the integrand value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointRule {
    #[default]
    Left,
    Right,
}

/// A finite partition `0 = t_0 < t_1 < ... < t_N = T`.
///
/// The instants are reference counted so that every path on the grid can
/// carry it cheaply.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    times: Arc<[f64]>,
}

impl PartialEq for TimeGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.times, &other.times) || self.times == other.times
    }
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("a grid needs at least two instants".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("grid must start at 0, got {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1]) || !w[1].is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "instants must be finite and strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { times: times.into() })
    }

    /// `steps + 1` equally spaced instants on `[0, horizon]`; the last one is
    /// exactly `horizon`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("number of steps must be at least 1".into()));
        }
        let n = steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * horizon / n).collect();
        times[steps] = horizon;
        Self::new(times)
    }

    /// Inserts the midpoint of every interval. The input instants are kept.
    pub fn refine(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        Self { times: times.into() }
    }

    /// Largest interval length.
    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of instants, `N + 1`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of intervals, `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Compensated sum of `weights[k] * dt(k)` over all intervals, i.e. the
    /// left-point quadrature of a grid function on `[0, T]`.
    pub fn integrate_left(&self, weights: &[f64]) -> f64 {
        neumaier_sum((0..self.steps()).map(|k| weights[k] * self.dt(k)))
    }
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Real values, one per grid instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "path has {} values but the grid has {} instants",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &TimeGrid, value: f64) -> Self {
        Self { grid: grid.clone(), values: vec![value; grid.len()] }
    }

    /// Samples `f(t)` at every grid instant.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.times().iter().map(|&t| f(t)).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two paths on the same grid.
    pub fn zip_with(&self, other: &SamplePath, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn sup_distance(&self, other: &SamplePath) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// CSV with header `t,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_columns(out, &["t", "value"], &[self.grid.times(), &self.values])
    }
}

pub(crate) fn ensure_same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// A nondecreasing path.
#[derive(Debug, Clone, PartialEq)]
pub struct IncreasingPath(SamplePath);

impl IncreasingPath {
    pub fn new(path: SamplePath) -> Result<Self> {
        if let Some(k) = path.values.windows(2).position(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid(format!(
                "path decreases between t = {} and t = {}",
                path.grid.times()[k],
                path.grid.times()[k + 1]
            )));
        }
        Ok(Self(path))
    }

    /// Like [`IncreasingPath::new`] and additionally requires a zero start,
    /// which is what a reflection term must satisfy.
    pub fn new_from_zero(path: SamplePath) -> Result<Self> {
        if path.first() != 0.0 {
            return Err(Error::invalid(format!("reflection term must start at 0, got {}", path.first())));
        }
        Self::new(path)
    }

    pub(crate) fn new_unchecked(path: SamplePath) -> Self {
        debug_assert!(path.values.windows(2).all(|w| w[0] <= w[1]));
        Self(path)
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        Self(SamplePath::constant(grid, 0.0))
    }

    pub fn path(&self) -> &SamplePath {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn into_path(self) -> SamplePath {
        self.0
    }
}

/// Grid-level Jordan decomposition `v = origin + plus - minus`.
#[derive(Debug, Clone, PartialEq)]
pub struct BVPath {
    pub plus: IncreasingPath,
    pub minus: IncreasingPath,
    pub origin: f64,
    pub total_variation: f64,
}

impl BVPath {
    /// Difference of two increasing paths, `k1 - k2`.
    pub fn difference(k1: IncreasingPath, k2: IncreasingPath) -> Result<Self> {
        ensure_same_grid(k1.path().grid(), k2.path().grid())?;
        let origin = k1.path().first() - k2.path().first();
        let plus = shift_to_zero(k1);
        let minus = shift_to_zero(k2);
        let total_variation = plus.path().last() + minus.path().last();
        Ok(Self { plus, minus, origin, total_variation })
    }

    pub fn reconstruct(&self) -> SamplePath {
        let values = self
            .plus
            .values()
            .iter()
            .zip(self.minus.values())
            .map(|(p, m)| self.origin + p - m)
            .collect();
        SamplePath { grid: self.plus.path().grid().clone(), values }
    }
}

fn shift_to_zero(k: IncreasingPath) -> IncreasingPath {
    let start = k.path().first();
    if start == 0.0 {
        k
    } else {
        IncreasingPath(k.0.map(|v| v - start))
    }
}

/// Positive increments accumulate into `plus`, negative ones into `minus`.
pub fn jordan_decompose(path: &SamplePath) -> BVPath {
    let n = path.len();
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    let (mut p, mut m) = (0.0, 0.0);
    plus.push(0.0);
    minus.push(0.0);
    for w in path.values.windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 {
            p += d;
        } else {
            m -= d;
        }
        plus.push(p);
        minus.push(m);
    }
    let grid = path.grid.clone();
    BVPath {
        plus: IncreasingPath(SamplePath { grid: grid.clone(), values: plus }),
        minus: IncreasingPath(SamplePath { grid, values: minus }),
        origin: path.first(),
        total_variation: p + m,
    }
}

/// `Σ_j x(u_j) (k_{t_{j+1}} - k_{t_j})` with `u_j` the chosen endpoint.
pub fn riemann_sum_vn(x: &SamplePath, k: &SamplePath, rule: EndpointRule) -> Result<f64> {
    riemann_sum_range(x, k, rule, 0, x.len() - 1)
}

/// The same sum restricted to the grid instants `from..=to`.
pub fn riemann_sum_range(
    x: &SamplePath,
    k: &SamplePath,
    rule: EndpointRule,
    from: usize,
    to: usize,
) -> Result<f64> {
    ensure_same_grid(&x.grid, &k.grid)?;
    if from > to || to >= x.len() {
        return Err(Error::invalid(format!("bad index range {from}..={to} for {} instants", x.len())));
    }
    let xs = &x.values;
    let ks = &k.values;
    let offset = match rule {
        EndpointRule::Left => 0,
        EndpointRule::Right => 1,
    };
    Ok((from..to).map(|j| xs[j + offset] * (ks[j + 1] - ks[j])).sum())
}

/// `∫ x dk` for a bounded-variation integrator, left rule.
pub fn stieltjes_integral(x: &SamplePath, k: &BVPath) -> Result<f64> {
    Ok(riemann_sum_vn(x, k.plus.path(), EndpointRule::Left)?
        - riemann_sum_vn(x, k.minus.path(), EndpointRule::Left)?)
}

/// `Σ (v_{k+1} - v_k)^2`.
pub fn grid_quadratic_variation(path: &SamplePath) -> f64 {
    path.values.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

/// Writes aligned columns as CSV. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_columns<W: Write>(mut out: W, headers: &[&str], columns: &[&[f64]]) -> io::Result<()> {
    debug_assert_eq!(headers.len(), columns.len());
    writeln!(out, "{}", headers.join(","))?;
    let rows = columns.first().map_or(0, |c| c.len());
    for r in 0..rows {
        for (c, col) in columns.iter().enumerate() {
            if c > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{}", col[r])?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(values: &[f64]) -> SamplePath {
        let grid = TimeGrid::uniform(1.0, values.len() - 1).unwrap();
        SamplePath::new(grid, values.to_vec()).unwrap()
    }

    #[test]
    fn uniform_grids() {
        assert_eq!(TimeGrid::uniform(1.0, 2).unwrap().times(), &[0.0, 0.5, 1.0]);
        assert_eq!(TimeGrid::uniform(1.0, 1).unwrap().times(), &[0.0, 1.0]);
        assert_eq!(TimeGrid::uniform(2.0, 4).unwrap().mesh(), 0.5);
        let g = TimeGrid::uniform(3.0, 7).unwrap();
        assert!((g.mesh() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(g.horizon(), 3.0);
    }

    #[test]
    fn grid_errors() {
        assert!(TimeGrid::uniform(0.0, 3).is_err());
        assert!(TimeGrid::uniform(-1.0, 3).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }

    #[test]
    fn refine_inserts_midpoints() {
        let g = TimeGrid::new(vec![0.0, 1.0]).unwrap();
        let r = g.refine();
        assert_eq!(r.times(), &[0.0, 0.5, 1.0]);
        assert_eq!(r.refine().times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let u = TimeGrid::uniform(1.0, 8).unwrap();
        assert_eq!(u.refine().mesh(), u.mesh() / 2.0);
    }

    #[test]
    fn mesh_of_irregular_grid() {
        assert_eq!(TimeGrid::new(vec![0.0, 0.5, 1.0]).unwrap().mesh(), 0.5);
        assert_eq!(TimeGrid::new(vec![0.0, 0.1, 1.0]).unwrap().mesh(), 0.9);
    }

    #[test]
    fn riemann_sum_trivial_cases() {
        let k = path(&[0.0, 0.3, 0.2, 1.7]);
        let x = SamplePath::constant(k.grid(), 2.5);
        for rule in [EndpointRule::Left, EndpointRule::Right] {
            let s = riemann_sum_vn(&x, &k, rule).unwrap();
            assert!((s - 2.5 * 1.7).abs() < 1e-14);
            let flat = SamplePath::constant(k.grid(), 4.0);
            assert_eq!(riemann_sum_vn(&k, &flat, rule).unwrap(), 0.0);
        }
    }

    #[test]
    fn riemann_sum_of_identity_left_rule() {
        // oracle: brute-force sum of t_j * dt with exact rational arithmetic
        // in integer units, then the closed form T^2/2 - T*mesh/2
        for &(horizon, steps) in &[(1.0, 10usize), (2.0, 7), (3.5, 64)] {
            let grid = TimeGrid::uniform(horizon, steps).unwrap();
            let id = SamplePath::from_fn(&grid, |t| t);
            let s = riemann_sum_vn(&id, &id, EndpointRule::Left).unwrap();
            let brute: f64 = (0..steps).map(|j| j as f64).sum::<f64>() * (horizon / steps as f64).powi(2);
            let closed = horizon * horizon / 2.0 - horizon * grid.mesh() / 2.0;
            assert!((s - brute).abs() < 1e-12, "{s} vs {brute}");
            assert!((s - closed).abs() < 1e-12, "{s} vs {closed}");
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = path(&[0.0, 1.0, 2.0]);
        let b = path(&[0.0, 1.0]);
        assert!(matches!(riemann_sum_vn(&a, &b, EndpointRule::Left), Err(Error::GridMismatch)));
        assert!(stieltjes_integral(&a, &jordan_decompose(&b)).is_err());
    }

    #[test]
    fn stieltjes_split_and_cancellation() {
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let x = SamplePath::from_fn(&grid, |t| (3.0 * t).sin());
        let k = SamplePath::from_fn(&grid, |t| t * t + 0.5 * (7.0 * t).cos());
        let total = riemann_sum_vn(&x, &k, EndpointRule::Left).unwrap();
        for r in 0..=20 {
            let a = riemann_sum_range(&x, &k, EndpointRule::Left, 0, r).unwrap();
            let b = riemann_sum_range(&x, &k, EndpointRule::Left, r, 20).unwrap();
            assert!((a + b - total).abs() <= 1e-12 * (1.0 + total.abs()));
        }
        let inc = IncreasingPath::new(SamplePath::from_fn(&grid, |t| t)).unwrap();
        let bv = BVPath::difference(inc.clone(), inc).unwrap();
        assert_eq!(stieltjes_integral(&x, &bv).unwrap(), 0.0);
    }

    #[test]
    fn stieltjes_matches_difference_of_sums() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let x = SamplePath::from_fn(&grid, |t| 1.0 + t.sin());
        let k1 = IncreasingPath::new(SamplePath::from_fn(&grid, |t| t * t)).unwrap();
        let k2 = IncreasingPath::new(SamplePath::from_fn(&grid, |t| t.exp() - 1.0)).unwrap();
        let bv = BVPath::difference(k1.clone(), k2.clone()).unwrap();
        let lhs = stieltjes_integral(&x, &bv).unwrap();
        let rhs = riemann_sum_vn(&x, k1.path(), EndpointRule::Left).unwrap()
            - riemann_sum_vn(&x, k2.path(), EndpointRule::Left).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn integral_of_k_dk_converges_with_halving_error() {
        // K_t = t on [0, 2]: left sums are T^2/2 - T*mesh/2, so the error
        // against T^2/2 halves under each refinement
        let horizon = 2.0;
        let mut grid = TimeGrid::uniform(horizon, 8).unwrap();
        let mut errors = Vec::new();
        for _ in 0..5 {
            let k = SamplePath::from_fn(&grid, |t| t);
            let bv = jordan_decompose(&k);
            let v = stieltjes_integral(&k, &bv).unwrap();
            errors.push((v - horizon * horizon / 2.0).abs());
            grid = grid.refine();
        }
        for w in errors.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 1e-9, "{errors:?}");
        }
    }

    #[test]
    fn jordan_examples() {
        let bv = jordan_decompose(&path(&[0.0, 1.0, -1.0, 2.0]));
        assert_eq!(bv.plus.path().last(), 4.0);
        assert_eq!(bv.minus.path().last(), 2.0);
        assert_eq!(bv.total_variation, 6.0);
        assert_eq!(bv.reconstruct().values(), &[0.0, 1.0, -1.0, 2.0]);

        let inc = jordan_decompose(&path(&[1.0, 1.5, 1.5, 4.0]));
        assert!(inc.minus.values().iter().all(|&m| m == 0.0));
        assert_eq!(inc.total_variation, 3.0);

        assert_eq!(jordan_decompose(&path(&[2.0; 5])).total_variation, 0.0);
    }

    #[test]
    fn quadratic_variation_examples() {
        assert_eq!(grid_quadratic_variation(&path(&[3.0; 6])), 0.0);
        for steps in [10, 20, 40] {
            let grid = TimeGrid::uniform(2.0, steps).unwrap();
            let qv = grid_quadratic_variation(&SamplePath::from_fn(&grid, |t| t));
            assert!((qv - 4.0 / steps as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_path_validation() {
        assert!(IncreasingPath::new(path(&[0.0, 1.0, 0.5])).is_err());
        assert!(IncreasingPath::new_from_zero(path(&[0.1, 1.0])).is_err());
        assert!(IncreasingPath::new_from_zero(path(&[0.0, 0.0, 1.0])).is_ok());
    }

    #[test]
    fn csv_round_trips_floats() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let p = SamplePath::new(grid, vec![0.1, -1e-300, 1.0 / 3.0, 12345.678]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,value"));
        let parsed: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(parsed, p.values());
    }
}
