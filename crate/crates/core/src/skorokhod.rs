//! The pathwise Skorokhod reflection map at a lower (or upper) obstacle.
//!
//! For a driver `y` and an obstacle `s` with `y_0 ≥ s_0` the map returns
//! `x = y + k` with `k_t = max_{u≤t} (y_u − s_u)⁻`. At every instant where
//! `k` strictly increases, `x` is set to exactly `s`, so the right-endpoint
//! flat-off sum `Σ (x_{j+1} − s_{j+1}) Δk_j` is `0.0` in floating point.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::gbm::GScenario;
use crate::grid::{ensure_same_grid, riemann_sum_vn, write_columns, EndpointRule, IncreasingPath, SamplePath};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Barrier {
    /// `x ≥ s`, `x = y + k`.
    Lower,
    /// `x ≤ s`, `x = y − k`.
    Upper,
}

/// A reflected path together with its pushing term and obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPair {
    pub x: SamplePath,
    pub k: IncreasingPath,
    pub obstacle: SamplePath,
    pub barrier: Barrier,
}

impl ReflectedPair {
    /// CSV with header `t,x,k`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_columns(out, &["t", "x", "k"], &[self.x.grid().times(), self.x.values(), self.k.values()])
    }
}

/// Lower-obstacle reflection of `y` at `s`.
pub fn skorokhod_map(y: &SamplePath, s: &SamplePath) -> Result<ReflectedPair> {
    ensure_same_grid(y.grid(), s.grid())?;
    if y.first() < s.first() {
        return Err(Error::invalid(format!(
            "driver starts below the obstacle ({} < {})",
            y.first(),
            s.first()
        )));
    }
    let (x, k) = reflect_lower(y.values(), s.values());
    let grid = y.grid().clone();
    Ok(ReflectedPair {
        x: SamplePath::new(grid.clone(), x)?,
        k: IncreasingPath::new_unchecked(SamplePath::new(grid, k)?),
        obstacle: s.clone(),
        barrier: Barrier::Lower,
    })
}

/// Running-max reflection on raw slices. Returns `(x, k)`.
pub(crate) fn reflect_lower(y: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(y.len());
    let mut k = Vec::with_capacity(y.len());
    let mut push = 0.0f64;
    for (&yi, &si) in y.iter().zip(s) {
        let (xi, ki) = reflect_step(yi, si, push);
        push = ki;
        x.push(xi);
        k.push(ki);
    }
    (x, k)
}

/// One instant of the running-max update given the previous `k`.
#[inline]
pub(crate) fn reflect_step(y: f64, s: f64, k_prev: f64) -> (f64, f64) {
    let deficit = s - y;
    if deficit > k_prev {
        (s, deficit)
    } else {
        // y + k can round below s when k only just covers the deficit
        (f64::max(y + k_prev, s), k_prev)
    }
}

/// Upper-obstacle reflection: `x = −lower(−y, −s).x`, `x = y − k ≤ s`.
pub fn skorokhod_map_upper(y: &SamplePath, s_upper: &SamplePath) -> Result<ReflectedPair> {
    if y.first() > s_upper.first() {
        return Err(Error::invalid(format!(
            "driver starts above the upper obstacle ({} > {})",
            y.first(),
            s_upper.first()
        )));
    }
    let lower = skorokhod_map(&y.map(|v| -v), &s_upper.map(|v| -v))?;
    Ok(ReflectedPair {
        x: lower.x.map(|v| -v),
        k: lower.k,
        obstacle: s_upper.clone(),
        barrier: Barrier::Upper,
    })
}

/// G-Brownian motion reflected at zero: `X = B + K`, `K_t = max_{u≤t} B⁻_u`.
pub fn reflected_gbm(scenario: &GScenario) -> ReflectedPair {
    let zero = SamplePath::constant(scenario.grid(), 0.0);
    skorokhod_map(&scenario.b, &zero).expect("B starts at the zero obstacle")
}

/// `Σ (x − s)(u_j) Δk_j`. Zero under the right rule for any output of the
/// map; under the left rule it is an `O(mesh)` diagnostic.
pub fn flat_off_residual(pair: &ReflectedPair, s: &SamplePath, rule: EndpointRule) -> Result<f64> {
    let gap = pair.x.zip_with(s, |x, s| x - s)?;
    riemann_sum_vn(&gap, pair.k.path(), rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn path(values: &[f64]) -> SamplePath {
        let grid = TimeGrid::uniform(1.0, values.len() - 1).unwrap();
        SamplePath::new(grid, values.to_vec()).unwrap()
    }

    #[test]
    fn lower_map_examples() {
        let zero = path(&[0.0; 3]);
        let r = skorokhod_map(&path(&[0.0, 1.0, 2.0]), &zero).unwrap();
        assert_eq!(r.k.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(r.x.values(), &[0.0, 1.0, 2.0]);

        let r = skorokhod_map(&path(&[0.0, -1.0, -2.0]), &zero).unwrap();
        assert_eq!(r.k.values(), &[0.0, 1.0, 2.0]);
        assert_eq!(r.x.values(), &[0.0, 0.0, 0.0]);

        let r = skorokhod_map(&path(&[0.0, -1.0, 0.5, -2.0]), &path(&[0.0; 4])).unwrap();
        assert_eq!(r.k.values(), &[0.0, 1.0, 1.0, 2.0]);
        assert_eq!(r.x.values(), &[0.0, 0.0, 1.5, 0.0]);
    }

    #[test]
    fn start_below_obstacle_is_rejected() {
        assert!(skorokhod_map(&path(&[-0.1, 0.0]), &path(&[0.0, 0.0])).is_err());
        assert!(skorokhod_map_upper(&path(&[0.1, 0.0]), &path(&[0.0, 0.0])).is_err());
        assert!(skorokhod_map(&path(&[0.0, 0.0]), &path(&[0.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn upper_map_examples() {
        let zero = path(&[0.0; 3]);
        let r = skorokhod_map_upper(&path(&[0.0, -1.0, -2.0]), &zero).unwrap();
        assert_eq!(r.x.values(), &[0.0, -1.0, -2.0]);
        assert_eq!(r.k.values(), &[0.0, 0.0, 0.0]);

        let r = skorokhod_map_upper(&path(&[0.0, 1.0, 2.0]), &zero).unwrap();
        assert_eq!(r.x.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(r.k.values(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn upper_is_mirrored_lower() {
        let y = path(&[0.3, 0.9, -0.2, 1.7, 0.4, 2.2]);
        let s = path(&[0.5, 1.0, 0.8, 1.1, 0.9, 1.5]);
        let up = skorokhod_map_upper(&y, &s).unwrap();
        let low = skorokhod_map(&y.map(|v| -v), &s.map(|v| -v)).unwrap();
        let neg: Vec<u64> = low.x.values().iter().map(|v| (-v).to_bits()).collect();
        let bits: Vec<u64> = up.x.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, neg);
        assert_eq!(up.k, low.k);
        assert!(up.x.values().iter().zip(s.values()).all(|(x, s)| x <= s));
    }

    #[test]
    fn flat_off_with_no_pushing() {
        let y = path(&[1.0, 2.0, 1.5]);
        let s = path(&[0.0; 3]);
        let r = skorokhod_map(&y, &s).unwrap();
        for rule in [EndpointRule::Left, EndpointRule::Right] {
            assert_eq!(flat_off_residual(&r, &s, rule).unwrap(), 0.0);
        }
    }
}
