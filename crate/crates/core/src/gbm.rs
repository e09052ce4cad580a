//! G-Brownian motion scenarios: coupled `(B, <B>, σ²)` trajectories under
//! one admissible volatility control from the band `[σ̲², σ̄²]`.
//!
//! The family of all admissible laws is replaced by a finite dictionary of
//! controls (see [`build_family`]). A sup over that dictionary can only
//! under-estimate the true upper expectation; [`crate::gexpect::gheat_solve`]
//! gives the exact value for terminal payoffs.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{write_columns, SamplePath, TimeGrid};
use crate::rng::{Channel, PathStream};

/// Variance band `[σ̲², σ̄²]` of the G-normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolatilityBand {
    pub sigma_low_sq: f64,
    #[serde(default = "one")]
    pub sigma_high_sq: f64,
}

fn one() -> f64 {
    1.0
}

impl VolatilityBand {
    pub fn new(sigma_low_sq: f64, sigma_high_sq: f64) -> Result<Self> {
        let band = Self { sigma_low_sq, sigma_high_sq };
        band.validate()?;
        Ok(band)
    }

    /// Band with the conventional upper edge `σ̄² = 1`.
    pub fn with_lower(sigma_low_sq: f64) -> Result<Self> {
        Self::new(sigma_low_sq, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_low_sq > 0.0 && self.sigma_low_sq <= self.sigma_high_sq && self.sigma_high_sq.is_finite()) {
            return Err(Error::invalid(format!(
                "volatility band needs 0 < sigma_low_sq <= sigma_high_sq, got [{}, {}]",
                self.sigma_low_sq, self.sigma_high_sq
            )));
        }
        Ok(())
    }

    pub fn contains(&self, sigma_sq: f64) -> bool {
        self.sigma_low_sq <= sigma_sq && sigma_sq <= self.sigma_high_sq
    }
}

/// `G(a) = ½(a⁺σ̄² − a⁻σ̲²)`.
pub fn g_function(a: f64, band: &VolatilityBand) -> f64 {
    if a >= 0.0 {
        0.5 * a * band.sigma_high_sq
    } else {
        0.5 * a * band.sigma_low_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlKind {
    Constant(f64),
    /// `values[i]` applies on `[breakpoints[i-1], breakpoints[i])`; needs
    /// `values.len() == breakpoints.len() + 1`.
    PiecewiseConstant { breakpoints: Vec<f64>, values: Vec<f64> },
    /// Feedback on the left-endpoint level of `B`: `σ̄²` while the indicator
    /// holds, `σ̲²` otherwise. The indicator is `B > threshold` when `above`,
    /// else `B < threshold`.
    BangBang { threshold: f64, above: bool },
    /// Alternates between the band edges, starting at `σ̄²`, with switching
    /// times from a Poisson clock of the given intensity.
    RandomSwitch { intensity: f64, stream: u64 },
}

/// One admissible volatility law.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityControl {
    kind: ControlKind,
    band: VolatilityBand,
}

impl VolatilityControl {
    pub fn new(kind: ControlKind, band: VolatilityBand) -> Result<Self> {
        band.validate()?;
        match &kind {
            ControlKind::Constant(s) => {
                if !band.contains(*s) {
                    return Err(Error::invalid(format!("constant sigma^2 = {s} lies outside the band")));
                }
            }
            ControlKind::PiecewiseConstant { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(Error::invalid("piecewise control needs one more value than breakpoints"));
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid("piecewise breakpoints must be strictly increasing"));
                }
                if let Some(v) = values.iter().find(|v| !band.contains(**v)) {
                    return Err(Error::invalid(format!("piecewise sigma^2 = {v} lies outside the band")));
                }
            }
            ControlKind::BangBang { threshold, .. } => {
                if !threshold.is_finite() {
                    return Err(Error::invalid("bang-bang threshold must be finite"));
                }
            }
            ControlKind::RandomSwitch { intensity, .. } => {
                if !(*intensity >= 0.0) || !intensity.is_finite() {
                    return Err(Error::invalid("switch intensity must be finite and nonnegative"));
                }
            }
        }
        Ok(Self { kind, band })
    }

    pub fn constant(sigma_sq: f64, band: VolatilityBand) -> Result<Self> {
        Self::new(ControlKind::Constant(sigma_sq), band)
    }

    pub fn kind(&self) -> &ControlKind {
        &self.kind
    }

    pub fn band(&self) -> &VolatilityBand {
        &self.band
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for VolatilityControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ControlKind::Constant(s) => write!(f, "const({s})"),
            ControlKind::PiecewiseConstant { breakpoints, values } => {
                let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
                write!(f, "piecewise({};{})", join(breakpoints), join(values))
            }
            ControlKind::BangBang { threshold, above } => {
                write!(f, "bang_bang(b{}{threshold})", if *above { ">" } else { "<" })
            }
            ControlKind::RandomSwitch { intensity, .. } => write!(f, "switch({intensity})"),
        }
    }
}

/// Per-path evaluation state of a control.
#[allow(clippy::large_enum_variant)]
enum ControlState<'a> {
    Stateless(&'a ControlKind),
    Switch { stream: PathStream, high: bool, intensity: f64 },
}

impl<'a> ControlState<'a> {
    fn new(control: &'a VolatilityControl, seed: u64, path: u64) -> Self {
        match &control.kind {
            ControlKind::RandomSwitch { intensity, stream } => ControlState::Switch {
                stream: PathStream::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15), path, Channel::Control),
                high: true,
                intensity: *intensity,
            },
            kind => ControlState::Stateless(kind),
        }
    }

    /// σ² on `[t_k, t_{k+1})`, using only `t_k`, `b_k` and the clock.
    fn next(&mut self, band: &VolatilityBand, k: usize, t: f64, prev_dt: f64, b: f64) -> f64 {
        match self {
            ControlState::Stateless(kind) => match kind {
                ControlKind::Constant(s) => *s,
                ControlKind::PiecewiseConstant { breakpoints, values } => {
                    values[breakpoints.partition_point(|&bp| bp <= t)]
                }
                ControlKind::BangBang { threshold, above } => {
                    let on = if *above { b > *threshold } else { b < *threshold };
                    if on {
                        band.sigma_high_sq
                    } else {
                        band.sigma_low_sq
                    }
                }
                ControlKind::RandomSwitch { .. } => unreachable!(),
            },
            ControlState::Switch { stream, high, intensity } => {
                if k > 0 && stream.next_uniform() < -(-*intensity * prev_dt).exp_m1() {
                    *high = !*high;
                }
                if *high {
                    band.sigma_high_sq
                } else {
                    band.sigma_low_sq
                }
            }
        }
    }
}

/// One simulated trajectory of `B`, its quadratic variation `<B>` and the
/// realized variance rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GScenario {
    pub b: SamplePath,
    /// `Σ σ²_k Δt_k`, the compensator form of `<B>`.
    pub qv: SamplePath,
    /// Variance rate on `[t_k, t_{k+1})`; the last entry repeats the final step.
    pub sigma_sq: SamplePath,
    /// `ΔB_k`, with `b[k+1] = b[k] + db[k]` exactly.
    pub db: Vec<f64>,
    pub seed: u64,
    pub path: u64,
}

impl GScenario {
    pub fn grid(&self) -> &TimeGrid {
        self.b.grid()
    }

    /// `<B>_{t_{k+1}} − <B>_{t_k}`.
    pub fn dqv(&self, k: usize) -> f64 {
        let q = self.qv.values();
        q[k + 1] - q[k]
    }

    /// CSV with header `t,b,qv,sigma_sq`.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_columns(
            out,
            &["t", "b", "qv", "sigma_sq"],
            &[self.grid().times(), self.b.values(), self.qv.values(), self.sigma_sq.values()],
        )
    }
}

/// Simulates path `path` of the ensemble keyed by `seed`.
///
/// The Brownian increment on step `k` is `σ_k √Δt_k ξ_k` where `ξ_k` is
/// normal draw `k` of the path's noise stream, independent of the control.
pub fn simulate_scenario(control: &VolatilityControl, grid: &TimeGrid, seed: u64, path: u64) -> GScenario {
    let band = control.band;
    let times = grid.times();
    let n = grid.len();
    let mut noise = PathStream::new(seed, path, Channel::Noise);
    let mut state = ControlState::new(control, seed, path);

    let mut b = Vec::with_capacity(n);
    let mut qv = Vec::with_capacity(n);
    let mut sig = Vec::with_capacity(n);
    let mut db = Vec::with_capacity(n - 1);
    b.push(0.0);
    qv.push(0.0);

    // <B> is accumulated from the start of the current constant-σ² run so
    // that constant controls give qv_k = σ² t_k exactly.
    let mut run_start = 0usize;
    let mut run_qv = 0.0;
    let mut run_sigma = f64::NAN;
    for k in 0..n - 1 {
        let prev_dt = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
        let s2 = state.next(&band, k, times[k], prev_dt, b[k]);
        if s2 != run_sigma {
            run_start = k;
            run_qv = qv[k];
            run_sigma = s2;
        }
        let dt = times[k + 1] - times[k];
        let z = noise.next_normal();
        let inc = s2.sqrt() * dt.sqrt() * z;
        b.push(b[k] + inc);
        db.push(inc);
        let t1 = times[k + 1];
        let raw = run_qv + s2 * (t1 - times[run_start]);
        let lo = qv[k].max(band.sigma_low_sq * t1);
        qv.push(raw.clamp(lo, band.sigma_high_sq * t1));
        sig.push(s2);
    }
    sig.push(*sig.last().expect("grid has at least one step"));

    GScenario {
        b: SamplePath::new(grid.clone(), b).expect("length matches grid"),
        qv: SamplePath::new(grid.clone(), qv).expect("length matches grid"),
        sigma_sq: SamplePath::new(grid.clone(), sig).expect("length matches grid"),
        db,
        seed,
        path,
    }
}

/// Simulates paths `0..n_paths` in path order.
pub fn simulate_ensemble(control: &VolatilityControl, grid: &TimeGrid, seed: u64, n_paths: usize) -> Vec<GScenario> {
    crate::par_map(n_paths, |i| simulate_scenario(control, grid, seed, i as u64))
}

/// The two parts of the discretized identity `<B>_T = B_T² − 2∫B dB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QvResidual {
    /// `B_T² − 2Σ B_k ΔB_k − Σ ΔB_k²`: zero up to rounding.
    pub exact_part: f64,
    /// `Σ ΔB_k² − <B>_T`: discretization error, vanishing with the mesh.
    pub limit_part: f64,
}

pub fn qv_identity_residual(scenario: &GScenario) -> QvResidual {
    let b = scenario.b.values();
    let mut ito = 0.0;
    let mut realized = 0.0;
    for w in b.windows(2) {
        let db = w[1] - w[0];
        ito += w[0] * db;
        realized += db * db;
    }
    let bt = scenario.b.last();
    QvResidual { exact_part: bt * bt - 2.0 * ito - realized, limit_part: realized - scenario.qv.last() }
}

/// Description of a finite control dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    /// Number of constant controls evenly spanning the band.
    #[serde(default = "one_usize")]
    pub constants: usize,
    /// Thresholds for bang-bang controls of the form `σ̄² while B > threshold`.
    #[serde(default)]
    pub bang_bang: Vec<f64>,
    /// Intensities of random-switch controls.
    #[serde(default)]
    pub random_switch: Vec<f64>,
}

fn one_usize() -> usize {
    1
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self { constants: 1, bang_bang: Vec::new(), random_switch: Vec::new() }
    }
}

/// Builds the dictionary: constants first (ascending), then bang-bang, then
/// random-switch entries. A single constant sits at the upper band edge.
pub fn build_family(spec: &FamilySpec, band: VolatilityBand) -> Result<Vec<VolatilityControl>> {
    band.validate()?;
    let m = spec.constants;
    if m == 0 && spec.bang_bang.is_empty() && spec.random_switch.is_empty() {
        return Err(Error::invalid("control family is empty"));
    }
    let mut family = Vec::with_capacity(m + spec.bang_bang.len() + spec.random_switch.len());
    let (lo, hi) = (band.sigma_low_sq, band.sigma_high_sq);
    for i in 0..m {
        let s = if m == 1 || i == m - 1 { hi } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 };
        family.push(VolatilityControl::constant(s, band)?);
    }
    for &threshold in &spec.bang_bang {
        family.push(VolatilityControl::new(ControlKind::BangBang { threshold, above: true }, band)?);
    }
    for (i, &intensity) in spec.random_switch.iter().enumerate() {
        family.push(VolatilityControl::new(ControlKind::RandomSwitch { intensity, stream: i as u64 + 1 }, band)?);
    }
    Ok(family)
}
