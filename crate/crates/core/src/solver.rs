//! Heterogeneous Helmholtz solver, `(∇² + k(x)²) u = -s` with
//! `k = ω / c`, by the preconditioned convergent Born series.
//!
//! The medium is embedded in an absorbing layer of `pad_width` cells per
//! side in which `k²` gains an imaginary ramp `i·α(d)·(ω/c0)²`, `α` growing
//! cubically from 0 to [`ABSORBER_PEAK`] over the layer depth. With the
//! reference wavenumber `k0` and shift `ε ≥ max|k² − k0²|` the scattering
//! potential is `V = k² − k0² − iε`, the Green's operator has symbol
//! `1 / (|p|² − k0² − iε)` and the iteration reads
//!
//! ```text
//! u ← u + γ (G[V u + s] − u),   γ = (i/ε) V,   u₀ = 0.
//! ```
//!
//! [`helmholtz_residual`] evaluates `‖S u + s‖ / ‖s‖` with a spectral
//! Laplacian, independently of `V`, `γ` and `G`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField2D, Grid2D};
use crate::phantom::SoundSpeedMap;
use crate::spectral::{PreparedSymbol, SpectralMultiplier, SpectralPlan};

/// Peak of the absorbing ramp, as a multiple of `(ω/c0)²`.
pub const ABSORBER_PEAK: f64 = 0.5;

/// A converged field must satisfy `residual ≤ RESIDUAL_FACTOR · tol`.
pub const RESIDUAL_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum K0Strategy {
    /// `k0²` at the midpoint of the `Re k²` range; minimises `ε`.
    Midpoint,
    /// `k0 = ω / c0`.
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbsConfig {
    pub pad_width: usize,
    pub epsilon_safety: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub k0_strategy: K0Strategy,
}

impl Default for CbsConfig {
    fn default() -> Self {
        Self {
            pad_width: 50,
            epsilon_safety: 1.1,
            max_iter: 2000,
            tol: 1e-6,
            k0_strategy: K0Strategy::Midpoint,
        }
    }
}

impl CbsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if !(self.epsilon_safety >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_safety must be >= 1, got {}",
                self.epsilon_safety
            )));
        }
        Ok(())
    }
}

/// One Helmholtz solve: medium, angular frequency and source on one grid.
#[derive(Debug, Clone, Copy)]
pub struct HelmholtzProblem<'a> {
    pub c: &'a SoundSpeedMap,
    pub omega: f64,
    pub source: &'a ComplexField2D,
}

impl<'a> HelmholtzProblem<'a> {
    pub fn new(c: &'a SoundSpeedMap, omega: f64, source: &'a ComplexField2D) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        c.grid().check_same(source.grid(), "sound speed vs source")?;
        Ok(Self { c, omega, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_update: f64,
    /// Relative Helmholtz residual on the padded grid; 0 for a zero source.
    pub residual: f64,
    pub converged: bool,
    pub k0: f64,
    pub epsilon: f64,
    /// Set when the medium was exactly homogeneous and `ε` fell back to
    /// `1e-3·k0²`.
    pub epsilon_fallback: bool,
}

/// Scattering potential on the padded grid.
#[derive(Debug, Clone)]
pub struct ScatteringPotential {
    pub v: ComplexField2D,
    pub k0: f64,
    pub epsilon: f64,
    pub epsilon_fallback: bool,
}

/// Absorber strength at fractional depth `t ∈ [0, 1]` into the layer.
#[inline]
fn absorber_profile(t: f64) -> f64 {
    ABSORBER_PEAK * t * t * t
}

/// `k(x)²` on the grid padded by `pad_width` cells, including the
/// absorbing ramp.
pub fn wavenumber_sq(c: &SoundSpeedMap, omega: f64, pad_width: usize) -> ComplexField2D {
    let kbg2 = (omega / c.c0()).powi(2);
    let base = c.field().pad(pad_width, c.c0());
    let grid = *base.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let w = pad_width as f64;
    ComplexField2D::from_fn(grid, |ix, iy, _| {
        let cv = base.get(ix, iy);
        let re = (omega / cv).powi(2);
        if pad_width == 0 {
            return Complex64::new(re, 0.0);
        }
        let dx = pad_width.saturating_sub(ix).max((ix + pad_width + 1).saturating_sub(nx));
        let dy = pad_width.saturating_sub(iy).max((iy + pad_width + 1).saturating_sub(ny));
        let depth = dx.max(dy) as f64 / w;
        Complex64::new(re, absorber_profile(depth) * kbg2)
    })
}

fn potential_from_ksq(ksq: &ComplexField2D, omega: f64, c0: f64, cfg: &CbsConfig) -> ScatteringPotential {
    let k0sq = match cfg.k0_strategy {
        K0Strategy::Background => (omega / c0).powi(2),
        K0Strategy::Midpoint => {
            let (lo, hi) = ksq
                .values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| (lo.min(k.re), hi.max(k.re)));
            0.5 * (lo + hi)
        }
    };
    let spread = ksq.values().iter().map(|k| (k - k0sq).norm()).fold(0.0, f64::max);
    let (epsilon, fallback) =
        if spread > 0.0 { (cfg.epsilon_safety * spread, false) } else { (1e-3 * k0sq, true) };
    let shift = Complex64::new(k0sq, epsilon);
    ScatteringPotential { v: ksq.map(|k| k - shift), k0: k0sq.sqrt(), epsilon, epsilon_fallback: fallback }
}

/// `V = k² − k0² − iε` with `k0` and `ε` chosen per `cfg`.
pub fn build_scattering_potential(p: &HelmholtzProblem<'_>, cfg: &CbsConfig) -> Result<ScatteringPotential> {
    cfg.validate()?;
    let ksq = wavenumber_sq(p.c, p.omega, cfg.pad_width);
    Ok(potential_from_ksq(&ksq, p.omega, p.c.c0(), cfg))
}

/// The CBS iteration for one medium and frequency, reusable across sources.
///
/// Immutable once built; share it between threads and give each solve its
/// own [`SpectralPlan`].
pub struct CbsOperator {
    grid: Grid2D,
    padded: Grid2D,
    cfg: CbsConfig,
    ksq: Vec<Complex64>,
    v: Vec<Complex64>,
    gamma: Vec<Complex64>,
    green: PreparedSymbol,
    laplacian: PreparedSymbol,
    k0: f64,
    epsilon: f64,
    epsilon_fallback: bool,
}

impl std::fmt::Debug for CbsOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CbsOperator")
            .field("padded", &self.padded)
            .field("k0", &self.k0)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl CbsOperator {
    pub fn new(c: &SoundSpeedMap, omega: f64, cfg: &CbsConfig) -> Result<Self> {
        cfg.validate()?;
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::InvalidArgument(format!("omega must be positive, got {omega}")));
        }
        let ksq = wavenumber_sq(c, omega, cfg.pad_width);
        let pot = potential_from_ksq(&ksq, omega, c.c0(), cfg);
        let padded = *ksq.grid();
        let k0sq = pot.k0 * pot.k0;
        let eps = pot.epsilon;
        let plan = SpectralPlan::new(padded);
        let green = plan.prepare(&SpectralMultiplier::from_fn(padded, |px, py| {
            Complex64::new(1.0, 0.0) / Complex64::new(px * px + py * py - k0sq, -eps)
        }));
        let laplacian = plan.prepare(&SpectralMultiplier::laplacian(padded));
        let gamma = pot.v.values().iter().map(|v| Complex64::new(0.0, 1.0 / eps) * v).collect();
        Ok(Self {
            grid: *c.grid(),
            padded,
            cfg: *cfg,
            ksq: ksq.into_values(),
            v: pot.v.into_values(),
            gamma,
            green,
            laplacian,
            k0: pot.k0,
            epsilon: eps,
            epsilon_fallback: pot.epsilon_fallback,
        })
    }

    pub fn padded_grid(&self) -> &Grid2D {
        &self.padded
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn new_plan(&self) -> SpectralPlan {
        SpectralPlan::new(self.padded)
    }

    /// Solves for `source` (on the unpadded grid), returning the field on
    /// the padded grid.
    pub fn solve_padded(
        &self,
        plan: &mut SpectralPlan,
        source: &ComplexField2D,
    ) -> Result<(ComplexField2D, SolveReport)> {
        self.grid.check_same(source.grid(), "operator vs source")?;
        let s = source.pad(self.cfg.pad_width, Complex64::default());
        let n = self.padded.len();
        let mut u = vec![Complex64::default(); n];
        let mut buf = vec![Complex64::default(); n];
        let mut iterations = 0;
        let mut final_update = f64::INFINITY;
        let mut converged = false;
        let s_norm = s.norm_l2();
        let mut residual = f64::INFINITY;
        let mut checked = false;
        while iterations < self.cfg.max_iter {
            for i in 0..n {
                buf[i] = self.v[i] * u[i] + s.values()[i];
            }
            plan.apply(&mut buf, &self.green);
            let (mut du2, mut u2) = (0.0, 0.0);
            for i in 0..n {
                let d = self.gamma[i] * (buf[i] - u[i]);
                u[i] += d;
                du2 += d.norm_sqr();
                u2 += u[i].norm_sqr();
            }
            iterations += 1;
            final_update = if u2 > 0.0 { (du2 / u2).sqrt() } else { 0.0 };
            if final_update <= self.cfg.tol {
                residual = if s_norm > 0.0 { self.residual_padded(plan, &u, s.values()) } else { 0.0 };
                checked = true;
                if residual <= RESIDUAL_FACTOR * self.cfg.tol {
                    converged = true;
                    break;
                }
            } else {
                checked = false;
            }
        }
        if !checked {
            residual = if s_norm > 0.0 { self.residual_padded(plan, &u, s.values()) } else { 0.0 };
        }
        let u = ComplexField2D::from_values(self.padded, u)?;
        let report = SolveReport {
            iterations,
            final_update,
            residual,
            converged,
            k0: self.k0,
            epsilon: self.epsilon,
            epsilon_fallback: self.epsilon_fallback,
        };
        Ok((u, report))
    }

    /// Solves and crops back to the unpadded grid.
    pub fn solve_with(&self, plan: &mut SpectralPlan, source: &ComplexField2D) -> Result<(ComplexField2D, SolveReport)> {
        let (u, report) = self.solve_padded(plan, source)?;
        let mut cropped = u.crop(self.cfg.pad_width)?;
        // keep the caller's origin exactly
        cropped = ComplexField2D::from_values(self.grid, cropped.into_values())?;
        Ok((cropped, report))
    }

    pub fn solve(&self, source: &ComplexField2D) -> Result<(ComplexField2D, SolveReport)> {
        let mut plan = self.new_plan();
        self.solve_with(&mut plan, source)
    }

    fn residual_padded(&self, plan: &mut SpectralPlan, u: &[Complex64], s: &[Complex64]) -> f64 {
        let mut lap = u.to_vec();
        plan.apply(&mut lap, &self.laplacian);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..u.len() {
            num += (lap[i] + self.ksq[i] * u[i] + s[i]).norm_sqr();
            den += s[i].norm_sqr();
        }
        (num / den).sqrt()
    }
}

/// Runs the CBS iteration and returns the field cropped to the problem grid.
///
/// Non-convergence is not an error here: the last iterate is returned with
/// `converged = false`.
pub fn solve_helmholtz(p: &HelmholtzProblem<'_>, cfg: &CbsConfig) -> Result<(ComplexField2D, SolveReport)> {
    CbsOperator::new(p.c, p.omega, cfg)?.solve(p.source)
}

/// `‖S u + s‖₂ / ‖s‖₂` with `S = ∇² + k²` on the padded grid.
///
/// `u` must live on the grid padded by `cfg.pad_width` (which is the problem
/// grid itself when the padding is zero).
pub fn helmholtz_residual(p: &HelmholtzProblem<'_>, cfg: &CbsConfig, u: &ComplexField2D) -> Result<f64> {
    let ksq = wavenumber_sq(p.c, p.omega, cfg.pad_width);
    ksq.grid().check_same(u.grid(), "padded grid vs field")?;
    let s = p.source.pad(cfg.pad_width, Complex64::default());
    let s_norm = s.norm_l2();
    if s_norm == 0.0 {
        return Err(Error::ZeroSource);
    }
    let lap = crate::spectral::apply_spectral_multiplier(u, &SpectralMultiplier::laplacian(*u.grid()))?;
    let num: f64 = lap
        .values()
        .iter()
        .zip(ksq.values())
        .zip(u.values())
        .zip(s.values())
        .map(|(((l, k), u), s)| (l + k * u + s).norm_sqr())
        .sum();
    Ok(num.sqrt() / s_norm)
}
