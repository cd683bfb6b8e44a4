//! Adjoint-state full-waveform inversion with frequency continuation.
//!
//! The discrete forward operator `S = ∇² + k²` is complex symmetric, not
//! Hermitian. The adjoint field is therefore taken as
//! `λ = conj(S⁻¹ (−2 conj(r)))` where `r` is the injected residual, which
//! makes `Re[−2ω² λ* u / c³]` the exact derivative of the discrete misfit.
//! The gradient is a density: the derivative with respect to the speed of
//! a single cell is `g · h²`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::acquisition::{inject, make_point_source, record_receivers, MeasurementTensor, RingArray};
use crate::error::{Error, Result};
use crate::grid::{ComplexField2D, Grid2D, RealField2D};
use crate::phantom::SoundSpeedMap;
use crate::solver::{CbsConfig, CbsOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Every step moves the largest cell by `initial_step · c0`.
    FixedRelative,
    /// Projected Armijo backtracking with halving.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    /// Angular frequencies, ascending.
    pub frequency_schedule: Vec<f64>,
    pub iters_per_frequency: usize,
    pub step_rule: StepRule,
    /// First update of each frequency block moves the largest cell by
    /// `initial_step · c0`.
    pub initial_step: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub source_subset: Option<Vec<usize>>,
    pub cbs: CbsConfig,
    pub armijo_c1: f64,
    /// A block stops once the misfit falls below this fraction of the
    /// observed data energy.
    pub misfit_floor: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            frequency_schedule: vec![crate::angular(3e5), crate::angular(4e5), crate::angular(5e5)],
            iters_per_frequency: 10,
            step_rule: StepRule::Backtracking,
            initial_step: 10.0 / 1500.0,
            min_speed: 1350.0,
            max_speed: 1650.0,
            source_subset: None,
            cbs: CbsConfig::default(),
            armijo_c1: 1e-4,
            misfit_floor: 1e-12,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        self.cbs.validate()?;
        if self.frequency_schedule.is_empty() {
            return Err(Error::InvalidArgument("frequency schedule is empty".into()));
        }
        if self.frequency_schedule.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("schedule frequencies must be positive".into()));
        }
        if self.frequency_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("frequency schedule must be strictly ascending".into()));
        }
        if !(self.min_speed < self.max_speed) {
            return Err(Error::InvalidArgument(format!(
                "min_speed {} must be below max_speed {}",
                self.min_speed, self.max_speed
            )));
        }
        let (lo, hi) = crate::phantom::SPEED_ENVELOPE;
        if self.min_speed < lo || self.max_speed > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds must lie within [{lo}, {hi}] m/s")));
        }
        if !(self.initial_step > 0.0) || !self.initial_step.is_finite() {
            return Err(Error::InvalidArgument("initial_step must be positive".into()));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidArgument("armijo_c1 must lie in (0, 1)".into()));
        }
        if let Some(s) = &self.source_subset {
            if s.is_empty() {
                return Err(Error::InvalidArgument("source subset is empty".into()));
            }
        }
        Ok(())
    }
}

/// Misfit gradient with respect to the sound speed, per unit area.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    field: RealField2D,
}

impl GradientField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { field: RealField2D::filled(grid, 0.0) }
    }

    pub fn grid(&self) -> &Grid2D {
        self.field.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn field(&self) -> &RealField2D {
        &self.field
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &GradientField) -> Result<()> {
        self.grid().check_same(other.grid(), "gradient accumulation")?;
        for (a, b) in self.field.values_mut().iter_mut().zip(other.values()) {
            *a += b;
        }
        Ok(())
    }
}

/// `Σ_j Σ_k ‖y_obs[:,k,j] − y_pred[:,k,j]‖²`.
pub fn data_misfit(y_obs: &MeasurementTensor, y_pred: &MeasurementTensor) -> Result<f64> {
    if y_obs.shape() != y_pred.shape() {
        return Err(Error::ShapeMismatch(format!("observed {:?} vs predicted {:?}", y_obs.shape(), y_pred.shape())));
    }
    Ok(y_obs.data().iter().zip(y_pred.data()).map(|(a, b)| (a - b).norm_sqr()).sum())
}

/// Receiver residuals `u(x_i) − y_i` injected at the transducers.
pub fn adjoint_source(
    u_at_receivers: &[Complex64],
    y_obs_column: &[Complex64],
    array: &RingArray,
    grid: Grid2D,
) -> Result<ComplexField2D> {
    let m = array.m();
    if u_at_receivers.len() != m || y_obs_column.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions and {} observations for {m} transducers",
            u_at_receivers.len(),
            y_obs_column.len()
        )));
    }
    let mut f = ComplexField2D::zeros(grid);
    for (i, (u, y)) in u_at_receivers.iter().zip(y_obs_column).enumerate() {
        let r = u - y;
        if r != Complex64::default() {
            inject(&mut f, array.position(i), r)?;
        }
    }
    Ok(f)
}

/// `Re[−2ω² λ* u / c³]` inside the ROI, zero outside.
pub fn gradient_single(
    c: &SoundSpeedMap,
    omega: f64,
    u: &ComplexField2D,
    lambda: &ComplexField2D,
) -> Result<GradientField> {
    let grid = *c.grid();
    grid.check_same(u.grid(), "sound speed vs forward field")?;
    grid.check_same(lambda.grid(), "sound speed vs adjoint field")?;
    let mask = c.roi().mask(&grid);
    let w2 = omega * omega;
    let values = (0..grid.len())
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let cv = c.values()[i];
            -2.0 * w2 * (lambda.values()[i].conj() * u.values()[i]).re / (cv * cv * cv)
        })
        .collect();
    Ok(GradientField { field: RealField2D::from_values(grid, values)? })
}

fn frequency_index(y_obs: &MeasurementTensor, omega: f64) -> Result<usize> {
    y_obs
        .frequencies()
        .iter()
        .position(|&w| (w - omega).abs() <= 1e-9 * omega)
        .ok_or_else(|| Error::InvalidArgument(format!("frequency {omega} rad/s not present in the measurements")))
}

fn source_list(cfg: &InversionConfig, m: usize) -> Result<Vec<usize>> {
    match &cfg.source_subset {
        None => Ok((0..m).collect()),
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&k| k >= m) {
                return Err(Error::InvalidArgument(format!("source index {bad} out of range for {m} transducers")));
            }
            Ok(s.clone())
        }
    }
}

fn not_converged(source: usize, freq: usize, r: &crate::solver::SolveReport) -> Error {
    Error::NotConverged {
        source_index: source,
        frequency_index: freq,
        iterations: r.iterations,
        final_update: r.final_update,
    }
}

/// Forward field and receiver data of one transmit event.
struct Shot {
    source: usize,
    field: ComplexField2D,
    predicted: Vec<Complex64>,
}

struct Forward {
    shots: Vec<Shot>,
    misfit: f64,
}

fn forward(c: &SoundSpeedMap, y_obs: &MeasurementTensor, freq: usize, sources: &[usize], cbs: &CbsConfig) -> Result<Forward> {
    let grid = *c.grid();
    let acq = y_obs.acquisition();
    let op = CbsOperator::new(c, acq.frequencies[freq], cbs)?;
    let shots = sources
        .par_iter()
        .map_init(
            || op.new_plan(),
            |plan, &k| {
                let s = make_point_source(grid, acq.array.position(k), acq.amplitude)?;
                let (u, rep) = op.solve_with(plan, &s)?;
                if !rep.converged {
                    return Err(not_converged(k, freq, &rep));
                }
                let predicted = record_receivers(&u, &acq.array)?;
                Ok(Shot { source: k, field: u, predicted })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let misfit = shots
        .iter()
        .map(|s| {
            s.predicted
                .iter()
                .zip(y_obs.column(s.source, freq))
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
        })
        .sum();
    Ok(Forward { shots, misfit })
}

fn gradient_from(
    c: &SoundSpeedMap,
    y_obs: &MeasurementTensor,
    freq: usize,
    fwd: &Forward,
    cbs: &CbsConfig,
) -> Result<GradientField> {
    let grid = *c.grid();
    let omega = y_obs.frequencies()[freq];
    let op = CbsOperator::new(c, omega, cbs)?;
    let parts = fwd
        .shots
        .par_iter()
        .map_init(
            || op.new_plan(),
            |plan, shot| {
                let adj = adjoint_source(&shot.predicted, y_obs.column(shot.source, freq), y_obs.array(), grid)?;
                if adj.norm_l2() == 0.0 {
                    return Ok(GradientField::zeros(grid));
                }
                let rhs = adj.conj().scale(Complex64::new(2.0, 0.0));
                let (mu, rep) = op.solve_with(plan, &rhs)?;
                if !rep.converged {
                    return Err(not_converged(shot.source, freq, &rep));
                }
                gradient_single(c, omega, &shot.field, &mu.conj())
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut total = GradientField::zeros(grid);
    for g in &parts {
        total.add_assign(g)?;
    }
    Ok(total)
}

/// Summed gradient and misfit over the configured sources at one frequency
/// of `y_obs`.
pub fn compute_total_gradient(
    c: &SoundSpeedMap,
    y_obs: &MeasurementTensor,
    omega_index: usize,
    cfg: &InversionConfig,
) -> Result<(GradientField, f64)> {
    cfg.validate()?;
    if omega_index >= y_obs.n() {
        return Err(Error::InvalidArgument(format!(
            "frequency index {omega_index} out of range for {} frequencies",
            y_obs.n()
        )));
    }
    let sources = source_list(cfg, y_obs.m())?;
    let fwd = forward(c, y_obs, omega_index, &sources, &cfg.cbs)?;
    let g = gradient_from(c, y_obs, omega_index, &fwd, &cfg.cbs)?;
    Ok((g, fwd.misfit))
}

/// Misfit over the configured sources at one frequency, forward solves only.
pub fn frequency_misfit(
    c: &SoundSpeedMap,
    y_obs: &MeasurementTensor,
    omega_index: usize,
    cfg: &InversionConfig,
) -> Result<f64> {
    cfg.validate()?;
    let sources = source_list(cfg, y_obs.m())?;
    Ok(forward(c, y_obs, omega_index, &sources, &cfg.cbs)?.misfit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEnd {
    Completed,
    /// Backtracking shrank the step below `1e-6` of its initial value.
    StepUnderflow,
    /// The misfit reached the configured floor.
    MisfitFloor,
    /// The gradient vanished.
    ZeroGradient,
}

/// One frequency of the continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBlock {
    pub omega: f64,
    /// Misfit at the start of each iteration.
    pub misfits: Vec<f64>,
    /// Accepted step length of each iteration.
    pub steps: Vec<f64>,
    pub final_misfit: f64,
    pub end: BlockEnd,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InversionTrace {
    pub blocks: Vec<FrequencyBlock>,
}

impl InversionTrace {
    /// Every recorded misfit, block after block.
    pub fn misfits(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.misfits.iter().copied()).collect()
    }
}

fn project_step(c: &SoundSpeedMap, g: &GradientField, alpha: f64, cfg: &InversionConfig) -> Result<SoundSpeedMap> {
    let grid = *c.grid();
    let mask = c.roi().mask(&grid);
    let values = c
        .values()
        .iter()
        .zip(g.values())
        .zip(&mask)
        .map(|((&cv, &gv), &inside)| {
            if inside {
                (cv - alpha * gv).clamp(cfg.min_speed, cfg.max_speed)
            } else {
                c.c0()
            }
        })
        .collect();
    SoundSpeedMap::new(RealField2D::from_values(grid, values)?, c.c0(), *c.roi())
}

/// `Σ g·h²·(c_new − c)`, the first-order misfit change of a step.
fn directional_change(c: &SoundSpeedMap, next: &SoundSpeedMap, g: &GradientField) -> f64 {
    let area = c.grid().cell_area();
    c.values()
        .iter()
        .zip(next.values())
        .zip(g.values())
        .map(|((a, b), gv)| gv * area * (b - a))
        .sum()
}

/// Gradient descent over the frequency schedule, low to high.
pub fn invert(
    y_obs: &MeasurementTensor,
    c_init: &SoundSpeedMap,
    cfg: &InversionConfig,
) -> Result<(SoundSpeedMap, InversionTrace)> {
    cfg.validate()?;
    crate::acquisition::check_ring_fits(c_init.grid(), y_obs.array())?;
    let sources = source_list(cfg, y_obs.m())?;
    let freqs = cfg
        .frequency_schedule
        .iter()
        .map(|&w| frequency_index(y_obs, w))
        .collect::<Result<Vec<_>>>()?;
    let mut c = c_init.clone();
    let mut trace = InversionTrace::default();
    for (&j, &omega) in freqs.iter().zip(&cfg.frequency_schedule) {
        let energy: f64 = sources
            .iter()
            .map(|&k| y_obs.column(k, j).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        let floor = cfg.misfit_floor * energy;
        let mut block =
            FrequencyBlock { omega, misfits: vec![], steps: vec![], final_misfit: 0.0, end: BlockEnd::Completed };
        let mut fwd = forward(&c, y_obs, j, &sources, &cfg.cbs)?;
        let mut alpha_init = None;
        let mut alpha = 0.0;
        for _ in 0..cfg.iters_per_frequency {
            block.misfits.push(fwd.misfit);
            if fwd.misfit <= floor {
                block.end = BlockEnd::MisfitFloor;
                break;
            }
            let g = gradient_from(&c, y_obs, j, &fwd, &cfg.cbs)?;
            let gmax = g.max_abs();
            if gmax == 0.0 {
                block.end = BlockEnd::ZeroGradient;
                break;
            }
            let calibrated = cfg.initial_step * c.c0() / gmax;
            let a0 = *alpha_init.get_or_insert(calibrated);
            match cfg.step_rule {
                StepRule::FixedRelative => {
                    let next = project_step(&c, &g, calibrated, cfg)?;
                    fwd = forward(&next, y_obs, j, &sources, &cfg.cbs)?;
                    c = next;
                    block.steps.push(calibrated);
                }
                StepRule::Backtracking => {
                    alpha = if alpha == 0.0 { a0 } else { 2.0 * alpha };
                    let accepted = loop {
                        let next = project_step(&c, &g, alpha, cfg)?;
                        let trial = forward(&next, y_obs, j, &sources, &cfg.cbs)?;
                        let bound = fwd.misfit + cfg.armijo_c1 * directional_change(&c, &next, &g);
                        if trial.misfit <= bound && trial.misfit <= fwd.misfit {
                            break Some((next, trial));
                        }
                        alpha *= 0.5;
                        if alpha < 1e-6 * a0 {
                            break None;
                        }
                    };
                    match accepted {
                        Some((next, trial)) => {
                            c = next;
                            fwd = trial;
                            block.steps.push(alpha);
                        }
                        None => {
                            block.end = BlockEnd::StepUnderflow;
                            break;
                        }
                    }
                }
            }
        }
        block.final_misfit = fwd.misfit;
        trace.blocks.push(block);
    }
    Ok((c, trace))
}
