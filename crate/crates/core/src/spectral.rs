//! Fourier multipliers on periodic grids.
//!
//! Symbols use the unshifted DFT layout (zero frequency at index 0) with the
//! same x-fastest storage as fields. The angular spatial frequency of index
//! `i` along an axis of `n` cells is `2π·wrap(i)/(n·h)`, where `wrap` maps to
//! the symmetric range `[-n/2, n/2)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::grid::{ComplexField2D, Grid2D};

/// Angular spatial frequencies along one axis, DFT order.
pub fn angular_frequencies(n: usize, h: f64) -> Vec<f64> {
    let scale = 2.0 * std::f64::consts::PI / (n as f64 * h);
    (0..n)
        .map(|i| {
            let w = if i < n.div_ceil(2) { i as isize } else { i as isize - n as isize };
            w as f64 * scale
        })
        .collect()
}

/// A complex symbol per discrete spatial frequency of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMultiplier {
    grid: Grid2D,
    symbol: Vec<Complex64>,
}

impl SpectralMultiplier {
    /// Builds the symbol from a function of the angular frequency `(px, py)`.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let px = angular_frequencies(grid.nx(), grid.h());
        let py = angular_frequencies(grid.ny(), grid.h());
        let mut symbol = Vec::with_capacity(grid.len());
        for &qy in &py {
            for &qx in &px {
                symbol.push(f(qx, qy));
            }
        }
        Self { grid, symbol }
    }

    pub fn from_values(grid: Grid2D, symbol: Vec<Complex64>) -> Result<Self> {
        if symbol.len() != grid.len() {
            return Err(crate::Error::ShapeMismatch(format!(
                "{} symbol values for {} cells",
                symbol.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, symbol })
    }

    /// Spectral Laplacian, symbol `-|p|²`.
    pub fn laplacian(grid: Grid2D) -> Self {
        Self::from_fn(grid, |px, py| Complex64::new(-(px * px + py * py), 0.0))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn symbol(&self) -> &[Complex64] {
        &self.symbol
    }
}

/// Returns `IFFT(symbol · FFT(f))`.
pub fn apply_spectral_multiplier(
    f: &ComplexField2D,
    m: &SpectralMultiplier,
) -> Result<ComplexField2D> {
    f.grid().check_same(m.grid(), "field vs multiplier")?;
    let mut plan = SpectralPlan::new(*f.grid());
    let prepared = plan.prepare(m);
    let mut out = f.clone();
    plan.apply(out.values_mut(), &prepared);
    Ok(out)
}

/// A multiplier rearranged into the transposed spectral layout used
/// internally by [`SpectralPlan`].
#[derive(Debug, Clone)]
pub struct PreparedSymbol {
    transposed: Vec<Complex64>,
}

/// Reusable 2D transform plan with its scratch buffers.
///
/// The forward transform leaves the spectrum transposed (y fastest) so that
/// a multiply-and-invert cycle needs two transposes instead of four.
pub struct SpectralPlan {
    nx: usize,
    ny: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
    work: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan").field("nx", &self.nx).field("ny", &self.ny).finish()
    }
}

impl SpectralPlan {
    pub fn new(grid: Grid2D) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(nx);
        let inv_x = planner.plan_fft_inverse(nx);
        let fwd_y = planner.plan_fft_forward(ny);
        let inv_y = planner.plan_fft_inverse(ny);
        let scratch_len = [&fwd_x, &inv_x, &fwd_y, &inv_y]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            nx,
            ny,
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
            work: vec![Complex64::default(); nx * ny],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn prepare(&self, m: &SpectralMultiplier) -> PreparedSymbol {
        let mut transposed = vec![Complex64::default(); self.nx * self.ny];
        transpose(m.symbol(), &mut transposed, self.nx, self.ny);
        PreparedSymbol { transposed }
    }

    /// In place: `data ← IFFT(symbol · FFT(data))`.
    pub fn apply(&mut self, data: &mut [Complex64], symbol: &PreparedSymbol) {
        let (nx, ny) = (self.nx, self.ny);
        debug_assert_eq!(data.len(), nx * ny);
        self.fwd_x.process_with_scratch(data, &mut self.scratch);
        transpose(data, &mut self.work, nx, ny);
        self.fwd_y.process_with_scratch(&mut self.work, &mut self.scratch);
        let norm = 1.0 / (nx * ny) as f64;
        for (w, s) in self.work.iter_mut().zip(&symbol.transposed) {
            *w *= s * norm;
        }
        self.inv_y.process_with_scratch(&mut self.work, &mut self.scratch);
        transpose(&self.work, data, ny, nx);
        self.inv_x.process_with_scratch(data, &mut self.scratch);
    }
}

/// `dst[x * rows + y] = src[y * cols + x]` for a `rows x cols` source.
fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    const BLOCK: usize = 16;
    for y0 in (0..rows).step_by(BLOCK) {
        for x0 in (0..cols).step_by(BLOCK) {
            for y in y0..(y0 + BLOCK).min(rows) {
                for x in x0..(x0 + BLOCK).min(cols) {
                    dst[x * rows + y] = src[y * cols + x];
                }
            }
        }
    }
}
