//! Ring transducer arrays, point sources, receivers and measurement tensors.
//!
//! Sources are injected with the transpose of the bilinear receiver
//! stencil, normalised by `1/h²` so the injected field integrates to the
//! source amplitude. For a transducer on a grid node this is a single cell
//! holding `amplitude / h²`. Using the same stencil on both ends keeps the
//! discrete simulation exactly reciprocal and makes the receiver adjoint
//! exact.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ComplexField2D, Grid2D, Point2};
use crate::phantom::SoundSpeedMap;
use crate::solver::{CbsConfig, CbsOperator};

/// Amplitude of every transmit event.
pub const SOURCE_VALUE: Complex64 = Complex64::new(0.195, -0.0275);

/// Ring diameter of the reference system, meters.
pub const RING_DIAMETER: f64 = 0.220;

/// Transducer count of the reference system.
pub const RING_ELEMENTS: usize = 256;

/// Default frequency ladder in Hz: 300 to 650 kHz in 50 kHz steps.
pub fn default_frequencies_hz() -> Vec<f64> {
    (0..8).map(|i| 300e3 + 50e3 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingArray {
    m: usize,
    diameter: f64,
    center: Point2,
    theta0: f64,
}

impl RingArray {
    pub fn new(m: usize, diameter: f64, center: Point2, theta0: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("a ring needs at least 2 transducers, got {m}")));
        }
        if !(diameter > 0.0) || !diameter.is_finite() {
            return Err(Error::InvalidArgument(format!("ring diameter must be positive, got {diameter}")));
        }
        Ok(Self { m, diameter, center, theta0 })
    }

    /// 256 elements on a 220 mm ring centered at the origin.
    pub fn reference() -> Self {
        Self { m: RING_ELEMENTS, diameter: RING_DIAMETER, center: Point2::ORIGIN, theta0: 0.0 }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn angular_spacing(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    pub fn position(&self, k: usize) -> Point2 {
        let theta = self.theta0 + k as f64 * self.angular_spacing();
        let r = self.radius();
        Point2::new(self.center.x + r * theta.cos(), self.center.y + r * theta.sin())
    }

    pub fn positions(&self) -> Vec<Point2> {
        (0..self.m).map(|k| self.position(k)).collect()
    }
}

/// Bilinear stencil of `p`: up to four `(cell index, weight)` pairs with
/// weights summing to one.
pub fn bilinear_stencil(grid: &Grid2D, p: Point2) -> Result<[(usize, f64); 4]> {
    let o = grid.origin();
    let fx = (p.x - o.x) / grid.h();
    let fy = (p.y - o.y) / grid.h();
    let (nx, ny) = (grid.nx(), grid.ny());
    let slack = 1e-9;
    if !(fx >= -slack && fy >= -slack && fx <= (nx - 1) as f64 + slack && fy <= (ny - 1) as f64 + slack) {
        return Err(Error::OutsideGrid { x: p.x, y: p.y });
    }
    let axis = |f: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let f = f.clamp(0.0, (n - 1) as f64);
        let r = f.round();
        let f = if (f - r).abs() <= slack { r } else { f };
        let i0 = (f.floor() as usize).min(n - 2);
        (i0, i0 + 1, f - i0 as f64)
    };
    let (x0, x1, tx) = axis(fx, nx);
    let (y0, y1, ty) = axis(fy, ny);
    Ok([
        (grid.index(x0, y0), (1.0 - tx) * (1.0 - ty)),
        (grid.index(x1, y0), tx * (1.0 - ty)),
        (grid.index(x0, y1), (1.0 - tx) * ty),
        (grid.index(x1, y1), tx * ty),
    ])
}

/// Adds `amplitude / h²` spread over the bilinear stencil of `p`.
pub fn inject(field: &mut ComplexField2D, p: Point2, amplitude: Complex64) -> Result<()> {
    let grid = *field.grid();
    let stencil = bilinear_stencil(&grid, p)?;
    let scaled = amplitude / grid.cell_area();
    let values = field.values_mut();
    for (i, w) in stencil {
        if w != 0.0 {
            values[i] += scaled * w;
        }
    }
    Ok(())
}

/// Discrete point source at `position`; sums to `amplitude / h²` over the grid.
pub fn make_point_source(grid: Grid2D, position: Point2, amplitude: Complex64) -> Result<ComplexField2D> {
    let mut s = ComplexField2D::zeros(grid);
    inject(&mut s, position, amplitude)?;
    Ok(s)
}

/// Bilinear interpolation of `u` at one point.
pub fn sample(u: &ComplexField2D, p: Point2) -> Result<Complex64> {
    let stencil = bilinear_stencil(u.grid(), p)?;
    Ok(stencil
        .iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|&(i, w)| u.values()[i] * w)
        .sum())
}

/// `u` sampled at every transducer of the ring.
pub fn record_receivers(u: &ComplexField2D, array: &RingArray) -> Result<Vec<Complex64>> {
    (0..array.m()).map(|k| sample(u, array.position(k))).collect()
}

/// Geometry, source amplitude and frequencies of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub array: RingArray,
    pub amplitude: Complex64,
    /// Angular frequencies, rad/s.
    pub frequencies: Vec<f64>,
}

impl Acquisition {
    /// The reference configuration: 256-element 220 mm ring, source value
    /// `0.195 − 0.0275i`, eight frequencies from 300 to 650 kHz.
    pub fn reference() -> Self {
        Self {
            array: RingArray::reference(),
            amplitude: SOURCE_VALUE,
            frequencies: default_frequencies_hz().into_iter().map(crate::angular).collect(),
        }
    }
}

/// Complex receiver × source × frequency data.
///
/// Storage is frequency-major, then source, then receiver, so the column of
/// one transmit event `Y[:, k, j]` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTensor {
    acquisition: Acquisition,
    data: Vec<Complex64>,
}

impl MeasurementTensor {
    pub fn zeros(acquisition: Acquisition) -> Self {
        let m = acquisition.array.m();
        let n = acquisition.frequencies.len();
        Self { acquisition, data: vec![Complex64::default(); m * m * n] }
    }

    pub fn from_data(acquisition: Acquisition, data: Vec<Complex64>) -> Result<Self> {
        let m = acquisition.array.m();
        let n = acquisition.frequencies.len();
        if data.len() != m * m * n {
            return Err(Error::ShapeMismatch(format!("{} values for a {m}x{m}x{n} tensor", data.len())));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("measurement tensor contains non-finite values".into()));
        }
        Ok(Self { acquisition, data })
    }

    pub fn acquisition(&self) -> &Acquisition {
        &self.acquisition
    }

    pub fn array(&self) -> &RingArray {
        &self.acquisition.array
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.acquisition.frequencies
    }

    pub fn m(&self) -> usize {
        self.acquisition.array.m()
    }

    pub fn n(&self) -> usize {
        self.acquisition.frequencies.len()
    }

    /// `(receivers, sources, frequencies)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m(), self.m(), self.n())
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    fn offset(&self, source: usize, freq: usize) -> usize {
        (freq * self.m() + source) * self.m()
    }

    pub fn get(&self, receiver: usize, source: usize, freq: usize) -> Complex64 {
        self.data[self.offset(source, freq) + receiver]
    }

    pub fn column(&self, source: usize, freq: usize) -> &[Complex64] {
        let o = self.offset(source, freq);
        &self.data[o..o + self.m()]
    }

    pub fn column_mut(&mut self, source: usize, freq: usize) -> &mut [Complex64] {
        let o = self.offset(source, freq);
        let m = self.m();
        &mut self.data[o..o + m]
    }

    /// Largest magnitude at one frequency.
    pub fn max_abs(&self, freq: usize) -> f64 {
        let m = self.m();
        self.data[freq * m * m..(freq + 1) * m * m].iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Checks that every transducer can be sampled on `grid`.
pub fn check_ring_fits(grid: &Grid2D, array: &RingArray) -> Result<()> {
    for p in array.positions() {
        bilinear_stencil(grid, p)?;
    }
    Ok(())
}

/// Result of one transmit event.
#[derive(Debug, Clone)]
pub struct ShotRecord {
    pub source: usize,
    pub frequency: usize,
    pub receivers: Vec<Complex64>,
    pub field: Option<ComplexField2D>,
    pub report: crate::solver::SolveReport,
}

/// Solves every (source, frequency) pair and hands each converged field to
/// `visit(source, frequency, field, report)`. Pairs run in parallel; results
/// come back in (frequency, source) order. Fields are dropped after the
/// visit, so memory stays bounded by the worker count.
pub fn run_shots<T, F>(c: &SoundSpeedMap, acq: &Acquisition, cfg: &CbsConfig, sources: &[usize], visit: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, usize, ComplexField2D, &crate::solver::SolveReport) -> Result<T> + Sync,
{
    let grid = *c.grid();
    check_ring_fits(&grid, &acq.array)?;
    if let Some(&bad) = sources.iter().find(|&&k| k >= acq.array.m()) {
        return Err(Error::InvalidArgument(format!("source index {bad} out of range")));
    }
    let operators = acq
        .frequencies
        .iter()
        .map(|&w| CbsOperator::new(c, w, cfg))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> =
        (0..acq.frequencies.len()).flat_map(|j| sources.iter().map(move |&k| (j, k))).collect();
    tasks
        .par_iter()
        .map_init(
            || None::<(usize, crate::spectral::SpectralPlan)>,
            |plan_slot, &(j, k)| {
                let op = &operators[j];
                if plan_slot.as_ref().map(|(pj, _)| *pj) != Some(j) {
                    *plan_slot = Some((j, op.new_plan()));
                }
                let plan = &mut plan_slot.as_mut().expect("plan initialised").1;
                let s = make_point_source(grid, acq.array.position(k), acq.amplitude)?;
                let (u, report) = op.solve_with(plan, &s)?;
                if !report.converged {
                    return Err(Error::NotConverged {
                        source_index: k,
                        frequency_index: j,
                        iterations: report.iterations,
                        final_update: report.final_update,
                    });
                }
                visit(k, j, u, &report)
            },
        )
        .collect()
}

/// Solves every (source, frequency) pair, optionally keeping the fields.
pub fn simulate_shots(
    c: &SoundSpeedMap,
    acq: &Acquisition,
    cfg: &CbsConfig,
    sources: &[usize],
    keep_fields: bool,
) -> Result<Vec<ShotRecord>> {
    run_shots(c, acq, cfg, sources, |k, j, u, report| {
        let receivers = record_receivers(&u, &acq.array)?;
        Ok(ShotRecord { source: k, frequency: j, receivers, field: keep_fields.then_some(u), report: *report })
    })
}

/// Fills `Y[:, k, j]` for every transducer `k` and frequency `j`.
pub fn simulate_measurements(c: &SoundSpeedMap, acq: &Acquisition, cfg: &CbsConfig) -> Result<MeasurementTensor> {
    let sources: Vec<usize> = (0..acq.array.m()).collect();
    let shots = simulate_shots(c, acq, cfg, &sources, false)?;
    let mut y = MeasurementTensor::zeros(acq.clone());
    for shot in shots {
        y.column_mut(shot.source, shot.frequency).copy_from_slice(&shot.receivers);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_ring_spacing_and_radius() {
        let ring = RingArray::reference();
        let pts = ring.positions();
        assert_eq!(pts.len(), 256);
        for (k, p) in pts.iter().enumerate() {
            assert!((p.distance(&Point2::ORIGIN) - 0.110).abs() < 1e-12);
            let q = pts[(k + 1) % 256];
            let mut d = q.y.atan2(q.x) - p.y.atan2(p.x);
            if d < 0.0 {
                d += 2.0 * PI;
            }
            assert!((d - 2.0 * PI / 256.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_ring() {
        let ring = RingArray::new(4, 2.0, Point2::ORIGIN, 0.0).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, (x, y)) in ring.positions().iter().zip(expected) {
            assert!((p.x - x).abs() < 1e-15 && (p.y - y).abs() < 1e-15);
        }
    }

    #[test]
    fn point_source_normalisation() {
        let grid = Grid2D::centered(480, 480, 0.5e-3).unwrap();
        let on_node = Point2::new(0.1100, 0.0);
        let s = make_point_source(grid, on_node, SOURCE_VALUE).unwrap();
        let nonzero: Vec<_> = s.values().iter().filter(|v| v.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(*nonzero[0], SOURCE_VALUE / 0.25e-6);

        for p in RingArray::reference().positions().into_iter().take(9) {
            let s = make_point_source(grid, p, SOURCE_VALUE).unwrap();
            let total: Complex64 = s.values().iter().sum::<Complex64>() * grid.cell_area();
            assert!((total - SOURCE_VALUE).norm() < 1e-15);
        }
        let zero = make_point_source(grid, Point2::new(0.01, 0.02), Complex64::default()).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
        assert!(make_point_source(grid, Point2::new(0.2, 0.0), SOURCE_VALUE).is_err());
    }

    #[test]
    fn constant_field_reads_constant() {
        let grid = Grid2D::centered(64, 64, 1e-3).unwrap();
        let z = Complex64::new(0.7, -2.5);
        let u = ComplexField2D::filled(grid, z);
        let ring = RingArray::new(17, 0.05, Point2::new(0.001, -0.0003), 0.3).unwrap();
        for v in record_receivers(&u, &ring).unwrap() {
            assert!((v - z).norm() < 1e-14);
        }
    }

    #[test]
    fn node_positions_read_exactly() {
        let grid = Grid2D::centered(32, 32, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = ComplexField2D::from_fn(grid, |_, _, _| Complex64::new(rng.random(), rng.random()));
        let ring = RingArray::new(4, 0.02, Point2::ORIGIN, 0.0).unwrap();
        let got = record_receivers(&u, &ring).unwrap();
        for (k, p) in ring.positions().into_iter().enumerate() {
            let (ix, iy) = grid.nearest_cell(p).unwrap();
            assert_eq!(got[k], u.get(ix, iy));
        }
    }

    /// Catmull-Rom bicubic oracle.
    fn bicubic(u: &ComplexField2D, p: Point2) -> Complex64 {
        let g = u.grid();
        let fx = (p.x - g.origin().x) / g.h();
        let fy = (p.y - g.origin().y) / g.h();
        let (ix, iy) = (fx.floor() as isize, fy.floor() as isize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let w = |t: f64| {
            [
                0.5 * (-t * t * t + 2.0 * t * t - t),
                0.5 * (3.0 * t * t * t - 5.0 * t * t + 2.0),
                0.5 * (-3.0 * t * t * t + 4.0 * t * t + t),
                0.5 * (t * t * t - t * t),
            ]
        };
        let (wx, wy) = (w(tx), w(ty));
        let mut acc = Complex64::default();
        for (j, wyj) in wy.iter().enumerate() {
            for (i, wxi) in wx.iter().enumerate() {
                let cx = (ix + i as isize - 1) as usize;
                let cy = (iy + j as isize - 1) as usize;
                acc += u.get(cx, cy) * (wxi * wyj);
            }
        }
        acc
    }

    #[test]
    fn bilinear_agrees_with_bicubic_on_smooth_fields() {
        // random superposition of plane waves, shortest wavelength 32 cells
        let grid = Grid2D::centered(128, 128, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let waves: Vec<(f64, f64, Complex64)> = (0..6)
            .map(|_| {
                let lambda = 32e-3 * (1.0 + rng.random::<f64>());
                let th = 2.0 * PI * rng.random::<f64>();
                let k = 2.0 * PI / lambda;
                (k * th.cos(), k * th.sin(), Complex64::new(rng.random(), rng.random()))
            })
            .collect();
        let u = ComplexField2D::from_fn(grid, |_, _, p| {
            waves.iter().map(|&(kx, ky, a)| a * Complex64::from_polar(1.0, kx * p.x + ky * p.y)).sum()
        });
        let scale = u.abs().values().iter().copied().fold(0.0, f64::max);
        let ring = RingArray::new(64, 0.1, Point2::new(0.0003, 0.0007), 0.01).unwrap();
        for p in ring.positions() {
            let a = sample(&u, p).unwrap();
            let b = bicubic(&u, p);
            assert!((a - b).norm() / scale < 0.01, "{}", (a - b).norm() / scale);
        }
    }

    #[test]
    fn outside_positions_rejected() {
        let grid = Grid2D::centered(16, 16, 1e-3).unwrap();
        let u = ComplexField2D::zeros(grid);
        assert!(matches!(sample(&u, Point2::new(0.0, 0.01)), Err(Error::OutsideGrid { .. })));
        let ring = RingArray::new(8, 0.05, Point2::ORIGIN, 0.0).unwrap();
        assert!(record_receivers(&u, &ring).is_err());
    }

    #[test]
    fn injection_is_transpose_of_sampling() {
        let grid = Grid2D::centered(20, 20, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = ComplexField2D::from_fn(grid, |_, _, _| Complex64::new(rng.random(), rng.random()));
        let p = Point2::new(0.00123, -0.00321);
        let a = Complex64::new(0.4, 1.1);
        let s = make_point_source(grid, p, a).unwrap();
        let lhs: Complex64 = s.values().iter().zip(u.values()).map(|(s, u)| s * u).sum::<Complex64>() * grid.cell_area();
        let rhs = a * sample(&u, p).unwrap();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn tensor_layout() {
        let acq = Acquisition {
            array: RingArray::new(3, 0.01, Point2::ORIGIN, 0.0).unwrap(),
            amplitude: SOURCE_VALUE,
            frequencies: vec![1.0, 2.0],
        };
        let mut y = MeasurementTensor::zeros(acq);
        assert_eq!(y.shape(), (3, 3, 2));
        y.column_mut(2, 1)[0] = Complex64::new(5.0, 0.0);
        assert_eq!(y.get(0, 2, 1), Complex64::new(5.0, 0.0));
        assert_eq!(y.data()[(3 + 2) * 3], Complex64::new(5.0, 0.0));
    }
}
