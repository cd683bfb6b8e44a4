//! Sound-speed phantoms: procedural 2D breast analogs and Gaussian random
//! media, embedded in a water bath.
//!
//! Breast outlines are assembled from four quarter-ellipses (bottom, top,
//! left, right scales). The interior is a two-phase FAT/GLAND random medium
//! whose threshold is bisected until the realised fat fraction matches the
//! sampled target. A skin band follows the outline.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Point2, RealField2D};
use crate::spectral::{SpectralMultiplier, SpectralPlan};

/// Lower and upper sanity bounds on any sound speed, m/s.
pub const SPEED_ENVELOPE: (f64, f64) = (1300.0, 1700.0);

/// Nominal skin band thickness in meters.
pub const SKIN_THICKNESS: f64 = 1.5e-3;

/// Circular region of interest; the medium equals `c0` outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub center: Point2,
    pub radius: f64,
}

impl Roi {
    pub fn new(center: Point2, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("ROI radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius })
    }

    #[inline]
    pub fn contains(&self, p: Point2) -> bool {
        self.center.distance(&p) < self.radius
    }

    /// Boolean mask over the cells of `grid`.
    pub fn mask(&self, grid: &Grid2D) -> Vec<bool> {
        grid.cells().map(|(_, p)| self.contains(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BreastType {
    /// Heterogeneously dense.
    Het,
    /// Scattered fibroglandular.
    Fib,
    /// Almost entirely fatty.
    Fat,
    /// Extremely dense.
    Exd,
}

impl BreastType {
    pub const ALL: [BreastType; 4] = [BreastType::Het, BreastType::Fib, BreastType::Fat, BreastType::Exd];

    /// Open interval of the target fat fraction for this density category.
    pub fn fat_fraction_range(self) -> (f64, f64) {
        match self {
            BreastType::Exd => (0.0, 0.25),
            BreastType::Het => (0.25, 0.5),
            BreastType::Fib => (0.5, 0.75),
            BreastType::Fat => (0.75, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BreastType::Het => "HET",
            BreastType::Fib => "FIB",
            BreastType::Fat => "FAT",
            BreastType::Exd => "EXD",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BreastType::Het => 0,
            BreastType::Fib => 1,
            BreastType::Fat => 2,
            BreastType::Exd => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for BreastType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BreastType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown breast type '{s}', expected one of HET, FIB, FAT, EXD"))
            })
    }
}

/// Sampled shape and composition parameters of one breast phantom.
///
/// Lengths `a1b..a3` are in centimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub breast_type: BreastType,
    pub a1b: f64,
    pub a1t: f64,
    pub a2l: f64,
    pub a2r: f64,
    pub a3: f64,
    pub target_fat_frac: f64,
    pub back_fat_buffer_frac: f64,
    pub skin_scale: f64,
    pub skin_scale_nipple_dir: f64,
    pub skin_strength: f64,
    pub global_scale: f64,
    pub seed: u64,
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("valid normal parameters");
    loop {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

fn open_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let x = rng.random_range(lo..hi);
        if x > lo {
            return x;
        }
    }
}

/// Draws phantom parameters: outline scales from truncated Gaussians,
/// composition and skin knobs uniformly from their ranges.
pub fn sample_phantom_params(breast_type: BreastType, seed: u64) -> PhantomParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1b = truncated_normal(&mut rng, 5.0, 2.0, 3.5, 7.5);
    let a1t = truncated_normal(&mut rng, 5.0, 2.0, 3.5, 7.5);
    let a2l = truncated_normal(&mut rng, 5.0, 2.0, 3.5, 7.5);
    let a2r = truncated_normal(&mut rng, 5.0, 2.0, 3.5, 7.5);
    let a3 = a1b * truncated_normal(&mut rng, 1.4, 0.1, 1.0, 1.5);
    let (flo, fhi) = breast_type.fat_fraction_range();
    PhantomParams {
        breast_type,
        a1b,
        a1t,
        a2l,
        a2r,
        a3,
        target_fat_frac: open_uniform(&mut rng, flo, fhi),
        back_fat_buffer_frac: open_uniform(&mut rng, 0.0, 0.01),
        skin_scale: open_uniform(&mut rng, 200.0, 400.0),
        skin_scale_nipple_dir: open_uniform(&mut rng, 5.0, 20.0),
        skin_strength: open_uniform(&mut rng, 0.5, 2.0),
        global_scale: truncated_normal(&mut rng, 1.0, 0.1, 0.85, 1.15),
        seed,
    }
}

impl PhantomParams {
    /// Shrink factor of the coronal slice, taken half a bottom-radius toward
    /// the nipple on an ellipsoid of outward semi-axis `a3`.
    pub fn slice_factor(&self) -> f64 {
        let z = 0.5 * self.a1b / self.a3;
        (1.0 - z * z).max(0.0).sqrt()
    }

    /// Physical outline semi-axes in meters: (bottom, top, left, right).
    pub fn outline_radii(&self) -> [f64; 4] {
        let s = 0.01 * self.global_scale * self.slice_factor();
        [self.a1b * s, self.a1t * s, self.a2l * s, self.a2r * s]
    }

    /// Skin thickness along polar angle `theta`, bounded to
    /// `SKIN_THICKNESS ± 0.5 mm`.
    pub fn skin_thickness(&self, theta: f64) -> f64 {
        let strength = 0.3e-3 * ((self.skin_strength - 1.25) / 0.75).clamp(-1.0, 1.0);
        let lobes = (self.skin_scale / 50.0).round();
        let amp = 0.2e-3 * (self.skin_scale_nipple_dir / 20.0).clamp(0.0, 1.0);
        let phase = (self.seed % 3600) as f64 * PI / 1800.0;
        SKIN_THICKNESS + strength + amp * (lobes * theta + phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Tissue {
    Water = 0,
    Skin = 1,
    Fat = 2,
    Gland = 3,
    Muscle = 4,
}

impl Tissue {
    /// Base sound speed in m/s.
    pub fn base_speed(self) -> f64 {
        match self {
            Tissue::Water => crate::WATER_SPEED,
            Tissue::Fat => 1440.0,
            Tissue::Gland => 1560.0,
            Tissue::Skin => 1640.0,
            Tissue::Muscle => 1580.0,
        }
    }
}

/// Per-cell tissue labels of a 2D phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMap {
    grid: Grid2D,
    roi: Roi,
    labels: Vec<Tissue>,
}

impl TissueMap {
    pub fn new(grid: Grid2D, roi: Roi, labels: Vec<Tissue>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} labels for {} cells", labels.len(), grid.len())));
        }
        for ((_, p), &t) in grid.cells().zip(&labels) {
            if t != Tissue::Water && !roi.contains(p) {
                return Err(Error::InvalidArgument("tissue label outside the ROI".into()));
            }
        }
        Ok(Self { grid, roi, labels })
    }

    pub fn water(grid: Grid2D, roi: Roi) -> Self {
        Self { grid, roi, labels: vec![Tissue::Water; grid.len()] }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    pub fn labels(&self) -> &[Tissue] {
        &self.labels
    }

    pub fn count(&self, t: Tissue) -> usize {
        self.labels.iter().filter(|&&l| l == t).count()
    }

    /// FAT / (FAT + GLAND) over the breast interior.
    pub fn fat_fraction(&self) -> f64 {
        let fat = self.count(Tissue::Fat);
        let gland = self.count(Tissue::Gland);
        if fat + gland == 0 {
            0.0
        } else {
            fat as f64 / (fat + gland) as f64
        }
    }
}

/// Sound speed per cell with the water background `c0` outside the ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundSpeedMap {
    field: RealField2D,
    c0: f64,
    roi: Roi,
}

impl SoundSpeedMap {
    /// Validates the ROI invariant and the speed envelope.
    pub fn new(field: RealField2D, c0: f64, roi: Roi) -> Result<Self> {
        let (lo, hi) = SPEED_ENVELOPE;
        if !(lo..=hi).contains(&c0) {
            return Err(Error::InvalidArgument(format!("background speed {c0} outside [{lo}, {hi}]")));
        }
        for ((_, p), &c) in field.grid().cells().zip(field.values()) {
            if !(lo..=hi).contains(&c) {
                return Err(Error::InvalidArgument(format!("sound speed {c} outside [{lo}, {hi}]")));
            }
            if !roi.contains(p) && c != c0 {
                return Err(Error::InvalidArgument(format!(
                    "sound speed {c} at ({:.4e}, {:.4e}) differs from c0 outside the ROI",
                    p.x, p.y
                )));
            }
        }
        Ok(Self { field, c0, roi })
    }

    pub fn homogeneous(grid: Grid2D, c0: f64, roi: Roi) -> Result<Self> {
        Self::new(RealField2D::filled(grid, c0), c0, roi)
    }

    /// Evaluates `f` inside the ROI and pins `c0` outside.
    pub fn from_fn(grid: Grid2D, c0: f64, roi: Roi, f: impl Fn(Point2) -> f64) -> Result<Self> {
        let field = RealField2D::from_fn(grid, |_, _, p| if roi.contains(p) { f(p) } else { c0 });
        Self::new(field, c0, roi)
    }

    pub fn grid(&self) -> &Grid2D {
        self.field.grid()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn roi(&self) -> &Roi {
        &self.roi
    }

    pub fn field(&self) -> &RealField2D {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.field.min_max()
    }

    pub fn into_field(self) -> RealField2D {
        self.field
    }
}

/// Separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur(values: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();

    let mut tmp = vec![0.0; values.len()];
    for iy in 0..ny {
        let row = &values[iy * nx..(iy + 1) * nx];
        for ix in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (ix as isize + k as isize - radius).clamp(0, nx as isize - 1) as usize;
                acc += w * row[j];
            }
            tmp[iy * nx + ix] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (iy as isize + k as isize - radius).clamp(0, ny as isize - 1) as usize;
                acc += w * tmp[j * nx + ix];
            }
            out[iy * nx + ix] = acc;
        }
    }
    out
}

fn white_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Correlation length of the FAT/GLAND blobs in meters.
const GLAND_BLOB_SCALE: f64 = 3.0e-3;

/// Builds the labelled 2D slice for `params` centered in `roi`.
pub fn generate_tissue_map(params: &PhantomParams, grid: Grid2D, roi: Roi) -> Result<TissueMap> {
    let [rb, rt, rl, rr] = params.outline_radii();
    let c = roi.center;
    let h = grid.h();
    let o = grid.origin();
    let (x_lo, x_hi) = (o.x, o.x + (grid.nx() - 1) as f64 * h);
    let (y_lo, y_hi) = (o.y, o.y + (grid.ny() - 1) as f64 * h);
    if c.x - rl < x_lo || c.x + rr > x_hi || c.y - rb < y_lo || c.y + rt > y_hi {
        return Err(Error::OutlineTooLarge(format!(
            "outline spans x [{:.4}, {:.4}] m, y [{:.4}, {:.4}] m; grid covers x [{x_lo:.4}, {x_hi:.4}], y [{y_lo:.4}, {y_hi:.4}]",
            c.x - rl,
            c.x + rr,
            c.y - rb,
            c.y + rt
        )));
    }
    let r_max = rb.max(rt).max(rl).max(rr);
    if r_max >= roi.radius {
        return Err(Error::OutlineTooLarge(format!(
            "outline radius {r_max:.4} m reaches the ROI radius {:.4} m",
            roi.radius
        )));
    }

    let n = grid.len();
    let mut labels = vec![Tissue::Water; n];
    // normalised elliptic radius of each breast cell; NaN marks water
    let mut rho = vec![f64::NAN; n];
    for (i, p) in grid.cells() {
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let ax = if dx >= 0.0 { rr } else { rl };
        let ay = if dy >= 0.0 { rt } else { rb };
        let r = ((dx / ax).powi(2) + (dy / ay).powi(2)).sqrt();
        if r > 1.0 {
            continue;
        }
        rho[i] = r;
        let dist = dx.hypot(dy);
        let depth = if r > 0.0 { dist * (1.0 / r - 1.0) } else { f64::INFINITY };
        let theta = dy.atan2(dx);
        labels[i] = if depth < params.skin_thickness(theta) { Tissue::Skin } else { Tissue::Gland };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_f47a);
    let noise = white_noise(n, &mut rng);
    let sigma = (GLAND_BLOB_SCALE / h).max(1.0);
    let texture = gaussian_blur(&noise, grid.nx(), grid.ny(), sigma);

    let interior: Vec<usize> = (0..n).filter(|&i| labels[i] == Tissue::Gland).collect();
    let buffer_radius = params.back_fat_buffer_frac.sqrt();
    let is_fat = |i: usize, threshold: f64| rho[i] < buffer_radius || texture[i] <= threshold;
    let fat_fraction = |threshold: f64| {
        if interior.is_empty() {
            return 0.0;
        }
        interior.iter().filter(|&&i| is_fat(i, threshold)).count() as f64 / interior.len() as f64
    };

    let (mut lo, mut hi) = interior
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(texture[i]), b.max(texture[i])));
    lo -= 1.0;
    let target = params.target_fat_frac;
    let mut threshold = 0.5 * (lo + hi);
    for _ in 0..64 {
        let f = fat_fraction(threshold);
        if (f - target).abs() <= 0.005 {
            break;
        }
        if f < target {
            lo = threshold;
        } else {
            hi = threshold;
        }
        threshold = 0.5 * (lo + hi);
    }
    for &i in &interior {
        if is_fat(i, threshold) {
            labels[i] = Tissue::Fat;
        }
    }
    TissueMap::new(grid, roi, labels)
}

/// Base speed per label plus a smooth perturbation bounded by ±1% of the
/// base; water cells get exactly `c0`.
pub fn assign_sound_speed(tissue: &TissueMap, seed: u64) -> Result<SoundSpeedMap> {
    let grid = *tissue.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0dd5_9eed);
    let noise = white_noise(grid.len(), &mut rng);
    let smooth = gaussian_blur(&noise, grid.nx(), grid.ny(), 2.0);
    let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c0 = crate::WATER_SPEED;
    let values = tissue
        .labels()
        .iter()
        .zip(&smooth)
        .map(|(&t, &s)| match t {
            Tissue::Water => c0,
            _ => {
                let base = t.base_speed();
                let unit = if peak > 0.0 { s / peak } else { 0.0 };
                base * (1.0 + 0.01 * unit)
            }
        })
        .collect();
    SoundSpeedMap::new(RealField2D::from_values(grid, values)?, c0, *tissue.roi())
}

/// Samples parameters and assembles the full sound-speed phantom.
pub fn breast_phantom(breast_type: BreastType, seed: u64, grid: Grid2D, roi: Roi) -> Result<SoundSpeedMap> {
    let params = sample_phantom_params(breast_type, seed);
    let tissue = generate_tissue_map(&params, grid, roi)?;
    assign_sound_speed(&tissue, seed)
}

/// Zero-mean, unit-variance stationary Gaussian field on the periodic grid
/// with covariance `exp(-r² / (2 ℓ²))`, synthesised by spectral filtering of
/// white noise.
pub fn gaussian_random_field(grid: Grid2D, correlation_length: f64, seed: u64) -> Result<RealField2D> {
    if !(correlation_length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation length must be positive, got {correlation_length}"
        )));
    }
    let l2 = correlation_length * correlation_length;
    let raw = SpectralMultiplier::from_fn(grid, |px, py| {
        Complex64::new((-0.25 * l2 * (px * px + py * py)).exp(), 0.0)
    });
    // amplitude filter H with mean(H²) = 1 gives unit variance
    let power: f64 = raw.symbol().iter().map(|s| s.norm_sqr()).sum::<f64>() / grid.len() as f64;
    let scale = 1.0 / power.sqrt();
    let filter =
        SpectralMultiplier::from_values(grid, raw.symbol().iter().map(|s| s * scale).collect())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = white_noise(grid.len(), &mut rng);
    let mut data: Vec<Complex64> = noise.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    let mut plan = SpectralPlan::new(grid);
    let prepared = plan.prepare(&filter);
    plan.apply(&mut data, &prepared);
    RealField2D::from_values(grid, data.into_iter().map(|v| v.re).collect())
}

/// `c = c0 (1 + contrast · g)` inside the ROI, `c0` outside, with `g` from
/// [`gaussian_random_field`]. Values are clamped to the speed envelope.
pub fn generate_grf_phantom(
    grid: Grid2D,
    roi: Roi,
    correlation_length: f64,
    contrast: f64,
    c0: f64,
    seed: u64,
) -> Result<SoundSpeedMap> {
    if !(0.0..0.2).contains(&contrast) {
        return Err(Error::InvalidArgument(format!("contrast must lie in [0, 0.2), got {contrast}")));
    }
    let g = gaussian_random_field(grid, correlation_length, seed)?;
    let (lo, hi) = SPEED_ENVELOPE;
    let values = grid
        .cells()
        .zip(g.values())
        .map(|((_, p), &gv)| if roi.contains(p) { (c0 * (1.0 + contrast * gv)).clamp(lo, hi) } else { c0 })
        .collect();
    SoundSpeedMap::new(RealField2D::from_values(grid, values)?, c0, roi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_grid() -> (Grid2D, Roi) {
        let grid = Grid2D::centered(240, 240, 1.0e-3).unwrap();
        (grid, Roi::new(Point2::ORIGIN, 0.11).unwrap())
    }

    #[test]
    fn shape_parameters_stay_in_truncation_intervals() {
        for seed in 0..500 {
            for t in BreastType::ALL {
                let p = sample_phantom_params(t, seed);
                for a in [p.a1b, p.a1t, p.a2l, p.a2r] {
                    assert!((3.5..=7.5).contains(&a), "{a}");
                }
                let ratio = p.a3 / p.a1b;
                assert!((1.0 - 1e-12..=1.5 + 1e-12).contains(&ratio), "{ratio}");
                let (lo, hi) = t.fat_fraction_range();
                assert!(p.target_fat_frac > lo && p.target_fat_frac < hi);
                assert!(p.back_fat_buffer_frac > 0.0 && p.back_fat_buffer_frac < 0.01);
                assert!(p.skin_scale > 200.0 && p.skin_scale < 400.0);
                assert!(p.skin_scale_nipple_dir > 5.0 && p.skin_scale_nipple_dir < 20.0);
                assert!(p.skin_strength > 0.5 && p.skin_strength < 2.0);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_phantom_params(BreastType::Het, 42), sample_phantom_params(BreastType::Het, 42));
        assert_ne!(sample_phantom_params(BreastType::Het, 42), sample_phantom_params(BreastType::Het, 43));
    }

    #[test]
    fn skin_thickness_bounded() {
        for seed in 0..50 {
            let p = sample_phantom_params(BreastType::Fib, seed);
            for k in 0..360 {
                let t = p.skin_thickness(k as f64 * PI / 180.0);
                assert!((SKIN_THICKNESS - 0.5e-3..=SKIN_THICKNESS + 0.5e-3).contains(&t));
            }
        }
    }

    fn with_target(t: BreastType, frac: f64) -> PhantomParams {
        PhantomParams { target_fat_frac: frac, ..sample_phantom_params(t, 3) }
    }

    #[test]
    fn realised_fat_fraction_tracks_target() {
        let grid = Grid2D::centered(400, 400, 0.5e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 0.099).unwrap();
        for (t, frac, lo, hi) in [(BreastType::Fat, 0.9, 0.85, 0.95), (BreastType::Exd, 0.1, 0.05, 0.15)] {
            let map = generate_tissue_map(&with_target(t, frac), grid, roi).unwrap();
            // pixel-count oracle, independent of TissueMap::fat_fraction
            let fat = map.labels().iter().filter(|&&l| l == Tissue::Fat).count() as f64;
            let gland = map.labels().iter().filter(|&&l| l == Tissue::Gland).count() as f64;
            let realised = fat / (fat + gland);
            assert!((lo..=hi).contains(&realised), "{t}: {realised}");
        }
    }

    #[test]
    fn equal_radii_give_circle() {
        let (grid, roi) = desk_grid();
        let params = PhantomParams {
            a1b: 5.0,
            a1t: 5.0,
            a2l: 5.0,
            a2r: 5.0,
            a3: 5.0,
            ..sample_phantom_params(BreastType::Het, 9)
        };
        let radius = params.outline_radii()[0];
        let map = generate_tissue_map(&params, grid, roi).unwrap();
        for ((_, p), &t) in grid.cells().zip(map.labels()) {
            let r = p.distance(&roi.center);
            if r > radius + grid.h() {
                assert_eq!(t, Tissue::Water);
            }
            if r < radius - grid.h() {
                assert_ne!(t, Tissue::Water);
            }
        }
    }

    #[test]
    fn skin_band_encloses_interior() {
        let (grid, roi) = desk_grid();
        let map = generate_tissue_map(&sample_phantom_params(BreastType::Het, 5), grid, roi).unwrap();
        let (nx, ny) = (grid.nx(), grid.ny());
        let labels = map.labels();
        // no interior cell touches water: the skin band is closed
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let t = labels[iy * nx + ix];
                if t == Tissue::Fat || t == Tissue::Gland {
                    for (jx, jy) in [(ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)] {
                        assert_ne!(labels[jy * nx + jx], Tissue::Water);
                    }
                }
            }
        }
        assert!(map.count(Tissue::Skin) > 0);
    }

    #[test]
    fn outline_too_large_is_reported() {
        let grid = Grid2D::centered(64, 64, 1.0e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 0.03).unwrap();
        let err = generate_tissue_map(&sample_phantom_params(BreastType::Het, 1), grid, roi).unwrap_err();
        assert!(matches!(err, Error::OutlineTooLarge(_)), "{err}");
    }

    #[test]
    fn all_water_map_is_constant() {
        let (grid, roi) = desk_grid();
        let map = assign_sound_speed(&TissueMap::water(grid, roi), 1).unwrap();
        assert!(map.values().iter().all(|&c| c == crate::WATER_SPEED));
    }

    #[test]
    fn tissue_speeds_within_one_percent() {
        let (grid, roi) = desk_grid();
        let tissue = generate_tissue_map(&sample_phantom_params(BreastType::Het, 11), grid, roi).unwrap();
        let c = assign_sound_speed(&tissue, 11).unwrap();
        for (&t, &v) in tissue.labels().iter().zip(c.values()) {
            let base = t.base_speed();
            if t == Tissue::Water {
                assert_eq!(v, 1500.0);
            } else {
                assert!((v - base).abs() <= 0.01 * base + 1e-9);
            }
            if t == Tissue::Fat {
                assert!((1425.6..=1454.4).contains(&v));
            }
        }
        assert_eq!(c, assign_sound_speed(&tissue, 11).unwrap());
    }

    #[test]
    fn every_type_satisfies_map_invariants() {
        let (grid, roi) = desk_grid();
        for (i, t) in BreastType::ALL.into_iter().enumerate() {
            let c = breast_phantom(t, 100 + i as u64, grid, roi).unwrap();
            let (lo, hi) = c.min_max();
            assert!(lo >= 1300.0 && hi <= 1700.0);
            for ((_, p), &v) in grid.cells().zip(c.values()) {
                if !roi.contains(p) {
                    assert_eq!(v, 1500.0);
                }
            }
        }
    }

    #[test]
    fn grf_zero_contrast_is_constant() {
        let grid = Grid2D::centered(64, 64, 1e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 0.03).unwrap();
        let c = generate_grf_phantom(grid, roi, 4e-3, 0.0, 1500.0, 3).unwrap();
        assert!(c.values().iter().all(|&v| v == 1500.0));
    }

    #[test]
    fn grf_rejects_bad_inputs() {
        let grid = Grid2D::centered(16, 16, 1e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 0.005).unwrap();
        assert!(generate_grf_phantom(grid, roi, 0.0, 0.05, 1500.0, 1).is_err());
        assert!(generate_grf_phantom(grid, roi, 1e-3, 0.2, 1500.0, 1).is_err());
    }

    #[test]
    fn grf_is_real_and_unit_variance() {
        let grid = Grid2D::centered(128, 128, 1e-3).unwrap();
        let mut var = 0.0;
        for seed in 0..20 {
            let g = gaussian_random_field(grid, 4e-3, seed).unwrap();
            var += g.values().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64;
        }
        var /= 20.0;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn breast_type_parsing() {
        assert_eq!("het".parse::<BreastType>().unwrap(), BreastType::Het);
        let err = "XYZ".parse::<BreastType>().unwrap_err().to_string();
        for name in ["HET", "FIB", "FAT", "EXD"] {
            assert!(err.contains(name));
        }
    }
}
