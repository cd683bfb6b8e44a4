//! Field accuracy (RRMSE, max error) and image quality (SSIM, PSNR).
//!
//! SSIM uses an 11×11 Gaussian window with σ = 1.5, K₁ = 0.01, K₂ = 0.03,
//! averaged over every window position that fits inside the image. PSNR
//! and SSIM take the dynamic range `L` from the reference image unless
//! asked otherwise.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::RealField2D;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Values with a squared magnitude.
pub trait Magnitude: Copy {
    fn abs_sqr(self) -> f64;
    fn diff(self, other: Self) -> Self;
}

impl Magnitude for f64 {
    fn abs_sqr(self) -> f64 {
        self * self
    }
    fn diff(self, other: Self) -> Self {
        self - other
    }
}

impl Magnitude for Complex64 {
    fn abs_sqr(self) -> f64 {
        self.norm_sqr()
    }
    fn diff(self, other: Self) -> Self {
        self - other
    }
}

/// `‖û − u‖₂ / ‖u‖₂`, complex entries by their joint complex norm.
pub fn rrmse<T: Magnitude>(u_hat: &[T], u: &[T]) -> Result<f64> {
    if u_hat.len() != u.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} entries", u_hat.len(), u.len())));
    }
    let den: f64 = u.iter().map(|v| v.abs_sqr()).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = u_hat.iter().zip(u).map(|(a, b)| a.diff(*b).abs_sqr()).sum();
    Ok((num / den).sqrt())
}

/// Maximum RRMSE over `(prediction, reference)` pairs.
pub fn max_error<T: Magnitude>(samples: &[(&[T], &[T])]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("max_error needs at least one sample".into()));
    }
    samples.iter().try_fold(f64::NEG_INFINITY, |m, (a, b)| Ok(m.max(rrmse(a, b)?)))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rrmse: Option<f64>,
    pub per_sample_rrmse: Vec<f64>,
    pub max_error: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
}

impl MetricReport {
    /// RRMSE statistics over a set of samples; `rrmse` is the mean.
    pub fn from_samples<T: Magnitude>(samples: &[(&[T], &[T])]) -> Result<Self> {
        let per_sample = samples.iter().map(|(a, b)| rrmse(a, b)).collect::<Result<Vec<_>>>()?;
        if per_sample.is_empty() {
            return Err(Error::InvalidArgument("no samples".into()));
        }
        let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        let max = per_sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { rrmse: Some(mean), max_error: Some(max), per_sample_rrmse: per_sample, ..Default::default() })
    }

    /// Image metrics of a reconstruction against the ground truth.
    pub fn images(recon: &RealField2D, truth: &RealField2D) -> Result<Self> {
        let r = rrmse(recon.values(), truth.values())?;
        Ok(Self {
            rrmse: Some(r),
            per_sample_rrmse: vec![r],
            max_error: Some(r),
            ssim: Some(ssim(recon, truth)?),
            psnr: Some(psnr(recon, truth)?),
        })
    }
}

/// Where the SSIM/PSNR dynamic range comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicRange {
    /// `max − min` of the reference image.
    Reference,
    /// `max − min` over both images together.
    Joint,
}

fn dynamic_range(x: &RealField2D, y: &RealField2D, mode: DynamicRange) -> Result<f64> {
    let (ylo, yhi) = y.min_max();
    let l = match mode {
        DynamicRange::Reference => yhi - ylo,
        DynamicRange::Joint => {
            let (xlo, xhi) = x.min_max();
            yhi.max(xhi) - ylo.min(xlo)
        }
    };
    if l > 0.0 && l.is_finite() {
        Ok(l)
    } else {
        Err(Error::ZeroDynamicRange)
    }
}

fn check_pair(x: &RealField2D, y: &RealField2D) -> Result<()> {
    x.grid().check_same(y.grid(), "image pair")
}

/// Normalised 1D Gaussian weights of the SSIM window.
fn window_1d() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Weighted local means over every valid window position: separable pass.
fn filter_valid(values: &[f64], nx: usize, ny: usize) -> (Vec<f64>, usize, usize) {
    let w = window_1d();
    let ox = nx + 1 - SSIM_WINDOW;
    let oy = ny + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ny * ox];
    for iy in 0..ny {
        for ix in 0..ox {
            rows[iy * ox + ix] = (0..SSIM_WINDOW).map(|k| w[k] * values[iy * nx + ix + k]).sum();
        }
    }
    let mut out = vec![0.0; oy * ox];
    for iy in 0..oy {
        for ix in 0..ox {
            out[iy * ox + ix] = (0..SSIM_WINDOW).map(|k| w[k] * rows[(iy + k) * ox + ix]).sum();
        }
    }
    (out, ox, oy)
}

/// Mean SSIM with the dynamic range taken from the reference `y`.
pub fn ssim(x: &RealField2D, y: &RealField2D) -> Result<f64> {
    ssim_with_range(x, y, DynamicRange::Reference)
}

pub fn ssim_with_range(x: &RealField2D, y: &RealField2D, range: DynamicRange) -> Result<f64> {
    check_pair(x, y)?;
    let (nx, ny) = (x.grid().nx(), x.grid().ny());
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {nx}x{ny}"
        )));
    }
    let l = dynamic_range(x, y, range)?;
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let (xv, yv) = (x.values(), y.values());
    let xx: Vec<f64> = xv.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yv.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xv.iter().zip(yv).map(|(a, b)| a * b).collect();
    let (mx, ox, oy) = filter_valid(xv, nx, ny);
    let (my, _, _) = filter_valid(yv, nx, ny);
    let (sxx, _, _) = filter_valid(&xx, nx, ny);
    let (syy, _, _) = filter_valid(&yy, nx, ny);
    let (sxy, _, _) = filter_valid(&xy, nx, ny);
    let mut total = 0.0;
    for i in 0..ox * oy {
        let vx = sxx[i] - mx[i] * mx[i];
        let vy = syy[i] - my[i] * my[i];
        let cov = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
            / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    Ok(total / (ox * oy) as f64)
}

/// `20 log₁₀(L / RMSE)` in dB, `+∞` for identical images.
pub fn psnr(x: &RealField2D, y: &RealField2D) -> Result<f64> {
    check_pair(x, y)?;
    let l = dynamic_range(x, y, DynamicRange::Reference)?;
    let mse = x.values().iter().zip(y.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.values().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (l / mse.sqrt()).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(n: usize, seed: u64) -> RealField2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealField2D::from_fn(Grid2D::centered(n, n, 1.0).unwrap(), |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn rrmse_basics() {
        let u: Vec<Complex64> = (0..10).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        assert_eq!(rrmse(&u, &u).unwrap(), 0.0);
        let scaled: Vec<Complex64> = u.iter().map(|v| v * 1.1).collect();
        assert!((rrmse(&scaled, &u).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(rrmse(&u, &[Complex64::default(); 10]), Err(Error::ZeroReference)));
        assert!(rrmse(&u[..3], &u).is_err());
    }

    #[test]
    fn rrmse_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let b: Vec<Complex64> = (0..64).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..64 {
            num += (a[i].re - b[i].re).powi(2) + (a[i].im - b[i].im).powi(2);
            den += b[i].re.powi(2) + b[i].im.powi(2);
        }
        assert!((rrmse(&a, &b).unwrap() - (num / den).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn max_error_cases() {
        let u = [1.0, 2.0, 3.0];
        let a: Vec<f64> = u.iter().map(|v| v * 1.1).collect();
        let b: Vec<f64> = u.iter().map(|v| v * 1.3).collect();
        let c: Vec<f64> = u.iter().map(|v| v * 0.8).collect();
        assert!((max_error(&[(&a[..], &u[..])]).unwrap() - 0.1).abs() < 1e-12);
        let m = max_error(&[(&a[..], &u[..]), (&b[..], &u[..]), (&c[..], &u[..])]).unwrap();
        assert!((m - 0.3).abs() < 1e-12);
        assert!(max_error::<f64>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn max_error_is_permutation_invariant(scales in prop::collection::vec(0.5f64..2.0, 1..8), rot in 0usize..8) {
            let u = [1.0, -2.0, 0.5, 4.0];
            let preds: Vec<Vec<f64>> = scales.iter().map(|s| u.iter().map(|v| v * s).collect()).collect();
            let mut pairs: Vec<(&[f64], &[f64])> = preds.iter().map(|p| (&p[..], &u[..])).collect();
            let m = max_error(&pairs).unwrap();
            let mut sorted: Vec<f64> = pairs.iter().map(|(a, b)| rrmse(a, b).unwrap()).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(m, *sorted.last().unwrap());
            let k = rot % pairs.len();
            pairs.rotate_left(k);
            prop_assert_eq!(max_error(&pairs).unwrap(), m);
        }

        #[test]
        fn rrmse_homogeneous_in_error(t in 0.01f64..10.0) {
            let u = [1.0, 2.0, -3.0, 0.25];
            let e = [0.1, -0.2, 0.05, 0.3];
            let p1: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a + b).collect();
            let pt: Vec<f64> = u.iter().zip(&e).map(|(a, b)| a + t * b).collect();
            let r1 = rrmse(&p1, &u).unwrap();
            let rt = rrmse(&pt, &u).unwrap();
            prop_assert!((rt - t * r1).abs() < 1e-12 * (1.0 + rt));
        }
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let x = random_image(24, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let inv = x.map(|v| 5.0 - v);
        assert!(ssim(&inv, &x).unwrap() < 1.0);
        let flat = RealField2D::filled(*x.grid(), 1.0);
        assert!(matches!(ssim(&x, &flat), Err(Error::ZeroDynamicRange)));
    }

    /// Direct sliding-window SSIM with full 2D weights.
    #[allow(clippy::needless_range_loop)]
    fn ssim_oracle(x: &RealField2D, y: &RealField2D, l: f64) -> f64 {
        let n = x.grid().nx();
        let r = 5i64;
        let mut w2 = vec![vec![0.0; 11]; 11];
        let mut s = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                let v = (-((i * i + j * j) as f64) / (2.0 * 1.5 * 1.5)).exp();
                w2[(i + r) as usize][(j + r) as usize] = v;
                s += v;
            }
        }
        let c1 = (0.01 * l).powi(2);
        let c2 = (0.03 * l).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for cy in 5..n - 5 {
            for cx in 5..n - 5 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let w = w2[dy][dx] / s;
                        let a = x.get(cx + dx - 5, cy + dy - 5);
                        let b = y.get(cx + dx - 5, cy + dy - 5);
                        mx += w * a;
                        my += w * b;
                        xx += w * a * a;
                        yy += w * b * b;
                        xy += w * a * b;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let x = random_image(16, 10);
        let y = random_image(16, 11);
        let (lo, hi) = y.min_max();
        let got = ssim(&x, &y).unwrap();
        assert!((got - ssim_oracle(&x, &y, hi - lo)).abs() < 1e-10);
    }

    #[test]
    fn ssim_symmetric_under_joint_range() {
        let x = random_image(20, 1);
        let y = x.map(|v| 0.7 * v + 0.1 * (v * 13.0).sin());
        let a = ssim_with_range(&x, &y, DynamicRange::Joint).unwrap();
        let b = ssim_with_range(&y, &x, DynamicRange::Joint).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn psnr_reference_points() {
        let g = Grid2D::centered(10, 10, 1.0).unwrap();
        // y spans [0, 1]: L = 1
        let y = RealField2D::from_fn(g, |ix, iy, _| if (ix + iy) % 2 == 0 { 0.0 } else { 1.0 });
        let x_l = y.map(|v| v + 1.0);
        assert!(psnr(&x_l, &y).unwrap().abs() < 1e-12);
        let x_tenth = y.map(|v| v + 0.1);
        assert!((psnr(&x_tenth, &y).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&y, &y).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_matches_brute_force() {
        let x = random_image(12, 4);
        let y = random_image(12, 5);
        let (lo, hi) = y.min_max();
        let mut se = 0.0;
        for iy in 0..12 {
            for ix in 0..12 {
                se += (x.get(ix, iy) - y.get(ix, iy)).powi(2);
            }
        }
        let expected = 20.0 * ((hi - lo) / (se / 144.0).sqrt()).log10();
        assert!((psnr(&x, &y).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn psnr_decreases_with_error() {
        let y = random_image(12, 6);
        let mut prev = f64::INFINITY;
        for k in 1..10 {
            let x = y.map(|v| v + 0.01 * k as f64);
            let p = psnr(&x, &y).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn report_max_is_max_of_samples() {
        let u = [1.0, 2.0];
        let a = [1.2, 2.4];
        let b = [1.05, 2.1];
        let r = MetricReport::from_samples(&[(&a[..], &u[..]), (&b[..], &u[..])]).unwrap();
        let m = r.per_sample_rrmse.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.max_error, Some(m));
    }
}
