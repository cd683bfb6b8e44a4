//! Benchmark fixtures shared by the criterion benches.

use usct_core::acquisition::{make_point_source, SOURCE_VALUE};
use usct_core::{ComplexField2D, Grid2D, Point2, RealField2D, Roi, SoundSpeedMap};

/// A water bath with a smooth +30 m/s lens, sized `n × n` at 0.5 mm.
pub fn lens(n: usize) -> SoundSpeedMap {
    let h = 0.5e-3;
    let grid = Grid2D::centered(n, n, h).expect("valid grid");
    let roi = Roi::new(Point2::ORIGIN, 0.4 * n as f64 * h).expect("valid roi");
    let w = 0.15 * n as f64 * h;
    SoundSpeedMap::from_fn(grid, 1500.0, roi, |p| 1500.0 + 30.0 * (-(p.x * p.x + p.y * p.y) / (w * w)).exp())
        .expect("valid map")
}

/// Point source near the left edge of `c`'s grid.
pub fn edge_source(c: &SoundSpeedMap) -> ComplexField2D {
    let g = c.grid();
    let x = g.origin().x + 4.0 * g.h();
    make_point_source(*g, Point2::new(x, 0.0), SOURCE_VALUE).expect("source inside grid")
}

/// Deterministic textured image for metric benchmarks.
pub fn texture(n: usize, phase: f64) -> RealField2D {
    let grid = Grid2D::centered(n, n, 1.0).expect("valid grid");
    RealField2D::from_fn(grid, |ix, iy, _| ((ix as f64 * 0.3 + phase).sin() * (iy as f64 * 0.17).cos()) * 40.0 + 1500.0)
}
