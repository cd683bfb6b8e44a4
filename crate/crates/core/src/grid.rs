//! Regular 2D grids and the scalar fields that live on them.
//!
//! Storage is row-major with x fastest: cell `(ix, iy)` sits at index
//! `iy * nx + ix`. Every module uses this layout.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Uniform grid of `nx * ny` square cells of side `h` (meters).
///
/// `origin` is the physical position of the center of cell `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    h: f64,
    origin: Point2,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64, origin: Point2) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!("dimensions must be positive, got {nx}x{ny}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("spacing must be positive and finite, got {h}")));
        }
        if !origin.x.is_finite() || !origin.y.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// Grid whose cell `(nx / 2, ny / 2)` sits at the physical origin, so a
    /// source at `(0, 0)` lands exactly on a node.
    pub fn centered(nx: usize, ny: usize, h: f64) -> Result<Self> {
        let origin = Point2::new(-((nx / 2) as f64) * h, -((ny / 2) as f64) * h);
        Self::new(nx, ny, h, origin)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent `(nx * h, ny * h)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.h, self.ny as f64 * self.h)
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + ix as f64 * self.h,
            self.origin.y + iy as f64 * self.h,
        )
    }

    /// Iterates `(index, center)` over all cells in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, Point2)> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx).map(move |ix| (self.index(ix, iy), self.cell_center(ix, iy)))
        })
    }

    /// Cell whose center is closest to `p`, or `None` if `p` is more than half
    /// a cell outside the grid.
    pub fn nearest_cell(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.h).round();
        let fy = ((p.y - self.origin.y) / self.h).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// The grid enlarged by `width` cells on every side, same spacing and
    /// same physical placement of the original cells.
    pub fn padded(&self, width: usize) -> Grid2D {
        let w = width as f64 * self.h;
        Grid2D {
            nx: self.nx + 2 * width,
            ny: self.ny + 2 * width,
            h: self.h,
            origin: Point2::new(self.origin.x - w, self.origin.y - w),
        }
    }

    /// Same shape and spacing (origins may differ by rounding only).
    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.h == other.h
    }

    pub fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {} vs {}x{} @ {}",
                self.nx, self.ny, self.h, other.nx, other.ny, other.h
            )))
        }
    }
}

/// Scalar field on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D<T> {
    grid: Grid2D,
    values: Vec<T>,
}

pub type ComplexField2D = Field2D<Complex64>;
pub type RealField2D = Field2D<f64>;

impl<T: Copy> Field2D<T> {
    pub fn filled(grid: Grid2D, value: T) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid2D, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(usize, usize, Point2) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny() {
            for ix in 0..grid.nx() {
                values.push(f(ix, iy, grid.cell_center(ix, iy)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> T {
        self.values[self.grid.index(ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, value: T) {
        let i = self.grid.index(ix, iy);
        self.values[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Field2D<U> {
        Field2D { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Copies the field into the center of a grid enlarged by `width` cells
    /// per side, filling the border with `fill`.
    pub fn pad(&self, width: usize, fill: T) -> Field2D<T> {
        let grid = self.grid.padded(width);
        let mut out = Field2D::filled(grid, fill);
        let nx = self.grid.nx();
        for iy in 0..self.grid.ny() {
            let dst = grid.index(width, iy + width);
            out.values[dst..dst + nx].copy_from_slice(&self.values[iy * nx..(iy + 1) * nx]);
        }
        out
    }

    /// Inverse of [`Field2D::pad`]: removes `width` cells from every side.
    pub fn crop(&self, width: usize) -> Result<Field2D<T>> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        if 2 * width >= nx || 2 * width >= ny {
            return Err(Error::InvalidArgument(format!(
                "cannot crop {width} cells per side from a {nx}x{ny} field"
            )));
        }
        let w = width as f64 * self.grid.h();
        let origin = self.grid.origin();
        let grid = Grid2D::new(
            nx - 2 * width,
            ny - 2 * width,
            self.grid.h(),
            Point2::new(origin.x + w, origin.y + w),
        )?;
        let inner = grid.nx();
        let mut values = Vec::with_capacity(grid.len());
        for iy in width..ny - width {
            let src = self.grid.index(width, iy);
            values.extend_from_slice(&self.values[src..src + inner]);
        }
        Ok(Field2D { grid, values })
    }
}

impl RealField2D {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl ComplexField2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::filled(grid, Complex64::new(0.0, 0.0))
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&self, a: Complex64) -> ComplexField2D {
        self.map(|v| v * a)
    }

    pub fn conj(&self) -> ComplexField2D {
        self.map(|v| v.conj())
    }

    pub fn re(&self) -> RealField2D {
        self.map(|v| v.re)
    }

    pub fn abs(&self) -> RealField2D {
        self.map(|v| v.norm())
    }
}
