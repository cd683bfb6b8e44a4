//! Binary PGM output with a linear grayscale map.
//!
//! Values are mapped linearly from `[min, max]` to `[0, 255]`; with a flat
//! image every pixel is 0. Row 0 of the file is the top of the image, which
//! is the largest `y` of the grid. A sidecar `<image>.txt` records the range.

use std::path::{Path, PathBuf};

use usct_core::RealField2D;

pub fn encode_pgm(f: &RealField2D) -> (Vec<u8>, f64, f64) {
    let g = f.grid();
    let (lo, hi) = f.min_max();
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", g.nx(), g.ny()).into_bytes();
    for iy in (0..g.ny()).rev() {
        for ix in 0..g.nx() {
            let v = f.get(ix, iy);
            let t = if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.push((t * 255.0).round() as u8);
        }
    }
    (out, lo, hi)
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

/// Writes the image and its `min`/`max` sidecar.
pub fn write_pgm(path: &Path, f: &RealField2D, label: &str) -> anyhow::Result<()> {
    let (bytes, lo, hi) = encode_pgm(f);
    std::fs::write(path, bytes)?;
    let g = f.grid();
    let text = format!(
        "quantity = {label}\nmin = {lo}\nmax = {hi}\nwidth = {}\nheight = {}\nspacing_m = {}\n",
        g.nx(),
        g.ny(),
        g.h()
    );
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}
