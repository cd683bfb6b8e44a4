use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usct_core::acquisition::{simulate_measurements, Acquisition, RingArray};
use usct_core::fwi::{compute_total_gradient, frequency_misfit, InversionConfig};
use usct_core::grid::RealField2D;
use usct_core::{angular, CbsConfig, Complex64, Grid2D, Point2, Roi, SoundSpeedMap};

struct Toy {
    truth: SoundSpeedMap,
    model: SoundSpeedMap,
    acq: Acquisition,
    cfg: InversionConfig,
}

fn toy() -> Toy {
    let grid = Grid2D::centered(48, 48, 0.5e-3).unwrap();
    let roi = Roi::new(Point2::ORIGIN, 8.5e-3).unwrap();
    let truth = SoundSpeedMap::from_fn(grid, 1500.0, roi, |p| {
        let r2 = (p.x - 1.5e-3).powi(2) + (p.y + 1e-3).powi(2);
        1500.0 + 40.0 * (-r2 / (3e-3f64).powi(2)).exp()
    })
    .unwrap();
    let model = SoundSpeedMap::from_fn(grid, 1500.0, roi, |p| 1500.0 + 10.0 * (-p.x * p.x / 4e-5).exp()).unwrap();
    let acq = Acquisition {
        array: RingArray::new(4, 0.02, Point2::ORIGIN, 0.3).unwrap(),
        amplitude: Complex64::new(0.195, -0.0275),
        frequencies: vec![angular(3e5)],
    };
    let cbs = CbsConfig { pad_width: 24, tol: 1e-8, max_iter: 5000, ..Default::default() };
    let cfg = InversionConfig { frequency_schedule: vec![angular(3e5)], cbs, ..Default::default() };
    Toy { truth, model, acq, cfg }
}

fn perturbed(c: &SoundSpeedMap, i: usize, dc: f64) -> SoundSpeedMap {
    let mut v = c.values().to_vec();
    v[i] += dc;
    SoundSpeedMap::new(RealField2D::from_values(*c.grid(), v).unwrap(), c.c0(), *c.roi()).unwrap()
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    let t = toy();
    let y = simulate_measurements(&t.truth, &t.acq, &t.cfg.cbs).unwrap();
    let (g, misfit) = compute_total_gradient(&t.model, &y, 0, &t.cfg).unwrap();
    assert!(misfit > 0.0);
    let grid = *t.model.grid();
    let mask = t.model.roi().mask(&grid);
    let roi_cells: Vec<usize> = (0..grid.len()).filter(|&i| mask[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let picks = sample(&mut rng, roi_cells.len(), 20);
    let dc = 0.1;
    let (mut num, mut den) = (0.0, 0.0);
    let mut worst: f64 = 0.0;
    for p in picks.iter() {
        let i = roi_cells[p];
        let plus = frequency_misfit(&perturbed(&t.model, i, dc), &y, 0, &t.cfg).unwrap();
        let minus = frequency_misfit(&perturbed(&t.model, i, -dc), &y, 0, &t.cfg).unwrap();
        let fd = (plus - minus) / (2.0 * dc);
        let adj = g.values()[i] * grid.cell_area();
        num += (fd - adj).powi(2);
        den += fd * fd;
        worst = worst.max((fd - adj).abs() / fd.abs());
    }
    let rel = (num / den).sqrt();
    println!("fd relative error {rel:.3e}, worst cell {worst:.3e}");
    assert!(worst <= 1e-2, "worst cell {worst}");
}
