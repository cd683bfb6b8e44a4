use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use usct_core::acquisition::{simulate_measurements, Acquisition};
use usct_core::io::*;
use usct_core::{BreastType, CbsConfig, Complex64, ComplexField2D, Error, Grid2D, Point2, RingArray, Roi, SoundSpeedMap};

fn random_entry(rng: &mut ChaCha8Rng) -> DatasetEntry {
    let nx = rng.random_range(1..24);
    let ny = rng.random_range(1..24);
    let h = rng.random_range(1e-4..2e-3);
    let grid = Grid2D::new(nx, ny, h, Point2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).unwrap();
    let roi = Roi::new(grid.cell_center(nx / 2, ny / 2), rng.random_range(1e-4..0.05)).unwrap();
    let c0 = rng.random_range(1400.0..1600.0);
    let values: Vec<f64> = grid
        .cells()
        .map(|(_, p)| if roi.contains(p) { rng.random_range(1300.0..1700.0) } else { c0 })
        .collect();
    let c = SoundSpeedMap::new(usct_core::RealField2D::from_values(grid, values).unwrap(), c0, roi).unwrap();
    let u = ComplexField2D::from_fn(grid, |_, _, _| {
        // raw bit patterns exercise every exponent range
        Complex64::new(f64::from_bits(rng.random::<u64>() & !(0x7ff << 52) | (rng.random_range(1..2046u64) << 52)), rng.random())
    });
    DatasetEntry {
        phantom_id: rng.random(),
        breast_type: if rng.random_bool(0.2) { None } else { Some(BreastType::ALL[rng.random_range(0..4)]) },
        c,
        omega: rng.random_range(1e6..5e6),
        source_index: rng.random_range(0..256),
        source: SourceDescriptor {
            position: Point2::new(rng.random(), rng.random()),
            amplitude: Complex64::new(rng.random(), rng.random()),
        },
        u,
    }
}

fn bits_equal(a: &DatasetEntry, b: &DatasetEntry) -> bool {
    let f = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    let z = |x: &[Complex64], y: &[Complex64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits())
    };
    a.phantom_id == b.phantom_id
        && a.breast_type == b.breast_type
        && a.omega.to_bits() == b.omega.to_bits()
        && a.source_index == b.source_index
        && a.source == b.source
        && a.c.grid() == b.c.grid()
        && a.c.roi() == b.c.roi()
        && a.c.c0().to_bits() == b.c.c0().to_bits()
        && f(a.c.values(), b.c.values())
        && z(a.u.values(), b.u.values())
}

#[test]
fn thousand_random_entries_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..1000 {
        let e = random_entry(&mut rng);
        let mut buf = vec![];
        write_entry(&e, &mut buf).unwrap();
        let back = read_entry(buf.as_slice()).unwrap();
        assert!(bits_equal(&e, &back));
        assert_eq!(encode_entry(&back).unwrap(), buf);
    }
}

#[test]
fn corrupted_headers_give_typed_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let e = random_entry(&mut rng);
    let clean = encode_entry(&e).unwrap();
    for i in 0..HEADER_LEN {
        for _ in 0..20 {
            let mut buf = clean.clone();
            let flip: u8 = rng.random_range(1..=255);
            buf[i] ^= flip;
            let err = read_entry(buf.as_slice()).unwrap_err();
            assert!(
                matches!(
                    err,
                    Error::BadMagic(_) | Error::UnsupportedVersion { .. } | Error::UnknownKind(_) | Error::WrongKind { .. }
                ),
                "byte {i}: {err}"
            );
        }
    }
}

#[test]
fn random_corruption_never_panics() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..300 {
        let e = random_entry(&mut rng);
        let mut buf = encode_entry(&e).unwrap();
        match rng.random_range(0..3) {
            0 => {
                let i = rng.random_range(0..buf.len());
                buf[i] ^= rng.random_range(1..=255u8);
            }
            1 => buf.truncate(rng.random_range(0..buf.len())),
            _ => {
                // blow up a dimension field of the grid header
                let i = HEADER_LEN + 8 + 1 + 8 + 8 + 16 + 16 + rng.random_range(0..16);
                if i < buf.len() {
                    buf[i] = 0xff;
                }
            }
        }
        let _ = read_record(buf.as_slice());
    }
}

#[test]
fn every_record_kind_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = random_entry(&mut rng);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("map.obus");
    save_map(&p, &e.c).unwrap();
    assert_eq!(load_map(&p).unwrap(), e.c);
    save_field(&p, &e.u).unwrap();
    assert_eq!(load_field(&p).unwrap(), e.u);
    assert!(matches!(load_map(&p), Err(Error::WrongKind { .. })));
}

fn tiny_phantoms() -> Vec<ExportPhantom> {
    let grid = Grid2D::centered(32, 32, 0.5e-3).unwrap();
    let roi = Roi::new(Point2::ORIGIN, 4e-3).unwrap();
    (0..2u64)
        .map(|id| ExportPhantom {
            id,
            breast_type: Some(BreastType::Het),
            seed: 10 + id,
            c: SoundSpeedMap::from_fn(grid, 1500.0, roi, |p| 1500.0 + 20.0 * (id as f64 + 1.0) * (p.x * 300.0).cos()).unwrap(),
        })
        .collect()
}

fn tiny_settings() -> ExportSettings {
    ExportSettings {
        frequencies_hz: vec![3e5, 4e5],
        array: RingArray::new(4, 0.012, Point2::ORIGIN, 0.1).unwrap(),
        amplitude: usct_core::acquisition::SOURCE_VALUE,
        cbs: CbsConfig { pad_width: 16, ..Default::default() },
        seed: 3,
    }
}

#[test]
fn export_is_indexed_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let phantoms = tiny_phantoms();
    let settings = tiny_settings();
    let first = export_dataset(&phantoms, &settings, dir.path()).unwrap();
    assert_eq!(first.manifest.entries.len(), 16);
    assert_eq!(first.solves, 16);
    assert!(first.manifest.failures.is_empty());
    let on_disk = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(on_disk, first.manifest);
    for e in &on_disk.entries {
        load_entry(&dir.path().join(&e.file)).unwrap();
    }

    let again = export_dataset(&phantoms, &settings, dir.path()).unwrap();
    assert_eq!(again.solves, 0);
    assert_eq!(again.reused, 16);
    assert_eq!(again.manifest, first.manifest);

    // interrupted run: lose two entries and corrupt a third
    std::fs::remove_file(dir.path().join(&first.manifest.entries[3].file)).unwrap();
    std::fs::remove_file(dir.path().join(&first.manifest.entries[9].file)).unwrap();
    std::fs::write(dir.path().join(&first.manifest.entries[12].file), b"OBUS").unwrap();
    let resumed = export_dataset(&phantoms, &settings, dir.path()).unwrap();
    assert_eq!(resumed.solves, 3);
    assert_eq!(resumed.manifest, first.manifest);

    // tensors assembled from stored fields equal a direct simulation
    let t = load_tensor(&dir.path().join(&first.manifest.tensors[1].file)).unwrap();
    let acq = Acquisition {
        array: settings.array,
        amplitude: settings.amplitude,
        frequencies: settings.frequencies_hz.iter().map(|&f| usct_core::angular(f)).collect(),
    };
    let direct = simulate_measurements(&phantoms[1].c, &acq, &settings.cbs).unwrap();
    assert_eq!(t.tensor, direct);
}
