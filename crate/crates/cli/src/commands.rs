use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use usct_core::acquisition::{
    default_frequencies_hz, record_receivers, run_shots, MeasurementTensor, RING_DIAMETER,
    RING_ELEMENTS, SOURCE_VALUE,
};
use usct_core::fwi::{self, BlockEnd, InversionConfig};
use usct_core::io::{self, DatasetEntry, ExportPhantom, ExportSettings, Manifest, PhantomIndex, Record, TensorFile, TensorIndex};
use usct_core::metrics::MetricReport;
use usct_core::phantom::breast_phantom;
use usct_core::{angular, Complex64, Grid2D, Point2, RealField2D, RingArray, Roi, SoundSpeedMap};

use crate::config::FileConfig;
use crate::image::write_pgm;
use crate::{EvaluateArgs, ExportArgs, Failure, GridFlags, InvertArgs, PhantomArgs, RenderArgs, RingFlags, SimulateArgs};

/// Default medium: a 480 × 480 grid at 0.5 mm with a 100 mm ROI.
const DEFAULT_N: usize = 480;
const DEFAULT_H: f64 = 0.5e-3;
const DEFAULT_ROI: f64 = 0.1;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn resolve_grid(flags: &GridFlags, file: &FileConfig) -> Result<(Grid2D, Roi), Failure> {
    let nx = flags.nx.or(file.grid.nx).unwrap_or(DEFAULT_N);
    let ny = flags.ny.or(file.grid.ny).unwrap_or(DEFAULT_N);
    let h = flags.h.or(file.grid.h).unwrap_or(DEFAULT_H);
    let r = flags.roi_radius.or(file.grid.roi_radius).unwrap_or(DEFAULT_ROI);
    let grid = Grid2D::centered(nx, ny, h).map_err(|e| usage(e.to_string()))?;
    let roi = Roi::new(Point2::ORIGIN, r).map_err(|e| usage(e.to_string()))?;
    Ok((grid, roi))
}

fn resolve_ring(flags: &RingFlags, file: &FileConfig) -> Result<(RingArray, Vec<f64>), Failure> {
    let m = flags.sources.or(file.acquisition.sources).unwrap_or(RING_ELEMENTS);
    let d = flags.ring_diameter.or(file.acquisition.ring_diameter).unwrap_or(RING_DIAMETER);
    let freqs = flags.freqs.clone().or(file.acquisition.freqs_hz.clone()).unwrap_or_else(default_frequencies_hz);
    if freqs.is_empty() || freqs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(usage("frequencies must be positive"));
    }
    let ring = RingArray::new(m, d, Point2::ORIGIN, 0.0).map_err(|e| usage(e.to_string()))?;
    Ok((ring, freqs))
}

pub fn phantom(a: &PhantomArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (grid, roi) = resolve_grid(&a.grid, file)?;
    create_dir(&a.out)?;
    for i in 0..a.count {
        let s = seed.wrapping_add(i as u64);
        let c = breast_phantom(a.breast_type, s, grid, roi)
            .with_context(|| format!("generating {} phantom with seed {s}", a.breast_type))?;
        let stem = format!("{}_{i:04}", a.breast_type);
        io::save_map(&a.out.join(format!("{stem}.obus")), &c)?;
        write_pgm(&a.out.join(format!("{stem}.pgm")), c.field(), "sound speed [m/s]")?;
        println!("{stem}: seed {s}, speed range {:.1}..{:.1} m/s", c.min_max().0, c.min_max().1);
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (ring, freqs_hz) = resolve_ring(&a.ring, file)?;
    let cbs = a.cbs.resolve(&file.cbs);
    cbs.validate().map_err(|e| usage(e.to_string()))?;
    let c = io::load_map(&a.phantom).with_context(|| format!("reading phantom {}", a.phantom.display()))?;
    usct_core::acquisition::check_ring_fits(c.grid(), &ring)?;
    create_dir(&a.out)?;
    io::save_map(&a.out.join("phantom.obus"), &c)?;
    let mut manifest = Manifest::new(*c.grid(), c.c0(), *c.roi(), (&ring, SOURCE_VALUE, &freqs_hz), seed, cbs);
    manifest.phantoms.push(PhantomIndex { id: 0, breast_type: None, seed, file: "phantom.obus".into() });
    if a.plan_only {
        manifest.save(&a.out.join(io::MANIFEST_FILE))?;
        println!(
            "planned {} sources x {} frequencies on a {}x{} grid",
            ring.m(),
            freqs_hz.len(),
            c.grid().nx(),
            c.grid().ny()
        );
        return Ok(());
    }
    let acq = manifest.acquisition();
    let sources: Vec<usize> = (0..ring.m()).collect();
    let out = a.out.clone();
    let dump = a.dump_fields;
    let shots = run_shots(&c, &acq, &cbs, &sources, |k, j, u, report| {
        let receivers = record_receivers(&u, &ring)?;
        if dump {
            let e = DatasetEntry {
                phantom_id: 0,
                breast_type: None,
                c: c.clone(),
                omega: acq.frequencies[j],
                source_index: k,
                source: io::SourceDescriptor { position: ring.position(k), amplitude: acq.amplitude },
                u,
            };
            io::save_entry(&out.join(io::entry_file(0, j, k)), &e)?;
        }
        Ok((k, j, receivers, *report))
    })?;
    let mut tensor = MeasurementTensor::zeros(acq.clone());
    let mut reports = String::from("frequency_hz,source,iterations,final_update,residual\n");
    for (k, j, receivers, rep) in &shots {
        tensor.column_mut(*k, *j).copy_from_slice(receivers);
        reports.push_str(&format!("{},{k},{},{:e},{:e}\n", freqs_hz[*j], rep.iterations, rep.final_update, rep.residual));
        if dump {
            manifest.entries.push(io::EntryIndex {
                phantom_id: 0,
                frequency_index: *j,
                source_index: *k,
                file: io::entry_file(0, *j, *k),
            });
        }
    }
    fs::write(a.out.join("reports.csv"), reports)?;
    io::save_tensor(&a.out.join("tensor.obus"), &TensorFile { tensor, grid: *c.grid(), c0: c.c0(), roi: *c.roi() })?;
    manifest.tensors.push(TensorIndex { phantom_id: 0, file: "tensor.obus".into() });
    manifest.save(&a.out.join(io::MANIFEST_FILE))?;
    println!("simulated {} shots: tensor {}x{}x{}", shots.len(), ring.m(), ring.m(), freqs_hz.len());
    Ok(())
}

#[derive(Serialize)]
struct BlockSummary {
    frequency_hz: f64,
    iterations: usize,
    end: &'static str,
    first_misfit: Option<f64>,
    final_misfit: f64,
}

fn end_name(e: BlockEnd) -> &'static str {
    match e {
        BlockEnd::Completed => "completed",
        BlockEnd::StepUnderflow => "step_underflow",
        BlockEnd::MisfitFloor => "misfit_floor",
        BlockEnd::ZeroGradient => "zero_gradient",
    }
}

fn hz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI)
}

pub fn invert(a: &InvertArgs, file: &FileConfig) -> Result<(), Failure> {
    let obs = io::load_tensor(&a.obs).with_context(|| format!("reading measurements {}", a.obs.display()))?;
    let inv = &file.inversion;
    let d = InversionConfig::default();
    let schedule = match a.freqs.clone().or(inv.schedule_hz.clone()) {
        Some(f) => f.into_iter().map(angular).collect(),
        None => {
            let mut f = obs.tensor.frequencies().to_vec();
            f.sort_by(f64::total_cmp);
            f
        }
    };
    let cfg = InversionConfig {
        frequency_schedule: schedule,
        iters_per_frequency: a.iters.or(inv.iters).unwrap_or(d.iters_per_frequency),
        step_rule: a.step_rule.or(inv.step_rule).map(Into::into).unwrap_or(d.step_rule),
        initial_step: a.initial_step.or(inv.initial_step).unwrap_or(d.initial_step),
        min_speed: a.min_speed.or(inv.min_speed).unwrap_or(d.min_speed),
        max_speed: a.max_speed.or(inv.max_speed).unwrap_or(d.max_speed),
        source_subset: a.source_subset.clone().or(inv.source_subset.clone()),
        cbs: a.cbs.resolve(&file.cbs),
        ..d
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let init = match &a.init {
        Some(p) => io::load_map(p).with_context(|| format!("reading initial model {}", p.display()))?,
        None => SoundSpeedMap::homogeneous(obs.grid, obs.c0, obs.roi)?,
    };
    create_dir(&a.out)?;
    let (recon, trace) = fwi::invert(&obs.tensor, &init, &cfg)?;
    io::save_map(&a.out.join("recon.obus"), &recon)?;
    write_pgm(&a.out.join("recon.pgm"), recon.field(), "sound speed [m/s]")?;
    let mut csv = String::from("frequency_hz,iteration,misfit,step\n");
    let mut summary = vec![];
    for b in &trace.blocks {
        for (i, m) in b.misfits.iter().enumerate() {
            let step = b.steps.get(i).map(|s| format!("{s:e}")).unwrap_or_default();
            csv.push_str(&format!("{},{i},{m:e},{step}\n", hz(b.omega)));
        }
        summary.push(BlockSummary {
            frequency_hz: hz(b.omega),
            iterations: b.misfits.len(),
            end: end_name(b.end),
            first_misfit: b.misfits.first().copied(),
            final_misfit: b.final_misfit,
        });
    }
    fs::write(a.out.join("trace.csv"), csv)?;
    fs::write(
        a.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).context("serialising summary")? + "\n",
    )?;
    for s in &summary {
        println!(
            "{:>9.0} Hz: {} iterations, misfit {:.4e} -> {:.4e} ({})",
            s.frequency_hz,
            s.iterations,
            s.first_misfit.unwrap_or(s.final_misfit),
            s.final_misfit,
            s.end
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportJson {
    kind: &'static str,
    rrmse: Option<f64>,
    max_error: Option<f64>,
    ssim: Option<f64>,
    psnr: Option<f64>,
    per_sample_rrmse: Vec<f64>,
}

fn compare(recon: &Record, truth: &Record) -> Result<(&'static str, MetricReport), Failure> {
    let complex_pair = |a: &[Complex64], b: &[Complex64]| MetricReport::from_samples(&[(a, b)]);
    let report = match (recon, truth) {
        (Record::SoundSpeedMap(r), Record::SoundSpeedMap(t)) => MetricReport::images(r.field(), t.field())?,
        (Record::ComplexField(r), Record::ComplexField(t)) => {
            r.grid().check_same(t.grid(), "evaluate")?;
            complex_pair(r.values(), t.values())?
        }
        (Record::Entry(r), Record::Entry(t)) => {
            r.u.grid().check_same(t.u.grid(), "evaluate")?;
            complex_pair(r.u.values(), t.u.values())?
        }
        (Record::MeasurementTensor(r), Record::MeasurementTensor(t)) => {
            if r.tensor.shape() != t.tensor.shape() {
                return Err(usct_core::Error::ShapeMismatch(format!(
                    "{:?} vs {:?}",
                    r.tensor.shape(),
                    t.tensor.shape()
                ))
                .into());
            }
            let mut samples = vec![];
            for j in 0..r.tensor.n() {
                for k in 0..r.tensor.m() {
                    samples.push((r.tensor.column(k, j), t.tensor.column(k, j)));
                }
            }
            MetricReport::from_samples(&samples)?
        }
        _ => {
            return Err(anyhow::anyhow!(
                "cannot compare a {} with a {}",
                recon.kind().name(),
                truth.kind().name()
            )
            .into())
        }
    };
    Ok((truth.kind().name(), report))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let recon = io::load_record(&a.recon).with_context(|| format!("reading {}", a.recon.display()))?;
    let truth = io::load_record(&a.truth).with_context(|| format!("reading {}", a.truth.display()))?;
    let (kind, r) = compare(&recon, &truth)?;
    let mut stdout = std::io::stdout().lock();
    for (name, v) in [("rrmse", r.rrmse), ("max_error", r.max_error), ("ssim", r.ssim), ("psnr_db", r.psnr)] {
        if let Some(v) = v {
            writeln!(stdout, "{name} = {v}")?;
        }
    }
    if let Some(path) = &a.out {
        let json = ReportJson {
            kind,
            rrmse: r.rrmse,
            max_error: r.max_error,
            ssim: r.ssim,
            psnr: r.psnr.filter(|p| p.is_finite()),
            per_sample_rrmse: r.per_sample_rrmse,
        };
        fs::write(path, serde_json::to_string_pretty(&json).context("serialising report")? + "\n")?;
    }
    Ok(())
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_{suffix}.pgm"))
}

fn render_complex(out: &Path, grid: Grid2D, values: &[Complex64], label: &str) -> Result<(), Failure> {
    let abs = RealField2D::from_values(grid, values.iter().map(|v| v.norm()).collect())?;
    let re = RealField2D::from_values(grid, values.iter().map(|v| v.re).collect())?;
    write_pgm(&with_suffix(out, "abs"), &abs, &format!("|{label}|"))?;
    write_pgm(&with_suffix(out, "re"), &re, &format!("Re {label}"))?;
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<(), Failure> {
    let rec = io::load_record(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    match rec {
        Record::SoundSpeedMap(c) => write_pgm(&a.out, c.field(), "sound speed [m/s]")?,
        Record::ComplexField(u) => render_complex(&a.out, *u.grid(), u.values(), "u")?,
        Record::Entry(e) => render_complex(&a.out, *e.u.grid(), e.u.values(), "u")?,
        Record::MeasurementTensor(t) => {
            let (m, n) = (t.tensor.m(), t.tensor.n());
            if a.freq_index >= n {
                return Err(usage(format!("frequency index {} out of range for {n} frequencies", a.freq_index)));
            }
            // one row per source, one column per receiver
            let grid = Grid2D::new(m, m, 1.0, Point2::ORIGIN)?;
            let mut values = vec![Complex64::default(); m * m];
            for k in 0..m {
                let col = t.tensor.column(k, a.freq_index);
                values[(m - 1 - k) * m..(m - k) * m].copy_from_slice(col);
            }
            render_complex(&a.out, grid, &values, "Y")?;
        }
    }
    Ok(())
}

pub fn export(a: &ExportArgs, file: &FileConfig, seed: u64) -> Result<(), Failure> {
    let (grid, roi) = resolve_grid(&a.grid, file)?;
    let (ring, freqs_hz) = resolve_ring(&a.ring, file)?;
    let cbs = a.cbs.resolve(&file.cbs);
    cbs.validate().map_err(|e| usage(e.to_string()))?;
    let phantoms = (0..a.phantoms as u64)
        .map(|id| {
            let s = seed.wrapping_add(id);
            Ok(ExportPhantom { id, breast_type: Some(a.breast_type), seed: s, c: breast_phantom(a.breast_type, s, grid, roi)? })
        })
        .collect::<usct_core::Result<Vec<_>>>()?;
    let settings = ExportSettings { frequencies_hz: freqs_hz, array: ring, amplitude: SOURCE_VALUE, cbs, seed };
    let report = io::export_dataset(&phantoms, &settings, &a.out)?;
    println!(
        "{} entries indexed: {} solved, {} reused, {} failures",
        report.manifest.entries.len(),
        report.solves,
        report.reused,
        report.manifest.failures.len()
    );
    if !report.manifest.failures.is_empty() {
        return Err(anyhow::anyhow!("{} entries failed; see the manifest", report.manifest.failures.len()).into());
    }
    Ok(())
}
