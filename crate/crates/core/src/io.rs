//! Self-describing binary records and corpus manifests.
//!
//! Every file starts with the magic `OBUS`, a little-endian `u32` format
//! version and a one-byte record kind. Arrays are stored as a one-byte
//! element type, a one-byte rank, `rank` little-endian `u64` dimensions
//! (slowest first) and the row-major little-endian payload. Complex values
//! are stored as `(re, im)` pairs of `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::acquisition::{make_point_source, record_receivers, Acquisition, MeasurementTensor, RingArray};
use crate::error::{Error, Result};
use crate::grid::{ComplexField2D, Grid2D, Point2, RealField2D};
use crate::phantom::{BreastType, Roi, SoundSpeedMap};
use crate::solver::{CbsConfig, CbsOperator, K0Strategy};

pub const MAGIC: [u8; 4] = *b"OBUS";
pub const FORMAT_VERSION: u32 = 1;

/// Bytes before the record body: magic, version and kind.
pub const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    SoundSpeedMap = 1,
    ComplexField = 2,
    MeasurementTensor = 3,
    Entry = 4,
}

impl Kind {
    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => Kind::SoundSpeedMap,
            2 => Kind::ComplexField,
            3 => Kind::MeasurementTensor,
            4 => Kind::Entry,
            other => return Err(Error::UnknownKind(other)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::SoundSpeedMap => "sound speed map",
            Kind::ComplexField => "complex field",
            Kind::MeasurementTensor => "measurement tensor",
            Kind::Entry => "dataset entry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F64 = 1,
    Complex128 = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::Complex128),
            other => Err(Error::UnknownDtype(other)),
        }
    }
}

/// Where and how strongly one entry was excited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceDescriptor {
    pub position: Point2,
    pub amplitude: Complex64,
}

/// One simulated wavefield with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub phantom_id: u64,
    pub breast_type: Option<BreastType>,
    pub c: SoundSpeedMap,
    pub omega: f64,
    pub source_index: usize,
    pub source: SourceDescriptor,
    pub u: ComplexField2D,
}

impl DatasetEntry {
    pub fn validate(&self) -> Result<()> {
        self.c.grid().check_same(self.u.grid(), "entry medium vs wavefield")?;
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::InvalidArgument(format!("entry frequency must be positive, got {}", self.omega)));
        }
        Ok(())
    }
}

/// A measurement tensor together with the medium grid it was simulated on.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub tensor: MeasurementTensor,
    pub grid: Grid2D,
    pub c0: f64,
    pub roi: Roi,
}

/// Any record readable from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    SoundSpeedMap(SoundSpeedMap),
    ComplexField(ComplexField2D),
    MeasurementTensor(TensorFile),
    Entry(Box<DatasetEntry>),
}

impl Record {
    pub fn kind(&self) -> Kind {
        match self {
            Record::SoundSpeedMap(_) => Kind::SoundSpeedMap,
            Record::ComplexField(_) => Kind::ComplexField,
            Record::MeasurementTensor(_) => Kind::MeasurementTensor,
            Record::Entry(_) => Kind::Entry,
        }
    }
}

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn header(&mut self, kind: Kind) -> Result<()> {
        self.w.write_all(&MAGIC)?;
        self.u32(FORMAT_VERSION)?;
        self.u8(kind as u8)
    }

    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.w.write_all(&[v])?)
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.w.write_all(&v.to_le_bytes())?)
    }

    fn complex(&mut self, v: Complex64) -> Result<()> {
        self.f64(v.re)?;
        self.f64(v.im)
    }

    fn point(&mut self, p: Point2) -> Result<()> {
        self.f64(p.x)?;
        self.f64(p.y)
    }

    fn grid(&mut self, g: &Grid2D) -> Result<()> {
        self.u64(g.nx() as u64)?;
        self.u64(g.ny() as u64)?;
        self.f64(g.h())?;
        self.point(g.origin())
    }

    fn medium(&mut self, grid: &Grid2D, c0: f64, roi: &Roi) -> Result<()> {
        self.grid(grid)?;
        self.f64(c0)?;
        self.point(roi.center)?;
        self.f64(roi.radius)
    }

    fn dims(&mut self, dtype: Dtype, dims: &[usize]) -> Result<()> {
        self.u8(dtype as u8)?;
        self.u8(dims.len() as u8)?;
        for &d in dims {
            self.u64(d as u64)?;
        }
        Ok(())
    }

    fn real_array(&mut self, dims: &[usize], data: &[f64]) -> Result<()> {
        self.dims(Dtype::F64, dims)?;
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Ok(self.w.write_all(&buf)?)
    }

    fn complex_array(&mut self, dims: &[usize], data: &[Complex64]) -> Result<()> {
        self.dims(Dtype::Complex128, dims)?;
        let mut buf = Vec::with_capacity(data.len() * 16);
        for v in data {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
        Ok(self.w.write_all(&buf)?)
    }
}

struct Reader<R: Read> {
    r: R,
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated
    } else {
        Error::Io(e)
    }
}

/// Upper bound on elements read into memory before the payload proves to
/// exist, so a corrupt dimension cannot trigger a huge allocation.
const CHUNK: usize = 1 << 16;

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(eof)?;
        Ok(b)
    }

    fn header(&mut self) -> Result<Kind> {
        let magic = self.bytes::<4>()?;
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
        }
        Kind::from_code(self.u8()?)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("count {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }

    fn point(&mut self) -> Result<Point2> {
        Ok(Point2::new(self.f64()?, self.f64()?))
    }

    fn grid(&mut self) -> Result<Grid2D> {
        let nx = self.usize()?;
        let ny = self.usize()?;
        let h = self.f64()?;
        let origin = self.point()?;
        if nx.checked_mul(ny).is_none() {
            return Err(Error::Corrupt(format!("grid {nx}x{ny} overflows")));
        }
        Grid2D::new(nx, ny, h, origin).map_err(|e| Error::Corrupt(e.to_string()))
    }

    fn medium(&mut self) -> Result<(Grid2D, f64, Roi)> {
        let grid = self.grid()?;
        let c0 = self.f64()?;
        let center = self.point()?;
        let radius = self.f64()?;
        let roi = Roi::new(center, radius).map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok((grid, c0, roi))
    }

    fn dims(&mut self, dtype: Dtype, expected: &[usize]) -> Result<()> {
        let found = Dtype::from_code(self.u8()?)?;
        if found != dtype {
            return Err(Error::ShapeMismatch(format!("element type {found:?} where {dtype:?} was expected")));
        }
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u64()?);
        }
        let matches = dims.len() == expected.len() && dims.iter().zip(expected).all(|(&a, &b)| a == b as u64);
        if !matches {
            return Err(Error::ShapeMismatch(format!("array dimensions {dims:?}, header implies {expected:?}")));
        }
        Ok(())
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count.min(CHUNK));
        let mut buf = vec![0u8; 8 * count.min(CHUNK)];
        let mut left = count;
        while left > 0 {
            let n = left.min(CHUNK);
            let b = &mut buf[..8 * n];
            self.r.read_exact(b).map_err(eof)?;
            out.extend(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
            left -= n;
        }
        Ok(out)
    }

    fn real_array(&mut self, dims: &[usize]) -> Result<Vec<f64>> {
        self.dims(Dtype::F64, dims)?;
        self.f64s(dims.iter().product())
    }

    fn complex_array(&mut self, dims: &[usize]) -> Result<Vec<Complex64>> {
        self.dims(Dtype::Complex128, dims)?;
        let n: usize = dims.iter().product();
        let flat = self.f64s(n.checked_mul(2).ok_or_else(|| Error::Corrupt("array too large".into()))?)?;
        Ok(flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
    }

    fn finish(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.r.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Corrupt("trailing bytes after record".into())),
        }
    }
}

fn grid_dims(g: &Grid2D) -> [usize; 2] {
    [g.ny(), g.nx()]
}

fn encode(kind: Kind, body: impl FnOnce(&mut Writer<&mut Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut w = Writer { w: &mut out };
    w.header(kind)?;
    body(&mut w)?;
    Ok(out)
}

fn write_map_body<W: Write>(w: &mut Writer<W>, c: &SoundSpeedMap) -> Result<()> {
    w.medium(c.grid(), c.c0(), c.roi())?;
    w.real_array(&grid_dims(c.grid()), c.values())
}

fn read_map_body<R: Read>(r: &mut Reader<R>) -> Result<SoundSpeedMap> {
    let (grid, c0, roi) = r.medium()?;
    let values = r.real_array(&grid_dims(&grid))?;
    SoundSpeedMap::new(RealField2D::from_values(grid, values)?, c0, roi).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn encode_map(c: &SoundSpeedMap) -> Result<Vec<u8>> {
    encode(Kind::SoundSpeedMap, |w| write_map_body(w, c))
}

pub fn encode_field(u: &ComplexField2D) -> Result<Vec<u8>> {
    encode(Kind::ComplexField, |w| {
        w.grid(u.grid())?;
        w.complex_array(&grid_dims(u.grid()), u.values())
    })
}

pub fn encode_tensor(t: &TensorFile) -> Result<Vec<u8>> {
    encode(Kind::MeasurementTensor, |w| {
        w.medium(&t.grid, t.c0, &t.roi)?;
        let a = t.tensor.array();
        w.u64(a.m() as u64)?;
        w.f64(a.diameter())?;
        w.point(a.center())?;
        w.f64(a.theta0())?;
        w.complex(t.tensor.acquisition().amplitude)?;
        w.real_array(&[t.tensor.n()], t.tensor.frequencies())?;
        w.complex_array(&[t.tensor.n(), t.tensor.m(), t.tensor.m()], t.tensor.data())
    })
}

pub fn encode_entry(e: &DatasetEntry) -> Result<Vec<u8>> {
    e.validate()?;
    encode(Kind::Entry, |w| {
        w.u64(e.phantom_id)?;
        w.u8(e.breast_type.map_or(u8::MAX, BreastType::code))?;
        w.f64(e.omega)?;
        w.u64(e.source_index as u64)?;
        w.point(e.source.position)?;
        w.complex(e.source.amplitude)?;
        write_map_body(w, &e.c)?;
        w.complex_array(&grid_dims(e.u.grid()), e.u.values())
    })
}

pub fn encode_record(rec: &Record) -> Result<Vec<u8>> {
    match rec {
        Record::SoundSpeedMap(c) => encode_map(c),
        Record::ComplexField(u) => encode_field(u),
        Record::MeasurementTensor(t) => encode_tensor(t),
        Record::Entry(e) => encode_entry(e),
    }
}

/// Reads one record of any kind; the whole input must be consumed.
pub fn read_record(src: impl Read) -> Result<Record> {
    let mut r = Reader { r: src };
    let rec = match r.header()? {
        Kind::SoundSpeedMap => Record::SoundSpeedMap(read_map_body(&mut r)?),
        Kind::ComplexField => {
            let grid = r.grid()?;
            let values = r.complex_array(&grid_dims(&grid))?;
            Record::ComplexField(ComplexField2D::from_values(grid, values)?)
        }
        Kind::MeasurementTensor => {
            let (grid, c0, roi) = r.medium()?;
            let m = r.usize()?;
            let diameter = r.f64()?;
            let center = r.point()?;
            let theta0 = r.f64()?;
            let array = RingArray::new(m, diameter, center, theta0).map_err(|e| Error::Corrupt(e.to_string()))?;
            let amplitude = r.complex()?;
            let n = {
                let found = Dtype::from_code(r.u8()?)?;
                if found != Dtype::F64 || r.u8()? != 1 {
                    return Err(Error::ShapeMismatch("frequency list must be a rank-1 real array".into()));
                }
                r.usize()?
            };
            let frequencies = r.f64s(n)?;
            let dims = [n, m, m];
            if m.checked_mul(m).and_then(|v| v.checked_mul(n)).is_none() {
                return Err(Error::Corrupt("tensor dimensions overflow".into()));
            }
            let data = r.complex_array(&dims)?;
            let acquisition = Acquisition { array, amplitude, frequencies };
            let tensor = MeasurementTensor::from_data(acquisition, data).map_err(|e| Error::Corrupt(e.to_string()))?;
            Record::MeasurementTensor(TensorFile { tensor, grid, c0, roi })
        }
        Kind::Entry => {
            let phantom_id = r.u64()?;
            let code = r.u8()?;
            let breast_type = match code {
                u8::MAX => None,
                c => Some(BreastType::from_code(c).ok_or_else(|| Error::Corrupt(format!("breast type code {c}")))?),
            };
            let omega = r.f64()?;
            let source_index = r.usize()?;
            let position = r.point()?;
            let amplitude = r.complex()?;
            let c = read_map_body(&mut r)?;
            let values = r.complex_array(&grid_dims(c.grid()))?;
            let u = ComplexField2D::from_values(*c.grid(), values)?;
            let e = DatasetEntry {
                phantom_id,
                breast_type,
                c,
                omega,
                source_index,
                source: SourceDescriptor { position, amplitude },
                u,
            };
            e.validate().map_err(|err| Error::Corrupt(err.to_string()))?;
            Record::Entry(Box::new(e))
        }
    };
    r.finish()?;
    Ok(rec)
}

pub fn write_entry(e: &DatasetEntry, mut sink: impl Write) -> Result<()> {
    Ok(sink.write_all(&encode_entry(e)?)?)
}

pub fn read_entry(src: impl Read) -> Result<DatasetEntry> {
    match read_record(src)? {
        Record::Entry(e) => Ok(*e),
        other => Err(Error::WrongKind { expected: Kind::Entry.name(), found: other.kind().name() }),
    }
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a partial file under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_record(path: &Path, rec: &Record) -> Result<()> {
    write_atomic(path, &encode_record(rec)?)
}

pub fn load_record(path: &Path) -> Result<Record> {
    read_record(std::io::BufReader::new(fs::File::open(path)?))
}

fn wrong(expected: Kind, found: &Record) -> Error {
    Error::WrongKind { expected: expected.name(), found: found.kind().name() }
}

pub fn save_map(path: &Path, c: &SoundSpeedMap) -> Result<()> {
    write_atomic(path, &encode_map(c)?)
}

pub fn load_map(path: &Path) -> Result<SoundSpeedMap> {
    match load_record(path)? {
        Record::SoundSpeedMap(c) => Ok(c),
        other => Err(wrong(Kind::SoundSpeedMap, &other)),
    }
}

pub fn save_field(path: &Path, u: &ComplexField2D) -> Result<()> {
    write_atomic(path, &encode_field(u)?)
}

pub fn load_field(path: &Path) -> Result<ComplexField2D> {
    match load_record(path)? {
        Record::ComplexField(u) => Ok(u),
        other => Err(wrong(Kind::ComplexField, &other)),
    }
}

pub fn save_tensor(path: &Path, t: &TensorFile) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<TensorFile> {
    match load_record(path)? {
        Record::MeasurementTensor(t) => Ok(t),
        other => Err(wrong(Kind::MeasurementTensor, &other)),
    }
}

pub fn save_entry(path: &Path, e: &DatasetEntry) -> Result<()> {
    write_atomic(path, &encode_entry(e)?)
}

pub fn load_entry(path: &Path) -> Result<DatasetEntry> {
    read_entry(std::io::BufReader::new(fs::File::open(path)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomIndex {
    pub id: u64,
    pub breast_type: Option<BreastType>,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryIndex {
    pub phantom_id: u64,
    pub frequency_index: usize,
    pub source_index: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorIndex {
    pub phantom_id: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub phantom_id: u64,
    pub frequency_index: usize,
    pub source_index: usize,
    pub message: String,
}

/// Parameters and contents of a corpus, stored as `key = value` lines.
///
/// Scalar keys, each exactly once: `format_version`, `grid_nx`, `grid_ny`,
/// `grid_h`, `grid_origin_x`, `grid_origin_y`, `c0`, `roi_center_x`,
/// `roi_center_y`, `roi_radius`, `ring_elements`, `ring_diameter`,
/// `ring_center_x`, `ring_center_y`, `ring_theta0`, `source_amplitude_re`,
/// `source_amplitude_im`, `frequencies_hz` (comma separated), `seed`,
/// `self_measurement`, `cbs_pad_width`, `cbs_epsilon_safety`,
/// `cbs_max_iter`, `cbs_tol`, `cbs_k0_strategy`.
///
/// Repeated keys: `phantom = <id> <type|-> <seed> <file>`,
/// `entry = <phantom> <frequency index> <source> <file>`,
/// `tensor = <phantom> <file>` and
/// `failure = <phantom> <frequency index> <source> <message>`.
/// Blank lines and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub grid: Grid2D,
    pub c0: f64,
    pub roi: Roi,
    pub ring: RingArray,
    pub amplitude: Complex64,
    pub frequencies_hz: Vec<f64>,
    pub seed: u64,
    /// Whether the transmitting element also records (`Y[k, k]` is data).
    pub self_measurement: bool,
    pub cbs: CbsConfig,
    pub phantoms: Vec<PhantomIndex>,
    pub entries: Vec<EntryIndex>,
    pub tensors: Vec<TensorIndex>,
    pub failures: Vec<Failure>,
}

const SCALAR_KEYS: [&str; 25] = [
    "format_version",
    "grid_nx",
    "grid_ny",
    "grid_h",
    "grid_origin_x",
    "grid_origin_y",
    "c0",
    "roi_center_x",
    "roi_center_y",
    "roi_radius",
    "ring_elements",
    "ring_diameter",
    "ring_center_x",
    "ring_center_y",
    "ring_theta0",
    "source_amplitude_re",
    "source_amplitude_im",
    "frequencies_hz",
    "seed",
    "self_measurement",
    "cbs_pad_width",
    "cbs_epsilon_safety",
    "cbs_max_iter",
    "cbs_tol",
    "cbs_k0_strategy",
];

fn strategy_name(s: K0Strategy) -> &'static str {
    match s {
        K0Strategy::Midpoint => "midpoint",
        K0Strategy::Background => "background",
    }
}

impl Manifest {
    pub fn new(
        grid: Grid2D,
        c0: f64,
        roi: Roi,
        acquisition_hz: (&RingArray, Complex64, &[f64]),
        seed: u64,
        cbs: CbsConfig,
    ) -> Self {
        let (ring, amplitude, freqs) = acquisition_hz;
        Self {
            format_version: FORMAT_VERSION,
            grid,
            c0,
            roi,
            ring: *ring,
            amplitude,
            frequencies_hz: freqs.to_vec(),
            seed,
            self_measurement: true,
            cbs,
            phantoms: vec![],
            entries: vec![],
            tensors: vec![],
            failures: vec![],
        }
    }

    /// The acquisition described by the manifest, frequencies in rad/s.
    pub fn acquisition(&self) -> Acquisition {
        Acquisition {
            array: self.ring,
            amplitude: self.amplitude,
            frequencies: self.frequencies_hz.iter().map(|&f| crate::angular(f)).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("format_version", self.format_version.to_string());
        kv("grid_nx", g.nx().to_string());
        kv("grid_ny", g.ny().to_string());
        kv("grid_h", g.h().to_string());
        kv("grid_origin_x", g.origin().x.to_string());
        kv("grid_origin_y", g.origin().y.to_string());
        kv("c0", self.c0.to_string());
        kv("roi_center_x", self.roi.center.x.to_string());
        kv("roi_center_y", self.roi.center.y.to_string());
        kv("roi_radius", self.roi.radius.to_string());
        kv("ring_elements", self.ring.m().to_string());
        kv("ring_diameter", self.ring.diameter().to_string());
        kv("ring_center_x", self.ring.center().x.to_string());
        kv("ring_center_y", self.ring.center().y.to_string());
        kv("ring_theta0", self.ring.theta0().to_string());
        kv("source_amplitude_re", self.amplitude.re.to_string());
        kv("source_amplitude_im", self.amplitude.im.to_string());
        kv("frequencies_hz", self.frequencies_hz.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        kv("seed", self.seed.to_string());
        kv("self_measurement", self.self_measurement.to_string());
        kv("cbs_pad_width", self.cbs.pad_width.to_string());
        kv("cbs_epsilon_safety", self.cbs.epsilon_safety.to_string());
        kv("cbs_max_iter", self.cbs.max_iter.to_string());
        kv("cbs_tol", self.cbs.tol.to_string());
        kv("cbs_k0_strategy", strategy_name(self.cbs.k0_strategy).to_string());
        for p in &self.phantoms {
            let t = p.breast_type.map_or("-", BreastType::name);
            kv("phantom", format!("{} {t} {} {}", p.id, p.seed, p.file));
        }
        for e in &self.entries {
            kv("entry", format!("{} {} {} {}", e.phantom_id, e.frequency_index, e.source_index, e.file));
        }
        for t in &self.tensors {
            kv("tensor", format!("{} {}", t.phantom_id, t.file));
        }
        for f in &self.failures {
            let msg = f.message.replace('\n', " ");
            kv("failure", format!("{} {} {} {msg}", f.phantom_id, f.frequency_index, f.source_index));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        use std::collections::HashMap;
        let mut scalars: HashMap<&str, (usize, &str)> = HashMap::new();
        let mut repeated: Vec<(usize, &str, &str)> = vec![];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let n = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest { line: n, message: "expected `key = value`".into() })?;
            let (k, v) = (k.trim(), v.trim());
            if SCALAR_KEYS.contains(&k) {
                if scalars.insert(k, (n, v)).is_some() {
                    return Err(Error::Manifest { line: n, message: format!("duplicate key `{k}`") });
                }
            } else if matches!(k, "phantom" | "entry" | "tensor" | "failure") {
                repeated.push((n, k, v));
            } else {
                return Err(Error::Manifest { line: n, message: format!("unknown key `{k}`") });
            }
        }
        let get = |k: &str| -> Result<(usize, &str)> {
            scalars.get(k).copied().ok_or_else(|| Error::Manifest { line: 0, message: format!("missing key `{k}`") })
        };
        fn num<T: std::str::FromStr>((line, v): (usize, &str)) -> Result<T> {
            v.parse().map_err(|_| Error::Manifest { line, message: format!("cannot parse `{v}`") })
        }
        let bad = |line: usize, e: Error| Error::Manifest { line, message: e.to_string() };
        let format_version: u32 = num(get("format_version")?)?;
        if format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: format_version, supported: FORMAT_VERSION });
        }
        let grid = Grid2D::new(
            num(get("grid_nx")?)?,
            num(get("grid_ny")?)?,
            num(get("grid_h")?)?,
            Point2::new(num(get("grid_origin_x")?)?, num(get("grid_origin_y")?)?),
        )
        .map_err(|e| bad(get("grid_nx").map_or(0, |x| x.0), e))?;
        let roi = Roi::new(Point2::new(num(get("roi_center_x")?)?, num(get("roi_center_y")?)?), num(get("roi_radius")?)?)
            .map_err(|e| bad(get("roi_radius").map_or(0, |x| x.0), e))?;
        let ring = RingArray::new(
            num(get("ring_elements")?)?,
            num(get("ring_diameter")?)?,
            Point2::new(num(get("ring_center_x")?)?, num(get("ring_center_y")?)?),
            num(get("ring_theta0")?)?,
        )
        .map_err(|e| bad(get("ring_elements").map_or(0, |x| x.0), e))?;
        let (fl, fv) = get("frequencies_hz")?;
        let frequencies_hz = if fv.is_empty() {
            vec![]
        } else {
            fv.split(',').map(|f| num((fl, f.trim()))).collect::<Result<Vec<f64>>>()?
        };
        let (sl, sv) = get("cbs_k0_strategy")?;
        let k0_strategy = match sv {
            "midpoint" => K0Strategy::Midpoint,
            "background" => K0Strategy::Background,
            other => return Err(Error::Manifest { line: sl, message: format!("unknown k0 strategy `{other}`") }),
        };
        let cbs = CbsConfig {
            pad_width: num(get("cbs_pad_width")?)?,
            epsilon_safety: num(get("cbs_epsilon_safety")?)?,
            max_iter: num(get("cbs_max_iter")?)?,
            tol: num(get("cbs_tol")?)?,
            k0_strategy,
        };
        let mut m = Manifest {
            format_version,
            grid,
            c0: num(get("c0")?)?,
            roi,
            ring,
            amplitude: Complex64::new(num(get("source_amplitude_re")?)?, num(get("source_amplitude_im")?)?),
            frequencies_hz,
            seed: num(get("seed")?)?,
            self_measurement: num(get("self_measurement")?)?,
            cbs,
            phantoms: vec![],
            entries: vec![],
            tensors: vec![],
            failures: vec![],
        };
        for (n, k, v) in repeated {
            let fields: Vec<&str> = if k == "failure" { v.splitn(4, ' ').collect() } else { v.split_whitespace().collect() };
            let arity = match k {
                "tensor" => 2,
                _ => 4,
            };
            if fields.len() != arity {
                return Err(Error::Manifest { line: n, message: format!("`{k}` expects {arity} fields") });
            }
            match k {
                "phantom" => {
                    let breast_type = match fields[1] {
                        "-" => None,
                        t => Some(t.parse::<BreastType>().map_err(|e| bad(n, e))?),
                    };
                    m.phantoms.push(PhantomIndex {
                        id: num((n, fields[0]))?,
                        breast_type,
                        seed: num((n, fields[2]))?,
                        file: fields[3].to_string(),
                    });
                }
                "entry" => m.entries.push(EntryIndex {
                    phantom_id: num((n, fields[0]))?,
                    frequency_index: num((n, fields[1]))?,
                    source_index: num((n, fields[2]))?,
                    file: fields[3].to_string(),
                }),
                "tensor" => m.tensors.push(TensorIndex { phantom_id: num((n, fields[0]))?, file: fields[1].to_string() }),
                _ => m.failures.push(Failure {
                    phantom_id: num((n, fields[0]))?,
                    frequency_index: num((n, fields[1]))?,
                    source_index: num((n, fields[2]))?,
                    message: fields[3].to_string(),
                }),
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// A phantom to be simulated by [`export_dataset`].
#[derive(Debug, Clone)]
pub struct ExportPhantom {
    pub id: u64,
    pub breast_type: Option<BreastType>,
    pub seed: u64,
    pub c: SoundSpeedMap,
}

#[derive(Debug, Clone)]
pub struct ExportSettings {
    pub frequencies_hz: Vec<f64>,
    pub array: RingArray,
    pub amplitude: Complex64,
    pub cbs: CbsConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExportReport {
    pub manifest: Manifest,
    /// Helmholtz solves run by this call.
    pub solves: usize,
    /// Entries found on disk and reused.
    pub reused: usize,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// File name of one entry inside a corpus directory.
pub fn entry_file(phantom: u64, freq: usize, source: usize) -> String {
    format!("entry_p{phantom:05}_f{freq:02}_s{source:04}.obus")
}

/// Reads an existing entry and checks it describes exactly this job.
fn verify_entry(path: &Path, ph: &ExportPhantom, omega: f64, source: usize, sd: &SourceDescriptor) -> Option<DatasetEntry> {
    let e = load_entry(path).ok()?;
    let same = e.phantom_id == ph.id
        && e.source_index == source
        && e.omega.to_bits() == omega.to_bits()
        && e.source == *sd
        && e.c == ph.c;
    same.then_some(e)
}

/// Simulates every (phantom, frequency, source) wavefield into `dir`, plus
/// one phantom map and one measurement tensor per phantom and a manifest.
///
/// Entries already on disk that read back cleanly and match their job are
/// reused, so an interrupted export can simply be run again. Solver
/// failures are listed in the manifest instead of aborting the run.
pub fn export_dataset(phantoms: &[ExportPhantom], settings: &ExportSettings, dir: &Path) -> Result<ExportReport> {
    settings.cbs.validate()?;
    let first = phantoms.first().ok_or_else(|| Error::InvalidArgument("no phantoms to export".into()))?;
    let (grid, c0, roi) = (*first.c.grid(), first.c.c0(), *first.c.roi());
    for p in phantoms {
        grid.check_same(p.c.grid(), "export phantoms")?;
        if p.c.c0() != c0 || *p.c.roi() != roi {
            return Err(Error::InvalidArgument("export phantoms must share c0 and ROI".into()));
        }
    }
    let mut ids: Vec<u64> = phantoms.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("phantom ids must be unique".into()));
    }
    crate::acquisition::check_ring_fits(&grid, &settings.array)?;
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new(
        grid,
        c0,
        roi,
        (&settings.array, settings.amplitude, &settings.frequencies_hz),
        settings.seed,
        settings.cbs,
    );
    let acq = manifest.acquisition();
    let m = settings.array.m();
    let solves = AtomicUsize::new(0);
    let mut reused = 0;
    for ph in phantoms {
        let map_file = format!("phantom_{:05}.obus", ph.id);
        let map_path = dir.join(&map_file);
        if load_map(&map_path).ok().as_ref() != Some(&ph.c) {
            save_map(&map_path, &ph.c)?;
        }
        manifest.phantoms.push(PhantomIndex {
            id: ph.id,
            breast_type: ph.breast_type,
            seed: ph.seed,
            file: map_file,
        });
        let mut tensor = MeasurementTensor::zeros(acq.clone());
        let mut complete = true;
        for (j, &omega) in acq.frequencies.iter().enumerate() {
            let jobs: Vec<(usize, SourceDescriptor)> = (0..m)
                .map(|k| (k, SourceDescriptor { position: settings.array.position(k), amplitude: settings.amplitude }))
                .collect();
            let mut pending = vec![];
            for &(k, sd) in &jobs {
                let file = entry_file(ph.id, j, k);
                match verify_entry(&dir.join(&file), ph, omega, k, &sd) {
                    Some(e) => {
                        tensor.column_mut(k, j).copy_from_slice(&record_receivers(&e.u, &settings.array)?);
                        manifest.entries.push(EntryIndex { phantom_id: ph.id, frequency_index: j, source_index: k, file });
                        reused += 1;
                    }
                    None => pending.push((k, sd)),
                }
            }
            if pending.is_empty() {
                continue;
            }
            let op = CbsOperator::new(&ph.c, omega, &settings.cbs)?;
            let results: Vec<(usize, Result<Vec<Complex64>>)> = pending
                .par_iter()
                .map_init(
                    || op.new_plan(),
                    |plan, &(k, sd)| {
                        let mut run = || -> Result<Vec<Complex64>> {
                            let s = make_point_source(grid, sd.position, sd.amplitude)?;
                            solves.fetch_add(1, Ordering::Relaxed);
                            let (u, rep) = op.solve_with(plan, &s)?;
                            if !rep.converged {
                                return Err(Error::NotConverged {
                                    source_index: k,
                                    frequency_index: j,
                                    iterations: rep.iterations,
                                    final_update: rep.final_update,
                                });
                            }
                            let receivers = record_receivers(&u, &settings.array)?;
                            let e = DatasetEntry {
                                phantom_id: ph.id,
                                breast_type: ph.breast_type,
                                c: ph.c.clone(),
                                omega,
                                source_index: k,
                                source: sd,
                                u,
                            };
                            save_entry(&dir.join(entry_file(ph.id, j, k)), &e)?;
                            Ok(receivers)
                        };
                        (k, run())
                    },
                )
                .collect();
            for (k, res) in results {
                match res {
                    Ok(receivers) => {
                        tensor.column_mut(k, j).copy_from_slice(&receivers);
                        manifest.entries.push(EntryIndex {
                            phantom_id: ph.id,
                            frequency_index: j,
                            source_index: k,
                            file: entry_file(ph.id, j, k),
                        });
                    }
                    Err(e) => {
                        complete = false;
                        manifest.failures.push(Failure {
                            phantom_id: ph.id,
                            frequency_index: j,
                            source_index: k,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
        manifest.entries.sort_by_key(|e| (e.phantom_id, e.frequency_index, e.source_index));
        if complete {
            let file = format!("tensor_{:05}.obus", ph.id);
            save_tensor(&dir.join(&file), &TensorFile { tensor, grid, c0, roi })?;
            manifest.tensors.push(TensorIndex { phantom_id: ph.id, file });
        }
        manifest.save(&dir.join(MANIFEST_FILE))?;
    }
    Ok(ExportReport { manifest, solves: solves.into_inner(), reused })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_entry() -> DatasetEntry {
        let grid = Grid2D::centered(12, 10, 1e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 3e-3).unwrap();
        let c = SoundSpeedMap::from_fn(grid, 1500.0, roi, |p| 1500.0 + 1e4 * p.x).unwrap();
        let u = ComplexField2D::from_fn(grid, |ix, iy, _| Complex64::new(ix as f64 * 0.1, -(iy as f64) / 3.0));
        DatasetEntry {
            phantom_id: 42,
            breast_type: Some(BreastType::Fib),
            c,
            omega: crate::angular(3e5),
            source_index: 7,
            source: SourceDescriptor { position: Point2::new(1e-3, -2e-3), amplitude: Complex64::new(0.195, -0.0275) },
            u,
        }
    }

    #[test]
    fn entry_round_trip() {
        let e = sample_entry();
        let mut buf = vec![];
        write_entry(&e, &mut buf).unwrap();
        let back = read_entry(buf.as_slice()).unwrap();
        assert_eq!(back, e);
        let mut again = vec![];
        write_entry(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic_is_typed() {
        let mut buf = encode_entry(&sample_entry()).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_entry(buf.as_slice()), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_mismatch_is_typed() {
        let mut buf = encode_entry(&sample_entry()).unwrap();
        buf[4] = 9;
        assert!(matches!(read_entry(buf.as_slice()), Err(Error::UnsupportedVersion { found: 9, .. })));
    }

    #[test]
    fn truncation_is_typed() {
        let buf = encode_entry(&sample_entry()).unwrap();
        for cut in [0, 3, 8, 20, buf.len() / 2, buf.len() - 1] {
            assert!(matches!(read_entry(&buf[..cut]), Err(Error::Truncated)), "cut at {cut}");
        }
    }

    #[test]
    fn complex_field_payload_size() {
        let grid = Grid2D::centered(480, 480, 0.5e-3).unwrap();
        let bytes = encode_field(&ComplexField2D::zeros(grid)).unwrap();
        let header = HEADER_LEN + 5 * 8 + 2 + 2 * 8;
        assert_eq!(bytes.len(), header + 480 * 480 * 16);
    }

    #[test]
    fn wrong_kind_reported() {
        let bytes = encode_map(&sample_entry().c).unwrap();
        assert!(matches!(read_entry(bytes.as_slice()), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn manifest_text_round_trip() {
        let grid = Grid2D::centered(480, 480, 0.5e-3).unwrap();
        let roi = Roi::new(Point2::ORIGIN, 0.1).unwrap();
        let mut m = Manifest::new(
            grid,
            1500.0,
            roi,
            (&RingArray::reference(), crate::acquisition::SOURCE_VALUE, &crate::acquisition::default_frequencies_hz()),
            7,
            CbsConfig::default(),
        );
        m.phantoms.push(PhantomIndex { id: 1, breast_type: Some(BreastType::Het), seed: 99, file: "a.obus".into() });
        m.phantoms.push(PhantomIndex { id: 2, breast_type: None, seed: 3, file: "b.obus".into() });
        m.entries.push(EntryIndex { phantom_id: 1, frequency_index: 2, source_index: 3, file: "e.obus".into() });
        m.tensors.push(TensorIndex { phantom_id: 1, file: "t.obus".into() });
        m.failures.push(Failure { phantom_id: 2, frequency_index: 0, source_index: 5, message: "did not converge".into() });
        let text = m.to_text();
        assert!(text.contains("grid_h = 0.0005\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_unknown_and_missing_keys() {
        assert!(matches!(Manifest::parse("colour = blue\n"), Err(Error::Manifest { line: 1, .. })));
        assert!(matches!(Manifest::parse("format_version = 1\n"), Err(Error::Manifest { .. })));
        assert!(matches!(Manifest::parse("just words\n"), Err(Error::Manifest { line: 1, .. })));
    }
}
