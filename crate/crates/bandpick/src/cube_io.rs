//! Hyperspectral cube files and the dataset manifest.
//!
//! Cube format, all little-endian:
//!
//! ```text
//! magic   4 bytes  "HSC1"
//! version u32      1
//! rows    u32
//! cols    u32
//! n_bands u32
//! wavelengths  n_bands x f64   nanometres, strictly increasing
//! reflectance  rows x cols x n_bands x f32   band varies fastest
//! ```
//!
//! Reflectance is calibrated to [0, 1]. Loading validates everything and
//! never repairs: out-of-range or non-finite samples, truncated or oversized
//! payloads, and non-monotone wavelength axes are hard errors that name the
//! first offending index.
//!
//! The manifest is a CSV of per-stem records preceded by one comment line
//! carrying the spatial scale:
//!
//! ```text
//! # scale_mm_per_px=0.25
//! stem_id,cube_path,genotype,treatment,dai,interior_mm,exterior_mm,dead_mm,replication,split,inoculation_end
//! ```
//!
//! `interior_mm`/`exterior_mm`/`dead_mm` may be empty for mock-inoculated
//! stems and are then read as 0 mm of infected extent.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAGIC: [u8; 4] = *b"HSC1";
const VERSION: u32 = 1;
/// Refuses payloads beyond 2^31 samples (8 GiB) before allocating.
const MAX_SAMPLES: u64 = 1 << 31;

/// Errors for cube construction, reading and writing.
#[derive(Debug, Error)]
pub enum CubeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}, expected \"HSC1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported cube version {found}, expected {VERSION}")]
    UnsupportedVersion { found: u32 },
    #[error("{what} must be at least 1")]
    ZeroDimension { what: &'static str },
    #[error("cube of {rows}x{cols}x{n_bands} samples exceeds the supported size")]
    TooLarge { rows: u64, cols: u64, n_bands: u64 },
    #[error("wavelength[{index}] = {value} is not finite")]
    WavelengthNotFinite { index: usize, value: f64 },
    #[error("wavelengths must increase strictly: wavelength[{index}] = {value} after {prev}")]
    WavelengthNotIncreasing { index: usize, prev: f64, value: f64 },
    #[error("file ends inside the {section} section")]
    Truncated { section: &'static str },
    #[error("{extra} trailing byte(s) after the sample payload")]
    TrailingBytes { extra: u64 },
    #[error("reflectance[row {row}, col {col}, band {band}] = {value} is outside [0, 1]")]
    SampleOutOfRange { row: usize, col: usize, band: usize, value: f32 },
    #[error("expected {expected} reflectance samples, got {got}")]
    SampleCountMismatch { expected: usize, got: usize },
}

/// In-memory hyperspectral cube: `rows x cols x n_bands` reflectance plus
/// the wavelength axis. Samples are stored exactly as on disk (`f32`, band
/// varies fastest), so round trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    rows: usize,
    cols: usize,
    n_bands: usize,
    wavelengths: Vec<f64>,
    reflectance: Vec<f32>,
}

impl DataCube {
    /// Builds a cube after validating every invariant the file format
    /// guarantees. `n_bands` is the wavelength count.
    pub fn new(
        rows: usize,
        cols: usize,
        wavelengths: Vec<f64>,
        reflectance: Vec<f32>,
    ) -> Result<Self, CubeError> {
        let n_bands = wavelengths.len();
        validate_dims(rows as u64, cols as u64, n_bands as u64)?;
        validate_wavelengths(&wavelengths)?;
        let expected = rows * cols * n_bands;
        if reflectance.len() != expected {
            return Err(CubeError::SampleCountMismatch { expected, got: reflectance.len() });
        }
        for (i, &v) in reflectance.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let (row, col, band) = unflatten(i, cols, n_bands);
                return Err(CubeError::SampleOutOfRange { row, col, band, value: v });
            }
        }
        Ok(Self { rows, cols, n_bands, wavelengths, reflectance })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    /// Reflectance at one pixel and band.
    #[inline]
    pub fn value(&self, row: usize, col: usize, band: usize) -> f32 {
        debug_assert!(row < self.rows && col < self.cols && band < self.n_bands);
        self.reflectance[(row * self.cols + col) * self.n_bands + band]
    }

    /// Full spectrum of one pixel.
    #[inline]
    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.n_bands;
        &self.reflectance[start..start + self.n_bands]
    }
}

fn validate_dims(rows: u64, cols: u64, n_bands: u64) -> Result<(), CubeError> {
    if rows == 0 {
        return Err(CubeError::ZeroDimension { what: "rows" });
    }
    if cols == 0 {
        return Err(CubeError::ZeroDimension { what: "cols" });
    }
    if n_bands == 0 {
        return Err(CubeError::ZeroDimension { what: "n_bands" });
    }
    let samples = rows
        .checked_mul(cols)
        .and_then(|rc| rc.checked_mul(n_bands))
        .filter(|&s| s <= MAX_SAMPLES);
    if samples.is_none() {
        return Err(CubeError::TooLarge { rows, cols, n_bands });
    }
    Ok(())
}

fn validate_wavelengths(wavelengths: &[f64]) -> Result<(), CubeError> {
    for (i, &w) in wavelengths.iter().enumerate() {
        if !w.is_finite() {
            return Err(CubeError::WavelengthNotFinite { index: i, value: w });
        }
        if i > 0 && w <= wavelengths[i - 1] {
            return Err(CubeError::WavelengthNotIncreasing {
                index: i,
                prev: wavelengths[i - 1],
                value: w,
            });
        }
    }
    Ok(())
}

#[inline]
fn unflatten(index: usize, cols: usize, n_bands: usize) -> (usize, usize, usize) {
    let band = index % n_bands;
    let pixel = index / n_bands;
    (pixel / cols, pixel % cols, band)
}

/// Reads and fully validates a cube file.
pub fn read_cube(path: &Path) -> Result<DataCube, CubeError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_section(&mut r, &mut magic, "header")?;
    if magic != MAGIC {
        return Err(CubeError::BadMagic { found: magic });
    }
    let version = read_u32(&mut r, "header")?;
    if version != VERSION {
        return Err(CubeError::UnsupportedVersion { found: version });
    }
    let rows = read_u32(&mut r, "header")? as u64;
    let cols = read_u32(&mut r, "header")? as u64;
    let n_bands = read_u32(&mut r, "header")? as u64;
    validate_dims(rows, cols, n_bands)?;

    let mut wavelengths = vec![0f64; n_bands as usize];
    r.read_f64_into::<LittleEndian>(&mut wavelengths)
        .map_err(|e| eof_as(e, "wavelengths"))?;
    validate_wavelengths(&wavelengths)?;

    let n_samples = (rows * cols * n_bands) as usize;
    let mut reflectance = vec![0f32; n_samples];
    r.read_f32_into::<LittleEndian>(&mut reflectance)
        .map_err(|e| eof_as(e, "samples"))?;

    let extra = count_remaining(&mut r)?;
    if extra > 0 {
        return Err(CubeError::TrailingBytes { extra });
    }

    DataCube::new(rows as usize, cols as usize, wavelengths, reflectance)
}

fn read_exact_section<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    section: &'static str,
) -> Result<(), CubeError> {
    r.read_exact(buf).map_err(|e| eof_as(e, section))
}

fn read_u32<R: Read>(r: &mut R, section: &'static str) -> Result<u32, CubeError> {
    r.read_u32::<LittleEndian>().map_err(|e| eof_as(e, section))
}

fn eof_as(e: std::io::Error, section: &'static str) -> CubeError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CubeError::Truncated { section }
    } else {
        CubeError::Io(e)
    }
}

fn count_remaining<R: Read>(r: &mut R) -> Result<u64, CubeError> {
    let mut sink = [0u8; 4096];
    let mut total = 0u64;
    loop {
        let n = r.read(&mut sink)?;
        if n == 0 {
            return Ok(total);
        }
        total += n as u64;
    }
}

/// Incremental cube writer; lets the synthesizer emit large cubes without
/// holding them in memory. Samples are validated as they stream through.
pub struct CubeWriter {
    w: BufWriter<File>,
    cols: usize,
    n_bands: usize,
    expected: usize,
    written: usize,
}

impl CubeWriter {
    pub fn create(
        path: &Path,
        rows: usize,
        cols: usize,
        wavelengths: &[f64],
    ) -> Result<Self, CubeError> {
        let n_bands = wavelengths.len();
        validate_dims(rows as u64, cols as u64, n_bands as u64)?;
        validate_wavelengths(wavelengths)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(rows as u32)?;
        w.write_u32::<LittleEndian>(cols as u32)?;
        w.write_u32::<LittleEndian>(n_bands as u32)?;
        for &wl in wavelengths {
            w.write_f64::<LittleEndian>(wl)?;
        }
        Ok(Self { w, cols, n_bands, expected: rows * cols * n_bands, written: 0 })
    }

    /// Appends samples in (row, col, band) order, band fastest.
    pub fn write_samples(&mut self, samples: &[f32]) -> Result<(), CubeError> {
        for (i, &v) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let (row, col, band) = unflatten(self.written + i, self.cols, self.n_bands);
                return Err(CubeError::SampleOutOfRange { row, col, band, value: v });
            }
            self.w.write_f32::<LittleEndian>(v)?;
        }
        self.written += samples.len();
        if self.written > self.expected {
            return Err(CubeError::SampleCountMismatch {
                expected: self.expected,
                got: self.written,
            });
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CubeError> {
        if self.written != self.expected {
            return Err(CubeError::SampleCountMismatch {
                expected: self.expected,
                got: self.written,
            });
        }
        self.w.flush()?;
        Ok(())
    }
}

/// Writes a cube file; the result reads back bit-identically.
pub fn write_cube(cube: &DataCube, path: &Path) -> Result<(), CubeError> {
    let mut w = CubeWriter::create(path, cube.rows, cube.cols, &cube.wavelengths)?;
    w.write_samples(&cube.reflectance)?;
    w.finish()
}

/// Which end of the image the inoculation point touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InoculationEnd {
    LowCol,
    HighCol,
}

impl InoculationEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            InoculationEnd::LowCol => "low_col",
            InoculationEnd::HighCol => "high_col",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Inoculated,
    Mock,
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Inoculated => "inoculated",
            Treatment::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One stem of the dataset: where its cube lives and what is known about
/// the infection. Lengths are millimetres measured from the inoculation
/// point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemRecord {
    pub stem_id: String,
    /// Cube file path, relative to the manifest's directory.
    pub cube_path: String,
    pub genotype: String,
    pub treatment: Treatment,
    /// Days after inoculation.
    pub dai: u32,
    pub interior_mm: Option<f64>,
    pub exterior_mm: Option<f64>,
    pub dead_mm: Option<f64>,
    pub replication: u32,
    pub split: Split,
    pub inoculation_end: InoculationEnd,
}

impl StemRecord {
    /// Infected extent used for patch labeling; absent lengths mean 0 mm.
    pub fn infected_extent_mm(&self) -> f64 {
        self.interior_mm.unwrap_or(0.0)
    }
}

/// A loaded manifest: global spatial scale plus records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub scale_mm_per_px: f64,
    pub records: Vec<StemRecord>,
    /// Directory the manifest was read from; cube paths resolve against it.
    pub base_dir: PathBuf,
}

impl Manifest {
    /// Absolute-ish path of a record's cube file.
    pub fn cube_file(&self, record: &StemRecord) -> PathBuf {
        self.base_dir.join(&record.cube_path)
    }
}

pub const DEFAULT_SCALE_MM_PER_PX: f64 = 0.25;

const SCALE_PREFIX: &str = "# scale_mm_per_px=";
const HEADER: [&str; 11] = [
    "stem_id",
    "cube_path",
    "genotype",
    "treatment",
    "dai",
    "interior_mm",
    "exterior_mm",
    "dead_mm",
    "replication",
    "split",
    "inoculation_end",
];

/// Errors raised while reading or validating a manifest.
#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("first line must be \"{SCALE_PREFIX}<value>\"")]
    MissingScaleHeader,
    #[error("cannot parse spatial scale from {raw:?}")]
    BadScale { raw: String },
    #[error("scale_mm_per_px must be positive and finite, got {value}")]
    NonPositiveScale { value: f64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("stem {stem_id:?}: unknown treatment {found:?} (expected inoculated|mock)")]
    UnknownTreatment { stem_id: String, found: String },
    #[error("stem {stem_id:?}: unknown split {found:?} (expected train|test)")]
    UnknownSplit { stem_id: String, found: String },
    #[error("stem {stem_id:?}: unknown inoculation_end {found:?} (expected low_col|high_col)")]
    UnknownEnd { stem_id: String, found: String },
    #[error("stem {stem_id:?}: dai must be non-negative, got {found}")]
    NegativeDai { stem_id: String, found: i64 },
    #[error("stem {stem_id:?}: replication must be non-negative, got {found}")]
    NegativeReplication { stem_id: String, found: i64 },
    #[error("stem {stem_id:?}: {field} must be a non-negative finite length, got {value}")]
    BadLesionLength { stem_id: String, field: &'static str, value: f64 },
    #[error("stem {stem_id:?}: inoculated stems require interior_mm")]
    MissingInterior { stem_id: String },
    #[error("duplicate stem_id {stem_id:?}")]
    DuplicateStem { stem_id: String },
    #[error("manifest contains no records")]
    NoRecords,
}

#[derive(Deserialize)]
struct RawRow {
    stem_id: String,
    cube_path: String,
    genotype: String,
    treatment: String,
    dai: i64,
    interior_mm: Option<f64>,
    exterior_mm: Option<f64>,
    dead_mm: Option<f64>,
    replication: i64,
    split: String,
    inoculation_end: String,
}

/// Reads a manifest, validating scale, enum fields, lesion lengths and
/// stem_id uniqueness. Record order follows the file.
pub fn read_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    let (first, rest) = match text.split_once('\n') {
        Some(pair) => pair,
        None => (text.as_str(), ""),
    };
    let first = first.trim_end_matches('\r');
    let raw_scale = first
        .strip_prefix(SCALE_PREFIX)
        .ok_or(ManifestError::MissingScaleHeader)?;
    let scale: f64 = raw_scale
        .trim()
        .parse()
        .map_err(|_| ManifestError::BadScale { raw: raw_scale.to_string() })?;
    if !scale.is_finite() || scale <= 0.0 {
        return Err(ManifestError::NonPositiveScale { value: scale });
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(rest.as_bytes());

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.deserialize::<RawRow>() {
        let row = row?;
        records.push(validate_row(row, &mut seen)?);
    }
    if records.is_empty() {
        return Err(ManifestError::NoRecords);
    }
    Ok(Manifest { scale_mm_per_px: scale, records, base_dir })
}

fn validate_row(row: RawRow, seen: &mut HashSet<String>) -> Result<StemRecord, ManifestError> {
    let stem_id = row.stem_id;
    if !seen.insert(stem_id.clone()) {
        return Err(ManifestError::DuplicateStem { stem_id });
    }
    let treatment = match row.treatment.as_str() {
        "inoculated" => Treatment::Inoculated,
        "mock" => Treatment::Mock,
        other => {
            return Err(ManifestError::UnknownTreatment {
                stem_id,
                found: other.to_string(),
            })
        }
    };
    let split = match row.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(ManifestError::UnknownSplit { stem_id, found: other.to_string() }),
    };
    let inoculation_end = match row.inoculation_end.as_str() {
        "low_col" => InoculationEnd::LowCol,
        "high_col" => InoculationEnd::HighCol,
        other => return Err(ManifestError::UnknownEnd { stem_id, found: other.to_string() }),
    };
    if row.dai < 0 {
        return Err(ManifestError::NegativeDai { stem_id, found: row.dai });
    }
    if row.replication < 0 {
        return Err(ManifestError::NegativeReplication { stem_id, found: row.replication });
    }
    for (field, value) in [
        ("interior_mm", row.interior_mm),
        ("exterior_mm", row.exterior_mm),
        ("dead_mm", row.dead_mm),
    ] {
        if let Some(v) = value {
            if !v.is_finite() || v < 0.0 {
                return Err(ManifestError::BadLesionLength { stem_id, field, value: v });
            }
        }
    }
    if treatment == Treatment::Inoculated && row.interior_mm.is_none() {
        return Err(ManifestError::MissingInterior { stem_id });
    }
    Ok(StemRecord {
        stem_id,
        cube_path: row.cube_path,
        genotype: row.genotype,
        treatment,
        dai: row.dai as u32,
        interior_mm: row.interior_mm,
        exterior_mm: row.exterior_mm,
        dead_mm: row.dead_mm,
        replication: row.replication as u32,
        split,
        inoculation_end,
    })
}

/// Writes a manifest in the exact on-disk layout `read_manifest` accepts.
pub fn write_manifest(
    scale_mm_per_px: f64,
    records: &[StemRecord],
    path: &Path,
) -> Result<(), ManifestError> {
    if !scale_mm_per_px.is_finite() || scale_mm_per_px <= 0.0 {
        return Err(ManifestError::NonPositiveScale { value: scale_mm_per_px });
    }
    let mut out = String::new();
    out.push_str(SCALE_PREFIX);
    out.push_str(&format!("{scale_mm_per_px}\n"));
    out.push_str(&HEADER.join(","));
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in records {
        w.write_record([
            r.stem_id.as_str(),
            r.cube_path.as_str(),
            r.genotype.as_str(),
            r.treatment.as_str(),
            &r.dai.to_string(),
            &opt_len(r.interior_mm),
            &opt_len(r.exterior_mm),
            &opt_len(r.dead_mm),
            &r.replication.to_string(),
            r.split.as_str(),
            r.inoculation_end.as_str(),
        ])?;
    }
    let body = w.into_inner().expect("csv writer over Vec never fails");
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    std::fs::write(path, out)?;
    Ok(())
}

fn opt_len(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
