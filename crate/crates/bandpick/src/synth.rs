//! Synthetic hyperspectral stem dataset generator.
//!
//! Produces cube files plus a manifest where the discriminative bands and
//! lesion extents are known exactly, so the whole selection pipeline can
//! be verified against planted ground truth. Healthy tissue follows a
//! fixed vegetation-shaped base curve; infected pixels are the same curve
//! attenuated by `α` at the planted bands (localized mode) or across the
//! whole spectrum with extra depth at the planted bands (broad mode).
//!
//! Two random effects sit on top of the base curve:
//!
//! * per-stem spectral jitter: a smooth zero-mean multiplicative profile
//!   (Gaussian-bump basis, normalized so every band's marginal standard
//!   deviation is exactly `stem_jitter`). This models stem-to-stem
//!   reflectance variation and is what keeps single bands from being
//!   trivially separable, so multi-band selection genuinely pays off;
//! * independent per-pixel Gaussian noise with standard deviation
//!   `noise_sd`, clamped to [0, 1] after summation (clamp counts are
//!   checked to stay below 0.1%).
//!
//! Every stem draws from its own seed-derived stream, so generation order
//! cannot change the output and files are byte-identical across reruns.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube_io::{
    self, CubeError, CubeWriter, InoculationEnd, Manifest, ManifestError, StemRecord, Treatment,
    Split,
};
use crate::features::{self, RGB_TARGETS_NM};
use crate::rng::{derive_seed, stream_rng};

/// Seed namespace for per-stem generator streams.
const NS_STEM: u64 = 0x51;

/// Number of Gaussian bumps in the per-stem jitter basis.
const JITTER_BUMPS: usize = 8;

/// Days-after-inoculation values cycled across stems.
const DAI_CYCLE: [u32; 3] = [3, 6, 9];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    BadSpec(&'static str),
    #[error("planted band {index} out of range for {n_bands} bands")]
    PlantedBandOutOfRange { index: usize, n_bands: usize },
    #[error("planted band {band} collides with fixed RGB band {rgb_band} in localized mode")]
    PlantedBandOverlapsRgb { band: usize, rgb_band: usize },
    #[error("stem {stem_id}: {clamped} of {total} samples clamped (limit 0.1%)")]
    TooManyClamped { stem_id: String, clamped: usize, total: usize },
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("writing ground truth: {0}")]
    Truth(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where the attenuation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    /// Attenuate only the planted bands (± halfwidth) inside the lesion.
    Localized,
    /// Attenuate every band inside the lesion, deeper at planted bands.
    Broad,
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_stems_train: usize,
    pub n_stems_test: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_bands: usize,
    pub wavelength_lo: f64,
    pub wavelength_hi: f64,
    pub planted_bands: Vec<usize>,
    /// Indices on each side of a planted band that carry the signal too.
    pub band_halfwidth: usize,
    /// Infected reflectance multiplier at planted bands; 1 means no signal.
    pub attenuation: f64,
    pub noise_sd: f64,
    /// Per-stem smooth spectral variation (multiplicative, per-band sd).
    pub stem_jitter: f64,
    pub mode: SynthMode,
    /// Interior lesion length interval in mm (scaled down for low dai).
    pub lesion_mm_range: (f64, f64),
    /// Sampled lesion lengths snap to multiples of this (0 = continuous).
    /// The default equals one 64 px patch at 0.25 mm/px, which keeps every
    /// infected patch fully covered instead of diluted at the lesion edge.
    pub lesion_quantum_mm: f64,
    /// Per-band probability that a lesion segment skips the attenuation at
    /// one planted band (localized mode only). At most one band skips per
    /// segment, so a single band is an unreliable witness of infection
    /// while any pair of planted bands still marks every segment — which
    /// is what gives a band *search* something to find.
    pub band_dropout: f64,
    /// Length of the independently expressed lesion segments, in mm.
    pub dropout_segment_mm: f64,
    pub scale_mm_per_px: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_stems_train: 24,
            n_stems_test: 12,
            rows: 500,
            cols: 1600,
            n_bands: 240,
            wavelength_lo: 382.0,
            wavelength_hi: 1032.0,
            planted_bands: vec![40, 120, 200],
            band_halfwidth: 2,
            attenuation: 0.7,
            noise_sd: 0.02,
            stem_jitter: 0.10,
            mode: SynthMode::Localized,
            lesion_mm_range: (16.0, 70.0),
            lesion_quantum_mm: 16.0,
            band_dropout: 0.25,
            dropout_segment_mm: 16.0,
            scale_mm_per_px: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_stems_train + self.n_stems_test == 0 {
            return Err(SynthError::BadSpec("at least one stem required"));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(SynthError::BadSpec("rows and cols must be positive"));
        }
        if self.n_bands < 2 {
            return Err(SynthError::BadSpec("at least two bands required"));
        }
        if !(self.wavelength_lo.is_finite()
            && self.wavelength_hi.is_finite()
            && self.wavelength_lo < self.wavelength_hi)
        {
            return Err(SynthError::BadSpec("wavelength_lo must be below wavelength_hi"));
        }
        for &b in &self.planted_bands {
            if b >= self.n_bands {
                return Err(SynthError::PlantedBandOutOfRange { index: b, n_bands: self.n_bands });
            }
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(SynthError::BadSpec("attenuation must lie in (0, 1]"));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(SynthError::BadSpec("noise_sd must be non-negative"));
        }
        if !(self.stem_jitter.is_finite() && self.stem_jitter >= 0.0) {
            return Err(SynthError::BadSpec("stem_jitter must be non-negative"));
        }
        let (lo, hi) = self.lesion_mm_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(SynthError::BadSpec("lesion_mm_range must satisfy 0 <= lo <= hi"));
        }
        if !(self.lesion_quantum_mm.is_finite() && self.lesion_quantum_mm >= 0.0) {
            return Err(SynthError::BadSpec("lesion_quantum_mm must be non-negative"));
        }
        if !(self.band_dropout.is_finite() && (0.0..1.0).contains(&self.band_dropout)) {
            return Err(SynthError::BadSpec("band_dropout must lie in [0, 1)"));
        }
        if self.band_dropout * self.planted_bands.len() as f64 > 1.0 {
            return Err(SynthError::BadSpec(
                "band_dropout times the planted band count must not exceed 1",
            ));
        }
        if !(self.dropout_segment_mm.is_finite() && self.dropout_segment_mm > 0.0) {
            return Err(SynthError::BadSpec("dropout_segment_mm must be positive"));
        }
        if !(self.scale_mm_per_px.is_finite() && self.scale_mm_per_px > 0.0) {
            return Err(SynthError::BadSpec("scale_mm_per_px must be positive"));
        }
        if matches!(self.mode, SynthMode::Localized) {
            // Planted signal must stay off the fixed RGB features, else the
            // "RGB carries no lesion signal" premise breaks. When the axis
            // does not even cover the RGB targets the check is vacuous.
            if let Ok(map) = features::build_band_map(&self.wavelengths(), RGB_TARGETS_NM) {
                for &rgb in &map.rgb_bands {
                    for &p in &self.planted_bands {
                        if rgb.abs_diff(p) <= self.band_halfwidth {
                            return Err(SynthError::PlantedBandOverlapsRgb {
                                band: p,
                                rgb_band: rgb,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Evenly spaced wavelength axis over `[wavelength_lo, wavelength_hi]`.
    pub fn wavelengths(&self) -> Vec<f64> {
        let step = (self.wavelength_hi - self.wavelength_lo) / (self.n_bands - 1) as f64;
        (0..self.n_bands).map(|i| self.wavelength_lo + i as f64 * step).collect()
    }

    /// Expected standard deviation of a patch-mean feature coming from the
    /// per-pixel noise alone (a patch spans all rows by `patch_width` cols).
    pub fn patch_mean_noise_sd(&self, patch_width: usize) -> f64 {
        self.noise_sd / ((self.rows * patch_width) as f64).sqrt()
    }

    /// Attenuation factor applied to band `b` inside a lesion.
    fn infected_factor(&self, b: usize) -> f64 {
        let near_planted =
            self.planted_bands.iter().any(|&p| p.abs_diff(b) <= self.band_halfwidth);
        match self.mode {
            SynthMode::Localized => {
                if near_planted {
                    self.attenuation
                } else {
                    1.0
                }
            }
            SynthMode::Broad => {
                if near_planted {
                    self.attenuation
                } else {
                    1.0 - 0.5 * (1.0 - self.attenuation)
                }
            }
        }
    }
}

/// Vegetation-shaped base reflectance: low in the visible range with a
/// small green bump, a sigmoid red edge near 710 nm, and a near-infrared
/// plateau at 0.55. The coefficients are fixed by this implementation:
///
/// `visible(λ) = 0.18 + 0.07 * exp(-(λ-550)² / (2*40²))`
/// `base(λ) = visible(λ) + (0.55 - visible(λ)) / (1 + exp(-(λ-710)/25))`
pub fn base_reflectance(lambda_nm: f64) -> f64 {
    let visible = 0.18 + 0.07 * (-(lambda_nm - 550.0).powi(2) / (2.0 * 40.0 * 40.0)).exp();
    let edge = 1.0 / (1.0 + (-(lambda_nm - 710.0) / 25.0).exp());
    visible + (0.55 - visible) * edge
}

/// Machine-readable ground truth for a spec (written as truth.json).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub planted_bands: Vec<usize>,
    pub band_halfwidth: usize,
    pub attenuation: f64,
    pub mode: SynthMode,
    pub noise_sd: f64,
    pub stem_jitter: f64,
    pub band_dropout: f64,
    pub dropout_segment_mm: f64,
    pub rows: usize,
    pub cols: usize,
    pub n_bands: usize,
    pub scale_mm_per_px: f64,
    pub seed: u64,
    pub wavelengths: Vec<f64>,
    /// Expected per-band mean of healthy tissue (the base curve).
    pub healthy_band_means: Vec<f64>,
    /// Expected per-band mean inside a lesion segment that expresses the
    /// attenuation (segments skip it at a band with probability
    /// `band_dropout`).
    pub infected_band_means: Vec<f64>,
}

/// Ground truth implied by a spec; pure and allocation-cheap.
pub fn describe(spec: &SynthSpec) -> SynthTruth {
    let wavelengths = spec.wavelengths();
    let healthy: Vec<f64> = wavelengths.iter().map(|&wl| base_reflectance(wl)).collect();
    let infected: Vec<f64> =
        healthy.iter().enumerate().map(|(b, &h)| h * spec.infected_factor(b)).collect();
    SynthTruth {
        planted_bands: spec.planted_bands.clone(),
        band_halfwidth: spec.band_halfwidth,
        attenuation: spec.attenuation,
        mode: spec.mode,
        noise_sd: spec.noise_sd,
        stem_jitter: spec.stem_jitter,
        band_dropout: spec.band_dropout,
        dropout_segment_mm: spec.dropout_segment_mm,
        rows: spec.rows,
        cols: spec.cols,
        n_bands: spec.n_bands,
        scale_mm_per_px: spec.scale_mm_per_px,
        seed: spec.seed,
        wavelengths,
        healthy_band_means: healthy,
        infected_band_means: infected,
    }
}

/// Smooth zero-mean jitter profile over bands. Each band mixes
/// `JITTER_BUMPS` Gaussian bumps with standard-normal coefficients,
/// normalized so the marginal standard deviation is `sd` at every band.
fn jitter_profile(n_bands: usize, sd: f64, coefs: &[f64]) -> Vec<f64> {
    let m = coefs.len();
    let width = n_bands as f64 / (2.0 * m as f64);
    let centers: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * n_bands as f64 / m as f64).collect();
    (0..n_bands)
        .map(|b| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (c, &mu) in coefs.iter().zip(&centers) {
                let phi = (-(b as f64 - mu).powi(2) / (2.0 * width * width)).exp();
                num += c * phi;
                den += phi * phi;
            }
            sd * num / den.sqrt()
        })
        .collect()
}

/// Generates the dataset under `out_dir`: one cube file per stem,
/// `manifest.csv`, and `truth.json`. Returns the manifest.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let wavelengths = spec.wavelengths();
    let base: Vec<f64> = wavelengths.iter().map(|&wl| base_reflectance(wl)).collect();
    let factors: Vec<f64> = (0..spec.n_bands).map(|b| spec.infected_factor(b)).collect();

    let mut records = Vec::with_capacity(spec.n_stems_train + spec.n_stems_test);
    for global in 0..spec.n_stems_train + spec.n_stems_test {
        let split = if global < spec.n_stems_train { Split::Train } else { Split::Test };
        let record = generate_stem(spec, out_dir, global, split, &wavelengths, &base, &factors)?;
        records.push(record);
    }

    cube_io::write_manifest(spec.scale_mm_per_px, &records, &out_dir.join("manifest.csv"))?;
    let truth = serde_json::to_string_pretty(&describe(spec))?;
    std::fs::write(out_dir.join("truth.json"), truth + "\n")?;
    Ok(Manifest {
        scale_mm_per_px: spec.scale_mm_per_px,
        records,
        base_dir: out_dir.to_path_buf(),
    })
}

fn generate_stem(
    spec: &SynthSpec,
    out_dir: &Path,
    global: usize,
    split: Split,
    wavelengths: &[f64],
    base: &[f64],
    factors: &[f64],
) -> Result<StemRecord, SynthError> {
    let mut rng = stream_rng(derive_seed(spec.seed, NS_STEM), global as u64);
    let treatment = if global % 2 == 0 { Treatment::Inoculated } else { Treatment::Mock };
    let inoculation_end =
        if global % 4 < 2 { InoculationEnd::LowCol } else { InoculationEnd::HighCol };
    let dai = DAI_CYCLE[global % DAI_CYCLE.len()];

    // Lesion length in whole pixels so patch labels match pixel truth
    // exactly. Low-dai stems get proportionally shorter lesions.
    let lesion_px = if treatment == Treatment::Inoculated {
        let (lo, hi) = spec.lesion_mm_range;
        let hi_dai = lo + (hi - lo) * dai as f64 / *DAI_CYCLE.last().unwrap() as f64;
        let mut mm = rng.random_range(lo..=hi_dai);
        if spec.lesion_quantum_mm > 0.0 {
            mm = spec.lesion_quantum_mm * (mm / spec.lesion_quantum_mm).round();
        }
        ((mm / spec.scale_mm_per_px).round() as usize).min(spec.cols)
    } else {
        0
    };
    let interior_mm = lesion_px as f64 * spec.scale_mm_per_px;

    let coefs: Vec<f64> = (0..JITTER_BUMPS).map(|_| rng.sample(StandardNormal)).collect();
    let jitter = jitter_profile(spec.n_bands, spec.stem_jitter, &coefs);
    let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");

    // Expression dropout (localized mode): split the lesion into segments of
    // `dropout_segment_mm` from the inoculated end; each segment skips the
    // attenuation at one planted band with probability `band_dropout` per
    // band, never at two or more. One row of attenuation factors per
    // segment; bands covered by several planted windows dip if any covering
    // window expresses.
    let n_planted = spec.planted_bands.len();
    let n_segments = if spec.mode == SynthMode::Localized
        && spec.band_dropout > 0.0
        && lesion_px > 0
        && n_planted > 0
    {
        (interior_mm / spec.dropout_segment_mm).ceil() as usize
    } else {
        0
    };
    let expressed: Vec<bool> = (0..n_segments)
        .flat_map(|_| {
            let u: f64 = rng.random();
            let skipped = (u < spec.band_dropout * n_planted as f64)
                .then(|| (u / spec.band_dropout) as usize);
            (0..n_planted).map(move |i| Some(i) != skipped)
        })
        .collect();
    let seg_factors: Vec<Vec<f64>> = (0..n_segments)
        .map(|s| {
            (0..spec.n_bands)
                .map(|b| {
                    let hit = spec.planted_bands.iter().enumerate().any(|(i, &p)| {
                        p.abs_diff(b) <= spec.band_halfwidth && expressed[s * n_planted + i]
                    });
                    if hit {
                        spec.attenuation
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();

    let stem_id = format!("{}_{global:03}", split.as_str());
    let cube_path = format!("{stem_id}.hsc");
    let mut writer =
        CubeWriter::create(&out_dir.join(&cube_path), spec.rows, spec.cols, wavelengths)?;
    let mut row_buf = vec![0f32; spec.cols * spec.n_bands];
    let mut clamped = 0usize;
    for _row in 0..spec.rows {
        for col in 0..spec.cols {
            let in_lesion = match inoculation_end {
                InoculationEnd::LowCol => col < lesion_px,
                InoculationEnd::HighCol => col >= spec.cols - lesion_px,
            };
            let lesion_factors: &[f64] = if in_lesion && !seg_factors.is_empty() {
                let dist_px = match inoculation_end {
                    InoculationEnd::LowCol => col,
                    InoculationEnd::HighCol => spec.cols - 1 - col,
                };
                let seg =
                    ((dist_px as f64 * spec.scale_mm_per_px) / spec.dropout_segment_mm) as usize;
                &seg_factors[seg.min(seg_factors.len() - 1)]
            } else {
                factors
            };
            for b in 0..spec.n_bands {
                let clean =
                    base[b] * (1.0 + jitter[b]) * if in_lesion { lesion_factors[b] } else { 1.0 };
                let v = clean + noise.sample(&mut rng);
                let c = v.clamp(0.0, 1.0);
                if c != v {
                    clamped += 1;
                }
                row_buf[col * spec.n_bands + b] = c as f32;
            }
        }
        writer.write_samples(&row_buf)?;
    }
    writer.finish()?;

    let total = spec.rows * spec.cols * spec.n_bands;
    if clamped * 1000 >= total {
        return Err(SynthError::TooManyClamped { stem_id, clamped, total });
    }

    Ok(StemRecord {
        stem_id,
        cube_path,
        genotype: format!("g{}", global % 4),
        treatment,
        dai,
        interior_mm: Some(interior_mm),
        exterior_mm: None,
        dead_mm: None,
        replication: (global / 4 + 1) as u32,
        split,
        inoculation_end,
    })
}

/// Convenience: where [`generate`] writes the manifest.
pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.csv")
}
