//! Patches, labels and band-mean features.
//!
//! A stem image is tiled into fixed-width column patches starting at the
//! inoculated end; the column remainder at the far end is dropped. A patch
//! is labeled infected when its distance interval from the inoculation
//! point intersects the measured interior lesion extent, so infected
//! patches always form a contiguous prefix of the patch indices.
//!
//! The feature of a patch at one band is the mean reflectance over all its
//! pixels; a feature vector stacks those means for a chosen band list,
//! conventionally the three fixed RGB bands first.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube_io::{DataCube, StemRecord};
use crate::num::Real;

/// Wavelength targets (nm) of the fixed blue, green and red bands.
pub const RGB_TARGETS_NM: [f64; 3] = [475.56, 548.91, 652.14];

/// Patch class. `Infected` is the positive class everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Healthy,
    Infected,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("wavelength axis is empty")]
    EmptyAxis,
    #[error("target {target} nm lies outside the axis [{lo}, {hi}] nm")]
    TargetOutsideAxis { target: f64, lo: f64, hi: f64 },
    #[error("patch width must be at least 1 pixel")]
    ZeroPatchWidth,
    #[error("image of {cols} column(s) is narrower than one {patch_width}-column patch")]
    ImageTooNarrow { cols: usize, patch_width: usize },
    #[error("scale_mm_per_px must be positive and finite, got {value}")]
    NonPositiveScale { value: f64 },
    #[error("band list is empty")]
    EmptyBands,
    #[error("band index {band} out of range for {n_bands} bands")]
    BandOutOfRange { band: usize, n_bands: usize },
    #[error("band index {band} listed twice")]
    DuplicateBand { band: usize },
    #[error("patch of stem {stem_id:?} spans columns up to {end}, image has {cols}")]
    PatchOutOfBounds { stem_id: String, end: usize, cols: usize },
}

/// Indices of the bands nearest the fixed RGB wavelength targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMap {
    /// Blue, green, red band indices in that order.
    pub rgb_bands: [usize; 3],
}

/// Maps each target wavelength to the nearest band of the axis, scanning
/// every band; ties resolve to the lower index. Targets outside the axis
/// span are errors. On coarse axes two targets may map to the same index.
pub fn build_band_map(wavelengths: &[f64], targets: [f64; 3]) -> Result<BandMap, FeatureError> {
    let (&lo, &hi) = match (wavelengths.first(), wavelengths.last()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(FeatureError::EmptyAxis),
    };
    let mut rgb_bands = [0usize; 3];
    for (slot, &target) in targets.iter().enumerate() {
        if target < lo || target > hi {
            return Err(FeatureError::TargetOutsideAxis { target, lo, hi });
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &w) in wavelengths.iter().enumerate() {
            let d = (w - target).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        rgb_bands[slot] = best;
    }
    Ok(BandMap { rgb_bands })
}

/// One column patch of a stem image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub stem_id: String,
    /// 0 adjoins the inoculation point; indices grow away from it.
    pub patch_index: usize,
    /// Image columns covered, half-open.
    pub col_range: Range<usize>,
    pub label: Label,
}

/// Labels one patch: infected when its millimetre interval from the
/// inoculation point intersects `[0, interior_mm)`. Absent lesion lengths
/// count as 0 mm, so mock stems label healthy throughout.
pub fn label_patch(
    patch_index: usize,
    patch_width: usize,
    record: &StemRecord,
    scale_mm_per_px: f64,
) -> Label {
    let start_mm = patch_index as f64 * patch_width as f64 * scale_mm_per_px;
    if start_mm < record.infected_extent_mm() {
        Label::Infected
    } else {
        Label::Healthy
    }
}

/// Tiles `floor(cols / patch_width)` labeled patches over an image,
/// starting at the record's inoculation end. The remainder, if any, is
/// dropped at the far end.
pub fn make_patches(
    cols: usize,
    record: &StemRecord,
    patch_width: usize,
    scale_mm_per_px: f64,
) -> Result<Vec<Patch>, FeatureError> {
    if patch_width == 0 {
        return Err(FeatureError::ZeroPatchWidth);
    }
    if cols < patch_width {
        return Err(FeatureError::ImageTooNarrow { cols, patch_width });
    }
    if !scale_mm_per_px.is_finite() || scale_mm_per_px <= 0.0 {
        return Err(FeatureError::NonPositiveScale { value: scale_mm_per_px });
    }
    let n = cols / patch_width;
    let mut patches = Vec::with_capacity(n);
    for i in 0..n {
        let start = match record.inoculation_end {
            crate::cube_io::InoculationEnd::LowCol => i * patch_width,
            crate::cube_io::InoculationEnd::HighCol => cols - (i + 1) * patch_width,
        };
        patches.push(Patch {
            stem_id: record.stem_id.clone(),
            patch_index: i,
            col_range: start..start + patch_width,
            label: label_patch(i, patch_width, record, scale_mm_per_px),
        });
    }
    Ok(patches)
}

/// Band means of one patch plus its training label and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct FeatureVector<F: Real> {
    /// One mean per requested band, in request order.
    pub values: Vec<F>,
    pub label: Label,
    pub stem_id: String,
    pub patch_index: usize,
}

/// Options for feature extraction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FeatureOptions {
    /// When set, only pixels whose full-spectrum mean reflectance exceeds
    /// the threshold contribute to patch means (crude foreground mask).
    /// A patch with no pixel above the threshold falls back to all pixels.
    pub mask_threshold: Option<f32>,
}

/// Extracts per-patch band-mean feature vectors for the given bands.
pub fn extract_features<F: Real>(
    cube: &DataCube,
    patches: &[Patch],
    band_indices: &[usize],
) -> Result<Vec<FeatureVector<F>>, FeatureError> {
    extract_features_with(cube, patches, band_indices, &FeatureOptions::default())
}

/// [`extract_features`] with explicit options.
pub fn extract_features_with<F: Real>(
    cube: &DataCube,
    patches: &[Patch],
    band_indices: &[usize],
    opts: &FeatureOptions,
) -> Result<Vec<FeatureVector<F>>, FeatureError> {
    validate_bands(band_indices, cube.n_bands())?;
    let mut out = Vec::with_capacity(patches.len());
    for patch in patches {
        if patch.col_range.end > cube.cols() {
            return Err(FeatureError::PatchOutOfBounds {
                stem_id: patch.stem_id.clone(),
                end: patch.col_range.end,
                cols: cube.cols(),
            });
        }
        let means = patch_band_means(cube, patch, band_indices, opts.mask_threshold);
        out.push(FeatureVector {
            values: means.into_iter().map(F::from_f64_lossy).collect(),
            label: patch.label,
            stem_id: patch.stem_id.clone(),
            patch_index: patch.patch_index,
        });
    }
    Ok(out)
}

fn validate_bands(band_indices: &[usize], n_bands: usize) -> Result<(), FeatureError> {
    if band_indices.is_empty() {
        return Err(FeatureError::EmptyBands);
    }
    let mut seen = vec![false; n_bands];
    for &b in band_indices {
        if b >= n_bands {
            return Err(FeatureError::BandOutOfRange { band: b, n_bands });
        }
        if seen[b] {
            return Err(FeatureError::DuplicateBand { band: b });
        }
        seen[b] = true;
    }
    Ok(())
}

/// Means are accumulated in f64 regardless of the feature scalar so the
/// result does not depend on pixel count magnitudes.
fn patch_band_means(
    cube: &DataCube,
    patch: &Patch,
    band_indices: &[usize],
    mask_threshold: Option<f32>,
) -> Vec<f64> {
    let mut sums = vec![0f64; band_indices.len()];
    let mut count = 0usize;
    for row in 0..cube.rows() {
        for col in patch.col_range.clone() {
            let spectrum = cube.spectrum(row, col);
            if let Some(t) = mask_threshold {
                let mean: f64 = spectrum.iter().map(|&v| v as f64).sum::<f64>()
                    / spectrum.len() as f64;
                if mean <= t as f64 {
                    continue;
                }
            }
            for (slot, &b) in band_indices.iter().enumerate() {
                sums[slot] += spectrum[b] as f64;
            }
            count += 1;
        }
    }
    if count == 0 {
        // Mask rejected every pixel; fall back to the unmasked mean.
        return patch_band_means(cube, patch, band_indices, None);
    }
    sums.iter().map(|s| s / count as f64).collect()
}

/// Mean spectra per label, averaged over patch-mean spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCurves {
    pub wavelengths: Vec<f64>,
    /// Absent when no patch of the label contributed.
    pub healthy: Option<Vec<f64>>,
    pub infected: Option<Vec<f64>>,
}

/// Streaming accumulator for [`LabelCurves`] across many cubes.
pub struct SpectrumAccumulator {
    wavelengths: Vec<f64>,
    sums: [Vec<f64>; 2],
    counts: [usize; 2],
}

impl SpectrumAccumulator {
    pub fn new(wavelengths: Vec<f64>) -> Self {
        let n = wavelengths.len();
        Self { wavelengths, sums: [vec![0.0; n], vec![0.0; n]], counts: [0, 0] }
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// Adds one patch's mean spectrum under its label.
    pub fn add_patch(&mut self, cube: &DataCube, patch: &Patch) -> Result<(), FeatureError> {
        let all_bands: Vec<usize> = (0..cube.n_bands()).collect();
        if cube.n_bands() != self.wavelengths.len() {
            return Err(FeatureError::BandOutOfRange {
                band: self.wavelengths.len(),
                n_bands: cube.n_bands(),
            });
        }
        if patch.col_range.end > cube.cols() {
            return Err(FeatureError::PatchOutOfBounds {
                stem_id: patch.stem_id.clone(),
                end: patch.col_range.end,
                cols: cube.cols(),
            });
        }
        let means = patch_band_means(cube, patch, &all_bands, None);
        let slot = match patch.label {
            Label::Healthy => 0,
            Label::Infected => 1,
        };
        for (s, m) in self.sums[slot].iter_mut().zip(means) {
            *s += m;
        }
        self.counts[slot] += 1;
        Ok(())
    }

    pub fn finish(self) -> LabelCurves {
        let curve = |slot: usize| {
            (self.counts[slot] > 0).then(|| {
                self.sums[slot].iter().map(|s| s / self.counts[slot] as f64).collect()
            })
        };
        LabelCurves { healthy: curve(0), infected: curve(1), wavelengths: self.wavelengths }
    }
}

/// [`LabelCurves`] over the patches of a single cube.
pub fn mean_spectrum(cube: &DataCube, patches: &[Patch]) -> Result<LabelCurves, FeatureError> {
    let mut acc = SpectrumAccumulator::new(cube.wavelengths().to_vec());
    for p in patches {
        acc.add_patch(cube, p)?;
    }
    Ok(acc.finish())
}
