//! End-to-end band selection and evaluation workflows.
//!
//! Wires the other modules together: loads cubes listed in a manifest,
//! extracts patch-mean features at every band once, then runs the genetic
//! search where each candidate band set is scored by cross-validated F1
//! of the infected class on the training split. The winning set (fixed
//! RGB bands first, then the selected bands ascending) trains one final
//! model on all training patches, which is then scored on the test split
//! at patch level and stem level.
//!
//! A stem counts as infected when at least one of its patches is, and the
//! predicted disease length runs from the inoculation end to the far edge
//! of the farthest infected patch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube_io::{read_cube, CubeError, Manifest, Split};
use crate::eval::{kfold_cv, stratified_folds, ConfusionMatrix, EvalError, EvalReport, FoldUnit};
use crate::features::{
    build_band_map, extract_features_with, make_patches, FeatureError, FeatureOptions,
    FeatureVector, Label, RGB_TARGETS_NM,
};
use crate::ga::{self, BandDomain, GaConfig, GaError, GenStat};
use crate::num::Real;
use crate::rng::derive_seed;
use crate::svm::{train, SvmConfig, SvmError, SvmModel};

/// Seed namespace for the cross-validation fold layout.
const NS_FOLDS: u64 = 0xA7;
/// Seed namespace for the final full-training-set model.
const NS_FINAL: u64 = 0xA8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid selection spec: {0}")]
    BadSpec(&'static str),
    #[error("manifest has no {0} stems")]
    MissingSplit(&'static str),
    #[error("stem {stem_id}: wavelength axis differs from the first cube")]
    InconsistentAxes { stem_id: String },
    #[error("band {band} out of range for {n_bands} bands")]
    BandOutOfRange { band: usize, n_bands: usize },
    #[error("empty band list")]
    EmptyBandList,
    #[error("stem {stem_id} yields no patches at width {patch_width}")]
    NoPatches { stem_id: String, patch_width: usize },
    #[error("no patch predictions for stem")]
    EmptyStem,
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Ga(#[from] GaError),
}

/// Everything the selection workflow needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    /// Variable bands to select (the GA's gene count).
    pub k: usize,
    /// Prepend the fixed RGB-nearest bands to every candidate.
    pub include_rgb: bool,
    pub rgb_targets: [f64; 3],
    pub ga: GaConfig,
    pub svm: SvmConfig,
    pub cv_folds: usize,
    pub fold_unit: FoldUnit,
    /// Patch width in pixels; patches span all rows.
    pub patch_width: usize,
    /// Optional background mask threshold forwarded to feature extraction.
    pub mask_threshold: Option<f32>,
}

impl Default for SelectionSpec {
    fn default() -> Self {
        Self {
            k: 3,
            include_rgb: true,
            rgb_targets: RGB_TARGETS_NM,
            ga: GaConfig::default(),
            svm: SvmConfig::default(),
            cv_folds: 10,
            fold_unit: FoldUnit::Patch,
            patch_width: 64,
            mask_threshold: None,
        }
    }
}

impl SelectionSpec {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::BadSpec("k must be at least 1"));
        }
        if self.cv_folds < 2 {
            return Err(PipelineError::BadSpec("cv_folds must be at least 2"));
        }
        if self.patch_width == 0 {
            return Err(PipelineError::BadSpec("patch_width must be at least 1"));
        }
        Ok(())
    }
}

/// Per-stem bookkeeping carried through evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemInfo {
    pub stem_id: String,
    pub dai: u32,
    /// Ground-truth interior lesion length in mm.
    pub actual_mm: f64,
    pub n_patches: usize,
}

/// One split's patch features (at every band) plus stem metadata.
#[derive(Debug, Clone)]
pub struct SplitData<F: Real> {
    pub features: Vec<FeatureVector<F>>,
    pub stems: Vec<StemInfo>,
}

/// Feature tables for both splits sharing one wavelength axis.
#[derive(Debug, Clone)]
pub struct DataSet<F: Real> {
    pub wavelengths: Vec<f64>,
    pub scale_mm_per_px: f64,
    pub patch_width: usize,
    pub train: SplitData<F>,
    pub test: SplitData<F>,
}

/// Loads every cube in the manifest and extracts full-band patch means.
/// Cubes are read one at a time; only the patch table stays in memory.
pub fn load_dataset<F: Real>(
    manifest: &Manifest,
    patch_width: usize,
    mask_threshold: Option<f32>,
) -> Result<DataSet<F>, PipelineError> {
    let opts = FeatureOptions { mask_threshold };
    let mut wavelengths: Option<Vec<f64>> = None;
    let mut train = SplitData { features: Vec::new(), stems: Vec::new() };
    let mut test = SplitData { features: Vec::new(), stems: Vec::new() };
    for rec in &manifest.records {
        let cube = read_cube(&manifest.cube_file(rec))?;
        match &wavelengths {
            None => wavelengths = Some(cube.wavelengths().to_vec()),
            Some(axis) => {
                if cube.wavelengths() != &axis[..] {
                    return Err(PipelineError::InconsistentAxes {
                        stem_id: rec.stem_id.clone(),
                    });
                }
            }
        }
        let patches = make_patches(cube.cols(), rec, patch_width, manifest.scale_mm_per_px)?;
        if patches.is_empty() {
            return Err(PipelineError::NoPatches {
                stem_id: rec.stem_id.clone(),
                patch_width,
            });
        }
        let all_bands: Vec<usize> = (0..cube.n_bands()).collect();
        let feats = extract_features_with(&cube, &patches, &all_bands, &opts)?;
        let info = StemInfo {
            stem_id: rec.stem_id.clone(),
            dai: rec.dai,
            actual_mm: rec.infected_extent_mm(),
            n_patches: patches.len(),
        };
        let side = match rec.split {
            Split::Train => &mut train,
            Split::Test => &mut test,
        };
        side.features.extend(feats);
        side.stems.push(info);
    }
    let wavelengths = wavelengths.ok_or(PipelineError::MissingSplit("any"))?;
    Ok(DataSet {
        wavelengths,
        scale_mm_per_px: manifest.scale_mm_per_px,
        patch_width,
        train,
        test,
    })
}

/// Projects full-band feature vectors onto `bands` (in the given order).
pub fn feature_subset<F: Real>(
    features: &[FeatureVector<F>],
    bands: &[usize],
) -> Vec<FeatureVector<F>> {
    features
        .iter()
        .map(|f| FeatureVector {
            values: bands.iter().map(|&b| f.values[b]).collect(),
            label: f.label,
            stem_id: f.stem_id.clone(),
            patch_index: f.patch_index,
        })
        .collect()
}

/// Complete record of one selection run, serializable as selection.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Final ordered band set: RGB first when included, then the
    /// selected bands ascending.
    pub band_indices: Vec<usize>,
    pub band_wavelengths: Vec<f64>,
    /// Which restart produced the winner.
    pub best_run: usize,
    /// Cross-validated training F1 report at the winning set.
    pub train_cv_report: EvalReport,
    /// Patch-level test report.
    pub test_report: EvalReport,
    /// Stem-level test report.
    pub stem_report: EvalReport,
    /// Per-generation search trace across all runs.
    pub history: Vec<GenStat>,
    /// Spec echo so the run is reproducible from its own output.
    pub config: SelectionSpec,
    pub seed: u64,
}

/// Scores `variable_bands` (plus the fixed prefix) by k-fold
/// cross-validated F1 on the training patches. Pure given its inputs.
fn cv_fitness<F: Real>(
    data: &DataSet<F>,
    spec: &SelectionSpec,
    fixed: &[usize],
    variable_bands: &[usize],
    fold_seed: u64,
) -> Result<EvalReport, EvalError> {
    let mut bands = fixed.to_vec();
    bands.extend_from_slice(variable_bands);
    let subset = feature_subset(&data.train.features, &bands);
    kfold_cv(&subset, spec.cv_folds, spec.fold_unit, &spec.svm, fold_seed)
}

/// Runs the full selection workflow on a loaded dataset.
pub fn select_bands<F: Real>(
    data: &DataSet<F>,
    spec: &SelectionSpec,
) -> Result<SelectionResult, PipelineError> {
    spec.validate()?;
    if data.train.stems.is_empty() {
        return Err(PipelineError::MissingSplit("train"));
    }
    if data.test.stems.is_empty() {
        return Err(PipelineError::MissingSplit("test"));
    }
    let n_bands = data.wavelengths.len();
    let fixed: Vec<usize> = if spec.include_rgb {
        build_band_map(&data.wavelengths, spec.rgb_targets)?.rgb_bands.to_vec()
    } else {
        Vec::new()
    };
    let fold_seed = derive_seed(spec.ga.seed, NS_FOLDS);
    // Fold layout and class feasibility do not depend on the band set, so
    // one up-front check keeps fitness failures out of the search loop.
    stratified_folds(&data.train.features, spec.cv_folds, spec.fold_unit, fold_seed)?;

    let domain = BandDomain::new(n_bands, fixed.clone())?;
    let ga_config = GaConfig { k: spec.k, ..spec.ga };
    let outcome = ga::multi_run(&domain, &ga_config, |bands: &[usize]| {
        cv_fitness(data, spec, &fixed, bands, fold_seed)
            .map(|r| r.f1)
            .map_err(|e| Box::new(e) as ga::FitnessError)
    })?;

    let mut band_indices = fixed.clone();
    band_indices.extend(outcome.best.sorted_bands());
    let train_cv_report =
        cv_fitness(data, spec, &fixed, &outcome.best.sorted_bands(), fold_seed)?;
    let evaluation = evaluate_bands(data, &band_indices, &spec.svm, spec.ga.seed)?;

    Ok(SelectionResult {
        band_wavelengths: band_indices.iter().map(|&b| data.wavelengths[b]).collect(),
        band_indices,
        best_run: outcome.best_run,
        train_cv_report,
        test_report: evaluation.patch_report,
        stem_report: evaluation.stem_report,
        history: outcome.history,
        config: spec.clone(),
        seed: spec.ga.seed,
    })
}

/// One test stem's outcome: classification plus disease length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemOutcome {
    pub stem_id: String,
    pub dai: u32,
    pub truth: Label,
    pub predicted: Label,
    pub actual_mm: f64,
    pub predicted_mm: f64,
}

/// Result of training on the train split and scoring the test split at a
/// fixed band set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub band_indices: Vec<usize>,
    pub band_wavelengths: Vec<f64>,
    pub patch_report: EvalReport,
    pub stem_report: EvalReport,
    /// Stem-level report over dai=3 stems; absent when none exist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dai3_stem_report: Option<EvalReport>,
    pub stems: Vec<StemOutcome>,
}

/// Trains one model at `bands` on all training patches and evaluates the
/// test split at patch and stem level.
pub fn evaluate_bands<F: Real>(
    data: &DataSet<F>,
    bands: &[usize],
    svm: &SvmConfig,
    seed: u64,
) -> Result<Evaluation, PipelineError> {
    if bands.is_empty() {
        return Err(PipelineError::EmptyBandList);
    }
    let n_bands = data.wavelengths.len();
    for &b in bands {
        if b >= n_bands {
            return Err(PipelineError::BandOutOfRange { band: b, n_bands });
        }
    }
    if data.train.stems.is_empty() {
        return Err(PipelineError::MissingSplit("train"));
    }
    if data.test.stems.is_empty() {
        return Err(PipelineError::MissingSplit("test"));
    }
    let train_subset = feature_subset(&data.train.features, bands);
    let test_subset = feature_subset(&data.test.features, bands);
    let model: SvmModel<F> = train(&train_subset, svm, derive_seed(seed, NS_FINAL))?;

    let mut patch_matrix = ConfusionMatrix::default();
    let mut by_stem: HashMap<&str, Vec<(usize, Label, Label)>> = HashMap::new();
    for f in &test_subset {
        let pred = model.predict(&f.values);
        patch_matrix.observe(f.label, pred);
        by_stem.entry(f.stem_id.as_str()).or_default().push((f.patch_index, f.label, pred));
    }

    let mut stem_matrix = ConfusionMatrix::default();
    let mut dai3_matrix = ConfusionMatrix::default();
    let mut any_dai3 = false;
    let mut stems = Vec::with_capacity(data.test.stems.len());
    for info in &data.test.stems {
        let mut patches = by_stem.remove(info.stem_id.as_str()).unwrap_or_default();
        patches.sort_unstable_by_key(|&(idx, _, _)| idx);
        let truths: Vec<Label> = patches.iter().map(|&(_, t, _)| t).collect();
        let preds: Vec<Label> = patches.iter().map(|&(_, _, p)| p).collect();
        let truth = classify_stem(&truths)?;
        let predicted = classify_stem(&preds)?;
        stem_matrix.observe(truth, predicted);
        if info.dai == 3 {
            any_dai3 = true;
            dai3_matrix.observe(truth, predicted);
        }
        stems.push(StemOutcome {
            stem_id: info.stem_id.clone(),
            dai: info.dai,
            truth,
            predicted,
            actual_mm: info.actual_mm,
            predicted_mm: predict_length(&preds, data.patch_width, data.scale_mm_per_px),
        });
    }

    Ok(Evaluation {
        band_indices: bands.to_vec(),
        band_wavelengths: bands.iter().map(|&b| data.wavelengths[b]).collect(),
        patch_report: patch_matrix.metrics()?,
        stem_report: stem_matrix.metrics()?,
        dai3_stem_report: if any_dai3 { Some(dai3_matrix.metrics()?) } else { None },
        stems,
    })
}

/// A stem is infected when at least one of its patches is.
pub fn classify_stem(patch_predictions: &[Label]) -> Result<Label, PipelineError> {
    if patch_predictions.is_empty() {
        return Err(PipelineError::EmptyStem);
    }
    Ok(if patch_predictions.contains(&Label::Infected) {
        Label::Infected
    } else {
        Label::Healthy
    })
}

/// Disease length from the inoculation end to the far edge of the
/// farthest infected patch: `(max infected index + 1) * width * scale`,
/// or 0 when no patch is infected. Predictions must be ordered by patch
/// index from the inoculation end.
pub fn predict_length(
    patch_predictions: &[Label],
    patch_width: usize,
    scale_mm_per_px: f64,
) -> f64 {
    patch_predictions
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == Label::Infected)
        .map(|(i, _)| i)
        .max()
        .map_or(0.0, |i| (i + 1) as f64 * patch_width as f64 * scale_mm_per_px)
}

/// Pearson correlation coefficient of paired samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples required");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}
