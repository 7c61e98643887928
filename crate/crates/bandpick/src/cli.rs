//! Command-line interface: dataset generation, band selection,
//! evaluation, disease-length prediction, and spectrum export.
//!
//! Every command is a pure function of its flags, input files, and the
//! master seed; reruns write byte-identical outputs. Exit codes: 0 on
//! success, 1 on runtime or I/O failures, 2 on usage errors. All errors
//! print as a single line on standard error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::cube_io::{read_cube, read_manifest, Manifest};
use crate::eval::FoldUnit;
use crate::features::{build_band_map, make_patches, SpectrumAccumulator, RGB_TARGETS_NM};
use crate::ga::{GaConfig, GaError};
use crate::pipeline::{
    evaluate_bands, load_dataset, select_bands, DataSet, Evaluation, PipelineError,
    SelectionResult, SelectionSpec,
};
use crate::svm::{SvmConfig, SvmError};
use crate::synth::{self, SynthMode, SynthSpec, SynthError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Flag-derived problems exit 2; everything else is a runtime failure.
fn classify_pipeline(e: PipelineError) -> CliError {
    match &e {
        PipelineError::BadSpec(_)
        | PipelineError::EmptyBandList
        | PipelineError::BandOutOfRange { .. }
        | PipelineError::Ga(GaError::BadConfig(_))
        | PipelineError::Ga(GaError::Infeasible { .. })
        | PipelineError::Ga(GaError::ExcludedOutOfRange { .. })
        | PipelineError::Svm(SvmError::BadConfig(_)) => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

fn classify_synth(e: SynthError) -> CliError {
    match &e {
        SynthError::BadSpec(_)
        | SynthError::PlantedBandOutOfRange { .. }
        | SynthError::PlantedBandOverlapsRgb { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Runtime(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bandpick",
    version,
    about = "Minimal discriminative band selection for hyperspectral stem images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Maximum concurrent fitness evaluations (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known discriminative bands.
    GenSynth(GenSynthArgs),
    /// Search for the most discriminative band combination.
    SelectBands(SelectArgs),
    /// Train at a fixed band set and report test metrics.
    Evaluate(EvalArgs),
    /// Predict per-stem disease lengths with a fixed band set.
    PredictLength(EvalArgs),
    /// Export mean per-class reflectance curves.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Localized,
    Broad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FoldUnitArg {
    Patch,
    Stem,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 24)]
    pub stems_train: usize,
    #[arg(long, default_value_t = 12)]
    pub stems_test: usize,
    #[arg(long, default_value_t = 500)]
    pub rows: usize,
    #[arg(long, default_value_t = 1600)]
    pub cols: usize,
    #[arg(long, default_value_t = 240)]
    pub n_bands: usize,
    #[arg(long, default_value_t = 382.0)]
    pub wavelength_lo: f64,
    #[arg(long, default_value_t = 1032.0)]
    pub wavelength_hi: f64,
    /// Comma-separated band indices carrying the infection signal
    /// (required in localized mode).
    #[arg(long, value_delimiter = ',')]
    pub planted_bands: Option<Vec<usize>>,
    /// Signal half-width in band indices around each planted band.
    #[arg(long, default_value_t = 2)]
    pub halfwidth: usize,
    /// Infected reflectance multiplier at planted bands.
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise_sd: f64,
    /// Per-stem smooth spectral variation (per-band standard deviation).
    #[arg(long, default_value_t = 0.1)]
    pub stem_jitter: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Localized)]
    pub mode: ModeArg,
    /// Shortest interior lesion in mm.
    #[arg(long, default_value_t = 16.0)]
    pub lesion_min: f64,
    /// Longest interior lesion in mm.
    #[arg(long, default_value_t = 70.0)]
    pub lesion_max: f64,
    /// Lesion lengths snap to multiples of this many mm (0 = continuous).
    #[arg(long, default_value_t = 16.0)]
    pub lesion_quantum: f64,
    /// Per-band probability that a lesion segment skips the attenuation
    /// at one planted band; at most one band skips per segment (localized
    /// mode).
    #[arg(long, default_value_t = 0.25)]
    pub band_dropout: f64,
    /// Length in mm of the independently expressed lesion segments.
    #[arg(long, default_value_t = 16.0)]
    pub dropout_segment: f64,
    /// Spatial calibration in mm per pixel.
    #[arg(long, default_value_t = 0.25)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Patch width in pixels (patches span all rows).
    #[arg(long, default_value_t = 64)]
    pub patch_width: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub svm_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub svm_gamma: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub svm_tol: f64,
    /// Treat pixels below this reflectance as background.
    #[arg(long)]
    pub mask_threshold: Option<f32>,
}

impl ModelArgs {
    fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm_c,
            gamma: self.svm_gamma,
            tol: self.svm_tol,
            ..SvmConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Variable bands to select on top of the fixed RGB bands.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    /// Independent restarts; the best run wins.
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.8)]
    pub crossover: f64,
    #[arg(long, default_value_t = 0.2)]
    pub mutation: f64,
    #[arg(long, default_value_t = 2)]
    pub elite: usize,
    #[arg(long, default_value_t = 50)]
    pub stall_window: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub stall_tol: f64,
    #[arg(long, default_value_t = 0.0)]
    pub laplace_a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub laplace_b: f64,
    #[arg(long, default_value_t = 4.0)]
    pub power_p: f64,
    /// Search without the fixed RGB prefix.
    #[arg(long)]
    pub no_rgb: bool,
    #[arg(long, default_value_t = 10)]
    pub cv_folds: usize,
    #[arg(long, value_enum, default_value_t = FoldUnitArg::Patch)]
    pub fold_unit: FoldUnitArg,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub source: BandSource,
    #[command(flatten)]
    pub model: ModelArgs,
}

/// Where the evaluation band set comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct BandSource {
    /// "rgb" or a comma-separated list of band indices.
    #[arg(long)]
    pub bands: Option<String>,
    /// Reuse the band set from a band-selection output file.
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub patch_width: usize,
}

/// Runs a parsed invocation; flag parsing itself is clap's job.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(runtime)?;
    }
    std::fs::create_dir_all(&cli.out).map_err(runtime)?;
    match &cli.command {
        Command::GenSynth(args) => cmd_gen_synth(&cli, args),
        Command::SelectBands(args) => cmd_select(&cli, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, args),
        Command::PredictLength(args) => cmd_predict_length(&cli, args),
        Command::Spectrum(args) => cmd_spectrum(&cli, args),
    }
}

fn cmd_gen_synth(cli: &Cli, args: &GenSynthArgs) -> Result<(), CliError> {
    let mode = match args.mode {
        ModeArg::Localized => SynthMode::Localized,
        ModeArg::Broad => SynthMode::Broad,
    };
    let planted_bands = match (&args.planted_bands, mode) {
        (None, SynthMode::Localized) => {
            return Err(CliError::Usage(
                "--planted-bands is required in localized mode".into(),
            ));
        }
        (p, _) => p.clone().unwrap_or_default(),
    };
    let spec = SynthSpec {
        n_stems_train: args.stems_train,
        n_stems_test: args.stems_test,
        rows: args.rows,
        cols: args.cols,
        n_bands: args.n_bands,
        wavelength_lo: args.wavelength_lo,
        wavelength_hi: args.wavelength_hi,
        planted_bands,
        band_halfwidth: args.halfwidth,
        attenuation: args.alpha,
        noise_sd: args.noise_sd,
        stem_jitter: args.stem_jitter,
        mode,
        lesion_mm_range: (args.lesion_min, args.lesion_max),
        lesion_quantum_mm: args.lesion_quantum,
        band_dropout: args.band_dropout,
        dropout_segment_mm: args.dropout_segment,
        scale_mm_per_px: args.scale,
        seed: cli.seed,
    };
    synth::generate(&spec, &cli.out).map_err(classify_synth)?;
    println!("{}", synth::manifest_path(&cli.out).display());
    Ok(())
}

fn load(manifest_path: &Path, patch_width: usize, mask: Option<f32>) -> Result<(Manifest, DataSet<f64>), CliError> {
    let manifest = read_manifest(manifest_path).map_err(runtime)?;
    let data = load_dataset(&manifest, patch_width, mask).map_err(classify_pipeline)?;
    Ok((manifest, data))
}

fn cmd_select(cli: &Cli, args: &SelectArgs) -> Result<(), CliError> {
    let (_, data) = load(&args.manifest, args.model.patch_width, args.model.mask_threshold)?;
    let spec = SelectionSpec {
        k: args.k,
        include_rgb: !args.no_rgb,
        rgb_targets: RGB_TARGETS_NM,
        ga: GaConfig {
            population: args.population,
            max_generations: args.generations,
            crossover_prob: args.crossover,
            mutation_prob: args.mutation,
            elite_count: args.elite,
            runs: args.runs,
            stall_window: args.stall_window,
            stall_tol: args.stall_tol,
            laplace_a: args.laplace_a,
            laplace_b: args.laplace_b,
            power_p: args.power_p,
            k: args.k,
            seed: cli.seed,
        },
        svm: args.model.svm_config(),
        cv_folds: args.cv_folds,
        fold_unit: match args.fold_unit {
            FoldUnitArg::Patch => FoldUnit::Patch,
            FoldUnitArg::Stem => FoldUnit::Stem,
        },
        patch_width: args.model.patch_width,
        mask_threshold: args.model.mask_threshold,
    };
    let result = select_bands(&data, &spec).map_err(classify_pipeline)?;
    write_json(&cli.out.join("selection.json"), &result)?;
    write_history(&cli.out.join("history.csv"), &result)?;
    let wl: Vec<String> = result.band_wavelengths.iter().map(|w| format!("{w:.2}")).collect();
    println!("selected wavelengths (nm): {}", wl.join(", "));
    Ok(())
}

fn resolve_bands(source: &BandSource, data: &DataSet<f64>) -> Result<Vec<usize>, CliError> {
    if let Some(spec) = &source.bands {
        if spec == "rgb" {
            let map = build_band_map(&data.wavelengths, RGB_TARGETS_NM)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            return Ok(map.rgb_bands.to_vec());
        }
        return spec
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("invalid band list '{spec}'")))
            })
            .collect();
    }
    let path = source.selection.as_ref().expect("clap enforces one source");
    let file = std::fs::File::open(path).map_err(runtime)?;
    let selection: SelectionResult = serde_json::from_reader(file).map_err(runtime)?;
    Ok(selection.band_indices)
}

fn cmd_evaluate(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let (_, data) = load(&args.manifest, args.model.patch_width, args.model.mask_threshold)?;
    let bands = resolve_bands(&args.source, &data)?;
    let evaluation = evaluate_bands(&data, &bands, &args.model.svm_config(), cli.seed)
        .map_err(classify_pipeline)?;
    let path = cli.out.join("report.json");
    write_json(&path, &evaluation)?;
    println!(
        "patch F1 {:.4}, stem F1 {:.4}",
        evaluation.patch_report.f1, evaluation.stem_report.f1
    );
    println!("{}", path.display());
    Ok(())
}

fn cmd_predict_length(cli: &Cli, args: &EvalArgs) -> Result<(), CliError> {
    let (_, data) = load(&args.manifest, args.model.patch_width, args.model.mask_threshold)?;
    let bands = resolve_bands(&args.source, &data)?;
    let evaluation = evaluate_bands(&data, &bands, &args.model.svm_config(), cli.seed)
        .map_err(classify_pipeline)?;
    let path = cli.out.join("lengths.csv");
    write_lengths(&path, &evaluation)?;
    let mae = evaluation
        .stems
        .iter()
        .map(|s| (s.predicted_mm - s.actual_mm).abs())
        .sum::<f64>()
        / evaluation.stems.len() as f64;
    println!("mean absolute error: {mae:.3} mm");
    println!("{}", path.display());
    Ok(())
}

fn cmd_spectrum(cli: &Cli, args: &SpectrumArgs) -> Result<(), CliError> {
    let manifest = read_manifest(&args.manifest).map_err(runtime)?;
    let mut acc: Option<SpectrumAccumulator> = None;
    for rec in &manifest.records {
        let cube = read_cube(&manifest.cube_file(rec)).map_err(runtime)?;
        let acc = match &mut acc {
            Some(a) => {
                if cube.wavelengths() != a.wavelengths() {
                    return Err(CliError::Runtime(format!(
                        "stem {}: wavelength axis differs from the first cube",
                        rec.stem_id
                    )));
                }
                a
            }
            None => acc.insert(SpectrumAccumulator::new(cube.wavelengths().to_vec())),
        };
        let patches = make_patches(cube.cols(), rec, args.patch_width, manifest.scale_mm_per_px)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for p in &patches {
            acc.add_patch(&cube, p).map_err(runtime)?;
        }
    }
    let curves = acc.ok_or_else(|| CliError::Runtime("manifest lists no stems".into()))?.finish();
    let path = cli.out.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    let mut header = vec!["wavelength"];
    if curves.healthy.is_some() {
        header.push("healthy_mean");
    }
    if curves.infected.is_some() {
        header.push("infected_mean");
    }
    w.write_record(&header).map_err(runtime)?;
    for (i, wl) in curves.wavelengths.iter().enumerate() {
        let mut row = vec![wl.to_string()];
        if let Some(h) = &curves.healthy {
            row.push(h[i].to_string());
        }
        if let Some(inf) = &curves.infected {
            row.push(inf[i].to_string());
        }
        w.write_record(&row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    println!("{}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    std::fs::write(path, text).map_err(runtime)
}

fn write_history(path: &Path, result: &SelectionResult) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(["run", "generation", "best_f1", "mean_f1", "best_bands"])
        .map_err(runtime)?;
    for s in &result.history {
        let bands: Vec<String> = s.best_bands.iter().map(|b| b.to_string()).collect();
        w.write_record([
            s.run.to_string(),
            s.generation.to_string(),
            s.best_fitness.to_string(),
            s.mean_fitness.to_string(),
            bands.join(" "),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn write_lengths(path: &Path, evaluation: &Evaluation) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(["stem_id", "actual_interior_mm", "predicted_mm"]).map_err(runtime)?;
    for s in &evaluation.stems {
        w.write_record([
            s.stem_id.clone(),
            s.actual_mm.to_string(),
            s.predicted_mm.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_structure_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn select_defaults_match_the_documented_table() {
        let cli = Cli::try_parse_from([
            "bandpick",
            "select-bands",
            "--manifest",
            "m.csv",
        ])
        .unwrap();
        match cli.command {
            Command::SelectBands(a) => {
                assert_eq!(
                    (a.k, a.population, a.generations, a.runs, a.elite),
                    (3, 100, 100, 5, 2)
                );
                assert_eq!((a.crossover, a.mutation), (0.8, 0.2));
                assert_eq!((a.stall_window, a.stall_tol), (50, 1e-6));
                assert_eq!((a.laplace_a, a.laplace_b, a.power_p), (0.0, 0.5, 4.0));
                assert_eq!(a.cv_folds, 10);
                assert_eq!(a.fold_unit, FoldUnitArg::Patch);
                assert!(!a.no_rgb);
                assert_eq!(a.model.patch_width, 64);
                assert_eq!((a.model.svm_c, a.model.svm_gamma, a.model.svm_tol), (1000.0, 1.0, 1e-3));
            }
            _ => panic!("wrong subcommand"),
        }
        assert_eq!((cli.seed, cli.threads), (0, 0));
    }

    #[test]
    fn explicit_table_flags_equal_defaults() {
        let explicit = Cli::try_parse_from([
            "bandpick",
            "select-bands",
            "--manifest",
            "m.csv",
            "--k",
            "3",
            "--population",
            "100",
            "--generations",
            "100",
            "--runs",
            "5",
        ])
        .unwrap();
        let default = Cli::try_parse_from(["bandpick", "select-bands", "--manifest", "m.csv"])
            .unwrap();
        match (explicit.command, default.command) {
            (Command::SelectBands(e), Command::SelectBands(d)) => {
                assert_eq!((e.k, e.population, e.generations, e.runs), (d.k, d.population, d.generations, d.runs));
            }
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn evaluate_requires_exactly_one_band_source() {
        assert!(Cli::try_parse_from(["bandpick", "evaluate", "--manifest", "m.csv"]).is_err());
        assert!(Cli::try_parse_from([
            "bandpick",
            "evaluate",
            "--manifest",
            "m.csv",
            "--bands",
            "rgb",
            "--selection",
            "s.json"
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "bandpick",
            "evaluate",
            "--manifest",
            "m.csv",
            "--bands",
            "1,2,3"
        ])
        .is_ok());
    }

    #[test]
    fn planted_bands_parse_as_comma_list() {
        let cli = Cli::try_parse_from([
            "bandpick",
            "gen-synth",
            "--planted-bands",
            "40,120,200",
            "--seed",
            "7",
        ])
        .unwrap();
        match cli.command {
            Command::GenSynth(a) => assert_eq!(a.planted_bands, Some(vec![40, 120, 200])),
            _ => panic!("wrong subcommand"),
        }
        assert_eq!(cli.seed, 7);
    }

    #[test]
    fn localized_mode_without_planted_bands_is_a_usage_error() {
        let cli = Cli::try_parse_from(["bandpick", "gen-synth"]).unwrap();
        let err = run(cli).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--planted-bands"));
    }

    #[test]
    fn band_list_strings_parse_or_reject() {
        let src = BandSource { bands: Some("3, 14,  20".into()), selection: None };
        let data = DataSet::<f64> {
            wavelengths: (0..24).map(|i| 382.0 + i as f64 * 650.0 / 23.0).collect(),
            scale_mm_per_px: 0.25,
            patch_width: 16,
            train: crate::pipeline::SplitData { features: vec![], stems: vec![] },
            test: crate::pipeline::SplitData { features: vec![], stems: vec![] },
        };
        assert_eq!(resolve_bands(&src, &data).unwrap(), vec![3, 14, 20]);
        let rgb = BandSource { bands: Some("rgb".into()), selection: None };
        assert_eq!(resolve_bands(&rgb, &data).unwrap(), vec![3, 6, 10]);
        let bad = BandSource { bands: Some("1,x".into()), selection: None };
        assert_eq!(resolve_bands(&bad, &data).unwrap_err().exit_code(), 2);
    }
}
