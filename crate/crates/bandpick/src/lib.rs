//! Band selection and infection mapping for hyperspectral stem images.
//!
//! The library answers one question: which small set of spectral bands best
//! separates healthy from infected stem tissue? It provides
//!
//! * a binary cube format plus a CSV manifest for labeled stem datasets
//!   ([`cube_io`]),
//! * patch tiling, distance-based patch labeling and band-mean features
//!   ([`features`]),
//! * an RBF-kernel soft-margin SVM trained by sequential minimal
//!   optimization ([`svm`]),
//! * confusion-matrix metrics and stratified k-fold cross-validation
//!   ([`eval`]),
//! * a real-coded genetic algorithm with Laplace crossover and power
//!   mutation that searches band combinations ([`ga`]),
//! * the wrapper pipeline tying those together, including stem-level
//!   verdicts and lesion length prediction ([`pipeline`]),
//! * a synthetic dataset generator with planted discriminative bands for
//!   benchmarking ([`synth`]).
//!
//! Numeric routines are generic over the scalar type through [`Real`]
//! (`f32` or `f64`); the aliases below fix the default `f64` instantiation
//! used by the command-line tool.

pub mod cli;
pub mod cube_io;
pub mod eval;
pub mod features;
pub mod ga;
pub mod num;
pub mod pipeline;
pub mod rng;
pub mod svm;
pub mod synth;

pub use features::Label;
pub use num::Real;

/// Feature vector of the default `f64` precision.
pub type FeatureVec = features::FeatureVector<f64>;

/// Trained SVM of the default `f64` precision.
pub type Model = svm::SvmModel<f64>;

/// Band selection outcome of the default `f64` precision pipeline.
pub type Selection = pipeline::SelectionResult;
