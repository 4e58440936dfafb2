//! Polynomial chaos surrogates for noisy, expensive black-box models, and
//! Bayesian calibration on top of them.
//!
//! The pipeline: map uncertain parameters onto `[-1, 1]^m`
//! ([`space`]), sample a Smolyak sparse grid ([`sparse_grid`]), run the model
//! ([`harness`]), fit a Legendre chaos expansion by spectral projection
//! ([`nisp`]) or basis-pursuit denoising ([`bpdn`]), analyse it
//! ([`surrogate`]), then sample the scaled-likelihood posterior with a
//! Metropolis-within-Gibbs chain ([`calibrate`], [`kde`]).

pub mod basis;
pub mod bpdn;
pub mod calibrate;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kde;
pub mod nisp;
pub mod numeric;
pub mod space;
pub mod sparse_grid;
pub mod surrogate;

pub use basis::{MultiIndex, PcBasis};
pub use ensemble::DesignEnsemble;
pub use error::{Error, Result};
pub use space::{ParameterSpace, ParameterSpec};
pub use sparse_grid::SparseGrid;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/parameter-space.md")]
    struct ParameterSpaces;
    #[doc = include_str!("../../../book/src/basis-and-grids.md")]
    struct BasisAndGrids;
    #[doc = include_str!("../../../book/src/fitting.md")]
    struct Fitting;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/calibration.md")]
    struct Calibration;
    #[doc = include_str!("../../../book/src/external-models.md")]
    struct ExternalModels;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct CommandLine;
}
