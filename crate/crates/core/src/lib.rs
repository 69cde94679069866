//! Meshfree collocation solver for terminal-value problems of linear and
//! fully nonlinear parabolic PDEs.
//!
//! The pipeline: radial kernels ([`kernel`]) interpolate data on scattered
//! sites ([`geometry`], [`interpolation`]); a θ-scheme steps the terminal
//! condition backward in time by repeated collocation ([`solver`]);
//! stability and error diagnostics ([`diagnostics`]) and the benchmark
//! harness ([`bench`]) quantify how trustworthy a run was. The [`cli`]
//! module backs the `kansa` binary.

pub mod bench;
mod numfmt;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod interpolation;
pub mod kernel;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::{Domain, SiteSet};
pub use interpolation::{Fitter, Interpolant, PolynomialTail};
pub use kernel::{KernelSpec, RbfFamily};
pub use solver::{ParabolicProblem, SchemeConfig, SolutionField};

