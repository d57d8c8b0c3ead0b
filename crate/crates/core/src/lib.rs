//! Sample approximations of optimal transport plans between continuous
//! densities, obtained by evolving an interacting particle system along the
//! Wasserstein gradient flow of a KL-relaxed entropy-transport functional.
//!
//! The pieces:
//!
//! - [`marginals`]: target densities (isotropic Gaussian mixtures, including
//!   mixtures built from grayscale images) with stable `∇ log ϱ`.
//! - [`kde`]: the RBF kernel and the kernel estimator of `∇ log ρ`.
//! - [`dynamics`]: the paired particle system, random-batch partitioning,
//!   Euler steps and the full run loop.
//! - [`barycenter`]: the multi-marginal variant whose free block samples a
//!   Wasserstein barycenter.
//! - [`diagnostics`]: exact small-scale OT oracles, Gaussian closed forms,
//!   marginal-fit metrics, the energy monitor and displacement interpolation.
//! - [`io`]: CSV formats for snapshots and couplings.

pub mod barycenter;
pub mod diagnostics;
pub mod dynamics;
mod error;
pub mod io;
pub mod kde;
pub mod marginals;
mod points;
mod rng;

pub use barycenter::{run_barycenter, BarycenterConfig, BarycenterRun, BarycenterSystem};
pub use diagnostics::Coupling;
pub use dynamics::{
    run_transport, Bandwidth, CostFunction, Kernels, ParticleSystem, SolverConfig, TransportRun,
};
pub use error::{OtError, Result};
pub use kde::RbfKernel;
pub use marginals::{image_to_mixture, Component, GrayImage, Marginal};
pub use points::Points;
