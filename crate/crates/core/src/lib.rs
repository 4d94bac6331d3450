//! Spectral simulator for the stochastic fractional heat equation
//! `∂u = −(−Δ)^{α/2} u + σ(u) Ẇ` on a periodic box, with the Monte Carlo and
//! quadrature machinery used to check its limit theorems.

pub mod clt;
pub mod constants;
pub mod error;
pub mod grid;
pub mod inequalities;
pub mod kernel;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod snapshot;
pub mod solver;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{parseval_check, Fourier, GridSpec, RealField, Spectrum};
pub use clt::{EnsembleData, EnsemblePlan, ExperimentContext};
pub use constants::{k_beta, LimitConstants};
pub use kernel::{evaluate_kernel, KernelField};
pub use noise::{sample_noise_increment, CovarianceModel, Family, ModelSpec, NoiseIncrement, NoiseSampler, PointMass};
pub use solver::{SigmaSpec, Simulator, SolverConfig, Trajectory};
