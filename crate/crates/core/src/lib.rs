//! Spectral Galerkin simulation of the stochastic viscous Burgers equation
//!
//! ```text
//! dX = (A X + ∇(X²)) dt + dW^Q,   X(t,0) = X(t,1) = 0,
//! ```
//!
//! on (0,1) with additive trace-class noise, together with the tooling to
//! measure strong and weak convergence of the Galerkin approximations and to
//! probe derivatives of `u_M(t,x) = E φ(X_M^x(t))` through tangent processes.
//!
//! The numerical kernels ([`spectral`], [`integrator`], the scaling part of
//! [`noise`]) are generic over [`Real`]; the Monte Carlo layers work in `f64`.
//! The aliases below name the concrete instantiations used throughout.

pub mod error;
pub mod experiments;
pub mod integrator;
pub mod invariants;
pub mod io;
pub mod noise;
pub mod observables;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision field, the default for all studies.
pub type Field = spectral::SpectralField<f64>;
/// Single-precision field.
pub type Field32 = spectral::SpectralField<f32>;
pub type Stepper = integrator::Stepper<f64>;
pub type SolverState = integrator::SolverState<f64>;
pub type SchemeConfig = integrator::SchemeConfig<f64>;
pub type PseudoSpectral = spectral::PseudoSpectral<f64>;
