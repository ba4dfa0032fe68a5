//! Lattice field theories as transported Gaussian free fields.
//!
//! This crate builds the transport map from a Gaussian free field on a
//! torus lattice to an interacting model (sine-Gordon and plugins) out of
//! the exact renormalization flow of the interaction potential, estimates
//! the multiscale curvature (Bakry-Émery) profile `λ̇_t` that controls the
//! map, and verifies numerically both the Lipschitz property of the map and
//! the functional inequalities it transfers.
//!
//! Module map:
//! - [`lattice`]: torus geometry, fields, discrete Laplacian, mode spectrum.
//! - [`spectral`]: operator calculus for the scale family `(Q_t, Ċ_t, C_t)`,
//!   exact Gaussian sampling, Ornstein-Uhlenbeck transitions.
//! - [`potential`]: interaction potentials with analytic derivatives.
//! - [`renorm`]: Monte-Carlo estimation of the renormalized potential `V_t`,
//!   its derivatives, the flow PDE residual, and the curvature profile.
//! - [`transport`]: the flow maps `S_t`, their inverses, Jacobian
//!   propagation, Lipschitz reports, pushforward sampling.
//! - [`mala`]: Metropolis-adjusted Langevin reference sampler.
//! - [`inequality`]: Ψ-Sobolev, p-Poincaré, isoperimetric, and generator
//!   eigenvalue comparisons.
//! - [`bridge`]: finite-horizon renormalization SDE and its semigroup.
//! - [`ensemble`]: seeded sample collections and their binary file format.

pub mod bridge;
pub mod eig;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod inequality;
pub mod lattice;
pub mod mala;
pub mod oracle;
pub mod potential;
pub mod renorm;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod transport;

pub use error::{FlowError, Result};
pub use lattice::{build_geometry, Field, LatticeGeometry, MassParams};
pub use potential::{
    check_derivatives, quadratic_model, sine_gordon_model, Potential, PotentialModel,
    QuadraticPotential, SineGordon, SineGordonParams, ZeroPotential,
};
pub use spectral::{
    gff_covariance, ou_transition, sample_gaussian, scale_multipliers, ScaleSchedule,
    SpectralMultiplier, TabulatedSchedule,
};
pub use stats::MCEstimate;
