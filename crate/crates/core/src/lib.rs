//! Geometry of hydrodynamical density manifolds on the one-dimensional torus.
//!
//! A density manifold is the set of positive unit-mass densities on the
//! periodic domain, equipped with the metric induced by the pseudo-inverse of
//! the weighted elliptic operator `Φ ↦ ∂ₓ(χ(ρ) ∂ₓΦ)`. The mobility `χ` comes
//! from a macroscopic particle model (independent particles, simple
//! exclusion, Kipnis–Marchioro–Presutti, or user supplied).
//!
//! Module map:
//!
//! * [`grid`]: periodic grid, spectral derivative, quadrature, dealiasing.
//! * [`models`]: mobility models, free energies, Bregman divergence.
//! * [`operator`]: response operator, its pseudo-inverse, the metric.
//! * [`geometry`]: Gamma operators, commutators, Levi-Civita connection, Hessian.
//! * [`curvature`]: Riemann tensor (general and 1-D closed form), sectional curvature.
//! * [`dynamics`]: gradient flows, geodesics, parallel transport, least-action distance.
//! * [`oracle`]: brute-force finite-dimensional geometry used as ground truth.
//! * [`sampling`]: seeded random smooth fields for batch checks.

pub mod curvature;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod models;
pub mod operator;
pub mod oracle;
pub mod sampling;

pub use error::{HydroError, Result};
pub use grid::{Field, Grid};
pub use models::{DensityField, EquilibriumSpec, MobilityModel};
pub use operator::{PotentialField, TangentField};

/// Library version, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
