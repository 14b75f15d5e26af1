//! Second-order ABC decomposition `<U(t)> = exp(A t + B + C(t))` of
//! evolution-operator matrix elements for a small set of parametrized
//! bosonic field Hamiltonians.
//!
//! The crate is organized by concern:
//!
//! * [`model`]: dispersion laws, form factors and model validation.
//! * [`quad`]: momentum-space quadrature and the sigma-autocorrelation `F(σ)`.
//! * [`abc2`]: second-order `A`, `B`, `C(t)` in the stable and decay regimes.
//! * [`oracle`]: independent references (Dyson, solvable model, truncated Fock).
//! * [`asympt`]: stationary-phase asymptotics and power-law fitting.
//! * [`diagrams`]: symbolic Wick algebra and the intertwining recursion.
//! * [`baker`]: quantum baker's map autocorrelation and decay comparison.
//! * [`export`]: CSV/JSON writers shared by the command-line front end.

pub mod abc2;
pub mod asympt;
pub mod baker;
pub mod diagrams;
mod error;
pub mod export;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod quad;

pub use error::{Error, Result};
pub use model::{DispersionLaw, Family, FormFactor, ModelSpec, ValidationReport};
pub use num_complex::Complex64;
pub use quad::{QuadMode, QuadratureSettings, SigmaAutocorrelation};
