//! Numerical laboratory for the geometry of the Simons cone `C(S^3 x S^3)`
//! and its cylinder `C x R`: the Hardt-Simon smoothing and its refined
//! asymptotics, Jacobi spectra and indicial roots, Lyapunov-Schmidt
//! smoothings of the singular link with the `h(delta) ~ delta^{4/3}` law,
//! log-perturbed comparison cones, barrier surfaces, and the three-annulus
//! growth/decay machinery.

pub mod annulus;
pub mod barriers;
pub mod davini;
pub mod error;
pub mod geometry;
pub mod hardt_simon;
pub mod link;
pub mod logcone;
pub mod numerics;
pub mod params;
pub mod spectrum;

pub use error::{Error, Result};
pub use params::ConeParams;
