//! Numerics for complete surfaces without conjugate points: geodesic flow,
//! Jacobi fields and conjugate-point detection, stable Riccati solutions and
//! the Hopf integral balance, metric-ball area growth with its Gauss–Bonnet
//! identity, a sharp verifier for the associated ODE inequality, and
//! Busemann/horocycle exhaustions of cylinders.
//!
//! Everything operates on explicit surface families (flat plane and cylinder,
//! conformal planes, rotational planes and cylinders) described by small
//! metric spec files; see [`metric::SurfaceSpec::parse`].

pub mod error;
pub mod expr;
pub mod geodesic;
pub mod metric;
pub mod num;
pub mod odelemma;

pub use error::{Error, Result};
pub use geodesic::{GeodesicPath, JacobiRecord, RadialChart, UnitTangent};
pub use metric::{CurvatureSample, Christoffels, Family, PointChart, SurfaceSpec};
