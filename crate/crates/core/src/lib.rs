//! Tracing and verification of generalized broken bicharacteristics for the
//! wave operator `D_t^2 - Δ_g` on a manifold with corners, given in a single
//! coordinate chart `x ∈ [0, ∞)^k, y ∈ R^l, t ∈ R`.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: charts, metric coefficient fields, b-coordinates and the
//!   compression map onto the b-cotangent bundle.
//! - [`hamiltonian`]: the principal symbol, its Hamilton vector field and the
//!   interior flow with boundary event location.
//! - [`boundary`]: elliptic/glancing/hyperbolic classification, lifts,
//!   reflection and the gliding flow.
//! - [`tracer`]: the event loop producing rays and branch trees.
//! - [`verify`]: property oracles run against traced rays.
//! - [`symbols`]: escape-function symbols and b-bracket identities.
//! - [`scenario`] and [`records`]: the scenario file format and the
//!   line-oriented output records.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hamiltonian;
pub mod ode;
pub mod records;
pub mod scenario;
pub mod suite;
pub mod symbols;
pub mod tracer;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{BCotangentPoint, Chart, CompressedPoint, CotangentPoint, FaceId};

/// Number type accepted by every generic evaluation path: `f64` or a dual
/// number carrying one directional derivative.
pub trait Scalar: num_dual::DualNum<Primitive = f64> + Copy {}

impl<T: num_dual::DualNum<Primitive = f64> + Copy> Scalar for T {}

/// Directional derivative helper: `Dual64` with value `re` and tangent `eps`.
pub(crate) fn dual(re: f64, eps: f64) -> num_dual::Dual64 {
    num_dual::Dual64::new(re, eps)
}
