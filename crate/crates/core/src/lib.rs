//! Length distributions of shortest geodesics between two distinguished cone
//! points on flat cone spheres.
//!
//! The pipeline computes the density `f(φ, α, ·)` of the area function
//! `a = 1/l²` on the moduli space `M_{φ,α}` of flat cone spheres with cone
//! angles `φ = (φ₁, φ₂)` at the distinguished points and angle defects `α`
//! elsewhere, by a recurrence over splittings of the sphere along pairs of
//! shortest geodesics:
//!
//! * [`signature`] — angle data, splits and the cotangent kernels,
//! * [`measure`] — measures on the half-line with atoms and piecewise densities,
//! * [`recurrence`] — source assembly and the first-order ODE solve,
//! * [`thurston`] — the polygonal-coordinate Hermitian area form (test surface),
//! * [`geometry`] — exact model surfaces and the Monte Carlo oracle,
//! * [`selftest`] — the acceptance battery shared by tests and the CLI.

// negated comparisons like `!(x > 0.0)` are used deliberately: they reject
// NaN inputs, which `x <= 0.0` would silently accept
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod measure;
pub mod numeric;
pub mod recurrence;
pub mod selftest;
pub mod signature;
pub mod thurston;

pub use measure::{Measure1D, PiecewiseDensity};
pub use recurrence::{Solver, SolverConfig};
pub use signature::AngleSignature;
