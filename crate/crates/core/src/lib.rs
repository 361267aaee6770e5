//! Finite-volume machinery for interacting diffusions on the integer lattice
//! whose drift may depend on the whole past of nearby coordinates.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: site indices, finite boxes, shift maps and the weighted
//!   l2 geometry used for moment bounds,
//! * [`paths`]: discrete-time paths over a fixed uniform grid on `[0, 1]`,
//!   running maxima, Ito sums and CSV round-tripping,
//! * [`drift`]: drift functionals (local, adapted, sublinear) plus empirical
//!   verifiers for those three structural properties,
//! * [`sim`]: Euler-Maruyama sampling of finite boxes with frozen, zero or
//!   periodic boundary data, periodization and shift averaging,
//! * [`gibbs`]: Girsanov weights, specification kernels, a conditional
//!   consistency (DLR) check, entropy and free-energy estimators and the
//!   weighted moment-bound sweep.
//!
//! All randomness flows from a single `u64` root seed through counter-based
//! stream derivation ([`rng::derive_rng`]), so every result is reproducible
//! bit for bit regardless of how many worker threads run the replicas.

// Parameter guards are written `!(x > 0.0)` so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod drift;
pub mod error;
pub mod gibbs;
pub mod lattice;
pub mod paths;
pub mod rng;
pub mod sim;

pub use error::{CoreError, Result};
