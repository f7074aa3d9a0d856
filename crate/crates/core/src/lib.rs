//! Numerical laboratory for parabolic problems with Neumann boundary
//! conditions and weak divergence terms.
//!
//! Solutions are computed three ways: by Monte Carlo over reflected Brownian
//! paths, by the penalized-path sequence, and by a deterministic
//! finite-element grid solver. The divergence term is removed with a lift
//! `G` solving `Lap G - G = div g` on an enclosing interval.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bsde;
pub mod coefficients;
pub mod experiment;
pub mod fd;
pub mod geometry;
pub mod grid;
pub mod lift;
pub mod paths;
pub mod point;
pub mod presets;
pub mod stats;
pub mod tridiag;

pub use point::Point;
