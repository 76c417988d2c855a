//! Good orbifolds as finite quotients of flat balls and round spheres.
//!
//! The crate builds every object in the chain from a finite orthogonal
//! group up to the exponential chart of the orbifold diffeomorphism group:
//!
//! - [`group`]: finite subgroups of `O(n)`, their structure, and
//!   linearization of nonlinear actions by averaging.
//! - [`orbifold`]: global quotients, quotient metric, charts, strata,
//!   products and the diagonal/graph suborbifolds.
//! - [`maps`]: orbifold maps as lifts plus isotropy homomorphisms,
//!   identity lifts, `C^s` distances and equivariant polynomial fits.
//! - [`tangent`]: admissible vectors, orbisections, curves and their lifts.
//! - [`riemann`]: partitions of unity, invariant metrics, the exponential
//!   map, the chart map `σ ↦ exp ∘ σ` and its inverse.
//!
//! All numerical checks are sampled on declared grids; every report type
//! carries the residual it measured together with the tolerance it used.

pub mod error;
pub mod poly;
pub mod group;
pub mod linalg;
pub mod maps;
pub mod orbifold;
pub mod report;
pub mod riemann;
pub mod tangent;

pub use error::{Error, Result};

use std::sync::Arc;

/// A point or vector in the ambient coordinates of a model space.
pub type Point = nalgebra::DVector<f64>;

/// An evaluable map between ambient coordinates.
pub type PointMap = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

/// Builds a [`Point`] from a slice.
pub fn point(coords: &[f64]) -> Point {
    Point::from_column_slice(coords)
}
