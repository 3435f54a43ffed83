//! Numerical laboratory for quantitative stability of optimal-transport maps.
//!
//! The crate provides the building blocks and the audits:
//!
//! - [`geometry`]: dyadic cubes, bounded domains with exact boundary
//!   distances, convex cells (scaled cubes and chord-cut ball sectors).
//! - [`density`]: reference densities (uniform, log-concave, boundary-power,
//!   spherical-uniform, heavy-tailed), adaptive mass quadrature, tail
//!   moments, grid discretization into atomic measures.
//! - [`decomposition`]: Whitney cube families, dilated chain covers with
//!   measured overlap/chain/doubling constants.
//! - [`overlap_graph`]: weighted graphs from cell covers, spectral gap of the
//!   weighted Laplacian, isoperimetric constants (exact and sweep cut).
//! - [`transport`]: exact discrete optimal transport (network simplex),
//!   dual potentials, convex conjugation, Wasserstein distances.
//! - [`stability`]: variance inequalities glued along covers, stability
//!   exponent experiments, sharpness families, and the room-and-passage
//!   counterexample runner.

pub mod decomposition;
pub mod density;
pub mod geometry;
pub mod overlap_graph;
pub mod quadrature;
pub mod stability;
pub mod transport;

pub(crate) mod util;
