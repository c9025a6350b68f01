//! Semi-discrete optimal transport for the Euclidean cost.
//!
//! Given a piecewise-constant density on a rectangle ([`DensityGrid`]) and a
//! finitely supported target ([`DiscreteMeasure`]), the optimal transport
//! partition is an additively weighted Voronoi tessellation
//!
//! ```text
//! Vor_w(j) = { x : ‖x − y_j‖ − w_j ≤ ‖x − y_k‖ − w_k for all k }
//! ```
//!
//! whose cells carry exactly the target masses. The weights are found by
//! minimising the convex dual objective
//!
//! ```text
//! Φ(w) = Σ_j ( −ν_j w_j − ∫_{Vor_w(j)} (‖x − y_j‖ − w_j) μ(dx) ),
//! ∂Φ/∂w_j = μ(Vor_w(j)) − ν_j,
//! ```
//!
//! with L-BFGS and an Armijo line search ([`optimizer`]), optionally warm
//! started from a coarse-to-fine hierarchy of the target ([`multiscale`]).
//! At the minimiser the transport cost of the partition is the
//! Wasserstein-1 distance.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measures`] | density grids, discrete measures, file formats |
//! | [`geometry`] | weighted nearest-site queries, subpixel rasterization |
//! | [`objective`] | Φ, its gradient, transport cost |
//! | [`optimizer`] | L-BFGS with Armijo backtracking |
//! | [`multiscale`] | weighted K-means, hierarchies, quantization |
//! | [`bounds`] | quantization and blur error bounds |
//! | [`oracle`] | exact discrete transport (network simplex) |
//! | [`render`] | SVG output of partitions |
//! | [`report`] | JSON reports and run manifests |

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod geometry;
pub mod measures;
pub mod multiscale;
pub mod objective;
pub mod optimizer;
pub mod oracle;
mod point;
pub mod render;
pub mod report;

pub use error::{Error, Result};
pub use geometry::{QueryStrategy, Rasterization, SiteSet, SubpixelPolicy};
pub use measures::{Bounds, DensityGrid, DiscreteMeasure};
pub use objective::{Objective, ObjectiveValue};
pub use optimizer::{minimize, SolveReport, SolverConfig, TerminationReason};
pub use point::Point;
