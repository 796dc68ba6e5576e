//! Bayesian optimization of black-box functions on compact metric graphs.
//!
//! The surrogate models are Gaussian processes of Whittle-Matérn type whose
//! precision (inverse covariance) matrices come from a finite element
//! discretization of a shifted elliptic operator on the graph. Because the
//! precision matrices are sparse, posterior means and variances over all
//! mesh nodes can be computed by sparse solves plus a low-rank update — no
//! dense covariance is ever formed on the sparse path. The crate also ships
//! a conventional dense-kernel path (used both as a baseline that ignores
//! graph topology and as an oracle in tests), upper-confidence-bound and
//! Thompson-sampling acquisition loops, benchmark objectives composed with
//! per-vertex anchor interpolation, a source-localization inverse problem,
//! and a reproducible experiment harness with CSV/SVG artifacts.
//!
//! # Example
//!
//! ```
//! use graphbo_core::graph::MetricGraph;
//! use graphbo_core::mesh::Mesh;
//! use graphbo_core::fem::{assemble, MassMode};
//! use graphbo_core::kernels::{KernelModel, WhittleMaternParams};
//! use std::sync::Arc;
//!
//! let graph = Arc::new(MetricGraph::interval(1.0));
//! let mesh = Arc::new(Mesh::build(graph, 0.05).unwrap());
//! let fem = Arc::new(assemble(&mesh));
//! let params = WhittleMaternParams { alpha: 1.0, kappa: 4.0, tau: 1.0 };
//! let kernel = KernelModel::precision(mesh.clone(), fem, params, MassMode::Lumped).unwrap();
//! let p = mesh.node_points()[3];
//! let variance = kernel.k(&p, &p);
//! assert!(variance > 0.0);
//! ```

pub mod artifacts;
pub mod bo;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod fixtures;
pub mod graph;
pub mod kernels;
pub mod mesh;
pub mod metrics;
pub mod objectives;
pub mod posterior;
pub mod rational;
pub mod rng;
pub mod sparse;

pub use error::{Error, Result};
