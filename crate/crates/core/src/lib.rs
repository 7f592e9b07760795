//! Consensus by self-synchronizing delayed linear integrators on weighted
//! digraphs: simulation, closed-form prediction and bias removal.
//!
//! Nodes reach agreement on the slope of their states rather than on the
//! states. Propagation delays bias the common slope but never prevent
//! convergence when the digraph has a spanning directed tree.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod digraph;
pub mod error;
pub mod montecarlo;
pub mod netgen;
pub mod protocols;
pub mod scenario;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use digraph::{ConnectivityClass, Laplacian, SccDecomposition, SensorDigraph};
pub use error::{Error, Result};
pub use netgen::{DelayMatrix, NodeGeometry};
pub use protocols::{ConsensusPrediction, PassMode, UnbiasReport};
pub use sim::{detect_sync, simulate, SimConfig, SyncOptions, SyncReport, SyncTolerance, Trajectory};
pub use spectral::{GammaVector, Normalization, RateEstimate};
