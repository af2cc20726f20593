//! Transient stability boundary generation for power grids.
//!
//! The crate builds, from a static grid description, everything needed to map
//! the stability boundary of a contingency in the space of controllable
//! generator dispatches:
//!
//! - [`grid`]: case parsing, admittance matrices, Newton-Raphson power flow,
//!   static feasibility screening, and classical-model dynamic initialization
//!   (EMF behind transient reactance, Kron reduction onto generator nodes).
//! - [`tds`]: fixed-step RK4 time-domain simulation of the multi-machine
//!   swing equations across the fault-on/post-fault network switch, plus
//!   center-of-inertia bookkeeping and stability classification.
//! - [`index`]: the scalar transient severity index (a clipped rotor-angle
//!   margin integrated over the study window) and its gradient with respect
//!   to the dispatch, via a backward adjoint co-state pass combined with
//!   finite differences of the cheap initialization pipeline.
//! - [`sampler`]: gradient-guided search that walks operating points toward
//!   the boundary, bisects crossings, traverses along the boundary, and
//!   fills coverage gaps by greedy maximin re-sampling.
//! - [`boundary`]: an RBF-kernel soft-margin SVM trained on the sampled
//!   labels; its decision function is the continuous boundary proxy used for
//!   projection, gap candidate generation, and online assessment.
//! - [`scenario`]: sensitivity-based scenario reduction - Spearman rank
//!   correlation between operating points, spectral clustering, adjusted Rand
//!   index between partitions for contingency grouping, per-cluster Gaussian
//!   possibility models, and most-critical-generator rankings.
//! - [`oracle`]: brute-force lattice labeling used as ground truth when
//!   validating trained boundaries.
//! - [`monitor`]: the offline / refresh / assess orchestration used by the
//!   command-line front end.
//!
//! Everything is deterministic: fixed iteration orders, seeded ChaCha
//! streams, and order-preserving parallel maps, so a given seed reproduces
//! identical artifacts byte for byte regardless of worker count.

pub mod boundary;
pub mod error;
pub mod grid;
pub mod index;
pub mod monitor;
pub mod oracle;
pub mod sampler;
pub mod scenario;
pub mod svm;
pub mod tds;

pub use error::{Error, Result};
