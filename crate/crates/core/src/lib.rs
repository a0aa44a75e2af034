//! Backbone decomposition toolkit for multitype continuous-state branching
//! (MCB) processes.
//!
//! The crate covers the mechanism algebra, Perron–Frobenius criticality,
//! extinction roots, the extinction-conditioned mechanism, the prolific
//! backbone's branching law, ODE solvers for the Laplace-functional systems
//! and Monte Carlo simulators for the total-mass process, the backbone and
//! the dressed process.

// NaN-rejecting `!(x >= 0.0)` checks and index loops over types are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod backbone;
pub mod conditioning;
pub mod error;
pub mod extinction;
pub mod laplace;
pub mod mechanism;
pub mod simulate;
pub mod spectral;
pub mod suite;
pub mod tolerances;

pub use backbone::BackboneSpec;
pub use error::{Error, Result};
pub use extinction::ExtinctionVector;
pub use laplace::OdeSolution;
pub use mechanism::{LevyAtom, Mechanism, Provenance, ScalarAtom};
pub use simulate::{BackboneForest, PathSample};
pub use spectral::{Criticality, SpectralData};
