//! Simulation and inverse inference for asynchronous kinetic Ising models
//! and epistatic Wright-Fisher dynamics.
//!
//! The crate is organized around one forward pipeline and one backward
//! pipeline:
//!
//! * forward: draw couplings ([`model`]), run asynchronous Glauber dynamics or
//!   a Wright-Fisher population ([`dynamics`], [`popgen`]), and reduce the raw
//!   paths to moments ([`stats`]);
//! * backward: reconstruct fields and couplings from those observations with a
//!   family of interchangeable inference strategies ([`equilibrium`],
//!   [`kinetic`], [`methods`]) and score the reconstruction ([`metrics`]).
//!
//! All stochastic components are seeded explicitly and are deterministic for a
//! fixed seed, independent of thread count.

pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod ingest;
pub mod kinetic;
pub mod methods;
pub mod metrics;
pub mod model;
pub mod opt;
pub mod popgen;
pub mod result;
pub mod spins;
pub mod stats;
pub mod table;

pub use error::{Error, ExitClass, Result};
pub use model::{CouplingModel, GibbsMoments, SkParams};
pub use result::InferenceResult;
