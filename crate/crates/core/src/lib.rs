//! Multi-satellite massive MIMO precoding under statistical CSI.
//!
//! The crate is organized along the processing chain:
//!
//! * [`geometry`] places a Walker-Delta constellation, drops user terminals and
//!   converts the geometry into angles and link budgets.
//! * [`channel`] builds steering vectors, the per-link Rician statistics and
//!   channel realizations.
//! * [`wmmse`] holds the centralized WMMSE solver with per-satellite power
//!   constraints, the rate evaluators and the separate-satellite baselines.
//! * [`equinet`] runs forward inference of the centralized and decentralized
//!   tensor-equivariant networks from a weight container.
//! * [`recovery`] maps a predicted low-dimensional tuple back to precoders.
//! * [`eval`] drives Monte Carlo sweeps, overhead accounting and file I/O.
//!
//! Data-parallel loops (drops of a sweep, Monte Carlo rate samples,
//! per-satellite decentralized inference) go through [`exec::Execution`], which
//! uses rayon when the `parallel` feature is enabled and runs sequentially
//! otherwise.

pub mod channel;
pub mod equinet;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod linalg;
pub mod recovery;
pub mod wmmse;

pub use error::{Error, Result};
pub use exec::Execution;
