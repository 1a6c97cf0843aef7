//! Desk-scale laboratory for self-evolving duality-consistency training.
//!
//! The crate wires together a synthetic spatial-VQA environment with an
//! exact oracle ([`scene`]), an algebra of answer-preserving input
//! transformations ([`duality`]), a small differentiable categorical
//! policy ([`policy`]), consistency-augmented group-relative policy
//! optimization ([`rewards`]), a lifecycle-managed operation pool
//! ([`pool`]), the training loop ([`trainer`]), and brute-force checks of
//! the suboptimality, capacity and convergence claims behind the method
//! ([`theory`]).

pub mod artifacts;
pub mod duality;
pub mod error;
pub mod features;
pub mod policy;
pub mod pool;
pub mod rewards;
pub mod rng;
pub mod scene;
pub mod theory;
pub mod trainer;

pub use error::{Result, SageError};
