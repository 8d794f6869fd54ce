//! Discovery, high-precision refinement and classification of periodic
//! orbits of the equal-mass planar three-body problem.
//!
//! The pipeline runs in stages: a grid scan of the symmetric initial
//! configuration for near-returns ([`scan`]), damped Newton correction and
//! classical Newton refinement with cross-precision verification
//! ([`correct`]), topological classification by syzygy sequences
//! ([`topology`]) and cataloguing ([`catalog`]). [`pipeline`] wraps each
//! stage as a shardable, deterministic file-to-file job.

pub mod catalog;
pub mod correct;
pub mod dynamics;
pub mod pipeline;
pub mod precision;
pub mod scan;
pub mod sweep;
pub mod taylor;
pub mod topology;

pub use precision::{Context, PrecisionConfig, Preset, Real};
