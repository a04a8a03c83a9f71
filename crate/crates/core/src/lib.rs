//! Multi-view classification when any subset of views may be missing.
//!
//! Missing views are zero-imputed ([`impute`]); per-view [`inducer`]s are
//! combined by voting schemes ([`combiner`]) or replaced by a jointly
//! trained late-fusion network ([`fusion`]). [`datagen`] produces synthetic
//! multi-view benchmarks, [`evaluator`] implements the measurement
//! protocols and [`temporal`] the streaming post-processing.

pub mod benchmark;
pub mod combiner;
pub mod datagen;
pub mod error;
pub mod evaluator;
pub mod fusion;
pub mod impute;
pub mod inducer;
pub mod io;
pub mod nn;
pub mod temporal;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    argmax, availability_mask, complete, Collection, Dataset, Labels, ProbVector, Split, TaskId, TaskSpec,
    ViewObservation,
};
