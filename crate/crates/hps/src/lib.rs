//! Exact-arithmetic toolkit for homogeneous perfect sets on the line.
//!
//! The crate builds Cantor-type sets from per-level data `(n_k, c_k, η_{k,l})`,
//! restructures them into a binary refinement ladder, computes the gap and
//! length statistics that control quasisymmetric distortion, evaluates the
//! dimension ratio sequence, constructs mass distributions, and probes images
//! under quasisymmetric maps with box counting.
//!
//! Entry points:
//! - [`construction`]: specs, validation, interval enumeration, builtins.
//! - [`specfmt`]: the `.hps` declarative text format.
//! - [`reconstruction`]: edge-gap trimming and the binary refinement ladder.
//! - [`analysis`]: statistics over ladders and the named prefix conditions.
//! - [`dimension`]: dimension ratio sequence and box counting.
//! - [`qsmap`]: quasisymmetric map catalog and distortion envelopes.
//! - [`measure`]: mass distributions over enumerated trees.
//! - [`cli`]: the command-line front end (see the `hps` binary).
//!
//! Runnable demonstrations for each capability live under `examples/`.

pub mod analysis;
pub mod cli;
pub mod construction;
pub mod dimension;
pub mod measure;
pub mod numeric;
pub mod qsmap;
pub mod reconstruction;
pub mod report;
pub mod specfmt;

pub use construction::{BasicInterval, ConstructionSpec, LevelProducts};
pub use numeric::{ApproxScalar, ExactScalar, NumericError};
pub use reconstruction::{Block, LadderLevel, RefinementLadder, StarredSpec};
