//! Target-conditioned survey simulation on gridded patch-embedding worlds.
//!
//! The crate is organised bottom-up:
//!
//! * [`world`] holds the immutable site grid and its 8-neighbourhood geometry.
//! * [`detector`] does one-shot patch correspondence against exemplar sets.
//! * [`context`] keeps the bounded FIFO of environment-context embeddings.
//! * [`planner`] implements the greedy myopic policy and the lawnmower baseline.
//! * [`experiment`] runs seeded trial batches and aggregates reward curves.
//! * [`synthworld`] generates synthetic sites with clustered targets and context halos.
//! * [`analysis`] computes the target/context co-occurrence regression.
//! * [`io`] reads and writes site manifests, embedding binaries, exemplar files and CSV.
//!
//! Trial batches and per-cell scoring run on rayon when the `parallel` feature
//! is enabled (the default) and fall back to plain iterators otherwise.

pub mod analysis;
pub mod context;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod io;
pub mod par;
pub mod planner;
pub mod synthworld;
pub mod world;

pub use error::{Error, Result};

/// Class label used for the target species.
pub const TARGET_LABEL: &str = "target";
/// Class label used for the environment context.
pub const CONTEXT_LABEL: &str = "context";
