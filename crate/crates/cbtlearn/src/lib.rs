//! Learns connectional brain templates (CBTs) from populations of
//! multi-view brain networks and scores them with a connectome-driven echo
//! state reservoir performing visual recall.
//!
//! The pipeline has three stages:
//!
//! 1. a graph network with edge-conditioned convolutions embeds each
//!    subject's multi-view network and turns the embeddings into a CBT via
//!    pairwise L1 distances (`dgn`),
//! 2. the median-refined CBT seeds the recurrent weights of an echo state
//!    network whose per-lag ridge readouts recall delayed image frames
//!    (`reservoir`),
//! 3. both objectives are co-optimized by alternating template updates with
//!    periodic readout refits (`coopt`).
//!
//! `eval` measures template centeredness, visual memory capacity and graph
//! topology; `io` covers the on-disk formats; `cli` backs the `cbtlearn`
//! binary. Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod coopt;
pub mod dgn;
pub mod error;
pub mod eval;
pub mod graphdata;
pub mod io;
pub mod linalg;
pub mod reservoir;

pub use error::{Error, ErrorCategory, Result};
pub use linalg::{Matrix, RngSeed};
