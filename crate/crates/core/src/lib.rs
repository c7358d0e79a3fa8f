//! Channel- and semantics-aware V2X user scheduling for collaborative
//! perception.
//!
//! The crate simulates an ego vehicle that, slot by slot, grants one
//! collaborator (CAV or roadside unit) access to a fading V2X link. The
//! scheduled collaborator ships its most useful bird's-eye-view grid cells,
//! ranked from spatial confidence maps, and the ego fuses them into its own
//! map. A double deep Q-network learns the schedule from either a
//! label-based reward (detection-loss reduction) or a label-free utility.

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod ddqn;
pub mod env;
pub mod error;
pub mod map;
pub mod observations;
pub mod perception;
pub mod rng;
pub mod scenario;
pub mod schedulers;

pub use error::{Error, Result};
