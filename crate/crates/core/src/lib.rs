//! Behavioural-cloning data pipeline and humanness analysis for first-person
//! deathmatch replays.
//!
//! The crate is organised bottom-up:
//!
//! * [`replay`] – the `.farp` frame-action replay format.
//! * [`store`] – append-only match/player tables with derived statistics.
//! * [`sampler`] – exponential frame skipping, averaged targets and
//!   action-balanced batching.
//! * [`loss`] – signed-MSE, penalised cross-entropy and the warm-up schedule.
//! * [`policy`] – architecture width calculators and a small multi-head
//!   surrogate policy trained with [`loss`].
//! * [`analysis`] – occupancy heatmaps and camera-movement distributions.
//! * [`eval`] – per-game result aggregation and agent ordering.
//! * [`cli`] – the `mimic` command-line tool.

pub mod action;
pub mod analysis;
pub mod cli;
pub mod eval;
pub mod loss;
pub mod policy;
pub mod replay;
pub mod sampler;
pub mod store;

pub use action::{Action, ActionValues};
pub use replay::{ActionVector, FrameRecord, Replay};
