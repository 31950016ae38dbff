//! Deterministic discrete-event simulator of a fog network in which mobile
//! clients discover a nearby fog node through one of four strategies:
//! an omniscient baseline, uniform random choice, Vivaldi coordinates or
//! Meridian ring search.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ids;
pub mod kernel;
pub mod meridian;
pub mod metrics;
pub mod net;
pub mod scenario;
pub mod simulation;
pub mod strategies;
pub mod vivaldi;

pub use ids::{ClientId, EntityId, NodeId};
pub use kernel::{Kernel, RngStream, SimTime};
pub use simulation::{run, NodeSource, RunOutput, SimConfig, SimError, TraceSource, World};
pub use strategies::StrategyKind;
