//! Discrete-event simulator of mobility management delivered as an on-demand
//! service over an SDN-controlled core, with a centralized baseline for
//! comparison.
//!
//! The layers build on each other: [`topology`] and [`mobility`] describe the
//! world, [`selection`] and [`resources`] hold the network-selection and
//! load/compute bookkeeping, [`mmapp`] makes mobility decisions,
//! [`protocol`] carries them over the control plane and [`harness`] runs
//! scenarios end to end.

pub mod harness;
pub mod ids;
pub mod mmapp;
pub mod mobility;
pub mod protocol;
pub mod resources;
pub mod selection;
pub mod time;
pub mod topology;

#[cfg(test)]
pub(crate) mod testkit;

pub use ids::{ApId, FlowId, MnId, NodeId};
pub use time::Micros;
