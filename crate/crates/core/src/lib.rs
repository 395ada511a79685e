//! Delay-tolerant data collection for animal-borne sensor nodes.
//!
//! The crate models three tiers (mobile nodes, gateways, a coordination
//! service) as plain state machines and drives them with a deterministic
//! discrete-event simulator.

pub mod cloud;
pub mod gateway;
pub mod node;
pub mod pagelog;
pub mod sim;
pub mod tdf;
