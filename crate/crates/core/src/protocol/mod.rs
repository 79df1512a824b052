//! Distributed four-phase coordination: discovery, flow update, negotiation
//! and data transfer, with the frames they exchange.

pub mod conflict;
pub mod node;
pub mod power;
pub mod wire;

pub use conflict::{resolve, Resolution};
pub use node::{hop_next_channel, micros, Action, Ctx, Estimate, Micros, Node, NodeStats, Phase, Report, Shared, Timer};
pub use power::{update_power, PowerRange};
pub use wire::{Cts, Dis, Frame, Rts, Syn, SynEntry, WireError};
