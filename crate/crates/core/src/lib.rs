//! Photon-level simulation of the three-stage rotation protocol under
//! intensity monitoring, with a siphoning and impersonating adversary and the
//! statistics needed to quantify detection against leakage.

pub mod adversary;
pub mod analysis;
pub mod channel;
pub mod exec;
pub mod message;
pub mod protocol;
pub mod quantum;
pub mod rng;

pub use channel::{Pulse, SourceModel, Stage};
pub use exec::Exec;
pub use message::BitString;
pub use quantum::{PolarizationState, Rotation};
