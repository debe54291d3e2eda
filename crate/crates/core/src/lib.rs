//! Deterministic discrete-event model of a packet-switched 3D-stacked memory
//! cube (HMC 1.1 class device) together with the host-side traffic harness
//! used to characterize it.

pub mod addressing;
pub mod experiments;
pub mod hostgen;
pub mod interconnect;
pub mod memdev;
pub mod protocol;
pub mod simkernel;
pub mod stats;
pub mod system;

pub use simkernel::SimTime;
