//! Compile trained ReLU networks into 0-1 mixed-integer linear programs,
//! tighten their bounds, solve them, and search for adversarial inputs.
//!
//! Everything here is `no_std` + `alloc`. File formats, the CLI and wall-clock
//! time live in the `net2milp` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adversarial;
pub mod bounds;
pub mod caps;
pub mod encode;
pub mod math;
pub mod milp;
pub mod network;
pub mod rng;
pub mod solver;
pub mod tensor;
pub mod train;
