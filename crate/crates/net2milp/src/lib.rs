//! File formats, command-line front end and threaded drivers around
//! `net2milp-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod image;
pub mod lp;
pub mod manifest;
pub mod runtime;
pub mod sidecar;
pub mod weights;
