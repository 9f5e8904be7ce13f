//! Operational shell around `confgate_core`: the `confgate` CLI and the
//! HTTP service.

pub mod cli;
pub mod error;
pub mod server;
