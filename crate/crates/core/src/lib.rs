//! Interval-based checking of linearisability and refinement for small
//! concurrent stack programs.

pub mod commands;
pub mod executor;
pub mod histories;
pub mod intervals;
pub mod memstate;
pub mod stacks;
