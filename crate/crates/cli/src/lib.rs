//! Experiment orchestration for counterfactual PID retuning: configuration,
//! batch execution and result files.

pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;
