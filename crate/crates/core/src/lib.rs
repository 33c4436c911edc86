//! Simulator for hierarchical federated learning pipelines that reconfigure
//! themselves on infrastructure changes and validate each reconfiguration
//! against a communication budget.

pub mod cli;
pub mod config;
pub mod cost;
pub mod learning;
pub mod rva;
pub mod scenario;
pub mod simkit;
pub mod topology;
