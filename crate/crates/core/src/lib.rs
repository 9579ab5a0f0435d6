//! Discrete-event simulation of centralized and distributed SDN control
//! planes over a smart-grid communication network.

pub mod controlplane;
pub mod dataplane;
pub mod queueing;
pub mod sim;
pub mod topology;
pub mod network;
pub mod traffic;
pub mod metrics;
pub mod bench;
pub mod config;
