//! Simulator of an elastic-topology distributed sensing and communication
//! network: scenario generation, channels, target tracking information,
//! action decoding, overhead accounting and the multi-agent environment.

pub mod accounting;
pub mod baselines;
pub mod channel;
pub mod comm_metrics;
pub mod environment;
pub mod error;
pub mod kinematics;
pub mod rng;
pub mod scenario;
pub mod sensing_metrics;
pub mod topology;

pub use error::{Error, Result};
