//! Multi-agent proximal policy optimisation for the elastic-topology
//! simulator, written from scratch: networks with hand-derived gradients,
//! mixed discrete and continuous policy heads, generalised advantages and
//! role-shared critics.

pub mod checkpoint;
pub mod error;
pub mod gae;
pub mod heads;
pub mod mlp;
pub mod ppo;
pub mod trainer;

pub use error::{LearnerError, Result};
pub use trainer::{EpisodeStats, LearnerConfig, PolicySet, Scheme, Trainer, UpdateStats};
