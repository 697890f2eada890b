//! Deterministic early-game overworld and battle simulator with loop-aware reward
//! shaping, a stacked frame observation, metrics, an episode driver, scripted
//! policies, a tabular Q-learner and a JSON-lines control protocol.

pub mod battle;
pub mod curriculum;
pub mod env;
pub mod learner;
pub mod log;
pub mod metrics;
pub mod observation;
pub mod policy;
pub mod protocol;
pub mod rng;
pub mod rollout;
pub mod shaping;
pub mod tilemap;
pub mod world;

pub use curriculum::{EpisodeOutcome, SequenceId};
pub use env::{Env, EnvConfig, EnvError, StepResult};
pub use shaping::{DetectorFlags, RewardConfig};
pub use world::{Action, Direction, World, WorldState};
