//! Batch reinforcement learning for the charging coordinator.
//!
//! The pipeline: roll uniform-random trajectories through the simulator
//! ([`experience`]), encode states and actions as fixed-width rows
//! ([`encode`]), and run fitted Q-iteration ([`fqi()`]) with a small
//! hand-rolled neural regressor ([`net`]). Everything is deterministic for
//! a fixed seed, down to the trained weights.

pub mod encode;
pub mod experience;
pub mod fqi;
pub mod net;

pub use encode::{encode_input, encoded_width, state_width};
pub use experience::{
    experience_fingerprint, generate_experience, generate_or_load, ExperienceSet, ExperienceTuple,
};
pub use fqi::{fqi, greedy_action_from_counts, FqiConfig, FqiResult, FqiTiming};
pub use net::{huber_loss, train_network, QNetwork, TrainParams, TrainStats};
