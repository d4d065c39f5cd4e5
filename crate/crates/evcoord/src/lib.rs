//! Joint coordination of electric vehicle charging points.
//!
//! The crate models a fleet of charging stations as a discrete-time system:
//! a day is split into equal slots, every charging session is reduced to
//! (arrival slot, departure slot, required charging slots), and a central
//! coordinator decides each slot how many connected cars of each flexibility
//! level to charge. On top of the simulator sit
//!
//! * an exact day-ahead oracle (minimum sum of squared slot loads),
//! * uncoordinated and spread-out baseline schedules,
//! * batch reinforcement learning (fitted Q-iteration with a small neural
//!   Q-function) with interchangeable state representations, action scalings
//!   and cost signals, and
//! * an evaluation layer: normalized load metrics, paired significance tests
//!   and windowed train/test experiment drivers with CSV reports.
//!
//! The `evcoord` binary exposes the whole pipeline (data generation or
//! ingestion, oracle profiles, baselines, training, experiments) behind one
//! seeded, reproducible CLI.

pub mod baselines;
pub mod config;
pub mod costs;
pub(crate) mod digest;
pub mod environment;
pub mod error;
pub mod evaluation;
pub mod oracle;
pub mod qlearn;
pub mod sessions;

pub use error::{Error, Result};
