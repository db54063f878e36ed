pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod stats;
pub mod fusion;
pub mod network;
pub mod numerics;
pub mod preprocessing;
pub mod task_model;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
