//! Discrete-event MANET simulator with DSR routing, black-hole attackers and
//! an immune-inspired route-vetting defense.

pub mod adversary;
pub mod config;
pub mod defense;
pub mod dsr;
pub mod metrics;
pub mod net;
pub mod packet;
pub mod rng;
pub mod sim;
pub mod sweep;
pub mod trace;
pub mod world;

pub use config::{ConfigError, ScenarioConfig, Variant};
pub use metrics::{MetricsLedger, MetricsReport};
pub use world::{run_experiment, RunError, RunOutput, World};
