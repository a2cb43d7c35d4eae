//! Scenario files, the bot-driven run harness and its metrics.
//!
//! A scenario is a strict JSON document describing clients, their scripted
//! entities and fire events, the simulated links, critical regions and
//! policy values. [`run`] drives the network simulator and one
//! [`PlayerManager`](crate::player_manager::PlayerManager) per client to the
//! end and reports per-tick divergence, per-event display-time differences
//! and pipeline counters.

mod config;
mod metrics;
mod motion;
mod run;

pub use config::{
    load_scenario, ClientSpec, EntitySpec, FireSchedule, LinkEvent, Policies, ScenarioConfig, ScenarioError, Toggles,
};
pub use metrics::{
    compare, display_diff_from_csv, divergence_from_csv, parse_metrics_csv, parse_summary, percentile, Accumulator,
    CompareError, Comparison, EventRow, MetricsRow, ParsedRow, Summary, WindowDelta, EVENTS_HEADER, METRICS_HEADER,
};
pub use motion::Motion;
pub use run::{run, BotGame, DeliveryRecord, RunError, RunOptions, RunReport, SendRecord};
