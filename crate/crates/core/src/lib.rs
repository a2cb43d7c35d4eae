//! A reusable consistency-maintenance layer for distributed interactive
//! applications such as multiplayer games.
//!
//! Each client runs one [`PlayerManager`](player_manager::PlayerManager),
//! which composes the individual managers:
//!
//! * [`clock`]: timestamp delay computation and latency re-estimation,
//! * [`local_lag`]: playout buffering with per-class lag values,
//! * [`critical_area`]: critical regions and the normal/strong mode switch,
//! * [`rollback`]: temporal ordering and undo/replay directives,
//! * [`dead_reckoning`]: prediction, the threshold send rule, convergence,
//! * [`overlay`]: relay vs direct route selection and failover.
//!
//! [`pdu`] defines the wire format. [`netsim`] is a deterministic
//! discrete-event network simulator and [`scenario`] drives whole sessions
//! of scripted bots over it, producing the metrics CSV and summaries.

pub mod clock;
pub mod critical_area;
pub mod dead_reckoning;
pub mod geom;
pub mod local_lag;
pub mod netsim;
pub mod overlay;
pub mod pdu;
pub mod player_manager;
pub mod rollback;
pub mod scenario;

pub use geom::Vec2;

/// Client (player terminal) identifier.
pub type ClientId = u32;
/// Entity identifier, unique within a session.
pub type EntityId = u32;
/// Simulated link identifier.
pub type LinkId = u32;
