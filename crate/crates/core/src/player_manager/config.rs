use std::collections::BTreeMap;

use crate::critical_area::{ModeTracker, Region, StrongScales};
use crate::dead_reckoning::DeadReckoningPolicy;
use crate::local_lag::LagPolicy;
use crate::overlay::{LinkSpec, DEFAULT_MAX_QUEUE_MS, DEFAULT_ROUTE_HYSTERESIS_MS};
use crate::rollback::{RollbackScope, DEFAULT_HISTORY_WINDOW_MS};
use crate::{ClientId, EntityId};

use super::PmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalEntity {
    pub id: EntityId,
    pub class: String,
}

#[derive(Debug, Clone)]
pub struct PlayerManagerConfig {
    pub client_id: ClientId,
    pub dead_reckoning: DeadReckoningPolicy,
    pub lag: LagPolicy,
    pub strong: StrongScales,
    /// When false, regions and critical flags are ignored and every entity stays in normal mode.
    pub strong_mode_enabled: bool,
    pub regions: Vec<Region>,
    pub links: Vec<LinkSpec>,
    pub local_entities: Vec<LocalEntity>,
    /// Object class of remote entities, for their lag value.
    pub entity_classes: BTreeMap<EntityId, String>,
    pub tick_ms: u64,
    pub heartbeat_ms: u64,
    pub mode_exit_hysteresis_ms: u64,
    pub route_hysteresis_ms: u64,
    pub history_window_ms: u64,
    pub ewma_alpha: f64,
    /// Ping a silent peer this often. `None` disables periodic probing.
    pub ping_interval_ms: Option<u64>,
    pub overlay_enabled: bool,
    /// Peers whose entities come this close to ours count as critically near.
    pub proximity_radius_m: Option<f64>,
    pub rollback_scope: RollbackScope,
    /// Delay playout of our own events by the local lag.
    pub sender_side_lag: bool,
    /// Buffer received messages until their playout deadline.
    pub receiver_lag: bool,
    pub max_queue_ms: u64,
}

impl PlayerManagerConfig {
    pub fn new(client_id: ClientId) -> Self {
        Self {
            client_id,
            dead_reckoning: DeadReckoningPolicy::default(),
            lag: LagPolicy::default(),
            strong: StrongScales::default(),
            strong_mode_enabled: true,
            regions: Vec::new(),
            links: Vec::new(),
            local_entities: Vec::new(),
            entity_classes: BTreeMap::new(),
            tick_ms: 50,
            heartbeat_ms: 1000,
            mode_exit_hysteresis_ms: ModeTracker::DEFAULT_EXIT_HYSTERESIS_MS,
            route_hysteresis_ms: DEFAULT_ROUTE_HYSTERESIS_MS,
            history_window_ms: DEFAULT_HISTORY_WINDOW_MS,
            ewma_alpha: crate::clock::DEFAULT_ALPHA,
            ping_interval_ms: Some(1000),
            overlay_enabled: false,
            proximity_radius_m: None,
            rollback_scope: RollbackScope::All,
            sender_side_lag: false,
            receiver_lag: true,
            max_queue_ms: DEFAULT_MAX_QUEUE_MS,
        }
    }

    pub fn validate(&self) -> Result<(), PmError> {
        let invalid = |m: String| Err(PmError::ConfigInvalid(m));
        if self.tick_ms == 0 {
            return invalid("tick_ms must be positive".into());
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return invalid(format!("ewma_alpha {} outside (0, 1]", self.ewma_alpha));
        }
        let s = self.strong.threshold_scale;
        if !(s > 0.0 && s <= 1.0) {
            return invalid(format!("strong threshold scale {s} outside (0, 1]"));
        }
        for link in &self.links {
            link.validate().map_err(PmError::ConfigInvalid)?;
        }
        for region in &self.regions {
            region.validate().map_err(|e| PmError::ConfigInvalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn class_of(&self, entity: EntityId) -> &str {
        self.local_entities
            .iter()
            .find(|e| e.id == entity)
            .map(|e| e.class.as_str())
            .or_else(|| self.entity_classes.get(&entity).map(String::as_str))
            .unwrap_or("")
    }
}
