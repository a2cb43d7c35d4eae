use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::critical_area::{ModeTracker, Region, StrongScales};
use crate::dead_reckoning::DeadReckoningPolicy;
use crate::local_lag::LagPolicy;
use crate::netsim::JitterModel;
use crate::overlay::{LinkSpec, PeerCapabilities, DEFAULT_MAX_QUEUE_MS, DEFAULT_ROUTE_HYSTERESIS_MS};
use crate::player_manager::{LocalEntity, PlayerManagerConfig};
use crate::rollback::{RollbackScope, DEFAULT_HISTORY_WINDOW_MS};
use crate::{ClientId, EntityId, LinkId};

use super::motion::Motion;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub duration_ms: u64,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    #[serde(default)]
    pub seed: u64,
    pub clients: Vec<ClientSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub link_events: Vec<LinkEvent>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub toggles: Toggles,
}

fn default_tick() -> u64 {
    50
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: ClientId,
    #[serde(default)]
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub fire: Vec<FireSchedule>,
    #[serde(default = "yes")]
    pub direct_address_known: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub id: EntityId,
    pub class: String,
    pub motion: Motion,
}

/// `count` fire events from `entity`, the first at `start_ms`, then every `every_ms`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireSchedule {
    pub entity: EntityId,
    pub start_ms: u64,
    #[serde(default)]
    pub every_ms: u64,
    #[serde(default = "one")]
    pub count: u32,
}

fn one() -> u32 {
    1
}

impl FireSchedule {
    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        (0..u64::from(self.count)).map(|i| self.start_ms + i * self.every_ms)
    }
}

/// A scheduled change to a link: new base delay and/or availability.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEvent {
    pub at_ms: u64,
    pub link: LinkId,
    #[serde(default)]
    pub base_delay_ms: Option<u64>,
    #[serde(default)]
    pub available: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Policies {
    pub threshold_m: f64,
    pub convergence_ms: u64,
    pub heartbeat_ms: u64,
    /// Local lag per object class.
    pub lag_ms: BTreeMap<String, i64>,
    pub default_lag_ms: u64,
    pub critical_lag_scale: f64,
    pub critical_threshold_scale: f64,
    pub mode_exit_hysteresis_ms: u64,
    pub route_hysteresis_ms: u64,
    pub history_window_ms: u64,
    pub ewma_alpha: f64,
    pub ping_interval_ms: Option<u64>,
    pub proximity_radius_m: Option<f64>,
    pub max_queue_ms: u64,
}

impl Default for Policies {
    fn default() -> Self {
        let dr = DeadReckoningPolicy::default();
        Self {
            threshold_m: dr.threshold_m,
            convergence_ms: dr.convergence_ms,
            heartbeat_ms: 1000,
            lag_ms: BTreeMap::new(),
            default_lag_ms: 0,
            critical_lag_scale: LagPolicy::default().critical_scale(),
            critical_threshold_scale: StrongScales::default().threshold_scale,
            mode_exit_hysteresis_ms: ModeTracker::DEFAULT_EXIT_HYSTERESIS_MS,
            route_hysteresis_ms: DEFAULT_ROUTE_HYSTERESIS_MS,
            history_window_ms: DEFAULT_HISTORY_WINDOW_MS,
            ewma_alpha: crate::clock::DEFAULT_ALPHA,
            ping_interval_ms: Some(1000),
            proximity_radius_m: None,
            max_queue_ms: DEFAULT_MAX_QUEUE_MS,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub overlay: bool,
    pub strong_mode: bool,
    pub rollback_scope: RollbackScope,
    pub sender_side_lag: bool,
    pub receiver_lag: bool,
    pub jitter_model: JitterModel,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            overlay: false,
            strong_mode: true,
            rollback_scope: RollbackScope::All,
            sender_side_lag: false,
            receiver_lag: true,
            jitter_model: JitterModel::Uniform,
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    ScenarioConfig::from_json(&text)
}

impl ScenarioConfig {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be positive"));
        }
        if self.tick_ms == 0 {
            return Err(invalid("tick_ms", "must be positive"));
        }
        if self.clients.is_empty() {
            return Err(invalid("clients", "at least one client is required"));
        }

        let mut client_ids = BTreeSet::new();
        let mut owners: BTreeMap<EntityId, ClientId> = BTreeMap::new();
        for (i, c) in self.clients.iter().enumerate() {
            if !client_ids.insert(c.id) {
                return Err(invalid(format!("clients[{i}].id"), format!("duplicate client id {}", c.id)));
            }
            for (j, e) in c.entities.iter().enumerate() {
                let field = format!("clients[{i}].entities[{j}]");
                if owners.insert(e.id, c.id).is_some() {
                    return Err(invalid(format!("{field}.id"), format!("duplicate entity id {}", e.id)));
                }
                e.motion.validate().map_err(|m| invalid(format!("{field}.motion"), m))?;
            }
        }
        for (i, c) in self.clients.iter().enumerate() {
            for (j, f) in c.fire.iter().enumerate() {
                if owners.get(&f.entity) != Some(&c.id) {
                    return Err(invalid(
                        format!("clients[{i}].fire[{j}].entity"),
                        format!("entity {} is not owned by client {}", f.entity, c.id),
                    ));
                }
                if f.count > 1 && f.every_ms == 0 {
                    return Err(invalid(format!("clients[{i}].fire[{j}].every_ms"), "must be positive"));
                }
            }
        }

        let mut link_ids = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            let field = format!("links[{i}]");
            if !link_ids.insert(l.id) {
                return Err(invalid(format!("{field}.id"), format!("duplicate link id {}", l.id)));
            }
            for (end, id) in [("a", l.a), ("b", l.b)] {
                if !client_ids.contains(&id) {
                    return Err(invalid(format!("{field}.{end}"), format!("unknown client {id}")));
                }
            }
            l.validate().map_err(|m| invalid(&field, m))?;
        }
        let ids: Vec<ClientId> = client_ids.iter().copied().collect();
        for (n, x) in ids.iter().enumerate() {
            for y in &ids[n + 1..] {
                if !self.links.iter().any(|l| l.connects(*x, *y)) {
                    return Err(invalid("links", format!("no link between clients {x} and {y}")));
                }
            }
        }
        for (i, ev) in self.link_events.iter().enumerate() {
            if !link_ids.contains(&ev.link) {
                return Err(invalid(
                    format!("link_events[{i}].link"),
                    format!("no entry in links[] has id {}", ev.link),
                ));
            }
            if ev.base_delay_ms.is_none() && ev.available.is_none() {
                return Err(invalid(format!("link_events[{i}]"), "changes nothing"));
            }
        }

        for (i, r) in self.regions.iter().enumerate() {
            r.validate().map_err(|e| invalid(format!("regions[{i}]"), e.to_string()))?;
            if let Region::AnchoredCircle { anchor, .. } = r {
                if !owners.contains_key(anchor) {
                    return Err(invalid(format!("regions[{i}].anchor"), format!("unknown entity {anchor}")));
                }
            }
        }

        let p = &self.policies;
        for (class, lag) in &p.lag_ms {
            if *lag < 0 {
                return Err(invalid(format!("policies.lag_ms.{class}"), "must not be negative"));
            }
        }
        if !(p.critical_lag_scale > 0.0 && p.critical_lag_scale <= 1.0) {
            return Err(invalid("policies.critical_lag_scale", "must lie in (0, 1]"));
        }
        if !(p.threshold_m.is_finite() && p.threshold_m > 0.0) {
            return Err(invalid("policies.threshold_m", "must be positive"));
        }
        if p.ping_interval_ms == Some(0) {
            return Err(invalid("policies.ping_interval_ms", "must be positive or null"));
        }
        if p.proximity_radius_m.is_some_and(|r| !(r.is_finite() && r >= 0.0)) {
            return Err(invalid("policies.proximity_radius_m", "must be a non-negative number"));
        }
        for c in &self.clients {
            self.player_config(c.id).validate().map_err(|e| invalid("policies", e.to_string()))?;
        }
        Ok(())
    }

    pub fn client(&self, id: ClientId) -> Option<&ClientSpec> {
        self.clients.iter().find(|c| c.id == id)
    }

    /// Owner and spec of every entity, by entity id.
    pub fn entities(&self) -> BTreeMap<EntityId, (ClientId, &EntitySpec)> {
        self.clients.iter().flat_map(|c| c.entities.iter().map(move |e| (e.id, (c.id, e)))).collect()
    }

    pub fn capabilities(&self, id: ClientId) -> Option<PeerCapabilities> {
        self.client(id).map(|c| PeerCapabilities {
            peer_id: c.id,
            direct_address_known: c.direct_address_known,
            has_gps_clock: true,
        })
    }

    /// Player manager settings for one client.
    pub fn player_config(&self, id: ClientId) -> PlayerManagerConfig {
        let p = &self.policies;
        let t = &self.toggles;
        let mut c = PlayerManagerConfig::new(id);
        c.dead_reckoning = DeadReckoningPolicy { threshold_m: p.threshold_m, convergence_ms: p.convergence_ms };
        let mut lag = LagPolicy::new(p.default_lag_ms, p.critical_lag_scale).unwrap_or_default();
        for (class, ms) in &p.lag_ms {
            // Negative values are rejected by validate.
            let _ = lag.set_local_lag_value(class, *ms);
        }
        c.lag = lag;
        c.strong = StrongScales { threshold_scale: p.critical_threshold_scale };
        c.strong_mode_enabled = t.strong_mode;
        c.regions = self.regions.clone();
        c.links = self.links.clone();
        for (eid, (owner, spec)) in self.entities() {
            if owner == id {
                c.local_entities.push(LocalEntity { id: eid, class: spec.class.clone() });
            } else {
                c.entity_classes.insert(eid, spec.class.clone());
            }
        }
        c.tick_ms = self.tick_ms;
        c.heartbeat_ms = p.heartbeat_ms;
        c.mode_exit_hysteresis_ms = p.mode_exit_hysteresis_ms;
        c.route_hysteresis_ms = p.route_hysteresis_ms;
        c.history_window_ms = p.history_window_ms;
        c.ewma_alpha = p.ewma_alpha;
        c.ping_interval_ms = p.ping_interval_ms;
        c.overlay_enabled = t.overlay;
        c.proximity_radius_m = p.proximity_radius_m;
        c.rollback_scope = t.rollback_scope;
        c.sender_side_lag = t.sender_side_lag;
        c.receiver_lag = t.receiver_lag;
        c.max_queue_ms = p.max_queue_ms;
        c
    }
}
