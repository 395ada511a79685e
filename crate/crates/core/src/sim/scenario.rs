//! Scenario files: a versioned TOML document describing nodes, gateways,
//! camps, mobility, link and weather.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::link::LinkParams;
use super::mobility::{CampId, MobilityParams};
use crate::gateway::DutySchedule;
use crate::node::task::validate_task_set;
use crate::node::{Activity, Condition, LoadTable, NodeId, TaskConfig, VoltageCurve, SECONDS_PER_DAY};
use crate::tdf::types;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {}", .errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct InvalidScenario {
    pub errors: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] InvalidScenario),
}

/// A span of whole days starting at the beginning of `from_day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaySpan {
    pub from_day: u32,
    pub days: u32,
}

impl DaySpan {
    pub fn contains_day(&self, day: u64) -> bool {
        day >= self.from_day as u64 && day < self.from_day as u64 + self.days as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drought {
    pub from_day: u32,
    pub days: u32,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestParams {
    pub peak_mw: f64,
    pub sunrise_s: u32,
    pub sunset_s: u32,
    pub constant_mw: f64,
    /// Daily weather factors are drawn uniformly from this range.
    pub weather_range: (f64, f64),
    pub droughts: Vec<Drought>,
}

impl Default for HarvestParams {
    fn default() -> Self {
        Self {
            peak_mw: 200.0,
            sunrise_s: 6 * 3600,
            sunset_s: 18 * 3600,
            constant_mw: 0.0,
            weather_range: (0.3, 1.0),
            droughts: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    pub capacity_mj: f64,
    pub initial_fraction: f64,
    pub curve: VoltageCurve,
    pub loads: LoadTable,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            capacity_mj: 5.0e6,
            initial_fraction: 0.9,
            curve: VoltageCurve::default(),
            loads: LoadTable::default(),
        }
    }
}

fn one() -> u32 {
    1
}

fn default_capacity() -> u32 {
    crate::pagelog::DEFAULT_CAPACITY_PAGES
}

fn default_page_size() -> usize {
    crate::pagelog::DEFAULT_PAGE_SIZE
}

fn default_beacon_period() -> u64 {
    crate::node::DEFAULT_BEACON_PERIOD_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    /// Number of identical nodes this entry describes.
    #[serde(default = "one")]
    pub count: u32,
    /// Id of the first node; later ones follow consecutively. Defaults to
    /// one past the highest id so far.
    #[serde(default)]
    pub first_id: Option<NodeId>,
    pub home_camp: CampId,
    #[serde(default = "default_capacity")]
    pub capacity_pages: u32,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    #[serde(default)]
    pub battery: BatterySpec,
    #[serde(default = "default_beacon_period")]
    pub beacon_period_s: u64,
    /// Initial task set; the standard set when absent.
    #[serde(default)]
    pub tasks: Option<Vec<TaskConfig>>,
    /// Mornings on which the node roosts away from every gateway.
    #[serde(default)]
    pub absences: Vec<DaySpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomOffline {
    pub count: u32,
    pub min_days: u32,
    pub max_days: u32,
}

fn default_session() -> u32 {
    60
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub id: u32,
    pub camp: CampId,
    #[serde(default = "DutySchedule::always_on")]
    pub duty: DutySchedule,
    #[serde(default = "default_session")]
    pub max_session_s: u32,
    #[serde(default = "default_timeout")]
    pub beacon_timeout_s: u64,
    /// Days without a cloud connection.
    #[serde(default)]
    pub offline: Vec<DaySpan>,
    #[serde(default)]
    pub random_offline: Option<RandomOffline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEdit {
    pub at_s: u64,
    pub nodes: Vec<NodeId>,
    /// New task set; the node's current desired (or initial) set when absent.
    #[serde(default)]
    pub tasks: Option<Vec<TaskConfig>>,
    #[serde(default)]
    pub params: BTreeMap<String, i64>,
}

fn default_chunk() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmwareRelease {
    pub at_s: u64,
    pub version: u32,
    pub size_bytes: usize,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HysteresisWatch {
    pub task_id: u16,
    pub low_mv: u16,
    pub high_mv: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub trace_period_s: u64,
    pub hysteresis_watch: Option<HysteresisWatch>,
    pub checkpoint_period_s: u64,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            trace_period_s: 600,
            hysteresis_watch: Some(HysteresisWatch {
                task_id: standard::GPS_HIGH,
                low_mv: 3700,
                high_mv: 3900,
            }),
            checkpoint_period_s: SECONDS_PER_DAY,
        }
    }
}

fn default_sync_period() -> u64 {
    3600
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_days: u32,
    /// Camps without gateways may be listed; camps named by gateways and
    /// nodes must be listed when this is non-empty.
    #[serde(default)]
    pub camps: Vec<CampId>,
    #[serde(default)]
    pub harvest: HarvestParams,
    #[serde(default)]
    pub mobility: MobilityParams,
    #[serde(default)]
    pub link: LinkParams,
    pub nodes: Vec<NodeSpec>,
    pub gateways: Vec<GatewaySpec>,
    #[serde(default)]
    pub config_edits: Vec<ConfigEdit>,
    #[serde(default)]
    pub firmware: Vec<FirmwareRelease>,
    #[serde(default)]
    pub metrics: MetricsParams,
    /// Period of full gateway syncs (upload plus health report) while online.
    #[serde(default = "default_sync_period")]
    pub sync_period_s: u64,
    /// Bring every gateway online at the end and drain its buffer.
    #[serde(default = "default_true")]
    pub final_drain: bool,
}

/// Default task set: battery and temperature logging plus GPS tracking at a
/// high rate when the battery allows and a low rate whenever the battery is
/// below the high-rate entry threshold.
pub mod standard {
    use super::*;

    pub const BATTERY_LOG: u16 = 1;
    pub const GPS_HIGH: u16 = 2;
    pub const GPS_LOW: u16 = 3;
    pub const TEMPERATURE_LOG: u16 = 4;

    pub fn tasks(gps_high_period_s: u32, gps_low_period_s: u32) -> Vec<TaskConfig> {
        vec![
            TaskConfig {
                task_id: BATTERY_LOG,
                type_id: types::BATTERY,
                sample_period_s: 600,
                entry: vec![],
                exit: vec![],
                priority: 0,
                activity: Activity::SensorSample,
            },
            TaskConfig {
                task_id: GPS_HIGH,
                type_id: types::GPS,
                sample_period_s: gps_high_period_s,
                entry: vec![Condition::BatteryAtLeast { mv: 3900 }, Condition::Motion { moving: true }],
                exit: vec![Condition::BatteryBelow { mv: 3700 }, Condition::Motion { moving: false }],
                priority: 2,
                activity: Activity::GpsHigh,
            },
            TaskConfig {
                task_id: GPS_LOW,
                type_id: types::GPS,
                sample_period_s: gps_low_period_s,
                entry: vec![Condition::BatteryBelow { mv: 3900 }, Condition::Motion { moving: true }],
                exit: vec![Condition::BatteryAtLeast { mv: 3900 }, Condition::Motion { moving: false }],
                priority: 1,
                activity: Activity::GpsLow,
            },
            TaskConfig {
                task_id: TEMPERATURE_LOG,
                type_id: types::TEMPERATURE,
                sample_period_s: 1800,
                entry: vec![],
                exit: vec![],
                priority: 0,
                activity: Activity::SensorSample,
            },
        ]
    }

    pub fn default_tasks() -> Vec<TaskConfig> {
        tasks(1, 300)
    }
}

/// Scenarios shipped with the crate.
pub mod bundled {
    pub const SINGLE_NODE_SINGLE_GATEWAY: &str = include_str!("../../scenarios/single_node_single_gateway.toml");
    pub const MULTI_GATEWAY: &str = include_str!("../../scenarios/multi_gateway.toml");
    pub const DROUGHT: &str = include_str!("../../scenarios/drought.toml");
    pub const LONG_ABSENCE: &str = include_str!("../../scenarios/long_absence.toml");
    pub const INTERCONTACT: &str = include_str!("../../scenarios/intercontact.toml");

    pub fn get(name: &str) -> Option<&'static str> {
        Some(match name {
            "single_node_single_gateway" => SINGLE_NODE_SINGLE_GATEWAY,
            "multi_gateway" => MULTI_GATEWAY,
            "drought" => DROUGHT,
            "long_absence" => LONG_ABSENCE,
            "intercontact" => INTERCONTACT,
            _ => return None,
        })
    }

    pub const NAMES: [&str; 5] = [
        "single_node_single_gateway",
        "multi_gateway",
        "drought",
        "long_absence",
        "intercontact",
    ];
}

/// A node after expanding `count` and ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedNode {
    pub id: NodeId,
    pub spec: NodeSpec,
    pub tasks: Vec<TaskConfig>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        bundled::get(name).map(|t| Self::from_toml(t).expect("bundled scenarios are valid"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn duration_s(&self) -> u64 {
        self.duration_days as u64 * SECONDS_PER_DAY
    }

    pub fn resolved_nodes(&self) -> Vec<ResolvedNode> {
        let mut out = Vec::new();
        let mut next_id: NodeId = 1;
        for spec in &self.nodes {
            let first = spec.first_id.unwrap_or(next_id);
            for k in 0..spec.count {
                let id = first + k;
                out.push(ResolvedNode {
                    id,
                    spec: spec.clone(),
                    tasks: spec.tasks.clone().unwrap_or_else(standard::default_tasks),
                });
                next_id = next_id.max(id + 1);
            }
        }
        out
    }

    pub fn gateway_camps(&self) -> Vec<CampId> {
        let set: BTreeSet<CampId> = self.gateways.iter().map(|g| g.camp).collect();
        set.into_iter().collect()
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<(), InvalidScenario> {
        let mut errors = Vec::new();
        let mut err = |field: String, message: String| errors.push(FieldError { field, message });

        if self.version != SCENARIO_VERSION {
            err("version".into(), format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version));
        }
        if self.duration_days == 0 {
            err("duration_days".into(), "must be positive".into());
        }
        if self.sync_period_s == 0 {
            err("sync_period_s".into(), "must be positive".into());
        }
        if self.metrics.trace_period_s == 0 {
            err("metrics.trace_period_s".into(), "must be positive".into());
        }
        if self.metrics.checkpoint_period_s == 0 {
            err("metrics.checkpoint_period_s".into(), "must be positive".into());
        }
        if let Some(w) = self.metrics.hysteresis_watch {
            if w.low_mv >= w.high_mv {
                err("metrics.hysteresis_watch".into(), "low_mv must be below high_mv".into());
            }
        }
        if let Err((f, m)) = self.mobility.validate() {
            err(format!("mobility.{f}"), m);
        }
        if let Err((f, m)) = self.link.validate() {
            err(format!("link.{f}"), m);
        }
        let h = &self.harvest;
        if h.peak_mw < 0.0 || h.constant_mw < 0.0 {
            err("harvest.peak_mw".into(), "power must be non-negative".into());
        }
        if h.sunrise_s >= h.sunset_s || h.sunset_s as u64 > SECONDS_PER_DAY {
            err("harvest.sunrise_s".into(), "sunrise must precede sunset within one day".into());
        }
        let (wlo, whi) = h.weather_range;
        if !(wlo >= 0.0 && wlo <= whi) {
            err("harvest.weather_range".into(), format!("bad range [{wlo}, {whi}]"));
        }
        for (i, d) in h.droughts.iter().enumerate() {
            if d.factor < 0.0 {
                err(format!("harvest.droughts[{i}].factor"), "must be non-negative".into());
            }
        }

        let camps: BTreeSet<CampId> = self.camps.iter().copied().collect();
        let camp_known = |c: CampId| camps.is_empty() || camps.contains(&c);

        if self.nodes.is_empty() {
            err("nodes".into(), "at least one node is required".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let f = |name: &str| format!("nodes[{i}].{name}");
            if n.count == 0 {
                err(f("count"), "must be positive".into());
            }
            if !camp_known(n.home_camp) {
                err(f("home_camp"), format!("unknown camp {}", n.home_camp));
            }
            if n.capacity_pages == 0 {
                err(f("capacity_pages"), "must be positive".into());
            }
            if n.page_size < 16 || n.page_size > 255 * crate::node::DEFAULT_CHUNK_SIZE {
                err(f("page_size"), format!("{} outside [16, {}]", n.page_size, 255 * crate::node::DEFAULT_CHUNK_SIZE));
            }
            if n.beacon_period_s == 0 {
                err(f("beacon_period_s"), "must be positive".into());
            }
            let b = &n.battery;
            if b.capacity_mj <= 0.0 {
                err(f("battery.capacity_mj"), "must be positive".into());
            }
            if !(0.0..=1.0).contains(&b.initial_fraction) {
                err(f("battery.initial_fraction"), "must be within [0, 1]".into());
            }
            if !b.curve.is_monotone() {
                err(f("battery.curve"), "voltage curve must be non-empty and monotone".into());
            }
            if let Some(tasks) = &n.tasks {
                if let Err(e) = validate_task_set(tasks) {
                    err(f("tasks"), e.to_string());
                }
            }
        }
        let mut seen = BTreeSet::new();
        let nodes = self.resolved_nodes();
        for n in &nodes {
            if !seen.insert(n.id) {
                err("nodes".into(), format!("duplicate node id {}", n.id));
            }
        }

        if self.gateways.is_empty() {
            err("gateways".into(), "at least one gateway is required".into());
        }
        let mut gw_ids = BTreeSet::new();
        for (i, g) in self.gateways.iter().enumerate() {
            let f = |name: &str| format!("gateways[{i}].{name}");
            if !gw_ids.insert(g.id) {
                err(f("id"), format!("duplicate gateway id {}", g.id));
            }
            if !camp_known(g.camp) {
                err(f("camp"), format!("unknown camp {}", g.camp));
            }
            if g.max_session_s == 0 {
                err(f("max_session_s"), "must be positive".into());
            }
            for (k, w) in g.duty.windows.iter().enumerate() {
                if w.from_s as u64 >= SECONDS_PER_DAY || w.to_s as u64 > SECONDS_PER_DAY || w.from_s == w.to_s {
                    err(f(&format!("duty.windows[{k}]")), "window must be non-empty and within one day".into());
                }
            }
            if !g.duty.always_on && g.duty.windows.is_empty() {
                err(f("duty"), "needs always_on or at least one window".into());
            }
            if let Some(r) = g.random_offline {
                if r.min_days == 0 || r.min_days > r.max_days || r.max_days >= self.duration_days.max(1) {
                    err(f("random_offline"), "need 0 < min_days <= max_days < duration_days".into());
                }
            }
        }

        for (i, e) in self.config_edits.iter().enumerate() {
            for n in &e.nodes {
                if !seen.contains(n) {
                    err(format!("config_edits[{i}].nodes"), format!("unknown node {n}"));
                }
            }
            if let Some(tasks) = &e.tasks {
                if let Err(x) = validate_task_set(tasks) {
                    err(format!("config_edits[{i}].tasks"), x.to_string());
                }
            }
        }
        let mut versions = BTreeSet::new();
        for (i, fw) in self.firmware.iter().enumerate() {
            let f = |name: &str| format!("firmware[{i}].{name}");
            if fw.size_bytes == 0 {
                err(f("size_bytes"), "must be positive".into());
            }
            if fw.chunk_size == 0 || fw.chunk_size > 255 {
                err(f("chunk_size"), "must be within [1, 255]".into());
            }
            if !versions.insert(fw.version) {
                err(f("version"), format!("duplicate version {}", fw.version));
            }
            for n in &fw.nodes {
                if !seen.contains(n) {
                    err(f("nodes"), format!("unknown node {n}"));
                }
            }
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(InvalidScenario { errors })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for name in bundled::NAMES {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.version, SCENARIO_VERSION);
            // And survive a serialization round trip.
            let back = Scenario::from_toml(&s.to_toml()).unwrap();
            assert_eq!(back, s, "{name}");
        }
    }

    #[test]
    fn field_level_diagnostics() {
        let mut s = Scenario::bundled("single_node_single_gateway").unwrap();
        s.mobility.p_return = 1.5;
        s.link.page_rate = 50.0;
        s.nodes[0].battery.initial_fraction = 2.0;
        s.gateways.push(s.gateways[0].clone());
        let e = s.validate().unwrap_err();
        let fields: Vec<&str> = e.errors.iter().map(|e| e.field.as_str()).collect();
        assert!(fields.contains(&"mobility.p_return"));
        assert!(fields.contains(&"link.page_rate"));
        assert!(fields.contains(&"nodes[0].battery.initial_fraction"));
        assert!(fields.contains(&"gateways[1].id"));
        assert!(e.to_string().starts_with("invalid scenario: "));
    }

    #[test]
    fn parse_errors_name_the_problem() {
        let e = Scenario::from_toml("version = 1\nname = 3").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse(_)));
        let e = Scenario::from_toml("version = 1\nname='x'\nduration_days=1\nnodes=[]\ngateways=[]\nbogus=1").unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn node_ids_expand() {
        let mut s = Scenario::bundled("single_node_single_gateway").unwrap();
        s.nodes[0].count = 3;
        let mut extra = s.nodes[0].clone();
        extra.count = 2;
        s.nodes.push(extra);
        let ids: Vec<NodeId> = s.resolved_nodes().iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
    }
}
