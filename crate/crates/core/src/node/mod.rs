//! Mobile node: battery, task scheduler, sampling into the page log, beacons
//! and the RPC server surface.

pub mod battery;
pub mod rpc;
pub mod task;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::pagelog::{PageLog, PageLogError};
use crate::tdf::{self, MetadataRegistry, TdfRecord};

pub use battery::{Activity, BatteryModel, HarvestProfile, LoadTable, VoltageCurve, SECONDS_PER_DAY};
pub use rpc::{NodeStatus, RpcCommand, RpcError, RpcResponse};
pub use task::{Condition, RunningTask, TaskConfig, TaskContext, TaskTransition};

pub type NodeId = u32;

pub const DEFAULT_CHUNK_SIZE: usize = 64;
pub const DEFAULT_BEACON_PERIOD_S: u64 = 10;
pub const DEFAULT_BEACON_AIRTIME_S: f64 = 0.02;
/// Time per radio packet at 5 pages/s with four chunks per page.
pub const DEFAULT_PACKET_AIRTIME_S: f64 = 0.05;
/// How long the radio listens after a beacon before going back to sleep.
pub const LISTEN_AFTER_BEACON_S: u64 = 1;

/// Reserved parameter: adopts a cloud-assigned configuration version.
pub const PARAM_CONFIG_VERSION: &str = "config_version";
pub const PARAM_BEACON_PERIOD: &str = "beacon_period_s";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Beacon {
    pub node_id: NodeId,
    pub max_page: Option<u32>,
    pub battery_mv: u16,
    pub config_version: u32,
    pub fw_version: u32,
}

/// One sample taken by a running task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleEvent {
    pub time: u64,
    pub task_id: u16,
    pub type_id: u16,
}

#[derive(Debug, Clone, Default)]
struct FwStaging {
    version: u32,
    chunks: BTreeMap<u16, Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: NodeId,
    pub clock: u64,
    pub battery: BatteryModel,
    pub motion: bool,
    /// Position fed into GPS samples, in 1e-7 degrees.
    pub position: (i32, i32),
    pub log: PageLog,
    config_version: u32,
    fw_version: u32,
    tasks: BTreeMap<u16, TaskConfig>,
    running: BTreeMap<u16, RunningTask>,
    params: BTreeMap<String, i64>,
    registry: MetadataRegistry,
    fw_staging: Option<FwStaging>,
    chunk_size: usize,
    beacon_period_s: u64,
    beacon_airtime_s: f64,
    packet_airtime_s: f64,
    radio_hold_until: u64,
    last_beacon_at: Option<u64>,
    records_appended: u64,
    samples: Vec<SampleEvent>,
}

impl NodeState {
    pub fn new(node_id: NodeId, battery: BatteryModel, log: PageLog, registry: MetadataRegistry) -> Self {
        Self {
            node_id,
            clock: 0,
            battery,
            motion: false,
            position: (0, 0),
            log,
            config_version: 0,
            fw_version: 0,
            tasks: BTreeMap::new(),
            running: BTreeMap::new(),
            params: BTreeMap::new(),
            registry,
            fw_staging: None,
            chunk_size: DEFAULT_CHUNK_SIZE,
            beacon_period_s: DEFAULT_BEACON_PERIOD_S,
            beacon_airtime_s: DEFAULT_BEACON_AIRTIME_S,
            packet_airtime_s: DEFAULT_PACKET_AIRTIME_S,
            radio_hold_until: 0,
            last_beacon_at: None,
            records_appended: 0,
            samples: Vec::new(),
        }
    }

    /// Installs the initial task set without touching the config version.
    pub fn with_tasks(mut self, tasks: impl IntoIterator<Item = TaskConfig>) -> Self {
        self.tasks = tasks.into_iter().map(|t| (t.task_id, t)).collect();
        self
    }

    pub fn with_radio_timing(mut self, packet_airtime_s: f64, beacon_airtime_s: f64) -> Self {
        self.packet_airtime_s = packet_airtime_s;
        self.beacon_airtime_s = beacon_airtime_s;
        self
    }

    pub fn with_beacon_period(mut self, seconds: u64) -> Self {
        self.beacon_period_s = seconds.max(1);
        self
    }

    pub fn config_version(&self) -> u32 {
        self.config_version
    }

    pub fn fw_version(&self) -> u32 {
        self.fw_version
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskConfig> {
        self.tasks.values()
    }

    pub fn running_tasks(&self) -> impl Iterator<Item = (u16, &RunningTask)> {
        self.running.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_running(&self, task_id: u16) -> bool {
        self.running.contains_key(&task_id)
    }

    pub fn param(&self, key: &str) -> Option<i64> {
        self.params.get(key).copied()
    }

    pub fn registry(&self) -> &MetadataRegistry {
        &self.registry
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn chunks_per_page(&self) -> u8 {
        self.log.page_size().div_ceil(self.chunk_size) as u8
    }

    pub fn packet_airtime_s(&self) -> f64 {
        self.packet_airtime_s
    }

    pub fn beacon_period_s(&self) -> u64 {
        self.beacon_period_s
    }

    pub fn records_appended(&self) -> u64 {
        self.records_appended
    }

    pub fn battery_mv(&self) -> u16 {
        self.battery.millivolts()
    }

    pub fn radio_awake(&self) -> bool {
        self.clock <= self.radio_hold_until
            || self
                .last_beacon_at
                .is_some_and(|t| self.clock <= t + LISTEN_AFTER_BEACON_S)
    }

    /// Samples recorded since the last call.
    pub fn take_samples(&mut self) -> Vec<SampleEvent> {
        std::mem::take(&mut self.samples)
    }

    pub fn context(&self) -> TaskContext {
        TaskContext {
            time_of_day_s: (self.clock % SECONDS_PER_DAY) as u32,
            battery_mv: self.battery_mv(),
            motion: self.motion,
            samples_taken: 0,
        }
    }

    fn continuous_load_mw(&self) -> f64 {
        let loads = &self.battery.loads;
        loads.power_mw(Activity::Sleep)
            + self
                .running
                .keys()
                .filter_map(|id| self.tasks.get(id))
                .map(|t| loads.power_mw(t.activity))
                .sum::<f64>()
    }

    /// Advances the node by `dt` seconds: takes due samples, then integrates
    /// harvest minus load and clamps the charge.
    pub fn step(&mut self, dt: u64) {
        assert!(dt > 0, "step needs a positive interval");
        let end = self.clock + dt;
        let mut due = Vec::new();
        for (id, run) in self.running.iter_mut() {
            let Some(task) = self.tasks.get(id) else { continue };
            while run.next_sample_at < end {
                due.push((run.next_sample_at.max(self.clock), *id, task.type_id));
                run.next_sample_at += task.sample_period_s as u64;
                run.samples_taken += 1;
            }
        }
        due.sort_unstable();
        let mv = self.battery_mv();
        for (t, task_id, type_id) in due {
            self.record_sample(t, task_id, type_id, mv);
        }

        let harvested = self.battery.harvest.energy_mj(self.clock as f64, end as f64);
        let consumed = self.continuous_load_mw() * dt as f64;
        self.battery.apply(harvested - consumed);
        self.clock = end;
    }

    fn record_sample(&mut self, t: u64, task_id: u16, type_id: u16, mv: u16) {
        let Some(desc) = self.registry.get(type_id) else { return };
        let values: Vec<i64> = desc
            .fields
            .iter()
            .map(|f| match f.name.as_str() {
                "battery_mv" => mv as i64,
                "lat" => self.position.0 as i64 + (t % 97) as i64,
                "lon" => self.position.1 as i64 + (t % 89) as i64,
                "temp" => 2500 - ((t % SECONDS_PER_DAY) as i64 - 43_200).abs() / 20,
                _ => (self.records_appended & 0xFFFF) as i64,
            })
            .collect();
        let rec = TdfRecord {
            type_id,
            timestamp: t as u32,
            payload: desc.encode_fields(&values),
        };
        if self.log.append(&tdf::encode_record(&rec)).is_ok() {
            self.records_appended += 1;
            self.samples.push(SampleEvent {
                time: t,
                task_id,
                type_id,
            });
        }
    }

    /// One scheduler pass over the current state.
    pub fn evaluate_tasks(&self) -> Vec<TaskTransition> {
        task::evaluate(&self.tasks, &self.running, self.context())
    }

    pub fn apply_transitions(&mut self, transitions: &[TaskTransition]) {
        for tr in transitions {
            match *tr {
                TaskTransition::Stop(id) => {
                    self.running.remove(&id);
                }
                TaskTransition::Start(id) => {
                    self.running.insert(
                        id,
                        RunningTask {
                            samples_taken: 0,
                            next_sample_at: self.clock,
                        },
                    );
                }
            }
        }
    }

    /// Evaluates and applies the scheduler; returns what changed.
    pub fn schedule(&mut self) -> Vec<TaskTransition> {
        let tr = self.evaluate_tasks();
        self.apply_transitions(&tr);
        tr
    }

    pub fn beacon(&self) -> Beacon {
        Beacon {
            node_id: self.node_id,
            max_page: self.log.max_page(),
            battery_mv: self.battery_mv(),
            config_version: self.config_version,
            fw_version: self.fw_version,
        }
    }

    /// Builds the status beacon and pays for its airtime.
    pub fn emit_beacon(&mut self) -> Beacon {
        let b = self.beacon();
        self.battery.drain(Activity::Beacon, self.beacon_airtime_s);
        self.last_beacon_at = Some(self.clock);
        b
    }

    pub fn status(&self) -> NodeStatus {
        NodeStatus {
            node_id: self.node_id,
            clock: self.clock,
            battery_mv: self.battery_mv(),
            max_page: self.log.max_page(),
            head_page: self.log.head_page_no(),
            config_version: self.config_version,
            fw_version: self.fw_version,
            running: self.running.keys().copied().collect(),
        }
    }

    /// Decodes a request packet, handles it and encodes the response.
    pub fn handle_packet(&mut self, packet: &[u8]) -> Vec<u8> {
        let resp = match RpcCommand::decode(packet) {
            Ok(cmd) => self.handle_rpc(&cmd),
            Err(e) => {
                self.charge_exchange();
                RpcResponse::Error(e)
            }
        };
        resp.encode()
    }

    fn charge_exchange(&mut self) {
        self.battery.drain(Activity::RadioRx, self.packet_airtime_s);
        self.battery.drain(Activity::PageTx, self.packet_airtime_s);
    }

    pub fn handle_rpc(&mut self, cmd: &RpcCommand) -> RpcResponse {
        if !self.radio_awake() {
            return RpcResponse::Error(RpcError::RadioAsleep);
        }
        self.charge_exchange();
        match self.dispatch(cmd) {
            Ok(r) => r,
            Err(e) => RpcResponse::Error(e),
        }
    }

    fn dispatch(&mut self, cmd: &RpcCommand) -> Result<RpcResponse, RpcError> {
        match cmd {
            RpcCommand::GetStatus => Ok(RpcResponse::Status(self.status())),
            RpcCommand::ReadPageChunk {
                page_no,
                chunk_index,
            } => {
                let page = self.log.read_page(*page_no).map_err(|e| match e {
                    PageLogError::PageExpired { page_no, head } => {
                        RpcError::PageExpired { page_no, head }
                    }
                    _ => RpcError::PageNotReady(*page_no),
                })?;
                let start = *chunk_index as usize * self.chunk_size;
                if start >= page.data.len() {
                    return Err(RpcError::BadChunkIndex);
                }
                let end = (start + self.chunk_size).min(page.data.len());
                Ok(RpcResponse::PageChunk(page.data[start..end].to_vec()))
            }
            RpcCommand::GetTaskConfigs => {
                Ok(RpcResponse::TaskConfigs(self.tasks.values().cloned().collect()))
            }
            RpcCommand::PutTaskConfig(t) => {
                t.validate().map_err(|_| RpcError::InvalidTaskConfig)?;
                self.running.remove(&t.task_id);
                self.tasks.insert(t.task_id, t.clone());
                self.config_version += 1;
                Ok(RpcResponse::Ack)
            }
            RpcCommand::DeleteTaskConfig(id) => {
                self.tasks.remove(id).ok_or(RpcError::TaskNotFound(*id))?;
                self.running.remove(id);
                self.config_version += 1;
                Ok(RpcResponse::Ack)
            }
            RpcCommand::SetParam { key, value } => {
                match key.as_str() {
                    PARAM_CONFIG_VERSION => self.config_version = *value as u32,
                    PARAM_BEACON_PERIOD => self.beacon_period_s = (*value).max(1) as u64,
                    _ => {}
                }
                self.params.insert(key.clone(), *value);
                Ok(RpcResponse::Ack)
            }
            RpcCommand::PutFwChunk {
                version,
                index,
                bytes,
            } => {
                let staging = self.fw_staging.get_or_insert_with(FwStaging::default);
                if staging.version != *version {
                    *staging = FwStaging {
                        version: *version,
                        chunks: BTreeMap::new(),
                    };
                }
                staging.chunks.insert(*index, bytes.clone());
                Ok(RpcResponse::Ack)
            }
            RpcCommand::ApplyFw {
                version,
                chunk_count,
                checksum,
            } => {
                let staging = self.fw_staging.as_ref().ok_or(RpcError::FwIncomplete)?;
                if staging.version != *version
                    || (0..*chunk_count).any(|i| !staging.chunks.contains_key(&i))
                {
                    return Err(RpcError::FwIncomplete);
                }
                let mut hasher = crc32fast::Hasher::new();
                for i in 0..*chunk_count {
                    hasher.update(&staging.chunks[&i]);
                }
                if hasher.finalize() != *checksum {
                    return Err(RpcError::FwChecksumMismatch);
                }
                self.fw_version = *version;
                self.fw_staging = None;
                Ok(RpcResponse::Ack)
            }
            RpcCommand::HoldRadio { seconds } => {
                self.radio_hold_until = self.clock + *seconds as u64;
                Ok(RpcResponse::Ack)
            }
        }
    }

    /// Decodes every retained page plus the open buffer.
    pub fn decoded_records(&self) -> Result<Vec<TdfRecord>, tdf::TdfError> {
        let mut out = Vec::new();
        for p in self.log.retained() {
            out.extend(tdf::decode_stream(&p.data, &self.registry)?);
        }
        out.extend(tdf::decode_stream(self.log.open_buffer(), &self.registry)?);
        Ok(out)
    }
}
