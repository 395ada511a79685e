//! Gateway: reacts to beacons, downloads the pages the ledger still misses,
//! reconciles node configuration and firmware, and buffers everything for
//! the cloud while offline.

pub mod duty;
pub mod link;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::messages::{BeaconRelay, ConfigApplied, PageIngest, PageReport};
use crate::cloud::{
    CloudMessage, CloudReply, CloudService, DesiredConfig, FirmwareImage, HealthReport,
    IngestOutcome, NodeView, PageRange, RangeSet,
};
use crate::node::{
    Beacon, NodeId, NodeState, RpcCommand, RpcError, RpcResponse, PARAM_CONFIG_VERSION, SECONDS_PER_DAY,
};

pub use duty::{DutySchedule, DutyWindow};
pub use link::{Channel, LinkFailure, LossyChannel, PerfectChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("contact lost")]
pub struct ContactLost;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub gateway_id: u32,
    pub duty: DutySchedule,
    pub page_size: usize,
    pub chunk_size: usize,
    /// Planning estimate of the link's page rate.
    pub page_rate: f64,
    /// Longest single download session; larger backlogs span several.
    pub max_session_s: u32,
    /// Attempts per request before the contact is declared lost.
    pub attempts: u32,
    pub beacon_timeout_s: u64,
    pub storage_pages: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            gateway_id: 0,
            duty: DutySchedule::always_on(),
            page_size: crate::pagelog::DEFAULT_PAGE_SIZE,
            chunk_size: crate::node::DEFAULT_CHUNK_SIZE,
            page_rate: 5.0,
            max_session_s: 60,
            attempts: 3,
            beacon_timeout_s: 60,
            storage_pages: 1 << 20,
        }
    }
}

/// What a gateway intends to do with a node after hearing its beacon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownloadPlan {
    pub node_id: NodeId,
    /// Ascending page ranges to fetch.
    pub pages: Vec<PageRange>,
    /// Target configuration; the task diff is computed against the node's
    /// reported task list during execution.
    pub config_update: Option<DesiredConfig>,
    pub fw_update: Option<u32>,
    pub hold_seconds: u32,
}

impl DownloadPlan {
    pub fn page_count(&self) -> u64 {
        self.pages.iter().map(PageRange::len).sum()
    }

    pub fn page_numbers(&self) -> impl Iterator<Item = u32> + '_ {
        self.pages.iter().flat_map(PageRange::iter)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DownloadResult {
    pub node_id: NodeId,
    pub pages: Vec<u32>,
    pub expired: Vec<u32>,
    pub config_applied: Option<u32>,
    pub fw_applied: Option<u32>,
    pub contact_lost: bool,
    pub elapsed_s: f64,
    pub retries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub messages: u64,
    pub stored: u64,
    pub duplicates: u64,
    pub mismatches: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub sessions: u64,
    pub pages_downloaded: u64,
    pub loss_reports: u64,
    pub contacts_lost: u64,
    pub retries: u64,
    pub configs_applied: u64,
    pub firmware_applied: u64,
    pub stored: u64,
    pub duplicates: u64,
    pub mismatches: u64,
}

/// Local copy of the cloud's view of one node.
#[derive(Debug, Clone)]
struct NodeCache {
    view: NodeView,
    /// Pages downloaded or reported lost here but not yet synced.
    local_done: RangeSet,
    /// Oldest page the node still holds, learned from PageExpired.
    head_hint: u32,
    desired: Option<DesiredConfig>,
    relayed_max: Option<u32>,
}

impl NodeCache {
    fn new(node_id: NodeId) -> Self {
        Self {
            view: NodeView {
                node_id,
                known_max_page: None,
                next: Default::default(),
                desired_config_version: None,
                desired_fw_version: None,
            },
            local_done: RangeSet::new(),
            head_hint: 0,
            desired: None,
            relayed_max: None,
        }
    }

    /// Pages still owed as far as this gateway knows, up to `max_page`.
    fn needed(&self, max_page: Option<u32>) -> RangeSet {
        let Some(max) = max_page else {
            return RangeSet::new();
        };
        let mut need = RangeSet::from_ranges(self.view.next.pending.iter().copied());
        let unseen_from = self.view.known_max_page.map_or(0, |k| k.saturating_add(1));
        if unseen_from <= max && self.view.known_max_page != Some(u32::MAX) {
            need.insert_range(unseen_from, max);
        }
        need.truncated(max).difference(&self.local_done)
    }
}

#[derive(Debug, Clone)]
pub struct GatewayState {
    pub config: GatewayConfig,
    pub online: bool,
    pub battery_mv: u16,
    awake: bool,
    window_start: Option<u64>,
    woke_at: u64,
    last_beacon_at: Option<u64>,
    last_tick: u64,
    awake_s: u64,
    cache: BTreeMap<NodeId, NodeCache>,
    upload: VecDeque<CloudMessage>,
    buffered_pages: u64,
    fw_images: BTreeMap<u32, FirmwareImage>,
    stats: GatewayStats,
}

impl GatewayState {
    pub fn new(config: GatewayConfig) -> Self {
        Self {
            config,
            online: true,
            battery_mv: 12_600,
            awake: false,
            window_start: None,
            woke_at: 0,
            last_beacon_at: None,
            last_tick: 0,
            awake_s: 0,
            cache: BTreeMap::new(),
            upload: VecDeque::new(),
            buffered_pages: 0,
            fw_images: BTreeMap::new(),
            stats: GatewayStats::default(),
        }
    }

    pub fn id(&self) -> u32 {
        self.config.gateway_id
    }

    pub fn is_awake(&self) -> bool {
        self.awake
    }

    pub fn stats(&self) -> GatewayStats {
        self.stats
    }

    pub fn upload_buffer(&self) -> impl Iterator<Item = &CloudMessage> {
        self.upload.iter()
    }

    pub fn buffered_pages(&self) -> u64 {
        self.buffered_pages
    }

    /// Pages this gateway believes a node still owes, given its latest max.
    pub fn pending_for(&self, node_id: NodeId, max_page: Option<u32>) -> RangeSet {
        match self.cache.get(&node_id) {
            Some(c) => c.needed(max_page),
            None => NodeCache::new(node_id).needed(max_page),
        }
    }

    fn chunks_per_page(&self) -> u8 {
        self.config.page_size.div_ceil(self.config.chunk_size.max(1)) as u8
    }

    /// Replaces the cached view of a node with the cloud's, and fetches
    /// desired configuration and firmware when they changed.
    fn refresh_node(&mut self, cloud: &CloudService, node_id: NodeId) {
        let view = cloud.view(node_id);
        let cache = self
            .cache
            .entry(node_id)
            .or_insert_with(|| NodeCache::new(node_id));
        if view.desired_config_version != cache.desired.as_ref().map(|d| d.version) {
            cache.desired = cloud.desired_config(node_id).cloned();
        }
        if let Some(v) = view.desired_fw_version {
            if let (std::collections::btree_map::Entry::Vacant(e), Some(img)) =
                (self.fw_images.entry(v), cloud.firmware_image(v))
            {
                e.insert(img.clone());
            }
        }
        cache.view = view;
    }

    /// Plans work for the node that sent `b`. `cloud` is consulted first
    /// when the gateway is online; offline, the cached snapshot is used and
    /// the beacon is queued for relay.
    pub fn on_beacon(&mut self, b: &Beacon, cloud: Option<&mut CloudService>, now: u64) -> Option<DownloadPlan> {
        self.last_beacon_at = Some(now);
        let relay = BeaconRelay::from_beacon(b, self.id(), now);
        match cloud {
            Some(c) if self.online => {
                let _ = c.handle(&CloudMessage::BeaconRelay(relay), now);
                self.refresh_node(c, b.node_id);
                if let Some(cache) = self.cache.get_mut(&b.node_id) {
                    cache.relayed_max = cache.relayed_max.max(b.max_page);
                }
            }
            _ => {
                let cache = self
                    .cache
                    .entry(b.node_id)
                    .or_insert_with(|| NodeCache::new(b.node_id));
                if b.max_page > cache.relayed_max {
                    cache.relayed_max = b.max_page;
                    self.upload.push_back(CloudMessage::BeaconRelay(relay));
                }
            }
        }
        let cache = &self.cache[&b.node_id];

        let needed = cache.needed(b.max_page);
        let budget = (self.config.max_session_s as f64 * self.config.page_rate).floor().max(1.0) as u64;
        let mut pages = Vec::new();
        let mut taken = 0u64;
        for r in needed.ranges() {
            // Pages below the node's head are reported lost without any radio traffic.
            if r.first < cache.head_hint {
                pages.push(PageRange::new(r.first, r.last.min(cache.head_hint - 1)));
                if r.last < cache.head_hint {
                    continue;
                }
            }
            if taken >= budget {
                break;
            }
            let first = r.first.max(cache.head_hint);
            let n = (r.last - first) as u64 + 1;
            let take = n.min(budget - taken);
            pages.push(PageRange::new(first, first + (take - 1) as u32));
            taken += take;
        }
        // Keep ranges ascending and merged.
        let pages: Vec<PageRange> = RangeSet::from_ranges(pages).ranges().collect();

        let config_update = cache
            .desired
            .as_ref()
            .filter(|d| d.version != b.config_version)
            .cloned();
        let fw_update = cache
            .view
            .desired_fw_version
            .filter(|v| *v != b.fw_version && self.fw_images.contains_key(v));

        if pages.is_empty() && config_update.is_none() && fw_update.is_none() {
            return None;
        }
        let fw_chunks = fw_update.map_or(0, |v| self.fw_images[&v].chunk_count()) as f64;
        let transfer_s = taken as f64 / self.config.page_rate
            + fw_chunks / (self.config.page_rate * self.chunks_per_page() as f64);
        Some(DownloadPlan {
            node_id: b.node_id,
            pages,
            config_update,
            fw_update,
            hold_seconds: transfer_s.ceil() as u32 + 2,
        })
    }

    fn call(
        &self,
        ch: &mut impl Channel,
        node: &mut NodeState,
        cmd: &RpcCommand,
        retries: &mut u64,
    ) -> Result<RpcResponse, ContactLost> {
        for attempt in 0..self.config.attempts.max(1) {
            if attempt > 0 {
                *retries += 1;
            }
            match ch.exchange(node, cmd) {
                Ok(RpcResponse::Error(RpcError::RadioAsleep)) => return Err(ContactLost),
                Ok(r) => return Ok(r),
                Err(LinkFailure::Lost) => continue,
                Err(LinkFailure::Closed) => return Err(ContactLost),
            }
        }
        Err(ContactLost)
    }

    /// Runs a plan against a node over `ch`. Completed pages are kept when
    /// the contact is lost part way.
    pub fn execute_plan(
        &mut self,
        node: &mut NodeState,
        plan: &DownloadPlan,
        ch: &mut impl Channel,
        now: u64,
    ) -> DownloadResult {
        let mut res = DownloadResult {
            node_id: plan.node_id,
            ..Default::default()
        };
        self.stats.sessions += 1;
        let outcome = self.run_session(node, plan, ch, now, &mut res);
        res.contact_lost = outcome.is_err();
        res.elapsed_s = ch.elapsed_s();
        self.stats.contacts_lost += res.contact_lost as u64;
        self.stats.retries += res.retries;
        res
    }

    fn run_session(
        &mut self,
        node: &mut NodeState,
        plan: &DownloadPlan,
        ch: &mut impl Channel,
        now: u64,
        res: &mut DownloadResult,
    ) -> Result<(), ContactLost> {
        let node_id = plan.node_id;
        let mut retries = 0;
        let hold = self.call(ch, node, &RpcCommand::HoldRadio { seconds: plan.hold_seconds }, &mut retries);
        res.retries += retries;
        hold?;

        let chunks = self.chunks_per_page();
        let page_size = self.config.page_size;
        let mut head = self.cache.get(&node_id).map_or(0, |c| c.head_hint);
        'pages: for page_no in plan.page_numbers() {
            if page_no < head {
                self.report_lost(node_id, page_no, now, res);
                continue;
            }
            let mut data = Vec::with_capacity(page_size);
            for chunk_index in 0..chunks {
                let cmd = RpcCommand::ReadPageChunk { page_no, chunk_index };
                let mut retries = 0;
                let resp = self.call(ch, node, &cmd, &mut retries);
                res.retries += retries;
                match resp? {
                    RpcResponse::PageChunk(bytes) => data.extend_from_slice(&bytes),
                    RpcResponse::Error(RpcError::PageExpired { head: h, .. }) => {
                        head = head.max(h);
                        if let Some(c) = self.cache.get_mut(&node_id) {
                            c.head_hint = c.head_hint.max(h);
                        }
                        self.report_lost(node_id, page_no, now, res);
                        continue 'pages;
                    }
                    _ => continue 'pages,
                }
            }
            if data.len() != page_size {
                continue;
            }
            let t = now + ch.elapsed_s().ceil() as u64;
            self.upload
                .push_back(CloudMessage::PageIngest(PageIngest::new(node_id, page_no, &data, self.id(), t)));
            self.upload.push_back(CloudMessage::PageReport(PageReport {
                node_id,
                page_no,
                gateway_id: self.id(),
                time: t,
            }));
            self.buffered_pages += 1;
            self.stats.pages_downloaded += 1;
            self.mark_local(node_id, page_no);
            res.pages.push(page_no);
        }

        if let Some(desired) = &plan.config_update {
            if self.reconcile_config(node, desired, ch, res)? {
                res.config_applied = Some(desired.version);
                self.stats.configs_applied += 1;
                self.upload.push_back(CloudMessage::ConfigApplied(ConfigApplied {
                    node_id,
                    version: desired.version,
                    gateway_id: self.id(),
                    time: now + ch.elapsed_s().ceil() as u64,
                }));
            }
        }

        if let Some(version) = plan.fw_update {
            if self.push_firmware(node, version, ch, res)? {
                res.fw_applied = Some(version);
                self.stats.firmware_applied += 1;
            }
        }
        Ok(())
    }

    fn mark_local(&mut self, node_id: NodeId, page_no: u32) {
        self.cache
            .entry(node_id)
            .or_insert_with(|| NodeCache::new(node_id))
            .local_done
            .insert(page_no);
    }

    fn report_lost(&mut self, node_id: NodeId, page_no: u32, now: u64, res: &mut DownloadResult) {
        self.upload.push_back(CloudMessage::PageExpired(PageReport {
            node_id,
            page_no,
            gateway_id: self.id(),
            time: now,
        }));
        self.stats.loss_reports += 1;
        self.mark_local(node_id, page_no);
        res.expired.push(page_no);
    }

    /// Deletes tasks the node should not have, then puts missing or changed
    /// ones, then sets parameters and finally adopts the desired version.
    fn reconcile_config(
        &self,
        node: &mut NodeState,
        desired: &DesiredConfig,
        ch: &mut impl Channel,
        res: &mut DownloadResult,
    ) -> Result<bool, ContactLost> {
        let mut retries = 0;
        let out = (|| -> Result<bool, ContactLost> {
            let current = match self.call(ch, node, &RpcCommand::GetTaskConfigs, &mut retries)? {
                RpcResponse::TaskConfigs(t) => t,
                _ => return Ok(false),
            };
            let have: BTreeMap<u16, u64> = current.iter().map(|t| (t.task_id, t.content_hash())).collect();
            let want: BTreeMap<u16, u64> = desired.tasks.iter().map(|t| (t.task_id, t.content_hash())).collect();
            for id in have.keys().filter(|id| !want.contains_key(id)) {
                match self.call(ch, node, &RpcCommand::DeleteTaskConfig(*id), &mut retries)? {
                    RpcResponse::Ack | RpcResponse::Error(RpcError::TaskNotFound(_)) => {}
                    _ => return Ok(false),
                }
            }
            for t in desired.tasks.iter().filter(|t| have.get(&t.task_id) != Some(&want[&t.task_id])) {
                if self.call(ch, node, &RpcCommand::PutTaskConfig(t.clone()), &mut retries)? != RpcResponse::Ack {
                    return Ok(false);
                }
            }
            let params = desired
                .params
                .iter()
                .filter(|(k, _)| k.as_str() != PARAM_CONFIG_VERSION)
                .map(|(k, v)| (k.clone(), *v))
                .chain([(PARAM_CONFIG_VERSION.to_string(), desired.version as i64)]);
            for (key, value) in params {
                if self.call(ch, node, &RpcCommand::SetParam { key, value }, &mut retries)? != RpcResponse::Ack {
                    return Ok(false);
                }
            }
            Ok(true)
        })();
        res.retries += retries;
        out
    }

    fn push_firmware(
        &self,
        node: &mut NodeState,
        version: u32,
        ch: &mut impl Channel,
        res: &mut DownloadResult,
    ) -> Result<bool, ContactLost> {
        let Some(img) = self.fw_images.get(&version) else {
            return Ok(false);
        };
        let mut retries = 0;
        let out = (|| -> Result<bool, ContactLost> {
            for (index, bytes) in img.chunks().enumerate() {
                let cmd = RpcCommand::PutFwChunk {
                    version,
                    index: index as u16,
                    bytes: bytes.to_vec(),
                };
                if self.call(ch, node, &cmd, &mut retries)? != RpcResponse::Ack {
                    return Ok(false);
                }
            }
            let apply = RpcCommand::ApplyFw {
                version,
                chunk_count: img.chunk_count() as u16,
                checksum: img.checksum,
            };
            Ok(self.call(ch, node, &apply, &mut retries)? == RpcResponse::Ack)
        })();
        res.retries += retries;
        out
    }

    /// Drains the upload buffer into the cloud and refreshes every cached
    /// snapshot. Does nothing while offline.
    pub fn upload(&mut self, cloud: &mut CloudService, now: u64) -> Option<SyncReport> {
        if !self.online {
            return None;
        }
        let mut rep = SyncReport::default();
        while let Some(msg) = self.upload.pop_front() {
            rep.messages += 1;
            match cloud.handle(&msg, now) {
                Ok(CloudReply::Ingest { outcome }) => match outcome {
                    IngestOutcome::Stored => rep.stored += 1,
                    IngestOutcome::Duplicate => rep.duplicates += 1,
                    IngestOutcome::Mismatch => rep.mismatches += 1,
                },
                Ok(_) => {}
                Err(_) => rep.rejected += 1,
            }
        }
        self.buffered_pages = 0;
        self.stats.stored += rep.stored;
        self.stats.duplicates += rep.duplicates;
        self.stats.mismatches += rep.mismatches;
        let mut ids = cloud.known_nodes();
        ids.extend(self.cache.keys().copied());
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            self.refresh_node(cloud, id);
            if let Some(c) = self.cache.get_mut(&id) {
                c.local_done = RangeSet::new();
            }
        }
        Some(rep)
    }

    /// Full sync: upload, refresh, then post a health report.
    pub fn sync(&mut self, cloud: &mut CloudService, now: u64) -> Option<SyncReport> {
        let rep = self.upload(cloud, now)?;
        let health = self.health_report(now);
        let _ = cloud.handle(&CloudMessage::Health(health), now);
        Some(rep)
    }

    pub fn health_report(&self, now: u64) -> HealthReport {
        let tod = (now % SECONDS_PER_DAY) as f64;
        let temp = 24.0 + 8.0 * (std::f64::consts::TAU * (tod - 6.0 * 3600.0) / SECONDS_PER_DAY as f64 - std::f64::consts::FRAC_PI_2).sin();
        HealthReport {
            gateway_id: self.id(),
            uptime_s: Some(self.awake_s),
            battery_mv: Some(self.battery_mv),
            temp_c: Some((temp * 10.0).round() / 10.0),
            free_pages: Some(self.config.storage_pages.saturating_sub(self.buffered_pages)),
            time: now,
        }
    }

    /// Advances the duty cycle to `now` and returns whether the gateway is
    /// awake. `backlog` is true while a node in contact still owes pages.
    pub fn duty_tick(&mut self, now: u64, backlog: bool) -> bool {
        if self.awake {
            self.awake_s += now.saturating_sub(self.last_tick);
        }
        self.last_tick = now;

        let window = self.config.duty.window_start(now);
        let entered = window.is_some() && window != self.window_start;
        self.window_start = window;
        let quiet = |gw: &Self| {
            !gw.config.duty.always_on
                && now.saturating_sub(gw.last_beacon_at.unwrap_or(0).max(gw.woke_at)) >= gw.config.beacon_timeout_s
        };

        let awake = if (backlog && self.awake) || entered {
            true
        } else if window.is_some() {
            self.awake && !quiet(self)
        } else {
            false
        };
        if awake && !self.awake {
            self.woke_at = now;
        }
        self.awake = awake;
        awake
    }
}

#[cfg(test)]
mod tests;
