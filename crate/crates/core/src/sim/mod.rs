//! Deterministic discrete-event simulation of nodes, gateways and the cloud.
//!
//! Events are ordered by time, then by kind (mobility before connectivity
//! before duty cycling before node steps), then by entity. Every random
//! draw comes from a ChaCha stream keyed by the seed, the draw's purpose and
//! the entity id, so adding a node does not perturb the others.

pub mod link;
pub mod metrics;
pub mod mobility;
pub mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{CloudMessage, CloudService, FirmwareImage};
use crate::gateway::{GatewayConfig, GatewayState, LossyChannel};
use crate::node::{BatteryModel, HarvestProfile, NodeId, NodeState, TaskTransition, SECONDS_PER_DAY};
use crate::pagelog::PageLog;
use crate::tdf::{self, types::standard_registry};

pub use link::LinkParams;
pub use metrics::{Metrics, Summary};
pub use mobility::{CampId, MobilityParams};
pub use scenario::{InvalidScenario, Scenario, ScenarioError};

use metrics::*;
use mobility::{mobility_step, NodeMobility};

const DUTY_TICK_S: u64 = 10;

mod stream {
    pub const WEATHER: u64 = 1;
    pub const MOBILITY: u64 = 2;
    pub const LINK: u64 = 3;
    pub const OFFLINE: u64 = 4;
    pub const FIRMWARE: u64 = 5;
}

/// Independent random stream for one purpose and entity.
pub fn rng_stream(seed: u64, purpose: u64, entity: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | (entity & 0xFFFF_FFFF));
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrive(usize),
    Depart(usize),
    Offline(usize),
    Online(usize),
    ConfigEdit(usize),
    Firmware(usize),
    SessionEnd(usize),
    DutyTick,
    NodeStep(usize),
    GatewaySync(usize),
    Checkpoint,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Collect a human-readable log of every event except node steps and
    /// duty ticks.
    pub event_log: bool,
}

pub struct SimOutput {
    pub metrics: Metrics,
    pub cloud: CloudService,
    pub nodes: Vec<NodeState>,
    pub gateways: Vec<GatewayState>,
    pub weather: Vec<f64>,
    pub event_log: Vec<String>,
}

/// Daily weather factors shared by every node.
pub fn weather_factors(scenario: &Scenario) -> Vec<f64> {
    let h = &scenario.harvest;
    let mut rng = rng_stream(scenario.seed, stream::WEATHER, 0);
    let (lo, hi) = h.weather_range;
    (0..scenario.duration_days as u64 + 2)
        .map(|day| {
            let w = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            h.droughts
                .iter()
                .find(|d| day >= d.from_day as u64 && day < d.from_day as u64 + d.days as u64)
                .map_or(w, |d| d.factor)
        })
        .collect()
}

/// Offline intervals `[from, to)` in seconds for one gateway, merged.
fn offline_intervals(scenario: &Scenario, g: &scenario::GatewaySpec) -> Vec<(u64, u64)> {
    let mut spans: Vec<(u64, u64)> = g
        .offline
        .iter()
        .map(|s| {
            (
                s.from_day as u64 * SECONDS_PER_DAY,
                (s.from_day as u64 + s.days as u64) * SECONDS_PER_DAY,
            )
        })
        .collect();
    if let Some(r) = g.random_offline {
        let mut rng = rng_stream(scenario.seed, stream::OFFLINE, g.id as u64);
        for _ in 0..r.count {
            let len = rng.random_range(r.min_days..=r.max_days) as u64;
            let start = rng.random_range(1..=(scenario.duration_days as u64 - len).max(1));
            spans.push((start * SECONDS_PER_DAY, (start + len) * SECONDS_PER_DAY));
        }
    }
    spans.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

struct Sim<'a> {
    sc: &'a Scenario,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, Event, u64)>>,
    cloud: CloudService,
    nodes: Vec<NodeState>,
    node_ids: Vec<NodeId>,
    absences: Vec<Vec<scenario::DaySpan>>,
    node_mob: Vec<NodeMobility>,
    mob_rng: Vec<ChaCha8Rng>,
    node_camp: Vec<Option<CampId>>,
    node_busy_until: Vec<u64>,
    depart_at: Vec<u64>,
    last_contact_day: Vec<Option<u64>>,
    last_max: Vec<Option<u32>>,
    next_trace: Vec<u64>,
    below: Vec<bool>,
    gateways: Vec<GatewayState>,
    gw_camp: Vec<CampId>,
    gw_busy_until: Vec<u64>,
    link_rng: Vec<ChaCha8Rng>,
    gateway_camps: Vec<CampId>,
    metrics: Metrics,
    log: Option<Vec<String>>,
}

impl Sim<'_> {
    fn push(&mut self, time: u64, ev: Event) {
        self.seq += 1;
        self.queue.push(Reverse((time, ev, self.seq)));
    }

    fn note(&mut self, f: impl FnOnce() -> String) {
        if let Some(log) = self.log.as_mut() {
            log.push(format!("t={} {}", self.now, f()));
        }
    }

    fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|n| *n == id)
    }

    fn trace(&mut self, i: usize, time: u64) {
        let n = &self.nodes[i];
        let running: Vec<String> = n.running_tasks().map(|(id, _)| id.to_string()).collect();
        self.metrics.trace.push(TraceRow {
            time,
            node_id: n.node_id,
            battery_mv: n.battery_mv(),
            charge_mj: n.battery.charge_mj,
            running: running.join(" "),
            max_page: n.log.max_page(),
            camp: self.node_camp[i],
        });
    }

    fn arrive(&mut self, i: usize) {
        let t = self.now;
        let day = t / SECONDS_PER_DAY;
        let camp = if self.absences[i].iter().any(|a| a.contains_day(day)) {
            None
        } else if day == 0 {
            let home = self.node_mob[i].camp;
            self.gateway_camps.contains(&home).then_some(home)
        } else {
            mobility_step(&mut self.mob_rng[i], &self.sc.mobility, &mut self.node_mob[i], &self.gateway_camps, day)
        };
        self.nodes[i].motion = false;
        self.node_camp[i] = camp;
        if let Some(c) = camp {
            self.nodes[i].position = (c as i32 * 1000, c as i32 * 1000);
            self.metrics.contacts += 1;
            if let Some(prev) = self.last_contact_day[i] {
                self.metrics.intercontacts.push(IntercontactRecord {
                    node_id: self.node_ids[i],
                    from: prev,
                    to: day,
                    days: day - prev,
                });
            }
            self.last_contact_day[i] = Some(day);
        }
        let id = self.node_ids[i];
        self.note(|| match camp {
            Some(c) => format!("arrive node={id} camp={c}"),
            None => format!("arrive node={id} camp=away"),
        });
        let m = &self.sc.mobility;
        let mut depart = day * SECONDS_PER_DAY + m.forage_start_s as u64;
        if depart <= t {
            depart += SECONDS_PER_DAY;
        }
        self.depart_at[i] = depart;
        self.push(depart, Event::Depart(i));
    }

    fn depart(&mut self, i: usize) {
        self.nodes[i].motion = true;
        self.node_camp[i] = None;
        let id = self.node_ids[i];
        self.note(|| format!("depart node={id}"));
        let day = self.now / SECONDS_PER_DAY;
        let mut arrive = day * SECONDS_PER_DAY + self.sc.mobility.forage_end_s as u64;
        while arrive <= self.now {
            arrive += SECONDS_PER_DAY;
        }
        self.push(arrive, Event::Arrive(i));
    }

    fn node_step(&mut self, i: usize) {
        let t = self.now;
        let dt = t - self.nodes[i].clock;
        if dt > 0 {
            self.nodes[i].step(dt);
        }
        let samples = self.nodes[i].take_samples();
        self.metrics.records_taken += samples.len() as u64;
        let mv = self.nodes[i].battery_mv();
        if let (Some(w), Some(h)) = (self.sc.metrics.hysteresis_watch, self.metrics.hysteresis.as_mut()) {
            let watched = samples.iter().filter(|s| s.task_id == w.task_id).count() as u64;
            h.samples += watched;
            if self.below[i] {
                h.violations += watched;
            }
            if mv < w.low_mv {
                self.below[i] = true;
            } else if mv >= w.high_mv {
                self.below[i] = false;
            }
        }
        let transitions = self.nodes[i].schedule();
        for tr in &transitions {
            match *tr {
                TaskTransition::Start(task_id) => {
                    self.metrics.task_starts.push(TaskStart {
                        time: t,
                        node_id: self.node_ids[i],
                        task_id,
                        battery_mv: mv,
                    });
                    if let (Some(w), Some(h)) = (self.sc.metrics.hysteresis_watch, self.metrics.hysteresis.as_mut()) {
                        if task_id == w.task_id {
                            h.starts += 1;
                            h.violations += (mv < w.high_mv) as u64;
                        }
                    }
                }
                TaskTransition::Stop(task_id) => {
                    if let (Some(w), Some(h)) = (self.sc.metrics.hysteresis_watch, self.metrics.hysteresis.as_mut()) {
                        if task_id == w.task_id {
                            h.stops += 1;
                        }
                    }
                }
            }
        }
        if t >= self.next_trace[i] {
            self.trace(i, t);
            self.next_trace[i] = t + self.sc.metrics.trace_period_s;
        }
        if self.node_busy_until[i] <= t {
            self.beacon(i);
        }
        let period = self.nodes[i].beacon_period_s().max(1);
        self.push(t + period, Event::NodeStep(i));
    }

    fn beacon(&mut self, i: usize) {
        let t = self.now;
        let b = self.nodes[i].emit_beacon();
        self.last_max[i] = b.max_page;
        let Some(camp) = self.node_camp[i] else { return };
        let mut session = false;
        for j in 0..self.gateways.len() {
            if self.gw_camp[j] != camp || !self.gateways[j].is_awake() || self.gw_busy_until[j] > t {
                continue;
            }
            for p in self.metrics.propagation.iter_mut() {
                if p.node_id == b.node_id && p.first_contact_after.is_none() && p.edited_at <= t {
                    p.first_contact_after = Some(t);
                }
            }
            let gw = &mut self.gateways[j];
            let cloud = gw.online.then_some(&mut self.cloud);
            let plan = gw.on_beacon(&b, cloud, t);
            if session {
                continue;
            }
            let Some(plan) = plan else { continue };
            session = true;
            let window = self.depart_at[i].saturating_sub(t) as f64;
            let airtime = self.nodes[i].packet_airtime_s();
            let mut ch = LossyChannel::new(&mut self.link_rng[j], self.sc.link.chunk_loss, airtime, Some(window));
            let res = gw.execute_plan(&mut self.nodes[i], &plan, &mut ch, t);
            let (online, gid) = (gw.online, gw.id());
            let busy = (res.elapsed_s.ceil() as u64).max(1);
            let end = t + busy;
            self.node_busy_until[i] = end;
            self.gw_busy_until[j] = end;
            if online {
                self.push(end, Event::SessionEnd(j));
            }
            if let Some(v) = res.config_applied {
                for p in self.metrics.propagation.iter_mut() {
                    if p.node_id == b.node_id && p.version <= v && p.applied_at.is_none() {
                        p.applied_at = Some(end);
                    }
                }
            }
            self.metrics.sessions.push(SessionRecord {
                time: t,
                gateway_id: gid,
                node_id: b.node_id,
                planned: plan.page_count(),
                pages: res.pages.len() as u64,
                expired: res.expired.len() as u64,
                elapsed_s: res.elapsed_s,
                retries: res.retries,
                contact_lost: res.contact_lost,
                config_applied: res.config_applied,
                fw_applied: res.fw_applied,
            });
            let (pages, expired, lost) = (res.pages.len(), res.expired.len(), res.contact_lost);
            self.note(|| {
                format!(
                    "session gw={gid} node={} pages={pages} expired={expired} lost={lost} busy={busy}",
                    b.node_id
                )
            });
            self.trace(i, t);
        }
    }

    /// Whether any node roosting at gateway `j`'s camp still owes it pages.
    fn backlog(&self, j: usize) -> bool {
        if self.gw_busy_until[j] > self.now {
            return true;
        }
        let gw = &self.gateways[j];
        (0..self.nodes.len()).any(|i| {
            self.node_camp[i] == Some(self.gw_camp[j]) && !gw.pending_for(self.node_ids[i], self.last_max[i]).is_empty()
        })
    }

    fn duty_tick(&mut self) {
        let t = self.now;
        for j in 0..self.gateways.len() {
            let gw = &self.gateways[j];
            let needs_backlog = gw.is_awake() && !gw.config.duty.always_on;
            let backlog = needs_backlog && self.backlog(j);
            let was = self.gateways[j].is_awake();
            let awake = self.gateways[j].duty_tick(t, backlog);
            if awake != was {
                let id = self.gateways[j].id();
                self.note(|| format!("gateway={id} {}", if awake { "wake" } else { "sleep" }));
            }
        }
        self.push(t + DUTY_TICK_S, Event::DutyTick);
    }

    fn config_edit(&mut self, k: usize) {
        let edit = &self.sc.config_edits[k];
        for &node_id in &edit.nodes {
            let tasks = match &edit.tasks {
                Some(t) => t.clone(),
                None => match self.cloud.desired_config(node_id) {
                    Some(d) => d.tasks.clone(),
                    None => {
                        let i = self.node_index(node_id).expect("validated");
                        self.nodes[i].tasks().cloned().collect()
                    }
                },
            };
            let version = self
                .cloud
                .set_desired_config(node_id, tasks, edit.params.clone())
                .expect("validated task set");
            self.metrics.propagation.push(PropagationRecord {
                node_id,
                version,
                edited_at: self.now,
                first_contact_after: None,
                applied_at: None,
            });
            self.note(|| format!("config node={node_id} version={version}"));
        }
    }

    fn firmware(&mut self, k: usize) {
        let fw = &self.sc.firmware[k];
        let mut rng = rng_stream(self.sc.seed, stream::FIRMWARE, fw.version as u64);
        let mut image = vec![0u8; fw.size_bytes];
        rng.fill_bytes(&mut image);
        let version = self
            .cloud
            .register_firmware(FirmwareImage::new(fw.version, image, fw.chunk_size))
            .expect("validated image");
        for &node_id in &fw.nodes {
            self.cloud.set_desired_firmware(node_id, version).expect("registered");
        }
        self.note(|| format!("firmware version={version}"));
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Arrive(i) => self.arrive(i),
            Event::Depart(i) => self.depart(i),
            Event::Offline(j) => {
                self.gateways[j].online = false;
                let id = self.gateways[j].id();
                self.note(|| format!("gateway={id} offline"));
            }
            Event::Online(j) => {
                self.gateways[j].online = true;
                let rep = self.gateways[j].sync(&mut self.cloud, self.now);
                let id = self.gateways[j].id();
                let n = rep.map_or(0, |r| r.messages);
                self.note(|| format!("gateway={id} online uploaded={n}"));
            }
            Event::ConfigEdit(k) => self.config_edit(k),
            Event::Firmware(k) => self.firmware(k),
            Event::SessionEnd(j) => {
                self.gateways[j].upload(&mut self.cloud, self.now);
            }
            Event::DutyTick => self.duty_tick(),
            Event::NodeStep(i) => self.node_step(i),
            Event::GatewaySync(j) => {
                self.gateways[j].sync(&mut self.cloud, self.now);
                self.push(self.now + self.sc.sync_period_s, Event::GatewaySync(j));
            }
            Event::Checkpoint => {
                self.cloud.checkpoint();
                self.push(self.now + self.sc.metrics.checkpoint_period_s, Event::Checkpoint);
            }
        }
    }

    fn finish(mut self) -> SimOutput {
        let end = self.sc.duration_s();
        self.now = end;
        if self.sc.final_drain {
            for gw in &mut self.gateways {
                gw.online = true;
                gw.sync(&mut self.cloud, end);
            }
        }
        for i in 0..self.nodes.len() {
            self.trace(i, end);
        }
        let m = &mut self.metrics;
        for gw in &self.gateways {
            m.gateways.insert(gw.id(), gw.stats());
        }
        m.pages_downloaded = m.gateways.values().map(|s| s.pages_downloaded).sum();
        let store = self.cloud.store();
        m.pages_stored = store.page_count() as u64;
        m.mismatches = store.mismatches();
        m.duplicate_transfers = m.pages_downloaded.saturating_sub(m.pages_stored);
        let decoded: usize = store
            .pages()
            .filter(|(_, p)| p.quarantine.is_none())
            .map(|(_, p)| tdf::decode_stream(&p.data, &self.cloud.registry).map_or(0, |r| r.len()))
            .sum();
        m.duplicate_storage = (store.record_count() as u64).saturating_sub(decoded as u64);
        m.latency = LatencySummary::from_latencies(store.record_latencies());
        m.ledger_conflicts = self.cloud.ledger_conflicts();
        m.pages_lost = self
            .cloud
            .ledger()
            .nodes()
            .map(|(_, l)| l.expired.len())
            .sum();
        m.audit = audit(&self.cloud, &self.nodes, &self.gateways);
        SimOutput {
            metrics: self.metrics,
            cloud: self.cloud,
            nodes: self.nodes,
            gateways: self.gateways,
            weather: Vec::new(),
            event_log: self.log.unwrap_or_default(),
        }
    }
}

/// Accounts for every finalized page of every node.
pub fn audit(cloud: &CloudService, nodes: &[NodeState], gateways: &[GatewayState]) -> ConservationAudit {
    let mut buffered = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for gw in gateways {
        for msg in gw.upload_buffer() {
            match msg {
                CloudMessage::PageIngest(p) => {
                    buffered.insert((p.node_id, p.page_no));
                }
                CloudMessage::PageExpired(r) => {
                    reported.insert((r.node_id, r.page_no));
                }
                _ => {}
            }
        }
    }
    let mut a = ConservationAudit::default();
    for n in nodes {
        let id = n.node_id;
        a.open_records += n.log.open_records() as u64;
        let expired = cloud.ledger().node(id).map(|l| l.expired.clone()).unwrap_or_default();
        let head = n.log.head_page_no();
        for p in 0..n.log.next_page_no() {
            a.finalized += 1;
            if cloud.store().page(id, p).is_some() {
                a.stored += 1;
            } else if buffered.contains(&(id, p)) {
                a.buffered += 1;
            } else if p >= head {
                a.pending_on_node += 1;
            } else if expired.contains(p) || reported.contains(&(id, p)) {
                a.expired += 1;
            } else {
                a.unaccounted += 1;
            }
        }
    }
    a
}

/// Runs a validated scenario to completion.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<SimOutput, InvalidScenario> {
    scenario.validate()?;
    let sc = scenario;
    let weather = weather_factors(sc);
    let registry = standard_registry();
    let resolved = sc.resolved_nodes();
    let cpp_of = |page_size: usize| page_size.div_ceil(crate::node::DEFAULT_CHUNK_SIZE) as u32;

    let mut nodes = Vec::new();
    for r in &resolved {
        let spec = &r.spec;
        let mut battery = BatteryModel::new(spec.battery.capacity_mj, spec.battery.initial_fraction);
        battery.curve = spec.battery.curve.clone();
        battery.loads = spec.battery.loads.clone();
        battery.harvest = HarvestProfile {
            peak_mw: sc.harvest.peak_mw,
            sunrise_s: sc.harvest.sunrise_s,
            sunset_s: sc.harvest.sunset_s,
            constant_mw: sc.harvest.constant_mw,
            weather: weather.clone(),
        };
        let airtime = sc.link.packet_airtime_s(cpp_of(spec.page_size));
        let mut node = NodeState::new(
            r.id,
            battery,
            PageLog::new(spec.page_size, spec.capacity_pages),
            registry.clone(),
        )
        .with_tasks(r.tasks.clone())
        .with_radio_timing(airtime, crate::node::DEFAULT_BEACON_AIRTIME_S)
        .with_beacon_period(spec.beacon_period_s);
        node.motion = true;
        nodes.push(node);
    }

    let mut gateways = Vec::new();
    for g in &sc.gateways {
        let page_size = resolved.first().map_or(crate::pagelog::DEFAULT_PAGE_SIZE, |r| r.spec.page_size);
        gateways.push(GatewayState::new(GatewayConfig {
            gateway_id: g.id,
            duty: g.duty.clone(),
            page_size,
            page_rate: sc.link.page_rate,
            max_session_s: g.max_session_s,
            attempts: sc.link.attempts,
            beacon_timeout_s: g.beacon_timeout_s,
            ..GatewayConfig::default()
        }));
    }

    let n = nodes.len();
    let mut sim = Sim {
        sc,
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        cloud: CloudService::new(registry),
        node_ids: resolved.iter().map(|r| r.id).collect(),
        absences: resolved.iter().map(|r| r.spec.absences.clone()).collect(),
        node_mob: resolved.iter().map(|r| NodeMobility::new(r.spec.home_camp)).collect(),
        mob_rng: resolved
            .iter()
            .map(|r| rng_stream(sc.seed, stream::MOBILITY, r.id as u64))
            .collect(),
        node_camp: vec![None; n],
        node_busy_until: vec![0; n],
        depart_at: vec![0; n],
        last_contact_day: vec![None; n],
        last_max: vec![None; n],
        next_trace: vec![0; n],
        below: vec![false; n],
        nodes,
        gw_camp: sc.gateways.iter().map(|g| g.camp).collect(),
        gw_busy_until: vec![0; sc.gateways.len()],
        link_rng: sc
            .gateways
            .iter()
            .map(|g| rng_stream(sc.seed, stream::LINK, g.id as u64))
            .collect(),
        gateways,
        gateway_camps: sc.gateway_camps(),
        metrics: Metrics {
            hysteresis: sc.metrics.hysteresis_watch.map(|w| HysteresisStats {
                task_id: w.task_id,
                ..Default::default()
            }),
            ..Default::default()
        },
        log: opts.event_log.then(Vec::new),
    };

    let end = sc.duration_s();
    for i in 0..n {
        if sc.mobility.stationary {
            let home = sim.node_mob[i].camp;
            sim.nodes[i].motion = false;
            sim.node_camp[i] = sim.gateway_camps.contains(&home).then_some(home);
            sim.depart_at[i] = u64::MAX;
            sim.metrics.contacts += sim.node_camp[i].is_some() as u64;
        } else {
            sim.push(sc.mobility.forage_end_s as u64, Event::Arrive(i));
        }
        sim.push(sim.nodes[i].beacon_period_s(), Event::NodeStep(i));
    }
    for (j, g) in sc.gateways.iter().enumerate() {
        for (from, to) in offline_intervals(sc, g) {
            sim.push(from, Event::Offline(j));
            if to < end {
                sim.push(to, Event::Online(j));
            }
        }
        sim.push(sc.sync_period_s, Event::GatewaySync(j));
    }
    for (k, e) in sc.config_edits.iter().enumerate() {
        sim.push(e.at_s, Event::ConfigEdit(k));
    }
    for (k, f) in sc.firmware.iter().enumerate() {
        sim.push(f.at_s, Event::Firmware(k));
    }
    sim.push(0, Event::DutyTick);
    sim.push(sc.metrics.checkpoint_period_s, Event::Checkpoint);

    while let Some(Reverse((time, ev, _))) = sim.queue.pop() {
        if time >= end {
            break;
        }
        sim.now = time;
        sim.handle(ev);
    }
    let mut out = sim.finish();
    out.weather = weather;
    Ok(out)
}

/// Per-node intercontact gaps in days, grouped by node id.
pub fn intercontact_days(metrics: &Metrics) -> BTreeMap<NodeId, Vec<u64>> {
    let mut out: BTreeMap<NodeId, Vec<u64>> = BTreeMap::new();
    for r in &metrics.intercontacts {
        out.entry(r.node_id).or_default().push(r.days);
    }
    out
}
