//! Metrics collected during a run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::gateway::GatewayStats;
use crate::node::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub time: u64,
    pub gateway_id: u32,
    pub node_id: NodeId,
    pub planned: u64,
    pub pages: u64,
    pub expired: u64,
    pub elapsed_s: f64,
    pub retries: u64,
    pub contact_lost: bool,
    pub config_applied: Option<u32>,
    pub fw_applied: Option<u32>,
}

/// Gap between two consecutive days on which a node roosted within range of
/// a gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IntercontactRecord {
    pub node_id: NodeId,
    pub from: u64,
    pub to: u64,
    pub days: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time: u64,
    pub node_id: NodeId,
    pub battery_mv: u16,
    pub charge_mj: f64,
    pub running: String,
    pub max_page: Option<u32>,
    pub camp: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TaskStart {
    pub time: u64,
    pub node_id: NodeId,
    pub task_id: u16,
    pub battery_mv: u16,
}

/// Checks that a watched task never starts below its high threshold and
/// never keeps sampling once the battery has dropped below its low
/// threshold (until it recovers above high).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HysteresisStats {
    pub task_id: u16,
    pub starts: u64,
    pub stops: u64,
    pub samples: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PropagationRecord {
    pub node_id: NodeId,
    pub version: u32,
    pub edited_at: u64,
    /// First beacon from the node heard by an online-or-offline gateway
    /// after the edit.
    pub first_contact_after: Option<u64>,
    pub applied_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LatencySummary {
    pub records: u64,
    pub p50_s: i64,
    pub p90_s: i64,
    pub p99_s: i64,
    pub max_s: i64,
    /// Records that reached the store before they were taken.
    pub causality_violations: u64,
}

impl LatencySummary {
    pub fn from_latencies(mut lat: Vec<i64>) -> Self {
        if lat.is_empty() {
            return Self::default();
        }
        lat.sort_unstable();
        let pick = |q: f64| lat[((lat.len() - 1) as f64 * q).round() as usize];
        Self {
            records: lat.len() as u64,
            p50_s: pick(0.5),
            p90_s: pick(0.9),
            p99_s: pick(0.99),
            max_s: *lat.last().unwrap(),
            causality_violations: lat.iter().filter(|l| **l < 0).count() as u64,
        }
    }
}

/// Where every finalized page ended up. Each page is counted once, in the
/// first matching bucket of stored, buffered at a gateway, still pending on
/// the node, reported lost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConservationAudit {
    pub finalized: u64,
    pub stored: u64,
    pub buffered: u64,
    pub pending_on_node: u64,
    pub expired: u64,
    pub unaccounted: u64,
    /// Records in the still-open page of each node, not yet downloadable.
    pub open_records: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub sessions: Vec<SessionRecord>,
    pub intercontacts: Vec<IntercontactRecord>,
    pub contacts: u64,
    pub trace: Vec<TraceRow>,
    pub task_starts: Vec<TaskStart>,
    pub hysteresis: Option<HysteresisStats>,
    pub propagation: Vec<PropagationRecord>,
    pub gateways: BTreeMap<u32, GatewayStats>,
    pub latency: LatencySummary,
    pub audit: ConservationAudit,
    pub pages_downloaded: u64,
    pub pages_stored: u64,
    pub duplicate_transfers: u64,
    pub duplicate_storage: u64,
    pub mismatches: u64,
    pub pages_lost: u64,
    pub ledger_conflicts: u64,
    pub records_taken: u64,
}

impl Metrics {
    pub fn summary(&self) -> Summary {
        let applied: Vec<u64> = self
            .propagation
            .iter()
            .filter_map(|p| Some(p.applied_at? - p.edited_at))
            .collect();
        Summary {
            sessions: self.sessions.len() as u64,
            contacts: self.contacts,
            pages_downloaded: self.pages_downloaded,
            pages_stored: self.pages_stored,
            duplicate_transfers: self.duplicate_transfers,
            duplicate_storage: self.duplicate_storage,
            mismatches: self.mismatches,
            pages_lost: self.pages_lost,
            ledger_conflicts: self.ledger_conflicts,
            records_taken: self.records_taken,
            latency: self.latency,
            audit: self.audit,
            hysteresis: self.hysteresis.clone(),
            configs_pending: self.propagation.iter().filter(|p| p.applied_at.is_none()).count() as u64,
            config_apply_delay_max_s: applied.iter().copied().max(),
            gateways: self.gateways.clone(),
        }
    }
}

/// Compact run summary, written as summary.json by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub sessions: u64,
    pub contacts: u64,
    pub pages_downloaded: u64,
    pub pages_stored: u64,
    pub duplicate_transfers: u64,
    pub duplicate_storage: u64,
    pub mismatches: u64,
    pub pages_lost: u64,
    pub ledger_conflicts: u64,
    pub records_taken: u64,
    pub latency: LatencySummary,
    pub audit: ConservationAudit,
    pub hysteresis: Option<HysteresisStats>,
    pub configs_pending: u64,
    pub config_apply_delay_max_s: Option<u64>,
    pub gateways: BTreeMap<u32, GatewayStats>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_by_rank() {
        let s = LatencySummary::from_latencies((1..=101).rev().collect());
        assert_eq!((s.p50_s, s.p90_s, s.p99_s, s.max_s), (51, 91, 100, 101));
        assert_eq!(s.causality_violations, 0);
        let s = LatencySummary::from_latencies(vec![-1, 5]);
        assert_eq!(s.causality_violations, 1);
        assert_eq!(LatencySummary::from_latencies(vec![]), LatencySummary::default());
    }
}
