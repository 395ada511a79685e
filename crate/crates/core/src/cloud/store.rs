//! Page ingestion with per-(node, page) deduplication, and the health log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::node::NodeId;
use crate::tdf::{self, MetadataRegistry, TdfRecord, HEADER_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestOutcome {
    Stored,
    Duplicate,
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredPage {
    pub data: Vec<u8>,
    pub gateway_id: u32,
    /// When the gateway downloaded the page.
    pub time: u64,
    /// When the page reached the store.
    pub ingested_at: u64,
    /// Set when the page could not be decoded with the registry.
    pub quarantine: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RecordKey {
    pub node_id: NodeId,
    pub type_id: u16,
    pub timestamp: u32,
    pub ordinal: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RecordLoc {
    page_no: u32,
    offset: u16,
    payload_len: u16,
}

#[derive(Debug, Clone, Default)]
pub struct IngestStore {
    pages: BTreeMap<(NodeId, u32), StoredPage>,
    records: BTreeMap<RecordKey, RecordLoc>,
    duplicates: u64,
    mismatches: u64,
}

impl IngestStore {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn ingest(
        &mut self,
        registry: &MetadataRegistry,
        node_id: NodeId,
        page_no: u32,
        data: &[u8],
        gateway_id: u32,
        time: u64,
        ingested_at: u64,
    ) -> IngestOutcome {
        if let Some(existing) = self.pages.get(&(node_id, page_no)) {
            return if existing.data == data {
                self.duplicates += 1;
                IngestOutcome::Duplicate
            } else {
                self.mismatches += 1;
                IngestOutcome::Mismatch
            };
        }
        let quarantine = match tdf::decode_stream(data, registry) {
            Ok(records) => {
                let mut offset = 0usize;
                for rec in records {
                    let mut key = RecordKey {
                        node_id,
                        type_id: rec.type_id,
                        timestamp: rec.timestamp,
                        ordinal: 0,
                    };
                    while self.records.contains_key(&key) {
                        key.ordinal += 1;
                    }
                    self.records.insert(
                        key,
                        RecordLoc {
                            page_no,
                            offset: offset as u16,
                            payload_len: rec.payload.len() as u16,
                        },
                    );
                    offset += rec.encoded_len();
                }
                None
            }
            Err(e) => Some(e.to_string()),
        };
        self.pages.insert(
            (node_id, page_no),
            StoredPage {
                data: data.to_vec(),
                gateway_id,
                time,
                ingested_at,
                quarantine,
            },
        );
        IngestOutcome::Stored
    }

    pub fn page(&self, node_id: NodeId, page_no: u32) -> Option<&StoredPage> {
        self.pages.get(&(node_id, page_no))
    }

    pub fn pages(&self) -> impl Iterator<Item = ((NodeId, u32), &StoredPage)> {
        self.pages.iter().map(|(k, v)| (*k, v))
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn mismatches(&self) -> u64 {
        self.mismatches
    }

    pub fn quarantined(&self) -> impl Iterator<Item = ((NodeId, u32), &str)> {
        self.pages
            .iter()
            .filter_map(|(k, p)| p.quarantine.as_deref().map(|q| (*k, q)))
    }

    /// Records of one node, ordered by type, timestamp and ordinal.
    pub fn records_for(&self, node_id: NodeId) -> Vec<(RecordKey, TdfRecord)> {
        let lo = RecordKey {
            node_id,
            type_id: 0,
            timestamp: 0,
            ordinal: 0,
        };
        let hi = RecordKey {
            node_id,
            type_id: u16::MAX,
            timestamp: u32::MAX,
            ordinal: u16::MAX,
        };
        self.records
            .range(lo..=hi)
            .map(|(k, loc)| (*k, self.record_at(k, loc)))
            .collect()
    }

    /// Ingest delay of every stored record, in seconds after its timestamp.
    pub fn record_latencies(&self) -> Vec<i64> {
        self.records
            .iter()
            .map(|(k, loc)| self.pages[&(k.node_id, loc.page_no)].ingested_at as i64 - k.timestamp as i64)
            .collect()
    }

    fn record_at(&self, key: &RecordKey, loc: &RecordLoc) -> TdfRecord {
        let page = &self.pages[&(key.node_id, loc.page_no)].data;
        let start = loc.offset as usize + HEADER_LEN;
        TdfRecord {
            type_id: key.type_id,
            timestamp: key.timestamp,
            payload: page[start..start + loc.payload_len as usize].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub gateway_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uptime_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_mv: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temp_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_pages: Option<u64>,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealthEntry {
    pub report: HealthReport,
    pub server_time: u64,
}

#[derive(Debug, Clone, Default)]
pub struct HealthLog {
    entries: BTreeMap<u32, Vec<HealthEntry>>,
}

impl HealthLog {
    pub fn record(&mut self, report: HealthReport, server_time: u64) {
        self.entries
            .entry(report.gateway_id)
            .or_default()
            .push(HealthEntry {
                report,
                server_time,
            });
    }

    pub fn for_gateway(&self, gateway_id: u32) -> &[HealthEntry] {
        self.entries
            .get(&gateway_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn all(&self) -> impl Iterator<Item = &HealthEntry> {
        self.entries.values().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pagelog::PageLog;
    use crate::tdf::types;

    fn page_with(values: &[u16]) -> Vec<u8> {
        let mut log = PageLog::new(256, 16);
        for (i, v) in values.iter().enumerate() {
            let rec = TdfRecord {
                type_id: types::BATTERY,
                timestamp: 100 + i as u32,
                payload: v.to_le_bytes().to_vec(),
            };
            log.append(&tdf::encode_record(&rec)).unwrap();
        }
        log.flush();
        log.read_page(0).unwrap().data.clone()
    }

    #[test]
    fn store_then_duplicate_then_mismatch() {
        let reg = types::standard_registry();
        let mut s = IngestStore::new();
        let page = page_with(&[3800, 3810, 3820]);
        assert_eq!(s.ingest(&reg, 1, 40, &page, 1, 10, 10), IngestOutcome::Stored);
        assert_eq!(s.record_count(), 3);
        assert_eq!(s.ingest(&reg, 1, 40, &page, 2, 20, 20), IngestOutcome::Duplicate);
        assert_eq!(s.record_count(), 3);
        assert_eq!(s.page(1, 40).unwrap().gateway_id, 1);

        let other = page_with(&[1, 2, 3]);
        assert_eq!(s.ingest(&reg, 1, 40, &other, 2, 30, 30), IngestOutcome::Mismatch);
        assert_eq!(s.page(1, 40).unwrap().data, page);
        assert_eq!((s.duplicates(), s.mismatches()), (1, 1));

        let recs = s.records_for(1);
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].1.payload, 3810u16.to_le_bytes());
        assert_eq!(recs[2].1.payload, 3820u16.to_le_bytes());
    }

    #[test]
    fn unknown_type_is_quarantined() {
        let reg = MetadataRegistry::new();
        let mut s = IngestStore::new();
        let page = page_with(&[1]);
        assert_eq!(s.ingest(&reg, 2, 0, &page, 1, 10, 10), IngestOutcome::Stored);
        assert_eq!(s.quarantined().count(), 1);
        assert_eq!(s.record_count(), 0);
    }

    #[test]
    fn health_order_and_optional_fields() {
        let mut h = HealthLog::default();
        for t in [5, 3, 9] {
            h.record(
                HealthReport {
                    gateway_id: 4,
                    uptime_s: Some(t),
                    battery_mv: None,
                    temp_c: None,
                    free_pages: None,
                    time: t,
                },
                100 + t,
            );
        }
        let times: Vec<u64> = h.for_gateway(4).iter().map(|e| e.report.time).collect();
        assert_eq!(times, vec![5, 3, 9]);
        assert!(h.for_gateway(5).is_empty());
        let parsed: HealthReport = serde_json::from_str(r#"{"gateway_id":1,"time":3}"#).unwrap();
        assert_eq!(parsed.battery_mv, None);
    }
}
