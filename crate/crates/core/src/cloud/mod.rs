//! Coordination service: download ledger, desired configuration and
//! firmware, deduplicating ingest, and gateway health.

pub mod config;
pub mod journal;
pub mod ledger;
pub mod messages;
pub mod ranges;
pub mod store;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::node::task::InvalidTaskConfig;
use crate::node::{NodeId, TaskConfig};
use crate::tdf::MetadataRegistry;

pub use config::{ConfigRegistry, DesiredConfig, FirmwareImage, FirmwareRegistry};
pub use journal::{CorruptJournal, Journal, JournalEntry};
pub use ledger::{DownloadLedger, LedgerError, NextNeeded, NodeLedger};
pub use messages::{CloudMessage, CloudReply, NodeView};
pub use ranges::{PageRange, RangeSet};
pub use store::{HealthLog, HealthReport, IngestOutcome, IngestStore};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CloudError {
    #[error(transparent)]
    InvalidTaskConfig(InvalidTaskConfig),
    #[error("firmware image is empty or has an unusable chunk size")]
    InvalidImage,
    #[error("firmware checksum does not match the image")]
    ChecksumMismatch,
    #[error("firmware version {0} already registered with different content")]
    VersionExists(u32),
    #[error("unknown firmware version {0}")]
    UnknownFirmware(u32),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("page payload is not valid base64")]
    BadPayload,
    #[error(transparent)]
    Journal(#[from] CorruptJournal),
}

/// When a node was last confirmed to run a given configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedConfig {
    pub version: u32,
    pub gateway_id: u32,
    pub time: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CloudService {
    pub registry: MetadataRegistry,
    ledger: DownloadLedger,
    configs: ConfigRegistry,
    firmware: FirmwareRegistry,
    store: IngestStore,
    health: HealthLog,
    applied: BTreeMap<NodeId, AppliedConfig>,
    journal: Journal,
    ledger_conflicts: u64,
}

impl CloudService {
    pub fn new(registry: MetadataRegistry) -> Self {
        Self {
            registry,
            ..Self::default()
        }
    }

    /// Rebuilds ledger and desired state from a journal. The ingest store and
    /// health log are not journaled and start empty.
    pub fn recover(registry: MetadataRegistry, journal_text: &str) -> Result<Self, CloudError> {
        let mut svc = Self::new(registry);
        for entry in Journal::parse(journal_text)? {
            svc.apply_entry(&entry)?;
            svc.journal.append(&entry);
        }
        Ok(svc)
    }

    fn apply_entry(&mut self, entry: &JournalEntry) -> Result<(), CloudError> {
        match entry {
            JournalEntry::KnownMax { node_id, page_no } => {
                self.ledger.observe_max(*node_id, Some(*page_no));
            }
            JournalEntry::Downloaded { node_id, page_no } => {
                self.ledger.mark_downloaded(*node_id, *page_no)?;
            }
            JournalEntry::Expired { node_id, page_no } => {
                self.ledger.mark_expired(*node_id, *page_no)?;
            }
            JournalEntry::DesiredConfig { config } => self.configs.restore(config.clone()),
            JournalEntry::DesiredFirmware { node_id, version } => {
                self.firmware.restore_desired(*node_id, *version)
            }
            JournalEntry::Snapshot {
                ledger,
                configs,
                firmware,
            } => {
                self.ledger = DownloadLedger::from_nodes(ledger.iter().cloned());
                self.configs = ConfigRegistry::default();
                for c in configs {
                    self.configs.restore(c.clone());
                }
                for (n, v) in firmware {
                    self.firmware.restore_desired(*n, *v);
                }
            }
        }
        Ok(())
    }

    /// Appends a full-state snapshot entry to the journal.
    pub fn checkpoint(&mut self) {
        let entry = JournalEntry::Snapshot {
            ledger: self.ledger.nodes().map(|(n, l)| (n, l.clone())).collect(),
            configs: self.configs.all().cloned().collect(),
            firmware: self.firmware.all_desired().collect(),
        };
        self.journal.append(&entry);
    }

    pub fn journal(&self) -> &Journal {
        &self.journal
    }

    pub fn ledger(&self) -> &DownloadLedger {
        &self.ledger
    }

    pub fn store(&self) -> &IngestStore {
        &self.store
    }

    pub fn health(&self) -> &HealthLog {
        &self.health
    }

    pub fn ledger_conflicts(&self) -> u64 {
        self.ledger_conflicts
    }

    pub fn applied_config(&self, node_id: NodeId) -> Option<AppliedConfig> {
        self.applied.get(&node_id).copied()
    }

    pub fn observe_max(&mut self, node_id: NodeId, max_page: Option<u32>) {
        if self.ledger.observe_max(node_id, max_page) {
            let page_no = max_page.expect("changed implies a page");
            self.journal.append(&JournalEntry::KnownMax { node_id, page_no });
        }
    }

    pub fn next_needed(&mut self, node_id: NodeId, max_page: Option<u32>) -> NextNeeded {
        self.observe_max(node_id, max_page);
        self.ledger.peek_next_needed(node_id)
    }

    pub fn mark_downloaded(&mut self, node_id: NodeId, page_no: u32) -> Result<bool, CloudError> {
        let new = self.ledger.mark_downloaded(node_id, page_no).inspect_err(|_| {
            self.ledger_conflicts += 1;
        })?;
        if new {
            self.journal.append(&JournalEntry::Downloaded { node_id, page_no });
        }
        Ok(new)
    }

    pub fn mark_expired(&mut self, node_id: NodeId, page_no: u32) -> Result<bool, CloudError> {
        let new = self.ledger.mark_expired(node_id, page_no).inspect_err(|_| {
            self.ledger_conflicts += 1;
        })?;
        if new {
            self.journal.append(&JournalEntry::Expired { node_id, page_no });
        }
        Ok(new)
    }

    pub fn ingest(
        &mut self,
        node_id: NodeId,
        page_no: u32,
        data: &[u8],
        gateway_id: u32,
        time: u64,
        now: u64,
    ) -> IngestOutcome {
        self.store
            .ingest(&self.registry, node_id, page_no, data, gateway_id, time, now)
    }

    pub fn set_desired_config(
        &mut self,
        node_id: NodeId,
        tasks: Vec<TaskConfig>,
        params: BTreeMap<String, i64>,
    ) -> Result<u32, CloudError> {
        let version = self.configs.set(node_id, tasks, params)?;
        let config = self.configs.get(node_id).expect("just set").clone();
        self.journal.append(&JournalEntry::DesiredConfig { config });
        Ok(version)
    }

    pub fn desired_config(&self, node_id: NodeId) -> Option<&DesiredConfig> {
        self.configs.get(node_id)
    }

    pub fn register_firmware(&mut self, image: FirmwareImage) -> Result<u32, CloudError> {
        self.firmware.register(image)
    }

    pub fn firmware_image(&self, version: u32) -> Option<&FirmwareImage> {
        self.firmware.image(version)
    }

    pub fn firmware_chunks(&self, version: u32) -> Option<Vec<Vec<u8>>> {
        self.firmware.chunks(version)
    }

    pub fn set_desired_firmware(&mut self, node_id: NodeId, version: u32) -> Result<(), CloudError> {
        self.firmware.set_desired(node_id, version)?;
        self.journal
            .append(&JournalEntry::DesiredFirmware { node_id, version });
        Ok(())
    }

    pub fn desired_firmware(&self, node_id: NodeId) -> Option<u32> {
        self.firmware.desired(node_id)
    }

    pub fn record_health(&mut self, report: HealthReport, server_time: u64) {
        self.health.record(report, server_time);
    }

    pub fn view(&self, node_id: NodeId) -> NodeView {
        NodeView {
            node_id,
            known_max_page: self.ledger.node(node_id).and_then(|l| l.known_max_page),
            next: self.ledger.peek_next_needed(node_id),
            desired_config_version: self.configs.get(node_id).map(|c| c.version),
            desired_fw_version: self.firmware.desired(node_id),
        }
    }

    /// Every node the service knows about through the ledger or desired state.
    pub fn known_nodes(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self
            .ledger
            .nodes()
            .map(|(n, _)| n)
            .chain(self.configs.all().map(|c| c.node_id))
            .chain(self.firmware.all_desired().map(|(n, _)| n))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Dispatches one gateway message.
    pub fn handle(&mut self, msg: &CloudMessage, now: u64) -> Result<CloudReply, CloudError> {
        match msg {
            CloudMessage::BeaconRelay(b) => {
                self.observe_max(b.node_id, b.max_page);
                Ok(CloudReply::View(self.view(b.node_id)))
            }
            CloudMessage::PageReport(r) => {
                self.mark_downloaded(r.node_id, r.page_no)?;
                Ok(CloudReply::Ack)
            }
            CloudMessage::PageExpired(r) => {
                self.mark_expired(r.node_id, r.page_no)?;
                Ok(CloudReply::Ack)
            }
            CloudMessage::PageIngest(p) => {
                let data = p.data().map_err(|_| CloudError::BadPayload)?;
                let outcome = self.ingest(p.node_id, p.page_no, &data, p.gateway_id, p.time, now);
                Ok(CloudReply::Ingest { outcome })
            }
            CloudMessage::Health(h) => {
                self.record_health(h.clone(), now);
                Ok(CloudReply::Ack)
            }
            CloudMessage::Config(c) => {
                let version = self.set_desired_config(c.node_id, c.tasks.clone(), c.params.clone())?;
                Ok(CloudReply::ConfigVersion { version })
            }
            CloudMessage::ConfigApplied(a) => {
                let newer = self
                    .applied
                    .get(&a.node_id)
                    .is_none_or(|prev| prev.version <= a.version);
                if newer {
                    self.applied.insert(
                        a.node_id,
                        AppliedConfig {
                            version: a.version,
                            gateway_id: a.gateway_id,
                            time: a.time,
                        },
                    );
                }
                Ok(CloudReply::Ack)
            }
        }
    }
}
