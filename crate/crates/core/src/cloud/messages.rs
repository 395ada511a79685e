//! Gateway-to-cloud message documents.
//!
//! Each message is a JSON object; `type` names the endpoint and the remaining
//! fields are the message body.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::ledger::NextNeeded;
use super::store::{HealthReport, IngestOutcome};
use crate::node::{Beacon, NodeId, TaskConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeaconRelay {
    pub node_id: NodeId,
    pub max_page: Option<u32>,
    pub battery_mv: u16,
    pub config_version: u32,
    pub fw_version: u32,
    pub gateway_id: u32,
    pub time: u64,
}

impl BeaconRelay {
    pub fn from_beacon(b: &Beacon, gateway_id: u32, time: u64) -> Self {
        Self {
            node_id: b.node_id,
            max_page: b.max_page,
            battery_mv: b.battery_mv,
            config_version: b.config_version,
            fw_version: b.fw_version,
            gateway_id,
            time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageReport {
    pub node_id: NodeId,
    pub page_no: u32,
    pub gateway_id: u32,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageIngest {
    pub node_id: NodeId,
    pub page_no: u32,
    pub data_b64: String,
    pub gateway_id: u32,
    pub time: u64,
}

impl PageIngest {
    pub fn new(node_id: NodeId, page_no: u32, data: &[u8], gateway_id: u32, time: u64) -> Self {
        Self {
            node_id,
            page_no,
            data_b64: B64.encode(data),
            gateway_id,
            time,
        }
    }

    pub fn data(&self) -> Result<Vec<u8>, base64::DecodeError> {
        B64.decode(&self.data_b64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigDoc {
    pub node_id: NodeId,
    #[serde(default)]
    pub version: u32,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub params: BTreeMap<String, i64>,
}

/// A gateway's notice that a node now runs the given configuration version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigApplied {
    pub node_id: NodeId,
    pub version: u32,
    pub gateway_id: u32,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CloudMessage {
    BeaconRelay(BeaconRelay),
    PageReport(PageReport),
    PageExpired(PageReport),
    PageIngest(PageIngest),
    Health(HealthReport),
    Config(ConfigDoc),
    ConfigApplied(ConfigApplied),
}

impl CloudMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Per-node view returned to a gateway: the ledger answer plus desired versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub node_id: NodeId,
    pub known_max_page: Option<u32>,
    #[serde(flatten)]
    pub next: NextNeeded,
    pub desired_config_version: Option<u32>,
    pub desired_fw_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reply", rename_all = "snake_case")]
pub enum CloudReply {
    Ack,
    View(NodeView),
    Ingest { outcome: IngestOutcome },
    ConfigVersion { version: u32 },
    Error { message: String },
}
