use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ranges::{PageRange, RangeSet};
use crate::node::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("node {node_id} page {page_no} was already reported expired")]
    ConflictsWithExpired { node_id: NodeId, page_no: u32 },
    #[error("node {node_id} page {page_no} was already reported downloaded")]
    ConflictsWithDownloaded { node_id: NodeId, page_no: u32 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub downloaded: RangeSet,
    pub expired: RangeSet,
    pub known_max_page: Option<u32>,
}

impl NodeLedger {
    pub fn covered(&self) -> RangeSet {
        self.downloaded.union(&self.expired)
    }
}

/// Answer to "what does this node still owe us".
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NextNeeded {
    pub lowest: Option<u32>,
    pub pending: Vec<PageRange>,
}

impl NextNeeded {
    pub fn pending_pages(&self) -> u64 {
        self.pending.iter().map(|r| r.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadLedger {
    nodes: BTreeMap<NodeId, NodeLedger>,
}

impl DownloadLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_nodes(nodes: impl IntoIterator<Item = (NodeId, NodeLedger)>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
        }
    }

    pub fn node(&self, node_id: NodeId) -> Option<&NodeLedger> {
        self.nodes.get(&node_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeLedger)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    /// Raises the known maximum page. Returns true if it changed.
    pub fn observe_max(&mut self, node_id: NodeId, max_page: Option<u32>) -> bool {
        let Some(m) = max_page else { return false };
        let entry = self.nodes.entry(node_id).or_default();
        if entry.known_max_page.is_none_or(|k| m > k) {
            entry.known_max_page = Some(m);
            true
        } else {
            false
        }
    }

    /// Lowest missing page and missing ranges up to the highest page known
    /// for the node (after folding in `max_page`).
    pub fn next_needed(&mut self, node_id: NodeId, max_page: Option<u32>) -> NextNeeded {
        self.observe_max(node_id, max_page);
        self.peek_next_needed(node_id)
    }

    pub fn peek_next_needed(&self, node_id: NodeId) -> NextNeeded {
        let Some(entry) = self.nodes.get(&node_id) else {
            return NextNeeded::default();
        };
        let Some(max) = entry.known_max_page else {
            return NextNeeded::default();
        };
        let pending = entry.covered().gaps(0, max);
        NextNeeded {
            lowest: pending.first().map(|r| r.first),
            pending,
        }
    }

    /// Returns true if the page was newly recorded.
    pub fn mark_downloaded(&mut self, node_id: NodeId, page_no: u32) -> Result<bool, LedgerError> {
        let entry = self.nodes.entry(node_id).or_default();
        if entry.expired.contains(page_no) {
            return Err(LedgerError::ConflictsWithExpired { node_id, page_no });
        }
        Ok(entry.downloaded.insert(page_no))
    }

    pub fn mark_expired(&mut self, node_id: NodeId, page_no: u32) -> Result<bool, LedgerError> {
        let entry = self.nodes.entry(node_id).or_default();
        if entry.downloaded.contains(page_no) {
            return Err(LedgerError::ConflictsWithDownloaded { node_id, page_no });
        }
        Ok(entry.expired.insert(page_no))
    }
}
