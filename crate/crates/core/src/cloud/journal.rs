//! Append-only journal of ledger and configuration mutations, one JSON
//! document per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::DesiredConfig;
use super::ledger::NodeLedger;
use crate::node::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("corrupt journal at byte offset {offset}: {reason}")]
pub struct CorruptJournal {
    pub offset: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalEntry {
    KnownMax {
        node_id: NodeId,
        page_no: u32,
    },
    Downloaded {
        node_id: NodeId,
        page_no: u32,
    },
    Expired {
        node_id: NodeId,
        page_no: u32,
    },
    DesiredConfig {
        config: DesiredConfig,
    },
    DesiredFirmware {
        node_id: NodeId,
        version: u32,
    },
    /// Full state; replay discards everything before it.
    Snapshot {
        ledger: Vec<(NodeId, NodeLedger)>,
        configs: Vec<DesiredConfig>,
        firmware: Vec<(NodeId, u32)>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Journal {
    text: String,
    entries: usize,
}

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: &JournalEntry) {
        self.text
            .push_str(&serde_json::to_string(entry).expect("journal entries always serialize"));
        self.text.push('\n');
        self.entries += 1;
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    /// Parses a journal. Every line, including the last, must be complete
    /// and newline-terminated.
    pub fn parse(text: &str) -> Result<Vec<JournalEntry>, CorruptJournal> {
        let mut out = Vec::new();
        let mut offset = 0;
        while offset < text.len() {
            let rest = &text[offset..];
            let Some(nl) = rest.find('\n') else {
                return Err(CorruptJournal {
                    offset,
                    reason: "truncated final line".into(),
                });
            };
            let line = &rest[..nl];
            if !line.trim().is_empty() {
                let entry = serde_json::from_str(line).map_err(|e| CorruptJournal {
                    offset,
                    reason: e.to_string(),
                })?;
                out.push(entry);
            }
            offset += nl + 1;
        }
        Ok(out)
    }

    /// Parses raw bytes, reporting invalid UTF-8 at its byte offset.
    pub fn parse_bytes(bytes: &[u8]) -> Result<Vec<JournalEntry>, CorruptJournal> {
        match std::str::from_utf8(bytes) {
            Ok(text) => Self::parse(text),
            Err(e) => {
                let valid = e.valid_up_to();
                // Report the start of the line holding the bad byte.
                let offset = bytes[..valid]
                    .iter()
                    .rposition(|b| *b == b'\n')
                    .map_or(0, |p| p + 1);
                Err(CorruptJournal {
                    offset,
                    reason: "invalid utf-8".into(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_lines() {
        let mut j = Journal::new();
        j.append(&JournalEntry::KnownMax { node_id: 1, page_no: 41 });
        j.append(&JournalEntry::Downloaded { node_id: 1, page_no: 0 });
        assert_eq!(j.len(), 2);
        assert!(j.as_str().starts_with(r#"{"op":"known_max","node_id":1,"page_no":41}"#));
        let parsed = Journal::parse(j.as_str()).unwrap();
        assert_eq!(parsed[1], JournalEntry::Downloaded { node_id: 1, page_no: 0 });
    }

    #[test]
    fn truncation_reports_offset() {
        let mut j = Journal::new();
        j.append(&JournalEntry::Downloaded { node_id: 1, page_no: 0 });
        let good = j.as_str().len();
        j.append(&JournalEntry::Downloaded { node_id: 1, page_no: 1 });
        let cut = &j.as_str()[..j.as_str().len() - 5];
        let err = Journal::parse(cut).unwrap_err();
        assert_eq!(err.offset, good);
        // A complete line without its newline is still treated as truncated.
        let cut = &j.as_str()[..j.as_str().len() - 1];
        assert_eq!(Journal::parse(cut).unwrap_err().offset, good);
        assert_eq!(Journal::parse("").unwrap(), vec![]);
    }

    #[test]
    fn garbage_line() {
        let text = "{\"op\":\"expired\",\"node_id\":2,\"page_no\":3}\nnot json\n";
        assert_eq!(Journal::parse(text).unwrap_err().offset, 41);
        let mut bytes = b"{\"op\":\"expired\",\"node_id\":2,\"page_no\":3}\n".to_vec();
        bytes.extend([0xC3, 0x28, b'\n']);
        assert_eq!(Journal::parse_bytes(&bytes).unwrap_err().offset, 41);
    }
}
