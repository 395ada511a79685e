//! Tagged data format: fixed-layout sensor records interpreted through an
//! external metadata registry.
//!
//! A record on the wire is `type_id (u16 LE) | timestamp (u32 LE) | payload`.
//! The payload length is fixed per type and only known from the registry, so
//! a stream can only be split into records by a reader that holds the
//! matching descriptors.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes preceding the payload in every encoded record.
pub const HEADER_LEN: usize = 6;

/// Reserved type id: erased flash / page padding.
pub const PADDING_TYPE_ID: u16 = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TdfError {
    #[error("type id {0:#06x} already registered with a different descriptor")]
    DuplicateTypeId(u16),
    #[error("inconsistent descriptor for type {type_id:#06x}: {reason}")]
    InconsistentDescriptor { type_id: u16, reason: String },
    #[error("unknown type id {id:#06x} at offset {offset}")]
    UnknownTypeId { id: u16, offset: usize },
    #[error("truncated record at offset {0}")]
    TruncatedRecord(usize),
    #[error("malformed registry document: {0}")]
    BadRegistry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    U8,
    U16,
    U32,
    I16,
    I32,
}

impl ScalarKind {
    pub const fn width(self) -> usize {
        match self {
            ScalarKind::U8 => 1,
            ScalarKind::U16 | ScalarKind::I16 => 2,
            ScalarKind::U32 | ScalarKind::I32 => 4,
        }
    }

    /// Reads one little-endian value of this kind from the front of `bytes`.
    pub fn read(self, bytes: &[u8]) -> i64 {
        match self {
            ScalarKind::U8 => bytes[0] as i64,
            ScalarKind::U16 => u16::from_le_bytes([bytes[0], bytes[1]]) as i64,
            ScalarKind::I16 => i16::from_le_bytes([bytes[0], bytes[1]]) as i64,
            ScalarKind::U32 => {
                u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as i64
            }
            ScalarKind::I32 => {
                i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as i64
            }
        }
    }

    /// Appends `value` as this kind, saturating to the representable range.
    pub fn write(self, value: i64, out: &mut Vec<u8>) {
        match self {
            ScalarKind::U8 => out.push(value.clamp(0, u8::MAX as i64) as u8),
            ScalarKind::U16 => {
                out.extend_from_slice(&(value.clamp(0, u16::MAX as i64) as u16).to_le_bytes())
            }
            ScalarKind::I16 => out.extend_from_slice(
                &(value.clamp(i16::MIN as i64, i16::MAX as i64) as i16).to_le_bytes(),
            ),
            ScalarKind::U32 => {
                out.extend_from_slice(&(value.clamp(0, u32::MAX as i64) as u32).to_le_bytes())
            }
            ScalarKind::I32 => out.extend_from_slice(
                &(value.clamp(i32::MIN as i64, i32::MAX as i64) as i32).to_le_bytes(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: ScalarKind,
    #[serde(default)]
    pub unit: String,
}

impl FieldSpec {
    pub fn new(name: &str, kind: ScalarKind, unit: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind,
            unit: unit.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TdfTypeDescriptor {
    pub type_id: u16,
    pub name: String,
    pub payload_len: usize,
    pub fields: Vec<FieldSpec>,
}

impl TdfTypeDescriptor {
    /// Builds a descriptor whose payload length is derived from its fields.
    pub fn new(type_id: u16, name: &str, fields: Vec<FieldSpec>) -> Self {
        let payload_len = fields.iter().map(|f| f.kind.width()).sum();
        Self {
            type_id,
            name: name.to_owned(),
            payload_len,
            fields,
        }
    }

    pub fn validate(&self) -> Result<(), TdfError> {
        let bad = |reason: String| TdfError::InconsistentDescriptor {
            type_id: self.type_id,
            reason,
        };
        if self.type_id == PADDING_TYPE_ID {
            return Err(bad("type id 0xffff is reserved for padding".into()));
        }
        let width: usize = self.fields.iter().map(|f| f.kind.width()).sum();
        if width != self.payload_len {
            return Err(bad(format!(
                "payload_len {} but fields sum to {}",
                self.payload_len, width
            )));
        }
        Ok(())
    }

    /// Splits a payload into `(field, value)` pairs.
    pub fn decode_fields<'a>(&'a self, payload: &[u8]) -> Vec<(&'a FieldSpec, i64)> {
        let mut offset = 0;
        self.fields
            .iter()
            .map(|f| {
                let v = f.kind.read(&payload[offset..]);
                offset += f.kind.width();
                (f, v)
            })
            .collect()
    }

    /// Encodes field values in declaration order. Missing values are zero.
    pub fn encode_fields(&self, values: &[i64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_len);
        for (i, f) in self.fields.iter().enumerate() {
            f.kind.write(values.get(i).copied().unwrap_or(0), &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TdfRecord {
    pub type_id: u16,
    pub timestamp: u32,
    pub payload: Vec<u8>,
}

impl TdfRecord {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

impl fmt::Display for TdfRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:#06x}@{}", self.type_id, self.timestamp)?;
        for b in &self.payload {
            write!(f, " {b:02x}")?;
        }
        Ok(())
    }
}

/// Insert-only map of type descriptors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataRegistry {
    descriptors: BTreeMap<u16, TdfTypeDescriptor>,
}

#[derive(Serialize, Deserialize)]
struct RegistryDoc {
    #[serde(default, rename = "type")]
    types: Vec<TdfTypeDescriptor>,
}

impl MetadataRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a descriptor. Re-registering an identical descriptor is a no-op.
    pub fn register(&mut self, desc: TdfTypeDescriptor) -> Result<(), TdfError> {
        desc.validate()?;
        match self.descriptors.get(&desc.type_id) {
            Some(existing) if *existing == desc => Ok(()),
            Some(_) => Err(TdfError::DuplicateTypeId(desc.type_id)),
            None => {
                self.descriptors.insert(desc.type_id, desc);
                Ok(())
            }
        }
    }

    pub fn get(&self, type_id: u16) -> Option<&TdfTypeDescriptor> {
        self.descriptors.get(&type_id)
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TdfTypeDescriptor> {
        self.descriptors.values()
    }

    /// Checks a record's payload length against its registered descriptor.
    pub fn check(&self, rec: &TdfRecord) -> Result<(), TdfError> {
        let desc = self.get(rec.type_id).ok_or(TdfError::UnknownTypeId {
            id: rec.type_id,
            offset: 0,
        })?;
        if desc.payload_len != rec.payload.len() {
            return Err(TdfError::InconsistentDescriptor {
                type_id: rec.type_id,
                reason: format!(
                    "record payload is {} bytes, descriptor says {}",
                    rec.payload.len(),
                    desc.payload_len
                ),
            });
        }
        Ok(())
    }

    /// Serializes the registry as a TOML document with one `[[type]]` table per descriptor.
    pub fn to_toml(&self) -> String {
        let doc = RegistryDoc {
            types: self.descriptors.values().cloned().collect(),
        };
        toml::to_string(&doc).expect("registry is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self, TdfError> {
        let doc: RegistryDoc =
            toml::from_str(text).map_err(|e| TdfError::BadRegistry(e.to_string()))?;
        let mut reg = Self::new();
        for d in doc.types {
            reg.register(d)?;
        }
        Ok(reg)
    }
}

pub fn encode_record(rec: &TdfRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(rec.encoded_len());
    encode_into(rec, &mut out);
    out
}

pub fn encode_into(rec: &TdfRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&rec.type_id.to_le_bytes());
    out.extend_from_slice(&rec.timestamp.to_le_bytes());
    out.extend_from_slice(&rec.payload);
}

/// Returns true when `rest` starts with padding rather than a record header.
fn at_padding(rest: &[u8]) -> bool {
    matches!(rest, [0xFF] | [0xFF, 0xFF, ..])
}

/// Parses records until the data ends or padding begins.
pub fn decode_stream(data: &[u8], registry: &MetadataRegistry) -> Result<Vec<TdfRecord>, TdfError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < data.len() {
        let rest = &data[offset..];
        if at_padding(rest) {
            break;
        }
        if rest.len() < HEADER_LEN {
            return Err(TdfError::TruncatedRecord(offset));
        }
        let type_id = u16::from_le_bytes([rest[0], rest[1]]);
        let desc = registry
            .get(type_id)
            .ok_or(TdfError::UnknownTypeId { id: type_id, offset })?;
        let end = HEADER_LEN + desc.payload_len;
        if rest.len() < end {
            return Err(TdfError::TruncatedRecord(offset));
        }
        out.push(TdfRecord {
            type_id,
            timestamp: u32::from_le_bytes([rest[2], rest[3], rest[4], rest[5]]),
            payload: rest[HEADER_LEN..end].to_vec(),
        });
        offset += end;
    }
    Ok(out)
}

/// Standard sensor types carried by the simulated nodes.
pub mod types {
    use super::*;

    pub const BATTERY: u16 = 0x0001;
    pub const GPS: u16 = 0x0002;
    pub const TEMPERATURE: u16 = 0x0003;

    pub fn battery() -> TdfTypeDescriptor {
        TdfTypeDescriptor::new(
            BATTERY,
            "battery_mv",
            vec![FieldSpec::new("battery_mv", ScalarKind::U16, "mV")],
        )
    }

    pub fn gps() -> TdfTypeDescriptor {
        TdfTypeDescriptor::new(
            GPS,
            "gps",
            vec![
                FieldSpec::new("lat", ScalarKind::I32, "1e-7 deg"),
                FieldSpec::new("lon", ScalarKind::I32, "1e-7 deg"),
            ],
        )
    }

    pub fn temperature() -> TdfTypeDescriptor {
        TdfTypeDescriptor::new(
            TEMPERATURE,
            "temperature",
            vec![FieldSpec::new("temp", ScalarKind::I16, "0.01 degC")],
        )
    }

    pub fn standard_registry() -> MetadataRegistry {
        let mut reg = MetadataRegistry::new();
        for d in [battery(), gps(), temperature()] {
            reg.register(d).expect("standard descriptors are consistent");
        }
        reg
    }
}
