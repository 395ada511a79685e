//! Gateway-to-node remote procedure calls.
//!
//! A request packet is an opcode byte followed by its arguments; the node
//! answers every request with exactly one response packet. Integers are
//! little-endian, byte strings carry a one-byte length prefix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::battery::Activity;
use super::task::{Condition, TaskConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RpcCommand {
    GetStatus,
    ReadPageChunk { page_no: u32, chunk_index: u8 },
    GetTaskConfigs,
    PutTaskConfig(TaskConfig),
    DeleteTaskConfig(u16),
    SetParam { key: String, value: i64 },
    PutFwChunk { version: u32, index: u16, bytes: Vec<u8> },
    ApplyFw { version: u32, chunk_count: u16, checksum: u32 },
    HoldRadio { seconds: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node_id: u32,
    pub clock: u64,
    pub battery_mv: u16,
    pub max_page: Option<u32>,
    pub head_page: u32,
    pub config_version: u32,
    pub fw_version: u32,
    pub running: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RpcResponse {
    Ack,
    Status(NodeStatus),
    PageChunk(Vec<u8>),
    TaskConfigs(Vec<TaskConfig>),
    Error(RpcError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum RpcError {
    #[error("page {page_no} expired, oldest retained is {head}")]
    PageExpired { page_no: u32, head: u32 },
    #[error("page {0} not ready")]
    PageNotReady(u32),
    #[error("chunk index out of range")]
    BadChunkIndex,
    #[error("firmware checksum mismatch")]
    FwChecksumMismatch,
    #[error("firmware chunks missing")]
    FwIncomplete,
    #[error("unknown command {0:#04x}")]
    UnknownCommand(u8),
    #[error("malformed packet")]
    Malformed,
    #[error("radio asleep")]
    RadioAsleep,
    #[error("no task {0}")]
    TaskNotFound(u16),
    #[error("invalid task config")]
    InvalidTaskConfig,
}

pub mod opcode {
    pub const GET_STATUS: u8 = 0x01;
    pub const READ_PAGE_CHUNK: u8 = 0x02;
    pub const GET_TASK_CONFIGS: u8 = 0x03;
    pub const PUT_TASK_CONFIG: u8 = 0x04;
    pub const DELETE_TASK_CONFIG: u8 = 0x05;
    pub const SET_PARAM: u8 = 0x06;
    pub const PUT_FW_CHUNK: u8 = 0x07;
    pub const APPLY_FW: u8 = 0x08;
    pub const HOLD_RADIO: u8 = 0x09;
}

const NO_PAGE: u32 = u32::MAX;

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RpcError> {
        if self.buf.len() < n {
            return Err(RpcError::Malformed);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, RpcError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, RpcError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, RpcError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, RpcError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<Vec<u8>, RpcError> {
        let n = self.u8()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn done(&self) -> Result<(), RpcError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(RpcError::Malformed)
        }
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    let n = b.len().min(u8::MAX as usize);
    out.push(n as u8);
    out.extend_from_slice(&b[..n]);
}

fn write_condition(out: &mut Vec<u8>, c: &Condition) {
    match *c {
        Condition::TimeOfDay { from_s, to_s } => {
            out.push(0);
            out.extend_from_slice(&from_s.to_le_bytes());
            out.extend_from_slice(&to_s.to_le_bytes());
        }
        Condition::BatteryAtLeast { mv } => {
            out.push(1);
            out.extend_from_slice(&mv.to_le_bytes());
        }
        Condition::BatteryBelow { mv } => {
            out.push(2);
            out.extend_from_slice(&mv.to_le_bytes());
        }
        Condition::Motion { moving } => {
            out.push(3);
            out.push(moving as u8);
        }
        Condition::SamplesAtLeast { count } => {
            out.push(4);
            out.extend_from_slice(&count.to_le_bytes());
        }
    }
}

fn read_condition(r: &mut Reader) -> Result<Condition, RpcError> {
    Ok(match r.u8()? {
        0 => Condition::TimeOfDay {
            from_s: r.u32()?,
            to_s: r.u32()?,
        },
        1 => Condition::BatteryAtLeast { mv: r.u16()? },
        2 => Condition::BatteryBelow { mv: r.u16()? },
        3 => Condition::Motion {
            moving: match r.u8()? {
                0 => false,
                1 => true,
                _ => return Err(RpcError::Malformed),
            },
        },
        4 => Condition::SamplesAtLeast { count: r.u32()? },
        _ => return Err(RpcError::Malformed),
    })
}

pub(crate) fn write_task(out: &mut Vec<u8>, t: &TaskConfig) {
    out.extend_from_slice(&t.task_id.to_le_bytes());
    out.extend_from_slice(&t.type_id.to_le_bytes());
    out.extend_from_slice(&t.sample_period_s.to_le_bytes());
    out.push(t.priority);
    out.push(t.activity.code());
    for list in [&t.entry, &t.exit] {
        out.push(list.len() as u8);
        for c in list {
            write_condition(out, c);
        }
    }
}

fn read_task(r: &mut Reader) -> Result<TaskConfig, RpcError> {
    let task_id = r.u16()?;
    let type_id = r.u16()?;
    let sample_period_s = r.u32()?;
    let priority = r.u8()?;
    let activity = Activity::from_code(r.u8()?).ok_or(RpcError::Malformed)?;
    let mut lists = [Vec::new(), Vec::new()];
    for list in &mut lists {
        let n = r.u8()?;
        for _ in 0..n {
            list.push(read_condition(r)?);
        }
    }
    let [entry, exit] = lists;
    Ok(TaskConfig {
        task_id,
        type_id,
        sample_period_s,
        entry,
        exit,
        priority,
        activity,
    })
}

impl RpcCommand {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            RpcCommand::GetStatus => GET_STATUS,
            RpcCommand::ReadPageChunk { .. } => READ_PAGE_CHUNK,
            RpcCommand::GetTaskConfigs => GET_TASK_CONFIGS,
            RpcCommand::PutTaskConfig(_) => PUT_TASK_CONFIG,
            RpcCommand::DeleteTaskConfig(_) => DELETE_TASK_CONFIG,
            RpcCommand::SetParam { .. } => SET_PARAM,
            RpcCommand::PutFwChunk { .. } => PUT_FW_CHUNK,
            RpcCommand::ApplyFw { .. } => APPLY_FW,
            RpcCommand::HoldRadio { .. } => HOLD_RADIO,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.opcode()];
        match self {
            RpcCommand::GetStatus | RpcCommand::GetTaskConfigs => {}
            RpcCommand::ReadPageChunk {
                page_no,
                chunk_index,
            } => {
                out.extend_from_slice(&page_no.to_le_bytes());
                out.push(*chunk_index);
            }
            RpcCommand::PutTaskConfig(t) => write_task(&mut out, t),
            RpcCommand::DeleteTaskConfig(id) => out.extend_from_slice(&id.to_le_bytes()),
            RpcCommand::SetParam { key, value } => {
                put_bytes(&mut out, key.as_bytes());
                out.extend_from_slice(&value.to_le_bytes());
            }
            RpcCommand::PutFwChunk {
                version,
                index,
                bytes,
            } => {
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(&index.to_le_bytes());
                put_bytes(&mut out, bytes);
            }
            RpcCommand::ApplyFw {
                version,
                chunk_count,
                checksum,
            } => {
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(&chunk_count.to_le_bytes());
                out.extend_from_slice(&checksum.to_le_bytes());
            }
            RpcCommand::HoldRadio { seconds } => out.extend_from_slice(&seconds.to_le_bytes()),
        }
        out
    }

    pub fn decode(packet: &[u8]) -> Result<Self, RpcError> {
        use opcode::*;
        let mut r = Reader { buf: packet };
        let cmd = match r.u8()? {
            GET_STATUS => RpcCommand::GetStatus,
            READ_PAGE_CHUNK => RpcCommand::ReadPageChunk {
                page_no: r.u32()?,
                chunk_index: r.u8()?,
            },
            GET_TASK_CONFIGS => RpcCommand::GetTaskConfigs,
            PUT_TASK_CONFIG => RpcCommand::PutTaskConfig(read_task(&mut r)?),
            DELETE_TASK_CONFIG => RpcCommand::DeleteTaskConfig(r.u16()?),
            SET_PARAM => {
                let key = String::from_utf8(r.bytes()?).map_err(|_| RpcError::Malformed)?;
                let value = r.u64()? as i64;
                RpcCommand::SetParam { key, value }
            }
            PUT_FW_CHUNK => RpcCommand::PutFwChunk {
                version: r.u32()?,
                index: r.u16()?,
                bytes: r.bytes()?,
            },
            APPLY_FW => RpcCommand::ApplyFw {
                version: r.u32()?,
                chunk_count: r.u16()?,
                checksum: r.u32()?,
            },
            HOLD_RADIO => RpcCommand::HoldRadio { seconds: r.u32()? },
            other => return Err(RpcError::UnknownCommand(other)),
        };
        r.done()?;
        Ok(cmd)
    }
}

mod kind {
    pub const ACK: u8 = 0;
    pub const STATUS: u8 = 1;
    pub const PAGE_CHUNK: u8 = 2;
    pub const TASK_CONFIGS: u8 = 3;
    pub const ERROR: u8 = 0xFF;
}

impl RpcError {
    fn code(&self) -> u8 {
        match self {
            RpcError::PageExpired { .. } => 1,
            RpcError::PageNotReady(_) => 2,
            RpcError::BadChunkIndex => 3,
            RpcError::FwChecksumMismatch => 4,
            RpcError::FwIncomplete => 5,
            RpcError::UnknownCommand(_) => 6,
            RpcError::Malformed => 7,
            RpcError::RadioAsleep => 8,
            RpcError::TaskNotFound(_) => 9,
            RpcError::InvalidTaskConfig => 10,
        }
    }
}

impl RpcResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            RpcResponse::Ack => out.push(kind::ACK),
            RpcResponse::Status(s) => {
                out.push(kind::STATUS);
                out.extend_from_slice(&s.node_id.to_le_bytes());
                out.extend_from_slice(&s.clock.to_le_bytes());
                out.extend_from_slice(&s.battery_mv.to_le_bytes());
                out.extend_from_slice(&s.max_page.unwrap_or(NO_PAGE).to_le_bytes());
                out.extend_from_slice(&s.head_page.to_le_bytes());
                out.extend_from_slice(&s.config_version.to_le_bytes());
                out.extend_from_slice(&s.fw_version.to_le_bytes());
                out.push(s.running.len() as u8);
                for id in &s.running {
                    out.extend_from_slice(&id.to_le_bytes());
                }
            }
            RpcResponse::PageChunk(b) => {
                out.push(kind::PAGE_CHUNK);
                put_bytes(&mut out, b);
            }
            RpcResponse::TaskConfigs(ts) => {
                out.push(kind::TASK_CONFIGS);
                out.push(ts.len() as u8);
                for t in ts {
                    write_task(&mut out, t);
                }
            }
            RpcResponse::Error(e) => {
                out.push(kind::ERROR);
                out.push(e.code());
                match *e {
                    RpcError::PageExpired { page_no, head } => {
                        out.extend_from_slice(&page_no.to_le_bytes());
                        out.extend_from_slice(&head.to_le_bytes());
                    }
                    RpcError::PageNotReady(p) => out.extend_from_slice(&p.to_le_bytes()),
                    RpcError::UnknownCommand(op) => out.push(op),
                    RpcError::TaskNotFound(id) => out.extend_from_slice(&id.to_le_bytes()),
                    _ => {}
                }
            }
        }
        out
    }

    pub fn decode(packet: &[u8]) -> Result<Self, RpcError> {
        let mut r = Reader { buf: packet };
        let resp = match r.u8()? {
            kind::ACK => RpcResponse::Ack,
            kind::STATUS => {
                let node_id = r.u32()?;
                let clock = r.u64()?;
                let battery_mv = r.u16()?;
                let max_page = Some(r.u32()?).filter(|p| *p != NO_PAGE);
                let head_page = r.u32()?;
                let config_version = r.u32()?;
                let fw_version = r.u32()?;
                let n = r.u8()?;
                let running = (0..n).map(|_| r.u16()).collect::<Result<_, _>>()?;
                RpcResponse::Status(NodeStatus {
                    node_id,
                    clock,
                    battery_mv,
                    max_page,
                    head_page,
                    config_version,
                    fw_version,
                    running,
                })
            }
            kind::PAGE_CHUNK => RpcResponse::PageChunk(r.bytes()?),
            kind::TASK_CONFIGS => {
                let n = r.u8()?;
                let tasks = (0..n).map(|_| read_task(&mut r)).collect::<Result<_, _>>()?;
                RpcResponse::TaskConfigs(tasks)
            }
            kind::ERROR => RpcResponse::Error(match r.u8()? {
                1 => RpcError::PageExpired {
                    page_no: r.u32()?,
                    head: r.u32()?,
                },
                2 => RpcError::PageNotReady(r.u32()?),
                3 => RpcError::BadChunkIndex,
                4 => RpcError::FwChecksumMismatch,
                5 => RpcError::FwIncomplete,
                6 => RpcError::UnknownCommand(r.u8()?),
                7 => RpcError::Malformed,
                8 => RpcError::RadioAsleep,
                9 => RpcError::TaskNotFound(r.u16()?),
                10 => RpcError::InvalidTaskConfig,
                _ => return Err(RpcError::Malformed),
            }),
            _ => return Err(RpcError::Malformed),
        };
        r.done()?;
        Ok(resp)
    }
}
