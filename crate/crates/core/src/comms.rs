//! V2X message layer: the request/benchmark/reply/select handshake, raw data
//! shares, and a per-ego per-frame byte budget.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensing::ray_hit_fraction;
use crate::world::{Agent, AgentId, Frame, ObjectId, Pose};

/// 2 MiB per ego per frame.
pub const FRAME_BUDGET_BYTES: u64 = 2 * 1024 * 1024;
/// Wire cost of a request or a benchmark reply.
pub const CONTROL_MESSAGE_BYTES: u64 = 64;
/// x, y, z, intensity as 4-byte fields.
pub const BYTES_PER_POINT: u64 = 16;
pub const MIN_SHARE_BYTES: u64 = 1024;
/// Azimuth resolution used to estimate the hit fraction of a sweep.
pub const HIT_FRACTION_RAYS: usize = 360;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommsError {
    #[error("over budget: {spent} + {requested} bytes exceeds {limit} (ego {ego}, frame {frame})")]
    OverBudget {
        ego: AgentId,
        frame: u32,
        spent: u64,
        requested: u64,
        limit: u64,
    },
    #[error("message for frame {got} charged against budget of frame {expected}")]
    WrongFrame { expected: u32, got: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Request {
        frame_index: u32,
        ego: AgentId,
        ego_pose: Pose,
    },
    BenchmarkReply {
        frame_index: u32,
        candidate: AgentId,
        ego: AgentId,
        benchmark: u32,
    },
    DataShare {
        frame_index: u32,
        sender: AgentId,
        receiver: AgentId,
        objects: Vec<ObjectId>,
        payload_bytes: u64,
    },
}

impl Message {
    pub fn frame_index(&self) -> u32 {
        match self {
            Message::Request { frame_index, .. }
            | Message::BenchmarkReply { frame_index, .. }
            | Message::DataShare { frame_index, .. } => *frame_index,
        }
    }

    pub fn size_bytes(&self) -> u64 {
        match self {
            Message::Request { .. } | Message::BenchmarkReply { .. } => CONTROL_MESSAGE_BYTES,
            Message::DataShare { payload_bytes, .. } => *payload_bytes,
        }
    }
}

/// Share size for a sensor whose sweep has `hit_fraction` of its rays
/// returning from an object.
pub fn payload_bytes(points_per_sweep: u64, hit_fraction: f64) -> u64 {
    let f = hit_fraction.clamp(0.0, 1.0);
    let bytes = (BYTES_PER_POINT as f64 * points_per_sweep as f64 * f).floor() as u64;
    bytes.max(MIN_SHARE_BYTES)
}

/// Raw-data share size of `sender` in `frame`; obstacle agents share nothing.
pub fn payload_size(sender: &Agent, frame: &Frame) -> u64 {
    match sender.sensor {
        Some(sensor) => payload_bytes(
            sensor.points_per_sweep(),
            ray_hit_fraction(sender, frame, HIT_FRACTION_RAYS),
        ),
        None => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthBudget {
    pub ego: AgentId,
    pub frame_index: u32,
    pub limit_bytes: u64,
    pub spent_bytes: u64,
}

impl BandwidthBudget {
    pub fn new(ego: AgentId, frame_index: u32) -> Self {
        Self::with_limit(ego, frame_index, FRAME_BUDGET_BYTES)
    }

    pub fn with_limit(ego: AgentId, frame_index: u32, limit_bytes: u64) -> Self {
        Self {
            ego,
            frame_index,
            limit_bytes,
            spent_bytes: 0,
        }
    }

    pub fn remaining(&self) -> u64 {
        self.limit_bytes - self.spent_bytes
    }

    /// Accepts `bytes` if they fit, otherwise refuses and leaves the budget
    /// untouched.
    pub fn charge_bytes(&mut self, bytes: u64) -> Result<(), CommsError> {
        match self.spent_bytes.checked_add(bytes) {
            Some(total) if total <= self.limit_bytes => {
                self.spent_bytes = total;
                Ok(())
            }
            _ => Err(CommsError::OverBudget {
                ego: self.ego,
                frame: self.frame_index,
                spent: self.spent_bytes,
                requested: bytes,
                limit: self.limit_bytes,
            }),
        }
    }

    pub fn charge(&mut self, msg: &Message) -> Result<(), CommsError> {
        if msg.frame_index() != self.frame_index {
            return Err(CommsError::WrongFrame {
                expected: self.frame_index,
                got: msg.frame_index(),
            });
        }
        self.charge_bytes(msg.size_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Request,
    Compute,
    Reply,
    Select,
    Share,
}

/// One line of the message log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub frame: u32,
    pub stage: Stage,
    pub sender: AgentId,
    /// `None` for broadcasts and local steps.
    pub receiver: Option<AgentId>,
    pub bytes: u64,
}

/// Append-only message log; appends get a total order at insertion time.
#[derive(Debug, Default)]
pub struct MessageLog {
    records: Mutex<Vec<LogRecord>>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(
        &self,
        frame: u32,
        stage: Stage,
        sender: AgentId,
        receiver: Option<AgentId>,
        bytes: u64,
    ) -> u64 {
        let mut records = self.records.lock().expect("message log poisoned");
        let seq = records.len() as u64;
        records.push(LogRecord {
            seq,
            frame,
            stage,
            sender,
            receiver,
            bytes,
        });
        seq
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("message log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LogRecord> {
        self.records.lock().expect("message log poisoned").clone()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.records.lock().expect("message log poisoned").iter() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}

/// Delivery hook between sender and receiver; the default delivers every
/// message unchanged.
pub trait Delivery {
    fn deliver(&self, msg: Message) -> Option<Message> {
        Some(msg)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Lossless;

impl Delivery for Lossless {}

/// Broadcasts the ego's request, lets every candidate compute its benchmark,
/// and collects the replies in candidate order. The caller logs the select
/// stage once it has picked.
pub fn run_handshake<F>(
    ego: &Agent,
    candidates: &[AgentId],
    frame_index: u32,
    mut gain_fn: F,
    log: &MessageLog,
    delivery: &dyn Delivery,
) -> Vec<(AgentId, u32)>
where
    F: FnMut(AgentId) -> u32,
{
    if candidates.is_empty() {
        return Vec::new();
    }
    let request = Message::Request {
        frame_index,
        ego: ego.id,
        ego_pose: ego.pose,
    };
    log.append(
        frame_index,
        Stage::Request,
        ego.id,
        None,
        request.size_bytes(),
    );
    let mut replies = Vec::with_capacity(candidates.len());
    for &c in candidates {
        if delivery.deliver(request.clone()).is_none() {
            continue;
        }
        let benchmark = gain_fn(c);
        log.append(frame_index, Stage::Compute, c, None, 0);
        let reply = Message::BenchmarkReply {
            frame_index,
            candidate: c,
            ego: ego.id,
            benchmark,
        };
        log.append(
            frame_index,
            Stage::Reply,
            c,
            Some(ego.id),
            reply.size_bytes(),
        );
        if let Some(Message::BenchmarkReply {
            candidate,
            benchmark,
            ..
        }) = delivery.deliver(reply)
        {
            replies.push((candidate, benchmark));
        }
    }
    replies
}
