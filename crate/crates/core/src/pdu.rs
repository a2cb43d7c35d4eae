//! Message vocabulary of the medium and its fixed binary wire layout.
//!
//! Every frame starts with a 24-byte common header, all fields big-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 2    | magic `0x4D 0x53`                      |
//! | 2      | 1    | version `0x01`                         |
//! | 3      | 1    | type (1 state, 2 event, 3 ping, 4 pong)|
//! | 4      | 4    | sender id                              |
//! | 8      | 4    | entity id (zero for ping/pong)         |
//! | 12     | 4    | seq, or low half of the nonce          |
//! | 16     | 8    | timestamp, virtual ms                  |
//!
//! followed by the type-specific payload:
//!
//! * state update: `pos_x pos_y vel_x vel_y` as IEEE-754 binary64, then a
//!   flags byte (bit 0 = critical). 57 bytes total.
//! * event: kind byte, 8 opaque payload bytes. 33 bytes total.
//! * ping: high half of the nonce (4). 28 bytes total.
//! * pong: high half of the nonce (4), echoed ping timestamp (8). 36 bytes total.

use thiserror::Error;

use crate::geom::Vec2;
use crate::{ClientId, EntityId};

pub const MAGIC: [u8; 2] = [0x4D, 0x53];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 24;

pub const STATE_UPDATE_LEN: usize = HEADER_LEN + 4 * 8 + 1;
pub const EVENT_LEN: usize = HEADER_LEN + 1 + 8;
pub const PING_LEN: usize = HEADER_LEN + 4;
pub const PONG_LEN: usize = HEADER_LEN + 4 + 8;

const FLAG_CRITICAL: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageType {
    StateUpdate = 0x01,
    Event = 0x02,
    Ping = 0x03,
    Pong = 0x04,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::StateUpdate),
            0x02 => Some(Self::Event),
            0x03 => Some(Self::Ping),
            0x04 => Some(Self::Pong),
            _ => None,
        }
    }

    /// Fixed frame length of this message type.
    pub fn frame_len(self) -> usize {
        match self {
            Self::StateUpdate => STATE_UPDATE_LEN,
            Self::Event => EVENT_LEN,
            Self::Ping => PING_LEN,
            Self::Pong => PONG_LEN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StateUpdate => "STATE",
            Self::Event => "EVENT",
            Self::Ping => "PING",
            Self::Pong => "PONG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, got {got}")]
    TruncatedFrame { needed: usize, got: usize },
    #[error("non-finite value in field `{0}`")]
    NonFiniteField(&'static str),
    #[error("unknown event kind {0:#04x}")]
    UnknownEventKind(u8),
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlags(u8),
    #[error("frame carries {extra} trailing bytes")]
    TrailingBytes { extra: usize },
}

/// Timestamped kinematic state of one entity, the unit of replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateUpdate {
    pub sender_id: ClientId,
    pub entity_id: EntityId,
    pub seq: u32,
    pub timestamp: u64,
    pub pos: Vec2,
    pub vel: Vec2,
    pub critical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum EventKind {
    Fire = 0x01,
    Spawn = 0x02,
    Despawn = 0x03,
}

impl EventKind {
    fn from_byte(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(Self::Fire),
            0x02 => Ok(Self::Spawn),
            0x03 => Ok(Self::Despawn),
            other => Err(WireError::UnknownEventKind(other)),
        }
    }
}

/// A discrete game event (shot fired, entity spawned, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMessage {
    pub sender_id: ClientId,
    pub entity_id: EntityId,
    pub seq: u32,
    pub timestamp: u64,
    pub kind: EventKind,
    pub payload: [u8; 8],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PingMessage {
    pub sender_id: ClientId,
    pub nonce: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PongMessage {
    pub sender_id: ClientId,
    pub nonce: u64,
    pub timestamp: u64,
    pub echo_timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    State(StateUpdate),
    Event(EventMessage),
    Ping(PingMessage),
    Pong(PongMessage),
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::State(_) => MessageType::StateUpdate,
            Message::Event(_) => MessageType::Event,
            Message::Ping(_) => MessageType::Ping,
            Message::Pong(_) => MessageType::Pong,
        }
    }

    pub fn sender_id(&self) -> ClientId {
        match self {
            Message::State(m) => m.sender_id,
            Message::Event(m) => m.sender_id,
            Message::Ping(m) => m.sender_id,
            Message::Pong(m) => m.sender_id,
        }
    }

    pub fn timestamp(&self) -> u64 {
        match self {
            Message::State(m) => m.timestamp,
            Message::Event(m) => m.timestamp,
            Message::Ping(m) => m.timestamp,
            Message::Pong(m) => m.timestamp,
        }
    }
}

impl From<StateUpdate> for Message {
    fn from(m: StateUpdate) -> Self {
        Message::State(m)
    }
}

impl From<EventMessage> for Message {
    fn from(m: EventMessage) -> Self {
        Message::Event(m)
    }
}

impl From<PingMessage> for Message {
    fn from(m: PingMessage) -> Self {
        Message::Ping(m)
    }
}

impl From<PongMessage> for Message {
    fn from(m: PongMessage) -> Self {
        Message::Pong(m)
    }
}

fn put_header(out: &mut Vec<u8>, ty: MessageType, sender: u32, entity: u32, seq: u32, timestamp: u64) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(ty as u8);
    out.extend_from_slice(&sender.to_be_bytes());
    out.extend_from_slice(&entity.to_be_bytes());
    out.extend_from_slice(&seq.to_be_bytes());
    out.extend_from_slice(&timestamp.to_be_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64, field: &'static str) -> Result<(), WireError> {
    if !v.is_finite() {
        return Err(WireError::NonFiniteField(field));
    }
    out.extend_from_slice(&v.to_be_bytes());
    Ok(())
}

/// Encodes a message into its fixed-length frame.
pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    let ty = msg.message_type();
    let mut out = Vec::with_capacity(ty.frame_len());
    match msg {
        Message::State(m) => {
            put_header(&mut out, ty, m.sender_id, m.entity_id, m.seq, m.timestamp);
            put_f64(&mut out, m.pos.x, "pos_x")?;
            put_f64(&mut out, m.pos.y, "pos_y")?;
            put_f64(&mut out, m.vel.x, "vel_x")?;
            put_f64(&mut out, m.vel.y, "vel_y")?;
            out.push(if m.critical { FLAG_CRITICAL } else { 0 });
        }
        Message::Event(m) => {
            put_header(&mut out, ty, m.sender_id, m.entity_id, m.seq, m.timestamp);
            out.push(m.kind as u8);
            out.extend_from_slice(&m.payload);
        }
        Message::Ping(m) => {
            put_header(&mut out, ty, m.sender_id, 0, m.nonce as u32, m.timestamp);
            out.extend_from_slice(&((m.nonce >> 32) as u32).to_be_bytes());
        }
        Message::Pong(m) => {
            put_header(&mut out, ty, m.sender_id, 0, m.nonce as u32, m.timestamp);
            out.extend_from_slice(&((m.nonce >> 32) as u32).to_be_bytes());
            out.extend_from_slice(&m.echo_timestamp.to_be_bytes());
        }
    }
    debug_assert_eq!(out.len(), ty.frame_len());
    Ok(out)
}

/// Bounds-checked big-endian reader over a frame already known to be long enough.
struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.at..self.at + N]);
        self.at += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take())
    }

    fn f64(&mut self, field: &'static str) -> Result<f64, WireError> {
        let v = f64::from_be_bytes(self.take());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(WireError::NonFiniteField(field))
        }
    }
}

/// Common header fields, readable without decoding the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub message_type: MessageType,
    pub sender_id: ClientId,
    pub entity_id: EntityId,
    pub seq: u32,
    pub timestamp: u64,
}

/// Validates and returns the common header of a frame.
pub fn peek_header(bytes: &[u8]) -> Result<FrameHeader, WireError> {
    if bytes.len() < 4 {
        // Not even magic+version+type.
        if bytes.len() >= 2 && bytes[..2] != MAGIC {
            return Err(WireError::BadMagic([bytes[0], bytes[1]]));
        }
        return Err(WireError::TruncatedFrame { needed: HEADER_LEN, got: bytes.len() });
    }
    if bytes[..2] != MAGIC {
        return Err(WireError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes[2] != VERSION {
        return Err(WireError::BadVersion(bytes[2]));
    }
    let ty = MessageType::from_byte(bytes[3]).ok_or(WireError::UnknownType(bytes[3]))?;
    if bytes.len() < ty.frame_len() {
        return Err(WireError::TruncatedFrame { needed: ty.frame_len(), got: bytes.len() });
    }
    let mut c = Cursor { buf: bytes, at: 4 };
    Ok(FrameHeader { message_type: ty, sender_id: c.u32(), entity_id: c.u32(), seq: c.u32(), timestamp: c.u64() })
}

/// Decodes one frame. The frame must be exactly the length of its type.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let h = peek_header(bytes)?;
    let len = h.message_type.frame_len();
    if bytes.len() > len {
        return Err(WireError::TrailingBytes { extra: bytes.len() - len });
    }
    let mut c = Cursor { buf: &bytes[..len], at: HEADER_LEN };
    let msg = match h.message_type {
        MessageType::StateUpdate => {
            let pos = Vec2::new(c.f64("pos_x")?, c.f64("pos_y")?);
            let vel = Vec2::new(c.f64("vel_x")?, c.f64("vel_y")?);
            let flags = c.u8();
            if flags & !FLAG_CRITICAL != 0 {
                return Err(WireError::ReservedFlags(flags));
            }
            Message::State(StateUpdate {
                sender_id: h.sender_id,
                entity_id: h.entity_id,
                seq: h.seq,
                timestamp: h.timestamp,
                pos,
                vel,
                critical: flags & FLAG_CRITICAL != 0,
            })
        }
        MessageType::Event => {
            let kind = EventKind::from_byte(c.u8())?;
            Message::Event(EventMessage {
                sender_id: h.sender_id,
                entity_id: h.entity_id,
                seq: h.seq,
                timestamp: h.timestamp,
                kind,
                payload: c.take(),
            })
        }
        MessageType::Ping => {
            let high = c.u32();
            Message::Ping(PingMessage {
                sender_id: h.sender_id,
                nonce: (u64::from(high) << 32) | u64::from(h.seq),
                timestamp: h.timestamp,
            })
        }
        MessageType::Pong => {
            let high = c.u32();
            Message::Pong(PongMessage {
                sender_id: h.sender_id,
                nonce: (u64::from(high) << 32) | u64::from(h.seq),
                timestamp: h.timestamp,
                echo_timestamp: c.u64(),
            })
        }
    };
    Ok(msg)
}
