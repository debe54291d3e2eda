//! Flits, packet kinds, sizing rules and the canonical byte layout used for
//! wire and trace dumps.
//!
//! Canonical layout. Every packet starts with one overhead flit carrying the
//! head (bytes 0..8) and the tail (bytes 8..16), both little-endian `u64`:
//!
//! ```text
//! head: bits  0..8   command code
//!       bits  8..20  tag
//!       bits 20..54  address (34 bits, zero for non-requests)
//!       bits 54..58  payload length in flits
//!       bits 58..64  reserved, zero
//! tail: bits  0..32  integrity field (fixed placeholder 0x484D_4331)
//!       bits 32..40  returned flow-control tokens (always zero here)
//!       bits 40..64  reserved, zero
//! ```
//!
//! Payload flits follow the overhead flit, least-significant flit first. The
//! model carries no data values, so payload flits are serialized as zeros.

use thiserror::Error;

use crate::simkernel::SimTime;

pub const FLIT_BYTES: usize = 16;
pub const MAX_PAYLOAD_FLITS: u8 = 8;
pub const ADDRESS_BITS: u32 = 34;
pub const ADDRESS_MASK: u64 = (1 << ADDRESS_BITS) - 1;
pub const TAG_BITS: u32 = 12;
pub const MAX_TAG: u16 = (1 << TAG_BITS) - 1;
pub const INTEGRITY_PLACEHOLDER: u32 = 0x484D_4331;

/// Request sizes exercised by the experiments.
pub const REQUEST_SIZES: [u32; 4] = [16, 32, 64, 128];

/// One 16-byte flow-control unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flit(pub [u8; FLIT_BYTES]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Flow,
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Read,
    Write,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("unsupported payload size {0} B")]
    UnsupportedSize(u32),
    #[error("framing error: {0}")]
    Framing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub command: Option<Command>,
    pub tag: u16,
    pub address: u64,
    pub payload_flits: u8,
    /// Metadata only; never serialized.
    pub issue_time: SimTime,
}

impl Packet {
    pub fn flow() -> Self {
        Packet {
            kind: PacketKind::Flow,
            command: None,
            tag: 0,
            address: 0,
            payload_flits: 0,
            issue_time: SimTime::ZERO,
        }
    }

    pub fn read_request(tag: u16, address: u64) -> Self {
        Packet {
            kind: PacketKind::Request,
            command: Some(Command::Read),
            tag,
            address: address & ADDRESS_MASK,
            payload_flits: 0,
            issue_time: SimTime::ZERO,
        }
    }

    pub fn write_request(tag: u16, address: u64, bytes: u32) -> Result<Self, ProtocolError> {
        Ok(Packet {
            kind: PacketKind::Request,
            command: Some(Command::Write),
            tag,
            address: address & ADDRESS_MASK,
            payload_flits: payload_flits_for(bytes)?,
            issue_time: SimTime::ZERO,
        })
    }

    /// Builds the response matching a request. `bytes` is the data size the
    /// request asked for (ignored for writes).
    pub fn response_to(req: &Packet, bytes: u32) -> Result<Self, ProtocolError> {
        let command = match (req.kind, req.command) {
            (PacketKind::Request, Some(c)) => c,
            _ => return Err(ProtocolError::Malformed("response to a non-request")),
        };
        let payload_flits = match command {
            Command::Read => payload_flits_for(bytes)?,
            Command::Write => 0,
        };
        Ok(Packet {
            kind: PacketKind::Response,
            command: Some(command),
            tag: req.tag,
            address: 0,
            payload_flits,
            issue_time: req.issue_time,
        })
    }

    pub fn with_issue_time(mut self, t: SimTime) -> Self {
        self.issue_time = t;
        self
    }

    pub fn payload_bytes(&self) -> u32 {
        u32::from(self.payload_flits) * FLIT_BYTES as u32
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        use Command::*;
        use PacketKind::*;
        if self.tag > MAX_TAG {
            return Err(ProtocolError::Malformed("tag exceeds 12 bits"));
        }
        if self.address > ADDRESS_MASK {
            return Err(ProtocolError::Malformed("address exceeds 34 bits"));
        }
        if self.payload_flits > MAX_PAYLOAD_FLITS {
            return Err(ProtocolError::Malformed("payload exceeds 8 flits"));
        }
        if self.kind != Request && self.address != 0 {
            return Err(ProtocolError::Malformed("only requests carry an address"));
        }
        match (self.kind, self.command, self.payload_flits) {
            (Flow, None, 0) => Ok(()),
            (Flow, _, _) => Err(ProtocolError::Malformed("flow packets carry no command or data")),
            (_, None, _) => Err(ProtocolError::Malformed("request/response without command")),
            (Request, Some(Read), 0) | (Response, Some(Write), 0) => Ok(()),
            (Request, Some(Read), _) | (Response, Some(Write), _) => {
                Err(ProtocolError::Malformed("read request / write response carry no data"))
            }
            (Request, Some(Write), 1..=8) | (Response, Some(Read), 1..=8) => Ok(()),
            _ => Err(ProtocolError::Malformed("write request / read response need 1..8 data flits")),
        }
    }

    fn command_code(&self) -> u8 {
        match (self.kind, self.command) {
            (PacketKind::Flow, _) => 0x00,
            (PacketKind::Request, Some(Command::Read)) => 0x01,
            (PacketKind::Request, Some(Command::Write)) => 0x02,
            (PacketKind::Response, Some(Command::Read)) => 0x11,
            (PacketKind::Response, Some(Command::Write)) => 0x12,
            // rejected by validate()
            _ => 0xFF,
        }
    }

    fn from_command_code(code: u8) -> Result<(PacketKind, Option<Command>), ProtocolError> {
        Ok(match code {
            0x00 => (PacketKind::Flow, None),
            0x01 => (PacketKind::Request, Some(Command::Read)),
            0x02 => (PacketKind::Request, Some(Command::Write)),
            0x11 => (PacketKind::Response, Some(Command::Read)),
            0x12 => (PacketKind::Response, Some(Command::Write)),
            _ => return Err(ProtocolError::Framing(format!("unknown command code {code:#04x}"))),
        })
    }
}

/// Number of 16 B flits holding `bytes` of data.
pub fn payload_flits_for(bytes: u32) -> Result<u8, ProtocolError> {
    if bytes == 0 || !bytes.is_multiple_of(FLIT_BYTES as u32) || bytes > 128 {
        return Err(ProtocolError::UnsupportedSize(bytes));
    }
    Ok((bytes / FLIT_BYTES as u32) as u8)
}

/// Payload flits plus the single head/tail overhead flit.
pub fn total_flits(p: &Packet) -> Result<u32, ProtocolError> {
    p.validate()?;
    Ok(u32::from(p.payload_flits) + 1)
}

/// Fraction of a read response that is data.
pub fn efficiency(payload_bytes: u32) -> Result<f64, ProtocolError> {
    if !REQUEST_SIZES.contains(&payload_bytes) {
        return Err(ProtocolError::UnsupportedSize(payload_bytes));
    }
    Ok(f64::from(payload_bytes) / f64::from(payload_bytes + FLIT_BYTES as u32))
}

pub fn encode(p: &Packet) -> Result<Vec<u8>, ProtocolError> {
    let flits = total_flits(p)? as usize;
    let head = u64::from(p.command_code())
        | u64::from(p.tag) << 8
        | (p.address & ADDRESS_MASK) << 20
        | u64::from(p.payload_flits) << 54;
    let tail = u64::from(INTEGRITY_PLACEHOLDER);
    let mut out = Vec::with_capacity(flits * FLIT_BYTES);
    out.extend_from_slice(&head.to_le_bytes());
    out.extend_from_slice(&tail.to_le_bytes());
    out.resize(flits * FLIT_BYTES, 0);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Packet, ProtocolError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(FLIT_BYTES) {
        return Err(ProtocolError::Framing(format!("{} bytes is not a whole number of flits", bytes.len())));
    }
    let head = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let tail = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if head >> 58 != 0 || tail >> 40 != 0 {
        return Err(ProtocolError::Framing("reserved bits set".into()));
    }
    if tail as u32 != INTEGRITY_PLACEHOLDER {
        return Err(ProtocolError::Framing("integrity field mismatch".into()));
    }
    let (kind, command) = Packet::from_command_code(head as u8)?;
    let payload_flits = ((head >> 54) & 0xF) as u8;
    let expected = (usize::from(payload_flits) + 1) * FLIT_BYTES;
    if bytes.len() != expected {
        return Err(ProtocolError::Framing(format!(
            "length field says {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let p = Packet {
        kind,
        command,
        tag: ((head >> 8) & u64::from(MAX_TAG)) as u16,
        address: (head >> 20) & ADDRESS_MASK,
        payload_flits,
        issue_time: SimTime::ZERO,
    };
    p.validate().map_err(|e| ProtocolError::Framing(e.to_string()))?;
    Ok(p)
}

/// Splits an encoded packet into flits in transmission order.
pub fn to_flits(bytes: &[u8]) -> Vec<Flit> {
    bytes
        .chunks_exact(FLIT_BYTES)
        .map(|c| Flit(c.try_into().expect("16-byte chunk")))
        .collect()
}
