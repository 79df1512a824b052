//! Byte layouts of the five frame types. Multi-byte integers are little
//! endian; the first byte is the type tag.

use std::fmt::Write as _;

use thiserror::Error;

use crate::backpressure::NodeId;
use crate::gf::Field;
use crate::rlnc::CodedPacket;

pub const TAG_DIS: u8 = 0x01;
pub const TAG_SYN: u8 = 0x02;
pub const TAG_RTS: u8 = 0x03;
pub const TAG_CTS: u8 = 0x04;
pub const TAG_DATA: u8 = 0x05;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("empty frame")]
    Empty,
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("{kind} frame truncated at byte {at}")]
    Truncated { kind: &'static str, at: usize },
    #[error("{kind} frame has {0} trailing bytes", kind = .1)]
    Trailing(usize, &'static str),
    #[error("DATA frame payload holds {got} symbols, expected {expected}")]
    PayloadSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisNeighbor {
    pub id: NodeId,
    pub channel: u8,
    /// Link SNR estimate in dB; carried as unsigned 8.8 fixed point.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dis {
    pub sender: NodeId,
    pub next_channel: u8,
    pub neighbors: Vec<DisNeighbor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynEntry {
    pub source: NodeId,
    /// The virtual queue's destination first, then the flow's other
    /// destinations in ascending order.
    pub destinations: Vec<NodeId>,
    pub backlog: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Syn {
    pub sender: NodeId,
    pub entries: Vec<SynEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rts {
    pub tx: NodeId,
    pub rx: NodeId,
    pub channel: u8,
    pub flow: u8,
    /// Spectrum utility, unsigned 16.16 fixed point.
    pub utility_q: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cts {
    /// The node that will receive data (sender of this CTS).
    pub rx: NodeId,
    /// The node allowed to transmit.
    pub tx: NodeId,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Dis(Dis),
    Syn(Syn),
    Rts(Rts),
    Cts(Cts),
    Data(CodedPacket),
}

/// Saturating unsigned 8.8 fixed point.
pub fn to_q8_8(v: f64) -> u16 {
    (v * 256.0).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn from_q8_8(q: u16) -> f64 {
    q as f64 / 256.0
}

/// Saturating unsigned 16.16 fixed point.
pub fn to_q16_16(v: f64) -> u32 {
    if v.is_nan() {
        return 0;
    }
    (v * 65536.0).round().clamp(0.0, u32::MAX as f64) as u32
}

pub fn from_q16_16(q: u32) -> f64 {
    q as f64 / 65536.0
}

impl Frame {
    pub fn type_name(&self) -> &'static str {
        match self {
            Frame::Dis(_) => "DIS",
            Frame::Syn(_) => "SYN",
            Frame::Rts(_) => "RTS",
            Frame::Cts(_) => "CTS",
            Frame::Data(_) => "DATA",
        }
    }

    pub fn is_control(&self) -> bool {
        !matches!(self, Frame::Data(_))
    }

    /// Serialize. `field` packs DATA tags and payloads.
    pub fn encode(&self, field: &Field) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Frame::Dis(d) => {
                b.extend([TAG_DIS, d.sender, d.next_channel, d.neighbors.len() as u8]);
                for n in &d.neighbors {
                    b.extend([n.id, n.channel]);
                    b.extend(to_q8_8(n.snr_db).to_le_bytes());
                }
            }
            Frame::Syn(s) => {
                b.extend([TAG_SYN, s.sender, s.entries.len() as u8]);
                for e in &s.entries {
                    b.extend([e.source, e.destinations.len() as u8]);
                    b.extend(&e.destinations);
                    b.extend(e.backlog.to_le_bytes());
                }
            }
            Frame::Rts(r) => {
                b.extend([TAG_RTS, r.tx, r.rx, r.channel, r.flow]);
                b.extend(r.utility_q.to_le_bytes());
            }
            Frame::Cts(c) => b.extend([TAG_CTS, c.rx, c.tx, c.channel]),
            Frame::Data(p) => {
                b.push(TAG_DATA);
                b.push(p.flow);
                b.extend(p.generation.to_le_bytes());
                b.push(p.tag.len() as u8);
                b.extend(&p.perm);
                b.extend(field.pack(&p.tag));
                b.extend(field.pack(&p.payload));
            }
        }
        b
    }

    /// Parse a frame. `payload_symbols` is the DATA payload length in symbols,
    /// which the byte count alone does not pin down for every field width.
    pub fn decode(bytes: &[u8], field: &Field, payload_symbols: usize) -> Result<Frame, WireError> {
        let mut r = Reader { b: bytes, at: 0, kind: "?" };
        let tag = r.u8().map_err(|_| WireError::Empty)?;
        let frame = match tag {
            TAG_DIS => {
                r.kind = "DIS";
                let sender = r.u8()?;
                let next_channel = r.u8()?;
                let n = r.u8()?;
                let mut neighbors = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let id = r.u8()?;
                    let channel = r.u8()?;
                    let snr_db = from_q8_8(r.u16()?);
                    neighbors.push(DisNeighbor { id, channel, snr_db });
                }
                Frame::Dis(Dis { sender, next_channel, neighbors })
            }
            TAG_SYN => {
                r.kind = "SYN";
                let sender = r.u8()?;
                let n = r.u8()?;
                let mut entries = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let source = r.u8()?;
                    let nd = r.u8()? as usize;
                    let destinations = r.take(nd)?.to_vec();
                    let backlog = r.u16()?;
                    entries.push(SynEntry { source, destinations, backlog });
                }
                Frame::Syn(Syn { sender, entries })
            }
            TAG_RTS => {
                r.kind = "RTS";
                let (tx, rx, channel, flow) = (r.u8()?, r.u8()?, r.u8()?, r.u8()?);
                let utility_q = r.u32()?;
                Frame::Rts(Rts { tx, rx, channel, flow, utility_q })
            }
            TAG_CTS => {
                r.kind = "CTS";
                Frame::Cts(Cts { rx: r.u8()?, tx: r.u8()?, channel: r.u8()? })
            }
            TAG_DATA => {
                r.kind = "DATA";
                let flow = r.u8()?;
                let generation = r.u16()?;
                let h = r.u8()? as usize;
                let perm = r.take(h)?.to_vec();
                let m = field.bits() as usize;
                let tag_bytes = (h * m).div_ceil(8);
                let mut tag = field.unpack(r.take(tag_bytes)?);
                tag.truncate(h);
                let payload_bytes = (payload_symbols * m).div_ceil(8);
                let rest = r.b.len() - r.at;
                if rest < payload_bytes {
                    return Err(WireError::PayloadSize { expected: payload_symbols, got: rest * 8 / m });
                }
                let mut payload = field.unpack(r.take(payload_bytes)?);
                payload.truncate(payload_symbols);
                Frame::Data(CodedPacket { flow, generation, perm, tag, payload })
            }
            other => return Err(WireError::UnknownType(other)),
        };
        if r.at != bytes.len() {
            return Err(WireError::Trailing(bytes.len() - r.at, r.kind));
        }
        Ok(frame)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.at + n;
        if end > self.b.len() {
            return Err(WireError::Truncated { kind: self.kind, at: self.b.len() });
        }
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let s = self.take(2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

/// One packet-log line: `time_us channel src TYPE hex`.
pub fn log_line(time_us: u64, channel: usize, src: NodeId, type_name: &str, bytes: &[u8]) -> String {
    let mut s = String::with_capacity(24 + 2 * bytes.len());
    let _ = write!(s, "{time_us} {channel} {src} {type_name} ");
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}
