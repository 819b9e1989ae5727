use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde::Serialize;
use thiserror::Error;

use super::name::Name;

pub const MAX_PACKET_SIZE: usize = 65_535;
pub const WIRE_VERSION: u8 = 0x01;
pub const DEFAULT_HOP_LIMIT: u8 = 32;

/// Fixed header: version, type, pkt length (u16), hop limit, flags,
/// hdr length, msg type, msg length (u16).
pub const HEADER_LEN: usize = 10;

pub const FLAG_MANAGEMENT: u8 = 0b0000_0001;
pub const FLAG_U_BIT: u8 = 0b0000_0010;
pub const FLAG_FEEDBACK: u8 = 0b0000_0100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[repr(u8)]
pub enum PacketType {
    Interest = 0x00,
    Data = 0x01,
    AddContinuousInterest = 0x02,
    RemoveContinuousInterest = 0x03,
    DataStream = 0x04,
}

impl PacketType {
    pub const ALL: [PacketType; 5] = [
        PacketType::Interest,
        PacketType::Data,
        PacketType::AddContinuousInterest,
        PacketType::RemoveContinuousInterest,
        PacketType::DataStream,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0x00 => Some(PacketType::Interest),
            0x01 => Some(PacketType::Data),
            0x02 => Some(PacketType::AddContinuousInterest),
            0x03 => Some(PacketType::RemoveContinuousInterest),
            0x04 => Some(PacketType::DataStream),
            _ => None,
        }
    }

    /// Interest-class packets carry no payload.
    pub fn is_interest_class(self) -> bool {
        matches!(
            self,
            PacketType::Interest
                | PacketType::AddContinuousInterest
                | PacketType::RemoveContinuousInterest
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            PacketType::Interest => "interest",
            PacketType::Data => "data",
            PacketType::AddContinuousInterest => "add_ci",
            PacketType::RemoveContinuousInterest => "remove_ci",
            PacketType::DataStream => "data_stream",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("encoded packet is {0} bytes, limit is 65535")]
    SizeExceeded(usize),
    #[error("malformed packet: {0}")]
    MalformedPacket(Malformed),
    #[error("interest-class packet carries a payload")]
    PayloadOnInterest,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Malformed {
    #[error("truncated")]
    Truncated,
    #[error("unknown type 0x{0:02x}")]
    UnknownType(u8),
    #[error("unsupported version 0x{0:02x}")]
    Version(u8),
    #[error("length mismatch: header says {header}, got {actual}")]
    LengthMismatch { header: usize, actual: usize },
    #[error("message type 0x{0:02x} does not mirror packet type")]
    MsgTypeMismatch(u8),
    #[error("bad name: {0}")]
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub packet_type: PacketType,
    pub hop_limit: u8,
    pub flags: u8,
    pub name: Name,
    pub payload: Bytes,
}

impl Packet {
    pub fn new(packet_type: PacketType, name: Name) -> Self {
        Packet {
            packet_type,
            hop_limit: DEFAULT_HOP_LIMIT,
            flags: 0,
            name,
            payload: Bytes::new(),
        }
    }

    pub fn interest(name: Name) -> Self {
        Packet::new(PacketType::Interest, name)
    }

    pub fn data(name: Name, payload: impl Into<Bytes>) -> Self {
        Packet::new(PacketType::Data, name).with_payload(payload)
    }

    pub fn add_ci(name: Name) -> Self {
        Packet::new(PacketType::AddContinuousInterest, name)
    }

    pub fn remove_ci(name: Name) -> Self {
        Packet::new(PacketType::RemoveContinuousInterest, name)
    }

    pub fn data_stream(name: Name, payload: impl Into<Bytes>) -> Self {
        Packet::new(PacketType::DataStream, name).with_payload(payload)
    }

    pub fn with_payload(mut self, payload: impl Into<Bytes>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_hop_limit(mut self, hop_limit: u8) -> Self {
        self.hop_limit = hop_limit;
        self
    }

    pub fn is_management(&self) -> bool {
        self.flags & FLAG_MANAGEMENT != 0
    }

    /// Encoded size without building the buffer.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + name_wire_len(&self.name) + self.payload.len()
    }
}

fn name_wire_len(name: &Name) -> usize {
    2 + name.components().iter().map(|c| 2 + c.len()).sum::<usize>()
}

pub fn encode_packet(p: &Packet) -> Result<Bytes, CodecError> {
    if p.packet_type.is_interest_class() && !p.payload.is_empty() {
        return Err(CodecError::PayloadOnInterest);
    }
    let total = p.wire_len();
    if total > MAX_PACKET_SIZE {
        return Err(CodecError::SizeExceeded(total));
    }
    let mut buf = BytesMut::with_capacity(total);
    buf.put_u8(WIRE_VERSION);
    buf.put_u8(p.packet_type.code());
    buf.put_u16(total as u16);
    buf.put_u8(p.hop_limit);
    buf.put_u8(p.flags);
    buf.put_u8(HEADER_LEN as u8);
    buf.put_u8(p.packet_type.code());
    buf.put_u16(total as u16);
    let comps = p.name.components();
    buf.put_u16(comps.len() as u16);
    for c in comps {
        // A component longer than u16 would already push the packet past the size limit.
        buf.put_u16(c.len() as u16);
        buf.put_slice(c.as_bytes());
    }
    buf.put_slice(&p.payload);
    Ok(buf.freeze())
}

pub fn decode_packet(b: &[u8]) -> Result<Packet, CodecError> {
    use Malformed::*;
    let bad = CodecError::MalformedPacket;
    if b.len() < HEADER_LEN {
        return Err(bad(Truncated));
    }
    let mut cur = b;
    let version = cur.get_u8();
    let type_code = cur.get_u8();
    let packet_type = PacketType::from_code(type_code).ok_or(bad(UnknownType(type_code)))?;
    if version != WIRE_VERSION {
        return Err(bad(Version(version)));
    }
    let pkt_len = cur.get_u16() as usize;
    let hop_limit = cur.get_u8();
    let flags = cur.get_u8();
    let hdr_len = cur.get_u8() as usize;
    let msg_type = cur.get_u8();
    let msg_len = cur.get_u16() as usize;
    if hdr_len != HEADER_LEN {
        return Err(bad(LengthMismatch {
            header: hdr_len,
            actual: HEADER_LEN,
        }));
    }
    if msg_type != type_code {
        return Err(bad(MsgTypeMismatch(msg_type)));
    }
    if b.len() < pkt_len {
        return Err(bad(Truncated));
    }
    if pkt_len != b.len() || msg_len != pkt_len {
        return Err(bad(LengthMismatch {
            header: pkt_len,
            actual: b.len(),
        }));
    }

    if cur.remaining() < 2 {
        return Err(bad(Truncated));
    }
    let count = cur.get_u16() as usize;
    let mut comps = Vec::with_capacity(count);
    for _ in 0..count {
        if cur.remaining() < 2 {
            return Err(bad(Truncated));
        }
        let len = cur.get_u16() as usize;
        if cur.remaining() < len {
            return Err(bad(Truncated));
        }
        let s = std::str::from_utf8(&cur[..len]).map_err(|e| bad(Name(e.to_string())))?;
        comps.push(s.to_owned());
        cur.advance(len);
    }
    let name = super::Name::from_components(comps).map_err(|e| bad(Name(e.to_string())))?;
    let payload = Bytes::copy_from_slice(cur);
    if packet_type.is_interest_class() && !payload.is_empty() {
        return Err(CodecError::PayloadOnInterest);
    }
    Ok(Packet {
        packet_type,
        hop_limit,
        flags,
        name,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn interest_round_trip() {
        let p = Packet::interest(n("/a/b")).with_hop_limit(16);
        let bytes = encode_packet(&p).unwrap();
        assert_eq!(bytes[1], 0x00);
        assert_eq!(decode_packet(&bytes).unwrap(), p);
    }

    #[test]
    fn type_codes_on_the_wire() {
        let add = encode_packet(&Packet::add_ci(n("/q"))).unwrap();
        assert_eq!(add[1], 0x02);
        let ds = encode_packet(&Packet::data_stream(n("/s/1"), "x")).unwrap();
        assert_eq!(ds[1], 0x04);
        let rm = encode_packet(&Packet::remove_ci(n("/q"))).unwrap();
        assert_eq!(rm[1], 0x03);
    }

    #[test]
    fn header_layout() {
        let p = Packet::data(n("/ab"), "xyz").with_flags(FLAG_MANAGEMENT);
        let b = encode_packet(&p).unwrap();
        let total = HEADER_LEN + 2 + 2 + 2 + 3;
        assert_eq!(b.len(), total);
        assert_eq!(b[0], WIRE_VERSION);
        assert_eq!(u16::from_be_bytes([b[2], b[3]]) as usize, total);
        assert_eq!(b[4], DEFAULT_HOP_LIMIT);
        assert_eq!(b[5], FLAG_MANAGEMENT);
        assert_eq!(b[6] as usize, HEADER_LEN);
        assert_eq!(b[7], 0x01);
        assert_eq!(u16::from_be_bytes([b[8], b[9]]) as usize, total);
        assert_eq!(&b[10..12], &[0, 1]);
        assert_eq!(&b[12..14], &[0, 2]);
        assert_eq!(&b[14..16], b"ab");
        assert_eq!(&b[16..], b"xyz");
    }

    #[test]
    fn oversized_payload() {
        let p = Packet::data_stream(n("/s"), vec![b'x'; 70_000]);
        assert!(matches!(
            encode_packet(&p),
            Err(CodecError::SizeExceeded(_))
        ));
    }

    #[test]
    fn size_limit_boundary() {
        let name = n("/s");
        let room = MAX_PACKET_SIZE - HEADER_LEN - 5;
        let ok = Packet::data(name.clone(), vec![0u8; room]);
        assert_eq!(encode_packet(&ok).unwrap().len(), MAX_PACKET_SIZE);
        let over = Packet::data(name, vec![0u8; room + 1]);
        assert_eq!(
            encode_packet(&over),
            Err(CodecError::SizeExceeded(MAX_PACKET_SIZE + 1))
        );
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(
            decode_packet(&[]),
            Err(CodecError::MalformedPacket(Malformed::Truncated))
        );
        let mut b = encode_packet(&Packet::interest(n("/a"))).unwrap().to_vec();
        b[1] = 0x07;
        assert_eq!(
            decode_packet(&b),
            Err(CodecError::MalformedPacket(Malformed::UnknownType(0x07)))
        );
        let mut b = encode_packet(&Packet::data(n("/a"), "pp"))
            .unwrap()
            .to_vec();
        b.push(0);
        assert!(matches!(
            decode_packet(&b),
            Err(CodecError::MalformedPacket(
                Malformed::LengthMismatch { .. }
            ))
        ));
        let b = encode_packet(&Packet::data(n("/a"), "pp")).unwrap();
        assert_eq!(
            decode_packet(&b[..b.len() - 1]),
            Err(CodecError::MalformedPacket(Malformed::Truncated))
        );
    }

    #[test]
    fn interest_payload_rejected() {
        let p = Packet::interest(n("/a")).with_payload("x");
        assert_eq!(encode_packet(&p), Err(CodecError::PayloadOnInterest));
    }

    #[test]
    fn type_table_is_exact() {
        let codes: Vec<u8> = (0..=255u8)
            .filter(|c| PacketType::from_code(*c).is_some())
            .collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4]);
        for t in PacketType::ALL {
            assert_eq!(PacketType::from_code(t.code()), Some(t));
        }
    }
}
