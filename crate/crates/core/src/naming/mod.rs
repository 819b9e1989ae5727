//! Hierarchical names, the five packet types and their wire codec, and the
//! text encoding of event tuples carried in stream payloads.

mod name;
mod packet;
mod tuple;

pub use name::{longest_prefix_match, Name, NameError};
pub use packet::{
    decode_packet, encode_packet, CodecError, Malformed, Packet, PacketType, DEFAULT_HOP_LIMIT,
    FLAG_FEEDBACK, FLAG_MANAGEMENT, FLAG_U_BIT, HEADER_LEN, MAX_PACKET_SIZE, WIRE_VERSION,
};
pub use tuple::{
    decode_tuples, decode_tuples_bytes, encode_tuples, peek_ts, EventTuple, Schema, TupleError,
    Value,
};
