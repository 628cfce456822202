//! Binary wire protocol between workers and the parameter server.
//!
//! Framing: `[u32 little-endian frame length][u8 message tag][payload]`,
//! where the frame length counts the tag byte plus the payload. Tags:
//! 1 = FetchRequest, 2 = ModelReply, 3 = GradientPush, 4 = Shutdown. All
//! integers are little-endian; floats are little-endian IEEE-754 binary64.
//! Float arrays travel as a u32 element count followed by the raw elements.
//!
//! The model travels as a flat float array; layer shapes are implied by the
//! architecture configuration both ends share at startup. The first message
//! on a connection must be a FetchRequest.

use std::fmt;
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct FetchRequest {
    pub worker_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReply {
    /// Server generation n at snapshot time.
    pub generation: u64,
    /// Flattened parameters: layer order, weight before bias, row-major.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPush {
    pub worker_id: u32,
    /// The generation of the model this gradient was computed from.
    pub base_generation: u64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Fetch(FetchRequest),
    Model(ModelReply),
    Gradient(GradientPush),
    Shutdown,
}

const TAG_FETCH: u8 = 1;
const TAG_MODEL: u8 = 2;
const TAG_GRADIENT: u8 = 3;
const TAG_SHUTDOWN: u8 = 4;

/// Refuse to allocate frames beyond this size (256 MiB of payload covers
/// models of ~33 M parameters, far past anything this crate trains).
pub const MAX_FRAME_LEN: u32 = 256 * 1024 * 1024;

#[derive(Debug)]
pub enum ProtocolError {
    UnknownTag(u8),
    /// The buffer or stream ended before the declared frame did.
    Truncated {
        field: &'static str,
        needed: usize,
        got: usize,
    },
    /// The declared frame length disagrees with the payload structure.
    LengthMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    /// A float array's element count disagrees with the architecture's
    /// parameter count.
    ParamCountMismatch {
        field: &'static str,
        expected: usize,
        got: usize,
    },
    OversizeFrame {
        declared: u32,
    },
    Io(std::io::Error),
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::UnknownTag(t) => write!(f, "unknown message tag {t}"),
            ProtocolError::Truncated { field, needed, got } => {
                write!(f, "truncated frame at {field}: needed {needed} bytes, got {got}")
            }
            ProtocolError::LengthMismatch { field, expected, got } => {
                write!(f, "length mismatch at {field}: expected {expected}, got {got}")
            }
            ProtocolError::ParamCountMismatch { field, expected, got } => write!(
                f,
                "parameter count mismatch at {field}: architecture wants {expected}, got {got}"
            ),
            ProtocolError::OversizeFrame { declared } => {
                write!(f, "declared frame length {declared} exceeds limit {MAX_FRAME_LEN}")
            }
            ProtocolError::Io(e) => write!(f, "io failure: {e}"),
        }
    }
}

impl std::error::Error for ProtocolError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ProtocolError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e)
    }
}

impl Message {
    fn tag(&self) -> u8 {
        match self {
            Message::Fetch(_) => TAG_FETCH,
            Message::Model(_) => TAG_MODEL,
            Message::Gradient(_) => TAG_GRADIENT,
            Message::Shutdown => TAG_SHUTDOWN,
        }
    }

    /// Validates float array lengths against the architecture's parameter
    /// count. Fetch and Shutdown always pass.
    pub fn check_param_count(&self, expected: usize) -> Result<(), ProtocolError> {
        match self {
            Message::Model(m) if m.params.len() != expected => {
                Err(ProtocolError::ParamCountMismatch {
                    field: "ModelReply.params",
                    expected,
                    got: m.params.len(),
                })
            }
            Message::Gradient(g) if g.gradient.len() != expected => {
                Err(ProtocolError::ParamCountMismatch {
                    field: "GradientPush.gradient",
                    expected,
                    got: g.gradient.len(),
                })
            }
            _ => Ok(()),
        }
    }
}

fn payload_len(msg: &Message) -> usize {
    match msg {
        Message::Fetch(_) => 4,
        Message::Model(m) => 8 + 4 + 8 * m.params.len(),
        Message::Gradient(g) => 4 + 8 + 4 + 8 * g.gradient.len(),
        Message::Shutdown => 0,
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let frame_len = 1 + payload_len(msg);
    let mut out = Vec::with_capacity(4 + frame_len);
    out.extend_from_slice(&(frame_len as u32).to_le_bytes());
    out.push(msg.tag());
    match msg {
        Message::Fetch(m) => out.extend_from_slice(&m.worker_id.to_le_bytes()),
        Message::Model(m) => {
            out.extend_from_slice(&m.generation.to_le_bytes());
            put_floats(&mut out, &m.params);
        }
        Message::Gradient(g) => {
            out.extend_from_slice(&g.worker_id.to_le_bytes());
            out.extend_from_slice(&g.base_generation.to_le_bytes());
            put_floats(&mut out, &g.gradient);
        }
        Message::Shutdown => {}
    }
    out
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one frame from the front of `buf`. Returns the message and the
/// number of bytes consumed, so concatenated frames decode in sequence.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), ProtocolError> {
    if buf.len() < 4 {
        return Err(ProtocolError::Truncated {
            field: "frame length",
            needed: 4,
            got: buf.len(),
        });
    }
    let frame_len = u32::from_le_bytes(buf[..4].try_into().unwrap());
    if frame_len > MAX_FRAME_LEN {
        return Err(ProtocolError::OversizeFrame { declared: frame_len });
    }
    if frame_len == 0 {
        return Err(ProtocolError::LengthMismatch {
            field: "frame length",
            expected: 1,
            got: 0,
        });
    }
    let total = 4 + frame_len as usize;
    if buf.len() < total {
        return Err(ProtocolError::Truncated {
            field: "frame body",
            needed: total,
            got: buf.len(),
        });
    }
    let tag = buf[4];
    let payload = &buf[5..total];
    let msg = decode_payload(tag, payload)?;
    Ok((msg, total))
}

fn decode_payload(tag: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    match tag {
        TAG_FETCH => {
            expect_len("FetchRequest.worker_id", payload, 4)?;
            Ok(Message::Fetch(FetchRequest {
                worker_id: u32::from_le_bytes(payload.try_into().unwrap()),
            }))
        }
        TAG_MODEL => {
            let mut cursor = Cursor::new(payload);
            let generation = cursor.u64("ModelReply.generation")?;
            let params = cursor.floats("ModelReply.params")?;
            cursor.finish("ModelReply")?;
            Ok(Message::Model(ModelReply { generation, params }))
        }
        TAG_GRADIENT => {
            let mut cursor = Cursor::new(payload);
            let worker_id = cursor.u32("GradientPush.worker_id")?;
            let base_generation = cursor.u64("GradientPush.base_generation")?;
            let gradient = cursor.floats("GradientPush.gradient")?;
            cursor.finish("GradientPush")?;
            Ok(Message::Gradient(GradientPush {
                worker_id,
                base_generation,
                gradient,
            }))
        }
        TAG_SHUTDOWN => {
            expect_len("Shutdown", payload, 0)?;
            Ok(Message::Shutdown)
        }
        other => Err(ProtocolError::UnknownTag(other)),
    }
}

fn expect_len(field: &'static str, payload: &[u8], want: usize) -> Result<(), ProtocolError> {
    if payload.len() != want {
        return Err(ProtocolError::LengthMismatch {
            field,
            expected: want,
            got: payload.len(),
        });
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.pos + n > self.buf.len() {
            return Err(ProtocolError::Truncated {
                field,
                needed: self.pos + n,
                got: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(field, 8)?.try_into().unwrap()))
    }

    fn floats(&mut self, field: &'static str) -> Result<Vec<f64>, ProtocolError> {
        let count = self.u32(field)? as usize;
        let remaining = &self.buf[self.pos..];
        if remaining.len() != 8 * count {
            // The declared frame carried the wrong number of elements for
            // this count; report against the declared count.
            return Err(ProtocolError::LengthMismatch {
                field,
                expected: 8 * count,
                got: remaining.len(),
            });
        }
        let out: Vec<f64> = remaining
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = self.buf.len();
        Ok(out)
    }

    fn finish(&mut self, field: &'static str) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::LengthMismatch {
                field,
                expected: self.pos,
                got: self.buf.len(),
            });
        }
        Ok(())
    }
}

/// Reads one framed message from a byte stream.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message, ProtocolError> {
    read_message_buffered(reader, &mut Vec::new())
}

/// Like [`read_message`], reusing `scratch` for the frame bytes so a busy
/// connection does not reallocate per message.
pub fn read_message_buffered<R: Read>(
    reader: &mut R,
    scratch: &mut Vec<u8>,
) -> Result<Message, ProtocolError> {
    read_frame(reader, scratch)?;
    decode_frame(scratch)
}

/// Reads one frame (tag byte plus payload) into `scratch` without decoding.
pub fn read_frame<R: Read>(reader: &mut R, scratch: &mut Vec<u8>) -> Result<(), ProtocolError> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let frame_len = u32::from_le_bytes(len_bytes);
    if frame_len > MAX_FRAME_LEN {
        return Err(ProtocolError::OversizeFrame { declared: frame_len });
    }
    if frame_len == 0 {
        return Err(ProtocolError::LengthMismatch {
            field: "frame length",
            expected: 1,
            got: 0,
        });
    }
    scratch.resize(frame_len as usize, 0);
    reader.read_exact(scratch)?;
    Ok(())
}

/// Decodes a frame as produced by [`read_frame`] (no length prefix).
pub fn decode_frame(frame: &[u8]) -> Result<Message, ProtocolError> {
    if frame.is_empty() {
        return Err(ProtocolError::Truncated {
            field: "frame body",
            needed: 1,
            got: 0,
        });
    }
    decode_payload(frame[0], &frame[1..])
}

/// Zero-copy view of a gradient push: header fields plus the raw
/// little-endian float bytes. The server's hot path applies the update
/// straight from these bytes instead of materializing a float vector.
#[derive(Debug, Clone, Copy)]
pub struct GradientFrame<'a> {
    pub worker_id: u32,
    pub base_generation: u64,
    pub element_count: usize,
    pub float_bytes: &'a [u8],
}

/// Views a frame (tag + payload) as a gradient push. `Ok(None)` means the
/// frame holds some other message kind.
pub fn gradient_frame_view(frame: &[u8]) -> Result<Option<GradientFrame<'_>>, ProtocolError> {
    if frame.is_empty() || frame[0] != TAG_GRADIENT {
        return Ok(None);
    }
    let payload = &frame[1..];
    let mut cursor = Cursor::new(payload);
    let worker_id = cursor.u32("GradientPush.worker_id")?;
    let base_generation = cursor.u64("GradientPush.base_generation")?;
    let element_count = cursor.u32("GradientPush.gradient")? as usize;
    let float_bytes = &payload[cursor.pos..];
    if float_bytes.len() != 8 * element_count {
        return Err(ProtocolError::LengthMismatch {
            field: "GradientPush.gradient",
            expected: 8 * element_count,
            got: float_bytes.len(),
        });
    }
    Ok(Some(GradientFrame {
        worker_id,
        base_generation,
        element_count,
        float_bytes,
    }))
}

/// Writes one framed message to a byte stream.
pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    let bytes = encode(msg);
    writer.write_all(&bytes)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn random_message(rng: &mut Rng64) -> Message {
        match rng.range(4) {
            0 => Message::Fetch(FetchRequest {
                worker_id: rng.next_u64() as u32,
            }),
            1 => Message::Model(ModelReply {
                generation: rng.next_u64(),
                params: (0..rng.range(50)).map(|_| rng.gauss()).collect(),
            }),
            2 => Message::Gradient(GradientPush {
                worker_id: rng.next_u64() as u32,
                base_generation: rng.next_u64(),
                gradient: (0..rng.range(50)).map(|_| rng.gauss()).collect(),
            }),
            _ => Message::Shutdown,
        }
    }

    #[test]
    fn fetch_request_exact_bytes() {
        let bytes = encode(&Message::Fetch(FetchRequest { worker_id: 7 }));
        assert_eq!(bytes, vec![0x05, 0, 0, 0, 0x01, 0x07, 0, 0, 0]);
    }

    #[test]
    fn round_trip_large_model_reply() {
        let mut rng = Rng64::seeded(4);
        let msg = Message::Model(ModelReply {
            generation: 42,
            params: (0..10_000).map(|_| rng.gauss()).collect(),
        });
        let bytes = encode(&msg);
        let (back, used) = decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, msg);
    }

    #[test]
    fn concatenated_frames_decode_in_sequence() {
        let mut rng = Rng64::seeded(9);
        let msgs: Vec<Message> = (0..20).map(|_| random_message(&mut rng)).collect();
        let mut wire = Vec::new();
        for m in &msgs {
            wire.extend_from_slice(&encode(m));
        }
        let mut offset = 0;
        for expected in &msgs {
            let (msg, used) = decode(&wire[offset..]).unwrap();
            assert_eq!(&msg, expected);
            offset += used;
        }
        assert_eq!(offset, wire.len());
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode(&Message::Model(ModelReply {
            generation: 1,
            params: vec![1.0, 2.0],
        }));
        for cut in 0..bytes.len() {
            match decode(&bytes[..cut]) {
                Err(ProtocolError::Truncated { .. }) => {}
                other => panic!("cut at {cut}: expected truncation, got {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_tag_is_reported() {
        let mut bytes = encode(&Message::Shutdown);
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(ProtocolError::UnknownTag(9))));
    }

    #[test]
    fn declared_length_beyond_buffer_is_truncated_frame() {
        let mut bytes = encode(&Message::Fetch(FetchRequest { worker_id: 1 }));
        bytes[0] = 200;
        assert!(matches!(
            decode(&bytes),
            Err(ProtocolError::Truncated { field: "frame body", .. })
        ));
    }

    #[test]
    fn inner_count_mismatch_is_length_mismatch() {
        let msg = Message::Model(ModelReply {
            generation: 3,
            params: vec![1.0, 2.0, 3.0],
        });
        let mut bytes = encode(&msg);
        // Corrupt the element count (first 4 bytes after tag + generation).
        bytes[13] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(ProtocolError::LengthMismatch { field: "ModelReply.params", .. })
        ));
    }

    #[test]
    fn param_count_check_names_the_field() {
        let msg = Message::Gradient(GradientPush {
            worker_id: 0,
            base_generation: 0,
            gradient: vec![0.0; 3],
        });
        match msg.check_param_count(5) {
            Err(ProtocolError::ParamCountMismatch { field, expected, got }) => {
                assert_eq!(field, "GradientPush.gradient");
                assert_eq!((expected, got), (5, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(msg.check_param_count(3).is_ok());
        assert!(Message::Shutdown.check_param_count(99).is_ok());
    }

    #[test]
    fn oversize_frame_is_rejected_without_allocation() {
        let mut bytes = vec![0u8; 8];
        bytes[..4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(ProtocolError::OversizeFrame { .. })
        ));
    }

    #[test]
    fn stream_read_write_round_trip() {
        let mut rng = Rng64::seeded(12);
        let msgs: Vec<Message> = (0..10).map(|_| random_message(&mut rng)).collect();
        let mut wire = Vec::new();
        for m in &msgs {
            write_message(&mut wire, m).unwrap();
        }
        let mut cursor = std::io::Cursor::new(wire);
        for expected in &msgs {
            assert_eq!(&read_message(&mut cursor).unwrap(), expected);
        }
    }

    #[test]
    fn garbage_never_panics() {
        let mut rng = Rng64::seeded(77);
        for _ in 0..2000 {
            let len = rng.range(64);
            let bytes: Vec<u8> = (0..len).map(|_| rng.next_u64() as u8).collect();
            let _ = decode(&bytes);
        }
    }
}
