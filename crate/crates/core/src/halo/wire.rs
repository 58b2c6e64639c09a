//! Bit-exact wire format for halo messages.
//!
//! Frame layout, all little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `0x48414C4F` as a LE u32         |
//! | 4      | 2    | version, currently 1                   |
//! | 6      | 2    | value-type code (0 = f32, 1 = f64)     |
//! | 8      | 4    | source rank                            |
//! | 12     | 4    | destination rank                       |
//! | 16     | 8    | step number                            |
//! | 24     | 1    | face code                              |
//! | 25     | 3    | reserved, must be zero                 |
//! | 28     | 8    | payload length in elements             |
//! | 36     | ...  | raw little-endian payload              |

use super::{FaceId, HaloMessage};
use crate::error::{Error, Result};
use crate::value::Value;

pub const MAGIC: u32 = 0x48414C4F;
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;

pub fn encode_message<T: Value>(msg: &HaloMessage<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len() * T::BYTES);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::CODE.to_le_bytes());
    out.extend_from_slice(&msg.source.to_le_bytes());
    out.extend_from_slice(&msg.dest.to_le_bytes());
    out.extend_from_slice(&msg.step.to_le_bytes());
    out.push(msg.face.code());
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&(msg.payload.len() as u64).to_le_bytes());
    for &v in &msg.payload {
        v.write_le(&mut out);
    }
    out
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Read the step number from an encoded frame without decoding it. Returns
/// None for anything too short or with a bad magic; such frames are decoded
/// (and rejected) downstream.
pub fn peek_step(bytes: &[u8]) -> Option<u64> {
    if bytes.len() < HEADER_LEN || u32_at(bytes, 0) != MAGIC {
        return None;
    }
    Some(u64_at(bytes, 16))
}

/// Validate a standalone header and return (value-type code, payload bytes).
/// Transports use this to learn how much more to read from a stream.
pub fn header_payload_bytes(header: &[u8]) -> Result<(u16, usize)> {
    if header.len() < HEADER_LEN {
        return Err(Error::Protocol(format!(
            "frame header truncated: {} of {HEADER_LEN} bytes",
            header.len()
        )));
    }
    let magic = u32_at(header, 0);
    if magic != MAGIC {
        return Err(Error::Protocol(format!(
            "bad magic 0x{magic:08X}, expected 0x{MAGIC:08X}"
        )));
    }
    let version = u16_at(header, 4);
    if version != VERSION {
        return Err(Error::Protocol(format!(
            "unknown wire version {version}, expected {VERSION}"
        )));
    }
    let vtype = u16_at(header, 6);
    let elem_bytes = match vtype {
        0 => 4,
        1 => 8,
        other => {
            return Err(Error::Protocol(format!(
                "unknown value-type code {other}"
            )))
        }
    };
    let elements = u64_at(header, 28) as usize;
    Ok((vtype, elements * elem_bytes))
}

pub fn decode_message<T: Value>(bytes: &[u8]) -> Result<HaloMessage<T>> {
    let (vtype, payload_bytes) = header_payload_bytes(bytes)?;
    if vtype != T::CODE {
        return Err(Error::Protocol(format!(
            "value-type code {vtype} does not match the configured type (code {})",
            T::CODE
        )));
    }
    if bytes[25..28] != [0, 0, 0] {
        return Err(Error::Protocol("reserved header bytes are nonzero".into()));
    }
    let face_code = bytes[24];
    let face = FaceId::from_code(face_code)
        .ok_or_else(|| Error::Protocol(format!("invalid face code {face_code}")))?;
    let total = HEADER_LEN + payload_bytes;
    if bytes.len() < total {
        return Err(Error::Protocol(format!(
            "frame truncated: {} of {total} bytes",
            bytes.len()
        )));
    }
    if bytes.len() > total {
        return Err(Error::Protocol(format!(
            "frame has {} trailing bytes",
            bytes.len() - total
        )));
    }
    let elements = payload_bytes / T::BYTES;
    let mut payload = Vec::with_capacity(elements);
    for i in 0..elements {
        payload.push(T::read_le(&bytes[HEADER_LEN + i * T::BYTES..]));
    }
    Ok(HaloMessage {
        source: u32_at(bytes, 8),
        dest: u32_at(bytes, 12),
        step: u64_at(bytes, 16),
        face,
        payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HaloMessage<f32> {
        HaloMessage {
            source: 3,
            dest: 7,
            step: 42,
            face: FaceId::YHigh,
            payload: vec![1.5, -2.25, 0.0, f32::MIN_POSITIVE],
        }
    }

    #[test]
    fn empty_payload_frame_is_header_only() {
        let msg = HaloMessage::<f64> {
            source: 0,
            dest: 1,
            step: 0,
            face: FaceId::XLow,
            payload: vec![],
        };
        assert_eq!(encode_message(&msg).len(), HEADER_LEN);
    }

    #[test]
    fn roundtrip_preserves_message() {
        let msg = sample();
        let decoded = decode_message::<f32>(&encode_message(&msg)).unwrap();
        assert_eq!(decoded, msg);
    }

    #[test]
    fn magic_flip_is_rejected() {
        let mut bytes = encode_message(&sample());
        bytes[0] ^= 0xFF;
        assert!(matches!(
            decode_message::<f32>(&bytes),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_message(&sample());
        bytes[4] = 9;
        let err = decode_message::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode_message(&sample());
        let err = decode_message::<f32>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn value_type_mismatch_is_rejected() {
        let bytes = encode_message(&sample());
        assert!(decode_message::<f64>(&bytes).is_err());
    }

    #[test]
    fn invalid_face_code_is_rejected() {
        let mut bytes = encode_message(&sample());
        bytes[24] = 7;
        let err = decode_message::<f32>(&bytes).unwrap_err();
        assert!(err.to_string().contains("face"), "{err}");
    }

    #[test]
    fn f64_payload_survives_roundtrip() {
        let msg = HaloMessage::<f64> {
            source: 1,
            dest: 0,
            step: u64::MAX,
            face: FaceId::XHigh,
            payload: vec![std::f64::consts::PI, -0.0, 1e-300],
        };
        let decoded = decode_message::<f64>(&encode_message(&msg)).unwrap();
        assert_eq!(decoded.step, u64::MAX);
        assert_eq!(decoded.payload[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(decoded, msg);
    }
}
