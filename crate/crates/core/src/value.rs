//! Field value types. The solver runs in 32-bit floats by default and can be
//! switched to 64-bit at run time; everything that touches field data is
//! generic over [`Value`].

use num_traits::Float;

/// Scalar type stored in field blocks and halo payloads.
///
/// The trait pins the wire code and the little-endian byte layout so that
/// encoded messages and snapshots are bit-exact across processes.
pub trait Value:
    Float + Default + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Value-type code in the halo wire header (0 = f32, 1 = f64).
    const CODE: u16;
    /// Bytes per element.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Append the little-endian bytes of `self` to `out`.
    fn write_le(self, out: &mut Vec<u8>);
    /// Read one value from the first `Self::BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;

    /// Raw bit pattern, widened to u64, for bitwise comparisons.
    fn bit_pattern(self) -> u64;
}

impl Value for f32 {
    const CODE: u16 = 0;
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    #[inline]
    fn bit_pattern(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Value for f64 {
    const CODE: u16 = 1;
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    #[inline]
    fn bit_pattern(self) -> u64 {
        self.to_bits()
    }
}

/// Runtime selector for the field value type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    F32,
    F64,
}

impl ValueType {
    pub fn code(self) -> u16 {
        match self {
            ValueType::F32 => f32::CODE,
            ValueType::F64 => f64::CODE,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            ValueType::F32 => f32::BYTES,
            ValueType::F64 => f64::BYTES,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(ValueType::F32),
            1 => Some(ValueType::F64),
            _ => None,
        }
    }
}

impl std::fmt::Display for ValueType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValueType::F32 => write!(f, "f32"),
            ValueType::F64 => write!(f, "f64"),
        }
    }
}
