//! BLV1 volume files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BLV1" (42 4C 56 31)
//! 4       12    u32 nx, u32 ny, u32 nz
//! 16      1     dtype: 0 = f64 probability, 1 = u8 binary mask, 2 = u32 instance labels
//! 17      ...   nx*ny*nz elements in x-fastest order (8, 1 or 4 bytes each)
//! ```

use std::path::Path;

use super::{BinaryMask, DenseVolume, Dims, InstanceLabeling};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BLV1";
const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    Probability = 0,
    Mask = 1,
    Labels = 2,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Probability),
            1 => Ok(Dtype::Mask),
            2 => Ok(Dtype::Labels),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            Dtype::Probability => 8,
            Dtype::Mask => 1,
            Dtype::Labels => 4,
        }
    }
}

/// A volume type with a BLV1 encoding.
pub trait BlvVolume {
    const DTYPE: Dtype;
    fn dims(&self) -> Dims;
    fn write_payload(&self, out: &mut Vec<u8>);
}

impl BlvVolume for DenseVolume {
    const DTYPE: Dtype = Dtype::Probability;
    fn dims(&self) -> Dims {
        self.dims
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl BlvVolume for BinaryMask {
    const DTYPE: Dtype = Dtype::Mask;
    fn dims(&self) -> Dims {
        self.dims
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        out.extend(self.bits.iter().map(|&b| b as u8));
    }
}

impl BlvVolume for InstanceLabeling {
    const DTYPE: Dtype = Dtype::Labels;
    fn dims(&self) -> Dims {
        self.dims
    }
    fn write_payload(&self, out: &mut Vec<u8>) {
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
}

/// Any decoded BLV1 volume.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Probability(DenseVolume),
    Mask(BinaryMask),
    Labels(InstanceLabeling),
}

impl AnyVolume {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyVolume::Probability(_) => "probability",
            AnyVolume::Mask(_) => "mask",
            AnyVolume::Labels(_) => "labels",
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            AnyVolume::Probability(v) => v.dims,
            AnyVolume::Mask(v) => v.dims,
            AnyVolume::Labels(v) => v.dims,
        }
    }

    pub fn into_probability(self) -> Result<DenseVolume> {
        match self {
            AnyVolume::Probability(v) => Ok(v),
            other => Err(Error::WrongVolumeKind {
                expected: "probability",
                found: other.kind(),
            }),
        }
    }

    /// Accepts a mask, or derives one from the foreground of a labeling.
    pub fn into_mask(self) -> Result<BinaryMask> {
        match self {
            AnyVolume::Mask(v) => Ok(v),
            AnyVolume::Labels(l) => Ok(l.foreground()),
            other => Err(Error::WrongVolumeKind {
                expected: "mask",
                found: other.kind(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<InstanceLabeling> {
        match self {
            AnyVolume::Labels(v) => Ok(v),
            other => Err(Error::WrongVolumeKind {
                expected: "labels",
                found: other.kind(),
            }),
        }
    }
}

pub fn encode<V: BlvVolume>(v: &V) -> Vec<u8> {
    let dims = v.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + dims.len() * V::DTYPE.element_size());
    out.extend_from_slice(&MAGIC);
    for n in dims.as_array() {
        // Dims guarantees every axis fits in u32.
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.push(V::DTYPE as u8);
    v.write_payload(&mut out);
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyVolume> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("in header"));
    let (nx, ny, nz) = (u32_at(4), u32_at(8), u32_at(12));
    let dims = Dims::new(nx as usize, ny as usize, nz as usize)?;
    let dtype = Dtype::from_code(bytes[16])?;

    let expected = dims
        .len()
        .checked_mul(dtype.element_size())
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(Error::DimsOverflow { nx, ny, nz })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let payload = &bytes[HEADER_LEN..];

    Ok(match dtype {
        Dtype::Probability => AnyVolume::Probability(DenseVolume {
            dims,
            values: payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        }),
        Dtype::Mask => {
            let bits = payload
                .iter()
                .enumerate()
                .map(|(index, &value)| match value {
                    0 => Ok(false),
                    1 => Ok(true),
                    value => Err(Error::InvalidMaskByte { index, value }),
                })
                .collect::<Result<Vec<_>>>()?;
            AnyVolume::Mask(BinaryMask { dims, bits })
        }
        Dtype::Labels => {
            let labels = payload
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            AnyVolume::Labels(InstanceLabeling::new(dims, labels)?)
        }
    })
}

pub fn write_volume<V: BlvVolume>(path: impl AsRef<Path>, v: &V) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(v)).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
