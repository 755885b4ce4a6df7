use std::path::PathBuf;

use crate::volume::Dims;

/// Errors produced by the volume, loss, metric, synthesis and training routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions {nx}x{ny}x{nz}: every axis must be at least 1")]
    InvalidDims { nx: u32, ny: u32, nz: u32 },

    #[error("dimensions {nx}x{ny}x{nz} overflow the addressable voxel count")]
    DimsOverflow { nx: u32, ny: u32, nz: u32 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimsMismatch { left: Dims, right: Dims },

    #[error("payload has {found} elements, dimensions require {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("bad magic bytes {0:02x?}, expected \"BLV1\"")]
    BadMagic([u8; 4]),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingBytes { extra: usize },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("binary mask byte at voxel {index} is {value}, expected 0 or 1")]
    InvalidMaskByte { index: usize, value: u8 },

    #[error("instance labels are not contiguous: id {missing} is absent but {max} is present")]
    NonContiguousLabels { missing: u32, max: u32 },

    #[error("expected a {expected} volume, found {found}")]
    WrongVolumeKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("instance id {id} out of range 1..={n_instances}")]
    InstanceOutOfRange { id: u32, n_instances: u32 },

    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },

    #[error("probability {value} at voxel {index} outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("ground truth has no instances")]
    EmptyGroundTruth,

    #[error("instance labeling foreground disagrees with the ground-truth mask at voxel {index}")]
    LabelsMismatch { index: usize },

    #[error("expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("one-hot channels {first} and {second} overlap at voxel {index}")]
    OverlappingChannels {
        first: usize,
        second: usize,
        index: usize,
    },

    #[error("could not place blob {blob} after {attempts} attempts")]
    UnsatisfiablePlacement { blob: usize, attempts: usize },

    #[error("blob is empty")]
    EmptyBlob,

    #[error("feature width {found} does not match model width {expected}")]
    FeatureWidth { expected: usize, found: usize },

    #[error("non-finite gradient at epoch {epoch}: {detail}")]
    NonFiniteGradient { epoch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from arithmetic rather than from input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
