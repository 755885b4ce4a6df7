//! Dense 3D grids shared by every other module.
//!
//! All volumes store voxels in x-fastest linear order: the voxel at `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. Scalars are `f64` throughout.

mod io;

use std::fmt;

pub use io::{decode, encode, read_volume, write_volume, AnyVolume, BlvVolume, Dtype, MAGIC};

use crate::error::{Error, Result};

/// Voxel counts per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    nx: usize,
    ny: usize,
    nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let narrow = |v: usize| u32::try_from(v).unwrap_or(u32::MAX);
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidDims {
                nx: narrow(nx),
                ny: narrow(ny),
                nz: narrow(nz),
            });
        }
        let overflow = || Error::DimsOverflow {
            nx: narrow(nx),
            ny: narrow(ny),
            nz: narrow(nz),
        };
        if nx > u32::MAX as usize || ny > u32::MAX as usize || nz > u32::MAX as usize {
            return Err(overflow());
        }
        let len = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(overflow)?;
        // Linear indices must also fit in isize for slice addressing.
        if len > isize::MAX as usize {
            return Err(overflow());
        }
        Ok(Self { nx, ny, nz })
    }

    /// Cube with `n` voxels per side.
    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Total voxel count.
    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Always false; a valid `Dims` holds at least one voxel.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        debug_assert!(index < self.len());
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }

    /// Index of `(x, y, z) + offset`, or `None` when the result leaves the grid.
    #[inline]
    pub fn offset_index(&self, x: usize, y: usize, z: usize, d: [isize; 3]) -> Option<usize> {
        let x = x.checked_add_signed(d[0]).filter(|&v| v < self.nx)?;
        let y = y.checked_add_signed(d[1]).filter(|&v| v < self.ny)?;
        let z = z.checked_add_signed(d[2]).filter(|&v| v < self.nz)?;
        Some(self.index(x, y, z))
    }

    pub(crate) fn ensure_same(&self, other: &Dims) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DimsMismatch {
                left: *self,
                right: *other,
            })
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Real-valued volume: probabilities, intensities or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    dims: Dims,
    values: Vec<f64>,
}

impl DenseVolume {
    pub fn new(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            values: vec![value; dims.len()],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let values = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Self { dims, values }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with a single voxel replaced.
    pub fn with_value(&self, index: usize, value: f64) -> Self {
        let mut values = self.values.clone();
        values[index] = value;
        Self {
            dims: self.dims,
            values,
        }
    }

    /// Fails on the first non-finite value.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Fails unless every value is finite and in `[0, 1]`.
    pub fn ensure_probabilities(&self) -> Result<()> {
        self.ensure_finite()?;
        match self
            .values
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            Some(index) => Err(Error::ProbabilityOutOfRange {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    /// Binary mask of voxels with value `>= threshold`.
    pub fn threshold(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            bits: self.values.iter().map(|&v| v >= threshold).collect(),
        }
    }
}

/// Boolean volume.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: bits.len(),
            });
        }
        Ok(Self { dims, bits })
    }

    pub fn filled(dims: Dims, value: bool) -> Self {
        Self {
            dims,
            bits: vec![value; dims.len()],
        }
    }

    pub fn empty(dims: Dims) -> Self {
        Self::filled(dims, false)
    }

    pub fn full(dims: Dims) -> Self {
        Self::filled(dims, true)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let bits = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Self { dims, bits }
    }

    /// Mask with exactly the listed linear indices set.
    pub fn from_indices(dims: Dims, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; dims.len()];
        for i in indices {
            bits[i] = true;
        }
        Self { dims, bits }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.dims.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Linear indices of set voxels, ascending.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a || b)
    }

    pub fn not(&self) -> BinaryMask {
        Self {
            dims: self.dims,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// Indicator volume: 1.0 where set, 0.0 elsewhere.
    pub fn to_dense(&self) -> DenseVolume {
        DenseVolume {
            dims: self.dims,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.dims.ensure_same(&other.dims)?;
        Ok(Self {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Per-voxel instance ids: 0 is background, instances are numbered `1..=n_instances`
/// with every id present.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceLabeling {
    dims: Dims,
    labels: Vec<u32>,
    n_instances: u32,
}

impl InstanceLabeling {
    /// Validates length and contiguity of the label set.
    pub fn new(dims: Dims, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: labels.len(),
            });
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; max as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().skip(1).position(|&s| !s) {
            return Err(Error::NonContiguousLabels {
                missing: missing as u32 + 1,
                max,
            });
        }
        Ok(Self {
            dims,
            labels,
            n_instances: max,
        })
    }

    /// Renumbers arbitrary ids to `1..=N` in ascending order of each id's first voxel.
    pub fn normalized(dims: Dims, raw: &[u32]) -> Result<Self> {
        if raw.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: raw.len(),
            });
        }
        let mut map = std::collections::HashMap::new();
        let mut next = 0u32;
        let labels = raw
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *map.entry(l).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        Ok(Self {
            dims,
            labels,
            n_instances: next,
        })
    }

    /// Background-only labeling.
    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            labels: vec![0; dims.len()],
            n_instances: 0,
        }
    }

    pub(crate) fn from_parts_unchecked(dims: Dims, labels: Vec<u32>, n_instances: u32) -> Self {
        debug_assert_eq!(labels.len(), dims.len());
        Self {
            dims,
            labels,
            n_instances,
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn n_instances(&self) -> u32 {
        self.n_instances
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[self.dims.index(x, y, z)]
    }

    /// Union of all instances.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            bits: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    pub(crate) fn check_id(&self, id: u32) -> Result<()> {
        if id == 0 || id > self.n_instances {
            Err(Error::InstanceOutOfRange {
                id,
                n_instances: self.n_instances,
            })
        } else {
            Ok(())
        }
    }
}

/// Keeps `a` where the mask is set and zeroes it elsewhere.
pub fn hadamard(a: &DenseVolume, b: &BinaryMask) -> Result<DenseVolume> {
    a.dims.ensure_same(&b.dims)?;
    Ok(DenseVolume {
        dims: a.dims,
        values: a
            .values
            .iter()
            .zip(&b.bits)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect(),
    })
}
