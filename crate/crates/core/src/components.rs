//! Connected-component labeling of binary masks.
//!
//! Two raster passes over a union-find forest. Each union keeps the smaller voxel index as
//! root, so the root of a component is its first voxel in raster order and the second pass
//! hands out labels in ascending order of each component's minimum linear index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, InstanceLabeling};

/// Voxel neighbourhood used to decide adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Shared face.
    Face6,
    /// Shared face or edge.
    Edge18,
    /// Shared face, edge or corner.
    #[default]
    Vertex26,
}

impl Connectivity {
    pub fn neighbor_count(self) -> u8 {
        match self {
            Connectivity::Face6 => 6,
            Connectivity::Edge18 => 18,
            Connectivity::Vertex26 => 26,
        }
    }

    /// Every neighbour offset, in raster order.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max_nonzero = match self {
            Connectivity::Face6 => 1,
            Connectivity::Edge18 => 2,
            Connectivity::Vertex26 => 3,
        };
        let mut out = Vec::with_capacity(self.neighbor_count() as usize);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                    if nonzero >= 1 && nonzero <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the centre voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| (dz, dy, dx) < (0, 0, 0))
            .collect()
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Face6),
            18 => Ok(Connectivity::Edge18),
            26 => Ok(Connectivity::Vertex26),
            other => Err(Error::InvalidConfig(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbor_count()
    }
}

impl FromStr for Connectivity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("connectivity must be 6, 18 or 26, got {s:?}")))?;
        Connectivity::try_from(n)
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbor_count())
    }
}

struct Forest {
    parent: Vec<u32>,
}

impl Forest {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len as u32).collect(),
        }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        let mut root = i;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[i as usize] != root {
            let next = self.parent[i as usize];
            self.parent[i as usize] = root;
            i = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels the connected foreground components of `mask`.
///
/// Labels are contiguous `1..=N`, assigned in ascending order of each component's minimum
/// linear index; background stays 0.
pub fn label_components(mask: &BinaryMask, conn: Connectivity) -> InstanceLabeling {
    let dims = mask.dims();
    let bits = mask.as_slice();
    assert!(
        dims.len() <= u32::MAX as usize,
        "volume too large for u32 union-find indices"
    );
    let backward = conn.backward_offsets();
    let mut forest = Forest::new(dims.len());

    for i in 0..dims.len() {
        if !bits[i] {
            continue;
        }
        let (x, y, z) = dims.coords(i);
        for &d in &backward {
            if let Some(j) = dims.offset_index(x, y, z, d) {
                if bits[j] {
                    forest.union(i as u32, j as u32);
                }
            }
        }
    }

    // A component's root is its smallest index, so roots are met in ascending order.
    let mut labels = vec![0u32; dims.len()];
    let mut next = 0u32;
    for i in 0..dims.len() {
        if !bits[i] {
            continue;
        }
        let root = forest.find(i as u32) as usize;
        if root == i {
            next += 1;
            labels[i] = next;
        } else {
            labels[i] = labels[root];
        }
    }
    InstanceLabeling::from_parts_unchecked(dims, labels, next)
}

/// `(instance id, voxel count)` for every instance, ordered by id.
pub fn component_sizes(labels: &InstanceLabeling) -> Vec<(u32, usize)> {
    let mut counts = vec![0usize; labels.n_instances() as usize + 1];
    for &l in labels.as_slice() {
        counts[l as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(id, c)| (id as u32, c))
        .collect()
}

/// Mask of the voxels carrying instance id `id`.
pub fn extract_instance_mask(labels: &InstanceLabeling, id: u32) -> Result<BinaryMask> {
    labels.check_id(id)?;
    BinaryMask::new(
        labels.dims(),
        labels.as_slice().iter().map(|&l| l == id).collect(),
    )
}
