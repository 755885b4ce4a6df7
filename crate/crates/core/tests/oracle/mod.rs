//! Brute-force reference implementations and random case generators.
#![allow(dead_code)]

use std::collections::VecDeque;

use blobloss::{
    base_loss, instance_domain_mask, BaseLoss, BinaryMask, DenseVolume, Dims, InstanceLabeling,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Dims {
    Dims::new(
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    )
    .unwrap()
}

/// Probabilities drawn uniformly from `[lo, hi]`.
pub fn random_probs(rng: &mut ChaCha8Rng, dims: Dims, lo: f64, hi: f64) -> DenseVolume {
    DenseVolume::new(dims, (0..dims.len()).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: Dims, density: f64) -> BinaryMask {
    BinaryMask::new(dims, (0..dims.len()).map(|_| rng.random_bool(density)).collect()).unwrap()
}

/// Random instance ids, not necessarily connected, with `1..=max_n` instances present.
pub fn random_labels(rng: &mut ChaCha8Rng, dims: Dims, max_n: u32, density: f64) -> InstanceLabeling {
    let n = rng.random_range(1..=max_n);
    let mut raw: Vec<u32> = (0..dims.len())
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(1..=n)
            } else {
                0
            }
        })
        .collect();
    // Guarantee every id owns at least one voxel when the volume allows it.
    let mut slots: Vec<usize> = (0..dims.len()).collect();
    for id in 1..=n.min(dims.len() as u32) {
        let k = rng.random_range(0..slots.len());
        raw[slots.swap_remove(k)] = id;
    }
    InstanceLabeling::normalized(dims, &raw).unwrap()
}

/// Neighbour offsets by L1 norm: 1 for 6-, 2 for 18-, 3 for 26-connectivity.
fn neighbourhood(k: u8) -> Vec<[i64; 3]> {
    let max_l1 = match k {
        6 => 1,
        18 => 2,
        26 => 3,
        _ => panic!("bad connectivity {k}"),
    };
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let l1 = dx.abs() + dy.abs() + dz.abs();
                if l1 > 0 && l1 <= max_l1 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Flood fill seeded from each unvisited foreground voxel in raster order.
pub fn bfs_components(mask: &BinaryMask, k: u8) -> Vec<u32> {
    let d = mask.dims();
    let (nx, ny, nz) = (d.nx() as i64, d.ny() as i64, d.nz() as i64);
    let bits = mask.as_slice();
    let offsets = neighbourhood(k);
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..bits.len() {
        if !bits[seed] || labels[seed] != 0 {
            continue;
        }
        next += 1;
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let x = i as i64 % nx;
            let y = (i as i64 / nx) % ny;
            let z = i as i64 / (nx * ny);
            for o in &offsets {
                let (a, b, c) = (x + o[0], y + o[1], z + o[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                let j = (a + nx * (b + ny * c)) as usize;
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    labels
}

pub fn instance_mask(labels: &InstanceLabeling, id: u32) -> BinaryMask {
    BinaryMask::new(labels.dims(), labels.as_slice().iter().map(|&l| l == id).collect()).unwrap()
}

/// Mean over instances of the base loss on a materialized domain.
pub fn brute_blob_term(p: &DenseVolume, labels: &InstanceLabeling, base: &BaseLoss, masking: bool) -> f64 {
    let n = labels.n_instances();
    let full = BinaryMask::full(labels.dims());
    let mut total = 0.0;
    for id in 1..=n {
        let domain = if masking {
            instance_domain_mask(labels, id).unwrap()
        } else {
            full.clone()
        };
        total += base_loss(p, &instance_mask(labels, id), base, &domain).unwrap().value;
    }
    total / n as f64
}

/// Soft Dice coefficient written out directly.
pub fn dice_coefficient(p: &DenseVolume, g: &BinaryMask, domain: &BinaryMask, eps: f64) -> f64 {
    let (mut tp, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for i in 0..p.as_slice().len() {
        if domain.as_slice()[i] {
            let gi = if g.as_slice()[i] { 1.0 } else { 0.0 };
            tp += gi * p.as_slice()[i];
            sp += p.as_slice()[i];
            sg += gi;
        }
    }
    (2.0 * tp + eps) / (sg + sp + eps)
}

/// Five-point central differences of `f` at every voxel of `p`.
pub fn finite_difference(p: &DenseVolume, h: f64, mut f: impl FnMut(&DenseVolume) -> f64) -> Vec<f64> {
    (0..p.as_slice().len())
        .map(|i| {
            let x = p.as_slice()[i];
            let mut at = |k: f64| f(&p.with_value(i, x + k * h));
            (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Voxels within Euclidean distance `r` of `center`.
pub fn ball(dims: Dims, center: [f64; 3], r: f64) -> BinaryMask {
    BinaryMask::from_fn(dims, |x, y, z| {
        let dx = x as f64 - center[0];
        let dy = y as f64 - center[1];
        let dz = z as f64 - center[2];
        dx * dx + dy * dy + dz * dz <= r * r
    })
}

/// Swaps axes of a mask: output axis `k` is input axis `perm[k]`.
pub fn permute_axes(mask: &BinaryMask, perm: [usize; 3]) -> BinaryMask {
    let src = mask.dims().as_array();
    let dst = Dims::new(src[perm[0]], src[perm[1]], src[perm[2]]).unwrap();
    BinaryMask::from_fn(dst, |x, y, z| {
        let out = [x, y, z];
        let mut c = [0; 3];
        for k in 0..3 {
            c[perm[k]] = out[k];
        }
        mask.get(c[0], c[1], c[2])
    })
}

/// Axis-aligned box `[lo, hi)` in a mask.
pub fn paint_box(mask: &mut [bool], dims: Dims, lo: [usize; 3], hi: [usize; 3]) {
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                mask[dims.index(x, y, z)] = true;
            }
        }
    }
}

/// Six 2×2×2 ground-truth cubes along x and a prediction that detects five of them with
/// four blobs (one bridges the first two cubes), misses the last and adds two blobs in
/// empty space.
pub fn detection_scene() -> (BinaryMask, BinaryMask) {
    let dims = Dims::new(40, 10, 6).unwrap();
    let mut gt = vec![false; dims.len()];
    let mut pred = vec![false; dims.len()];
    for k in 0..6 {
        let x = 2 + 6 * k;
        paint_box(&mut gt, dims, [x, 2, 2], [x + 2, 4, 4]);
    }
    paint_box(&mut pred, dims, [2, 2, 2], [10, 4, 4]);
    for k in 2..5 {
        let x = 2 + 6 * k;
        paint_box(&mut pred, dims, [x, 2, 2], [x + 2, 4, 3]);
    }
    paint_box(&mut pred, dims, [5, 7, 2], [7, 9, 4]);
    paint_box(&mut pred, dims, [25, 7, 2], [27, 9, 4]);
    (
        BinaryMask::new(dims, pred).unwrap(),
        BinaryMask::new(dims, gt).unwrap(),
    )
}
