//! Synthetic instance-imbalanced volumes and per-blob shape features.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::components::extract_instance_mask;
use crate::error::{Error, Result};
use crate::metrics::surface_voxels;
use crate::volume::{BinaryMask, DenseVolume, Dims, InstanceLabeling};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// A radius, either fixed or drawn uniformly from `[min, max]` per blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Fixed(f64),
    Range([f64; 2]),
}

impl RadiusSpec {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            RadiusSpec::Fixed(r) => (r, r),
            RadiusSpec::Range([a, b]) => (a, b),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.bounds();
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }
}

impl From<f64> for RadiusSpec {
    fn from(r: f64) -> Self {
        RadiusSpec::Fixed(r)
    }
}

/// Parameters of one synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// `[nx, ny, nz]`
    pub dims: [usize; 3],
    pub n_large: usize,
    pub large_radius: RadiusSpec,
    pub n_small: usize,
    pub small_radius: RadiusSpec,
    /// Intensity of small blobs; large blobs are always 1.
    pub small_contrast: f64,
    pub noise_sigma: f64,
    /// Extra clearance, in voxels, between neighbouring blob surfaces.
    pub min_gap: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<Dims> {
        let dims = Dims::new(self.dims[0], self.dims[1], self.dims[2])?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, r) in [("large_radius", self.large_radius), ("small_radius", self.small_radius)] {
            let (lo, hi) = r.bounds();
            // Below radius 1 a sphere can fall between lattice points and render empty.
            if !(lo >= 1.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} must satisfy 1 <= min <= max, got {r:?}"));
            }
        }
        if !(self.small_contrast > 0.0 && self.small_contrast <= 1.0) {
            return bad(format!("small_contrast must be in (0, 1], got {}", self.small_contrast));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return bad(format!("min_gap must be >= 0, got {}", self.min_gap));
        }
        Ok(dims)
    }
}

/// A rasterized sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlacedBlob {
    /// Continuous position in voxel coordinates.
    pub center: [f64; 3],
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub intensity: DenseVolume,
    pub gt: BinaryMask,
    pub blobs: Vec<PlacedBlob>,
}

fn place(
    dims: Dims,
    radius: f64,
    placed: &[PlacedBlob],
    min_gap: f64,
    rng: &mut ChaCha8Rng,
) -> Option<[f64; 3]> {
    let axes = dims.as_array();
    if axes.iter().any(|&n| (n - 1) as f64 <= 2.0 * radius) {
        return None;
    }
    let center: [f64; 3] = std::array::from_fn(|k| rng.random_range(radius..=(axes[k] - 1) as f64 - radius));
    let clear = placed.iter().all(|b| {
        let d2: f64 = (0..3).map(|k| (center[k] - b.center[k]).powi(2)).sum();
        // Voxels of different blobs end up more than 2 apart, beyond any 26-neighbour step.
        let reach = radius + b.radius + 2.0 + min_gap;
        d2 > reach * reach
    });
    clear.then_some(center)
}

/// Places large then small spheres and renders intensity and ground truth.
///
/// Blobs never touch, so the ground truth has exactly `n_large + n_small` components under
/// any connectivity. Intensity is 1 on large blobs, `small_contrast` on small blobs, 0 elsewhere,
/// plus Gaussian noise, clamped to `[0, 1]`.
pub fn generate(spec: &SynthSpec) -> Result<SynthSample> {
    let dims = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut blobs: Vec<PlacedBlob> = Vec::with_capacity(spec.n_large + spec.n_small);

    let plan = std::iter::repeat_n((spec.large_radius, 1.0), spec.n_large)
        .chain(std::iter::repeat_n((spec.small_radius, spec.small_contrast), spec.n_small));
    for (index, (radius_spec, intensity)) in plan.enumerate() {
        let radius = radius_spec.sample(&mut rng);
        let center = (0..MAX_PLACEMENT_ATTEMPTS)
            .find_map(|_| place(dims, radius, &blobs, spec.min_gap, &mut rng))
            .ok_or(Error::UnsatisfiablePlacement {
                blob: index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            })?;
        blobs.push(PlacedBlob {
            center,
            radius,
            intensity,
        });
    }

    let mut values = vec![0.0; dims.len()];
    let mut bits = vec![false; dims.len()];
    for b in &blobs {
        let r2 = b.radius * b.radius;
        let lo: [usize; 3] = std::array::from_fn(|k| (b.center[k] - b.radius).ceil() as usize);
        let hi: [usize; 3] = std::array::from_fn(|k| (b.center[k] + b.radius).floor() as usize);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let d2 = (x as f64 - b.center[0]).powi(2)
                        + (y as f64 - b.center[1]).powi(2)
                        + (z as f64 - b.center[2]).powi(2);
                    if d2 <= r2 {
                        let i = dims.index(x, y, z);
                        values[i] = b.intensity;
                        bits[i] = true;
                    }
                }
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidConfig(format!("noise_sigma: {e}")))?;
        for v in values.iter_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    Ok(SynthSample {
        intensity: DenseVolume::new(dims, values)?,
        gt: BinaryMask::new(dims, bits)?,
        blobs,
    })
}

/// Shape descriptors of one blob; all in `[0, 1]` except `volume` and `raw_sphere_ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeFeatures {
    pub volume: usize,
    pub compactness: f64,
    pub sphereness: f64,
    pub stringness: f64,
    pub skewness: f64,
    /// Largest extent over equal-volume sphere diameter, before inversion (>= 1 for most blobs).
    pub raw_sphere_ratio: f64,
}

/// Compactness, sphereness, stringness and skewness of a nonempty blob.
///
/// * `d_max` is the largest distance between voxel centres, at least 1.
/// * compactness = `V / (π/6 · d_max³)`, clipped to 1.
/// * sphereness = `d_eq / max(d_max, d_eq)` with `d_eq = (6V/π)^(1/3)`; stringness = 1 − sphereness.
/// * skewness = `|g1| / (1 + |g1|)` where `g1` is the moment skewness of voxel coordinates
///   projected on the first principal axis.
pub fn shape_features(blob: &BinaryMask) -> Result<ShapeFeatures> {
    let dims = blob.dims();
    let coords: Vec<[i64; 3]> = blob
        .indices()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            [x as i64, y as i64, z as i64]
        })
        .collect();
    if coords.is_empty() {
        return Err(Error::EmptyBlob);
    }
    let volume = coords.len();
    let v = volume as f64;

    // Extreme points lie on the boundary, so the diameter search only needs surface voxels.
    let boundary: Vec<[i64; 3]> = surface_voxels(blob)
        .indices()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            [x as i64, y as i64, z as i64]
        })
        .collect();
    let mut max_d2 = 0i64;
    for (k, a) in boundary.iter().enumerate() {
        for b in &boundary[k + 1..] {
            let d2 = (a[0] - b[0]).pow(2) + (a[1] - b[1]).pow(2) + (a[2] - b[2]).pow(2);
            max_d2 = max_d2.max(d2);
        }
    }
    let d_max = (max_d2 as f64).sqrt().max(1.0);

    let compactness = (v / (std::f64::consts::PI / 6.0 * d_max.powi(3))).min(1.0);
    let d_eq = (6.0 * v / std::f64::consts::PI).cbrt();
    let sphereness = d_eq / d_max.max(d_eq);
    let stringness = 1.0 - sphereness;
    let skewness = {
        let g1 = principal_axis_skewness(&coords).abs();
        g1 / (1.0 + g1)
    };

    Ok(ShapeFeatures {
        volume,
        compactness,
        sphereness,
        stringness,
        skewness,
        raw_sphere_ratio: d_max / d_eq,
    })
}

/// Moment skewness along the leading eigenvector of the coordinate covariance.
///
/// Raw moments are summed exactly in integers (relative to the bounding-box corner), so the
/// result does not depend on voxel visiting order.
fn principal_axis_skewness(coords: &[[i64; 3]]) -> f64 {
    let mut origin = [i64::MAX; 3];
    for c in coords {
        for k in 0..3 {
            origin[k] = origin[k].min(c[k]);
        }
    }
    let mut s1 = [0i128; 3];
    let mut s2 = [[0i128; 3]; 3];
    let mut s3 = [[[0i128; 3]; 3]; 3];
    for c in coords {
        let q = [
            (c[0] - origin[0]) as i128,
            (c[1] - origin[1]) as i128,
            (c[2] - origin[2]) as i128,
        ];
        for a in 0..3 {
            s1[a] += q[a];
            for b in 0..3 {
                s2[a][b] += q[a] * q[b];
                for d in 0..3 {
                    s3[a][b][d] += q[a] * q[b] * q[d];
                }
            }
        }
    }
    let n = coords.len() as f64;
    let mu: [f64; 3] = std::array::from_fn(|a| s1[a] as f64 / n);
    let e2 = |a: usize, b: usize| s2[a][b] as f64 / n;
    let cov = Matrix3::from_fn(|a, b| e2(a, b) - mu[a] * mu[b]);

    let eig = SymmetricEigen::new(cov);
    let (lead, &var) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("3x3 matrix");
    if var <= 1e-12 {
        return 0.0;
    }
    let u: Vector3<f64> = eig.eigenvectors.column(lead).into();

    // Central third moment tensor contracted with u three times.
    let mut m3 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            for d in 0..3 {
                let central = s3[a][b][d] as f64 / n - mu[a] * e2(b, d) - mu[b] * e2(a, d)
                    - mu[d] * e2(a, b)
                    + 2.0 * mu[a] * mu[b] * mu[d];
                m3 += central * u[a] * u[b] * u[d];
            }
        }
    }
    let g1 = m3 / var.powf(1.5);
    // Symmetric blobs give round-off sized values.
    if g1.abs() < 1e-9 {
        0.0
    } else {
        g1
    }
}

/// Shape features of every instance, ordered by id.
pub fn instance_shape_features(labels: &InstanceLabeling) -> Result<Vec<(u32, ShapeFeatures)>> {
    (1..=labels.n_instances())
        .map(|id| Ok((id, shape_features(&extract_instance_mask(labels, id)?)?)))
        .collect()
}
