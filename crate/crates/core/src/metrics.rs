//! Volumetric overlap, surface Dice, and instance detection metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, DenseVolume, InstanceLabeling};

/// Ratio with the empty convention: `0/0` is 1 when both sets are empty.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        if num == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumetricMetrics {
    pub dsc: f64,
    pub sensitivity: f64,
    pub precision: f64,
}

/// Dice, sensitivity and precision of `pred` against `gt`.
///
/// An empty denominator yields 1 when both masks are empty and 0 otherwise.
pub fn volumetric_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<VolumetricMetrics> {
    pred.dims().ensure_same(&gt.dims())?;
    let (mut both, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        both += (p && g) as usize;
        np += p as usize;
        ng += g as usize;
    }
    let empty = np == 0 && ng == 0;
    let frac = |num: usize, den: usize| {
        if den == 0 {
            if empty {
                1.0
            } else {
                0.0
            }
        } else {
            num as f64 / den as f64
        }
    };
    Ok(VolumetricMetrics {
        dsc: frac(2 * both, np + ng),
        sensitivity: frac(both, ng),
        precision: frac(both, np),
    })
}

/// Foreground voxels with at least one face neighbour that is background or outside.
pub fn surface_voxels(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let offsets = Connectivity::Face6.offsets();
    let bits = mask.as_slice();
    BinaryMask::from_fn(dims, |x, y, z| {
        bits[dims.index(x, y, z)]
            && offsets.iter().any(|&d| match dims.offset_index(x, y, z, d) {
                Some(j) => !bits[j],
                None => true,
            })
    })
}

/// Counts the set voxels of `from` that lie within Euclidean distance `tol` of a set voxel
/// of `to`.
fn count_within(from: &BinaryMask, to: &BinaryMask, tol: f64) -> usize {
    let dims = from.dims();
    let reach = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut ball = Vec::new();
    for dz in -reach..=reach {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy + dz * dz) as f64) <= tol2 {
                    ball.push([dx, dy, dz]);
                }
            }
        }
    }
    ball.sort_by_key(|d| d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    let target = to.as_slice();
    from.indices()
        .filter(|&i| {
            let (x, y, z) = dims.coords(i);
            ball.iter()
                .any(|&d| dims.offset_index(x, y, z, d).is_some_and(|j| target[j]))
        })
        .count()
}

/// Surface Dice at tolerance `tol` voxels. Both surfaces empty gives 1.
pub fn surface_dice(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<f64> {
    pred.dims().ensure_same(&gt.dims())?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "surface tolerance must be finite and non-negative, got {tol}"
        )));
    }
    let sp = surface_voxels(pred);
    let sg = surface_voxels(gt);
    let total = sp.count() + sg.count();
    if total == 0 {
        return Ok(1.0);
    }
    let close = count_within(&sp, &sg, tol) + count_within(&sg, &sp, tol);
    Ok(close as f64 / total as f64)
}

/// One-to-one pairing of predicted and ground-truth instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchingResult {
    /// `(pred id, gt id, overlap voxels)` in acceptance order.
    pub pairs: Vec<(u32, u32, usize)>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
}

/// Overlap counts of every `(pred, gt)` pair sharing at least one voxel.
fn overlaps(
    pred: &InstanceLabeling,
    gt: &InstanceLabeling,
) -> Result<BTreeMap<(u32, u32), usize>> {
    pred.dims().ensure_same(&gt.dims())?;
    let mut map = BTreeMap::new();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if p != 0 && g != 0 {
            *map.entry((p, g)).or_insert(0) += 1;
        }
    }
    Ok(map)
}

/// Greedy one-to-one matching with the default one-voxel overlap criterion.
pub fn match_instances(pred: &InstanceLabeling, gt: &InstanceLabeling) -> Result<MatchingResult> {
    match_instances_with(pred, gt, 1)
}

/// Greedy one-to-one matching: candidate pairs overlapping by at least `min_overlap`
/// voxels are taken by descending overlap, ties broken by `(gt id, pred id)` ascending.
pub fn match_instances_with(
    pred: &InstanceLabeling,
    gt: &InstanceLabeling,
    min_overlap: usize,
) -> Result<MatchingResult> {
    let min_overlap = min_overlap.max(1);
    let mut candidates: Vec<(u32, u32, usize)> = overlaps(pred, gt)?
        .into_iter()
        .filter(|&(_, c)| c >= min_overlap)
        .map(|((p, g), c)| (p, g, c))
        .collect();
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));

    let mut pred_used = vec![false; pred.n_instances() as usize + 1];
    let mut gt_used = vec![false; gt.n_instances() as usize + 1];
    let mut pairs = Vec::new();
    for (p, g, c) in candidates {
        if !pred_used[p as usize] && !gt_used[g as usize] {
            pred_used[p as usize] = true;
            gt_used[g as usize] = true;
            pairs.push((p, g, c));
        }
    }
    let unused = |used: &[bool]| {
        (1..used.len() as u32)
            .filter(|&i| !used[i as usize])
            .collect::<Vec<_>>()
    };
    Ok(MatchingResult {
        unmatched_pred: unused(&pred_used),
        unmatched_gt: unused(&gt_used),
        pairs,
    })
}

/// How detected instances are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// One-to-one greedy pairing; tp is the pair count.
    #[default]
    Greedy,
    /// Every instance hit by any instance of the other side counts as detected; one
    /// prediction may detect several ground-truth instances. tp counts detected gt
    /// instances and F1 is the harmonic mean of instance sensitivity and precision.
    Overlap,
}

impl FromStr for MatchingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(MatchingMode::Greedy),
            "overlap" => Ok(MatchingMode::Overlap),
            other => Err(Error::InvalidConfig(format!(
                "matching must be greedy or overlap, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for MatchingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchingMode::Greedy => "greedy",
            MatchingMode::Overlap => "overlap",
        })
    }
}

/// Instance-level detection counts and rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub f1: f64,
    pub instance_sensitivity: f64,
    pub instance_precision: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn detection_metrics(
    pred: &InstanceLabeling,
    gt: &InstanceLabeling,
    mode: MatchingMode,
    min_overlap: usize,
) -> Result<DetectionMetrics> {
    let n_pred = pred.n_instances() as usize;
    let n_gt = gt.n_instances() as usize;
    match mode {
        MatchingMode::Greedy => {
            let m = match_instances_with(pred, gt, min_overlap)?;
            let (tp, fp, fn_) = (m.pairs.len(), m.unmatched_pred.len(), m.unmatched_gt.len());
            Ok(DetectionMetrics {
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                instance_sensitivity: empty_rate(tp, n_gt, n_pred),
                instance_precision: empty_rate(tp, n_pred, n_gt),
                tp,
                fp,
                fn_,
            })
        }
        MatchingMode::Overlap => {
            let min_overlap = min_overlap.max(1);
            let mut pred_hit = vec![false; n_pred + 1];
            let mut gt_hit = vec![false; n_gt + 1];
            for ((p, g), c) in overlaps(pred, gt)? {
                if c >= min_overlap {
                    pred_hit[p as usize] = true;
                    gt_hit[g as usize] = true;
                }
            }
            let hit_pred = pred_hit.iter().filter(|&&h| h).count();
            let hit_gt = gt_hit.iter().filter(|&&h| h).count();
            let is = empty_rate(hit_gt, n_gt, n_pred);
            let ip = empty_rate(hit_pred, n_pred, n_gt);
            let f1 = if n_gt == 0 && n_pred == 0 {
                1.0
            } else if is + ip > 0.0 {
                2.0 * is * ip / (is + ip)
            } else {
                0.0
            };
            Ok(DetectionMetrics {
                f1,
                instance_sensitivity: is,
                instance_precision: ip,
                tp: hit_gt,
                fp: n_pred - hit_pred,
                fn_: n_gt - hit_gt,
            })
        }
    }
}

/// `hits / total`, or 1 when both sides are empty and 0 when only this side is.
fn empty_rate(hits: usize, total: usize, other_total: usize) -> f64 {
    if total == 0 {
        if other_total == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        hits as f64 / total as f64
    }
}

/// Evaluation settings for [`full_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_min_overlap")]
    pub min_overlap: usize,
    #[serde(default)]
    pub matching: MatchingMode,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_tolerance() -> f64 {
    1.0
}

fn default_min_overlap() -> usize {
    1
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            connectivity: Connectivity::Vertex26,
            tolerance: 1.0,
            min_overlap: 1,
            matching: MatchingMode::Greedy,
        }
    }
}

/// All seven metrics for one prediction / ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub surface_dsc: f64,
    pub f1: f64,
    pub instance_sensitivity: f64,
    pub instance_precision: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    /// Field-wise mean of the rates with summed counts. `None` for an empty slice.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            dsc: avg(|r| r.dsc),
            sensitivity: avg(|r| r.sensitivity),
            precision: avg(|r| r.precision),
            surface_dsc: avg(|r| r.surface_dsc),
            f1: avg(|r| r.f1),
            instance_sensitivity: avg(|r| r.instance_sensitivity),
            instance_precision: avg(|r| r.instance_precision),
            tp: reports.iter().map(|r| r.tp).sum(),
            fp: reports.iter().map(|r| r.fp).sum(),
            fn_: reports.iter().map(|r| r.fn_).sum(),
        })
    }

    /// Metric names and values in table order.
    pub fn named_rates(&self) -> [(&'static str, f64); 7] {
        [
            ("dsc", self.dsc),
            ("sensitivity", self.sensitivity),
            ("precision", self.precision),
            ("surface_dsc", self.surface_dsc),
            ("f1", self.f1),
            ("instance_sensitivity", self.instance_sensitivity),
            ("instance_precision", self.instance_precision),
        ]
    }
}

/// Metrics of binary masks that are already thresholded.
pub fn mask_report(pred: &BinaryMask, gt: &BinaryMask, opts: &EvalOptions) -> Result<MetricsReport> {
    let vol = volumetric_metrics(pred, gt)?;
    let surface_dsc = surface_dice(pred, gt, opts.tolerance)?;
    let pl = label_components(pred, opts.connectivity);
    let gl = label_components(gt, opts.connectivity);
    let det = detection_metrics(&pl, &gl, opts.matching, opts.min_overlap)?;
    Ok(MetricsReport {
        dsc: vol.dsc,
        sensitivity: vol.sensitivity,
        precision: vol.precision,
        surface_dsc,
        f1: det.f1,
        instance_sensitivity: det.instance_sensitivity,
        instance_precision: det.instance_precision,
        tp: det.tp,
        fp: det.fp,
        fn_: det.fn_,
    })
}

/// Thresholds `pred_prob` (inclusive), labels both masks and computes every metric.
pub fn full_report(
    pred_prob: &DenseVolume,
    gt: &BinaryMask,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    pred_prob.dims().ensure_same(&gt.dims())?;
    pred_prob.ensure_probabilities()?;
    mask_report(&pred_prob.threshold(opts.threshold), gt, opts)
}
