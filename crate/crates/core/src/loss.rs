//! Overlap losses with closed-form gradients and the blob transformation.
//!
//! Every base loss is `1 - coefficient`, so lower is better. A base loss restricted to a
//! domain mask only depends on three sums over that domain (`Σ g·p`, `Σ p`, `Σ g`), and its
//! derivative with respect to a voxel inside the domain takes one of two values depending
//! on whether the voxel is foreground. Both facts are used to evaluate all per-instance
//! terms of the blob loss in a single pass.
//!
//! The blob loss of a binary problem with instances `L_1..L_N` is
//!
//! ```text
//! loss = alpha * base(p, g, whole volume) + beta * (1/N) Σ_n base(p, L_n, Ω_n)
//! Ω_n  = whole volume minus the voxels of every instance other than n
//! ```

use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, DenseVolume, Dims, InstanceLabeling};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLossKind {
    #[serde(alias = "soft_dice")]
    Dice,
    Tversky,
}

/// Smoothed overlap loss. `tversky_alpha` weights false positives and `tversky_beta`
/// false negatives; both are ignored for soft Dice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseLoss {
    pub kind: BaseLossKind,
    #[serde(default = "half")]
    pub tversky_alpha: f64,
    #[serde(default = "half")]
    pub tversky_beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn half() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for BaseLoss {
    fn default() -> Self {
        Self::soft_dice()
    }
}

impl BaseLoss {
    pub fn soft_dice() -> Self {
        Self {
            kind: BaseLossKind::Dice,
            tversky_alpha: 0.5,
            tversky_beta: 0.5,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn tversky(fp_weight: f64, fn_weight: f64) -> Self {
        Self {
            kind: BaseLossKind::Tversky,
            tversky_alpha: fp_weight,
            tversky_beta: fn_weight,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.kind == BaseLossKind::Tversky
            && !(self.tversky_alpha >= 0.0
                && self.tversky_beta >= 0.0
                && self.tversky_alpha.is_finite()
                && self.tversky_beta.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "tversky weights must be finite and non-negative, got ({}, {})",
                self.tversky_alpha, self.tversky_beta
            )));
        }
        Ok(())
    }

    /// Loss value and the two gradient coefficients (foreground voxel, background voxel)
    /// for a domain with the given sums.
    pub fn evaluate(&self, s: &OverlapSums) -> TermValue {
        let eps = self.epsilon;
        let num = 2.0 * s.tp + eps;
        match self.kind {
            BaseLossKind::Dice => {
                let den = s.sum_g + s.sum_p + eps;
                let den2 = den * den;
                TermValue {
                    value: 1.0 - num / den,
                    grad_fg: -(2.0 * den - num) / den2,
                    grad_bg: num / den2,
                }
            }
            BaseLossKind::Tversky => {
                let (a, b) = (self.tversky_alpha, self.tversky_beta);
                let fp = s.sum_p - s.tp;
                let fn_ = s.sum_g - s.tp;
                let den = 2.0 * s.tp + 2.0 * a * fp + 2.0 * b * fn_ + eps;
                let den2 = den * den;
                TermValue {
                    value: 1.0 - num / den,
                    grad_fg: -(2.0 * den - num * (2.0 - 2.0 * b)) / den2,
                    grad_bg: num * (2.0 * a) / den2,
                }
            }
        }
    }
}

/// Sufficient statistics of an overlap loss over one domain.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OverlapSums {
    /// `Σ g·p`
    pub tp: f64,
    /// `Σ p`
    pub sum_p: f64,
    /// `Σ g`
    pub sum_g: f64,
}

/// Value of one loss term plus `∂value/∂p` for in-domain foreground and background voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub grad_fg: f64,
    pub grad_bg: f64,
}

/// Weights of the global and blob parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobLossConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub base: BaseLoss,
    /// Disabling this computes every instance term over the whole volume (ablation).
    #[serde(default = "default_masking")]
    pub masking_enabled: bool,
}

fn default_alpha() -> f64 {
    2.0
}

fn default_beta() -> f64 {
    1.0
}

fn default_masking() -> bool {
    true
}

impl Default for BlobLossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 1.0,
            base: BaseLoss::default(),
            masking_enabled: true,
        }
    }
}

impl BlobLossConfig {
    /// Plain base loss: `alpha = 1, beta = 0`.
    pub fn plain(base: BaseLoss) -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            base,
            masking_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        self.base.validate()
    }
}

/// Loss value and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: DenseVolume,
}

/// Blob loss with its two parts reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobLossResult {
    pub value: f64,
    pub grad: DenseVolume,
    pub global_term: f64,
    pub blob_term: f64,
    pub n_instances: u32,
}

impl From<BlobLossResult> for LossResult {
    fn from(r: BlobLossResult) -> Self {
        LossResult {
            value: r.value,
            grad: r.grad,
        }
    }
}

/// Base loss of `p` against `g` restricted to `domain`. The gradient is zero outside the domain.
pub fn base_loss(
    p: &DenseVolume,
    g: &BinaryMask,
    base: &BaseLoss,
    domain: &BinaryMask,
) -> Result<LossResult> {
    p.dims().ensure_same(&g.dims())?;
    p.dims().ensure_same(&domain.dims())?;
    p.ensure_probabilities()?;
    base.validate()?;

    let (pv, gv, dv) = (p.as_slice(), g.as_slice(), domain.as_slice());
    let mut s = OverlapSums::default();
    for i in 0..pv.len() {
        if dv[i] {
            let gi = if gv[i] { 1.0 } else { 0.0 };
            s.tp += gi * pv[i];
            s.sum_p += pv[i];
            s.sum_g += gi;
        }
    }
    let t = base.evaluate(&s);
    let grad = (0..pv.len())
        .map(|i| match (dv[i], gv[i]) {
            (false, _) => 0.0,
            (true, true) => t.grad_fg,
            (true, false) => t.grad_bg,
        })
        .collect();
    Ok(LossResult {
        value: t.value,
        grad: DenseVolume::new(p.dims(), grad)?,
    })
}

/// Whole-volume base loss; no domain mask needed.
fn global_loss(p: &DenseVolume, g: &BinaryMask, base: &BaseLoss) -> LossResult {
    let (pv, gv) = (p.as_slice(), g.as_slice());
    let mut s = OverlapSums::default();
    for i in 0..pv.len() {
        let gi = if gv[i] { 1.0 } else { 0.0 };
        s.tp += gi * pv[i];
        s.sum_p += pv[i];
        s.sum_g += gi;
    }
    let t = base.evaluate(&s);
    let grad = gv
        .iter()
        .map(|&gi| if gi { t.grad_fg } else { t.grad_bg })
        .collect();
    LossResult {
        value: t.value,
        grad: DenseVolume::new(p.dims(), grad).expect("dims checked by caller"),
    }
}

/// Domain of instance `id`: everything except the voxels of the other instances.
pub fn instance_domain_mask(labels: &InstanceLabeling, id: u32) -> Result<BinaryMask> {
    labels.check_id(id)?;
    BinaryMask::new(
        labels.dims(),
        labels
            .as_slice()
            .iter()
            .map(|&l| l == 0 || l == id)
            .collect(),
    )
}

/// Per-instance sums, accumulated in linear voxel order for each instance's domain.
fn instance_sums(p: &[f64], labels: &[u32], n: usize, masking: bool) -> Vec<OverlapSums> {
    let mut sums = vec![OverlapSums::default(); n];
    for (&pi, &li) in p.iter().zip(labels) {
        if li == 0 {
            for s in sums.iter_mut() {
                s.sum_p += pi;
            }
        } else if masking {
            let s = &mut sums[li as usize - 1];
            s.tp += pi;
            s.sum_p += pi;
            s.sum_g += 1.0;
        } else {
            for (k, s) in sums.iter_mut().enumerate() {
                s.sum_p += pi;
                if k + 1 == li as usize {
                    s.tp += pi;
                    s.sum_g += 1.0;
                }
            }
        }
    }
    sums
}

/// Value and gradient coefficients of every instance term, in ascending instance order.
pub fn instance_terms(
    p: &DenseVolume,
    labels: &InstanceLabeling,
    base: &BaseLoss,
    masking_enabled: bool,
) -> Result<Vec<TermValue>> {
    p.dims().ensure_same(&labels.dims())?;
    p.ensure_probabilities()?;
    base.validate()?;
    Ok(terms_unchecked(p, labels, base, masking_enabled))
}

fn terms_unchecked(
    p: &DenseVolume,
    labels: &InstanceLabeling,
    base: &BaseLoss,
    masking: bool,
) -> Vec<TermValue> {
    instance_sums(
        p.as_slice(),
        labels.as_slice(),
        labels.n_instances() as usize,
        masking,
    )
    .iter()
    .map(|s| base.evaluate(s))
    .collect()
}

/// Every instance term as a full loss result with a materialized gradient.
pub fn instance_losses(
    p: &DenseVolume,
    labels: &InstanceLabeling,
    base: &BaseLoss,
    masking_enabled: bool,
) -> Result<Vec<LossResult>> {
    let terms = instance_terms(p, labels, base, masking_enabled)?;
    let lv = labels.as_slice();
    terms
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let id = k as u32 + 1;
            let grad = lv
                .iter()
                .map(|&l| {
                    if l == id {
                        t.grad_fg
                    } else if l == 0 || !masking_enabled {
                        t.grad_bg
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(LossResult {
                value: t.value,
                grad: DenseVolume::new(p.dims(), grad)?,
            })
        })
        .collect()
}

fn blob_term_unchecked(
    p: &DenseVolume,
    labels: &InstanceLabeling,
    base: &BaseLoss,
    masking: bool,
) -> LossResult {
    let terms = terms_unchecked(p, labels, base, masking);
    let n = terms.len();
    let nf = n as f64;

    let mut value = 0.0;
    let mut bg = 0.0;
    for t in &terms {
        value += t.value;
        bg += t.grad_bg;
    }
    // Gradient of the term sum at a voxel of instance l: only term l sees it when masking,
    // otherwise every term does, l as foreground and the rest as background.
    let per_label: Vec<f64> = if masking {
        terms.iter().map(|t| t.grad_fg / nf).collect()
    } else {
        (0..n)
            .map(|l| {
                let mut acc = 0.0;
                for (k, t) in terms.iter().enumerate() {
                    acc += if k == l { t.grad_fg } else { t.grad_bg };
                }
                acc / nf
            })
            .collect()
    };
    let bg = bg / nf;
    let grad = labels
        .as_slice()
        .iter()
        .map(|&l| if l == 0 { bg } else { per_label[l as usize - 1] })
        .collect();
    LossResult {
        value: value / nf,
        grad: DenseVolume::new(p.dims(), grad).expect("dims checked by caller"),
    }
}

/// Mean of the per-instance base losses, each over its own domain.
///
/// Errors with [`Error::EmptyGroundTruth`] when there are no instances.
pub fn blob_term(
    p: &DenseVolume,
    labels: &InstanceLabeling,
    base: &BaseLoss,
    masking_enabled: bool,
) -> Result<LossResult> {
    p.dims().ensure_same(&labels.dims())?;
    p.ensure_probabilities()?;
    base.validate()?;
    if labels.n_instances() == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    Ok(blob_term_unchecked(p, labels, base, masking_enabled))
}

fn ensure_labels_match(g: &BinaryMask, labels: &InstanceLabeling) -> Result<()> {
    g.dims().ensure_same(&labels.dims())?;
    match g
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .position(|(&gi, &li)| gi != (li != 0))
    {
        Some(index) => Err(Error::LabelsMismatch { index }),
        None => Ok(()),
    }
}

/// `alpha * global + beta * blob`. With no instances the blob part is zero.
pub fn blob_loss(
    p: &DenseVolume,
    g: &BinaryMask,
    labels: &InstanceLabeling,
    cfg: &BlobLossConfig,
) -> Result<BlobLossResult> {
    p.dims().ensure_same(&g.dims())?;
    ensure_labels_match(g, labels)?;
    p.ensure_probabilities()?;
    cfg.validate()?;

    let global = global_loss(p, g, &cfg.base);
    let n_instances = labels.n_instances();
    let blob = if n_instances == 0 {
        LossResult {
            value: 0.0,
            grad: DenseVolume::zeros(p.dims()),
        }
    } else {
        blob_term_unchecked(p, labels, &cfg.base, cfg.masking_enabled)
    };

    let (a, b) = (cfg.alpha, cfg.beta);
    let grad = global
        .grad
        .as_slice()
        .iter()
        .zip(blob.grad.as_slice())
        .map(|(&gg, &bg)| a * gg + b * bg)
        .collect();
    Ok(BlobLossResult {
        value: a * global.value + b * blob.value,
        grad: DenseVolume::new(p.dims(), grad)?,
        global_term: global.value,
        blob_term: blob.value,
        n_instances,
    })
}

/// Foreground classes of a one-hot ground truth, background implicit, with per-class
/// instance labelings.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSegmentation {
    masks: Vec<BinaryMask>,
    labels: Vec<InstanceLabeling>,
}

impl OneHotSegmentation {
    /// Labels each class mask with connected components.
    pub fn new(masks: Vec<BinaryMask>, conn: Connectivity) -> Result<Self> {
        let labels = masks.iter().map(|m| label_components(m, conn)).collect();
        Self::with_labels(masks, labels)
    }

    pub fn with_labels(masks: Vec<BinaryMask>, labels: Vec<InstanceLabeling>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one foreground class is required".into(),
            ));
        }
        if labels.len() != masks.len() {
            return Err(Error::ChannelMismatch {
                expected: masks.len(),
                found: labels.len(),
            });
        }
        let dims = masks[0].dims();
        let mut owner: Vec<Option<usize>> = vec![None; dims.len()];
        for (c, (m, l)) in masks.iter().zip(&labels).enumerate() {
            dims.ensure_same(&m.dims())?;
            ensure_labels_match(m, l)?;
            for i in m.indices() {
                if let Some(first) = owner[i] {
                    return Err(Error::OverlappingChannels {
                        first,
                        second: c,
                        index: i,
                    });
                }
                owner[i] = Some(c);
            }
        }
        Ok(Self { masks, labels })
    }

    /// From a class-index volume where 0 is background and `1..=n_classes` are foreground.
    pub fn from_class_map(
        dims: Dims,
        classes: &[u32],
        n_classes: usize,
        conn: Connectivity,
    ) -> Result<Self> {
        if classes.len() != dims.len() {
            return Err(Error::LengthMismatch {
                expected: dims.len(),
                found: classes.len(),
            });
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize > n_classes) {
            return Err(Error::InvalidConfig(format!(
                "class index {bad} exceeds class count {n_classes}"
            )));
        }
        let masks = (1..=n_classes as u32)
            .map(|c| BinaryMask::new(dims, classes.iter().map(|&v| v == c).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(masks, conn)
    }

    pub fn n_classes(&self) -> usize {
        self.masks.len()
    }

    pub fn dims(&self) -> Dims {
        self.masks[0].dims()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn labels(&self) -> &[InstanceLabeling] {
        &self.labels
    }
}

/// Multi-class blob loss with one gradient volume per foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassLossResult {
    pub value: f64,
    pub grads: Vec<DenseVolume>,
    pub global_term: f64,
    pub blob_term: f64,
}

/// Class-averaged blob loss. Classes without instances are left out of the blob average;
/// the global average always covers all classes.
pub fn multiclass_blob_loss(
    p: &[DenseVolume],
    g: &OneHotSegmentation,
    cfg: &BlobLossConfig,
) -> Result<MultiClassLossResult> {
    if p.len() != g.n_classes() {
        return Err(Error::ChannelMismatch {
            expected: g.n_classes(),
            found: p.len(),
        });
    }
    cfg.validate()?;
    for pc in p {
        pc.dims().ensure_same(&g.dims())?;
        pc.ensure_probabilities()?;
    }

    let classes = g.n_classes() as f64;
    let nonempty = g.labels.iter().filter(|l| l.n_instances() > 0).count() as f64;

    let mut global_value = 0.0;
    let mut blob_value = 0.0;
    let mut grads = Vec::with_capacity(p.len());
    for ((pc, mc), lc) in p.iter().zip(&g.masks).zip(&g.labels) {
        let global = global_loss(pc, mc, &cfg.base);
        global_value += global.value;
        let blob = (lc.n_instances() > 0)
            .then(|| blob_term_unchecked(pc, lc, &cfg.base, cfg.masking_enabled));
        if let Some(b) = &blob {
            blob_value += b.value;
        }
        let grad = match &blob {
            Some(b) => global
                .grad
                .as_slice()
                .iter()
                .zip(b.grad.as_slice())
                .map(|(&gg, &bg)| cfg.alpha * (gg / classes) + cfg.beta * (bg / nonempty))
                .collect(),
            None => global
                .grad
                .as_slice()
                .iter()
                .map(|&gg| cfg.alpha * (gg / classes))
                .collect(),
        };
        grads.push(DenseVolume::new(pc.dims(), grad)?);
    }

    let global_term = global_value / classes;
    let blob_term = if nonempty > 0.0 {
        blob_value / nonempty
    } else {
        0.0
    };
    Ok(MultiClassLossResult {
        value: cfg.alpha * global_term + cfg.beta * blob_term,
        grads,
        global_term,
        blob_term,
    })
}
