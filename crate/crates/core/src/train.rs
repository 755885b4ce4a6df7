//! Per-voxel logistic model trained with the blob loss on synthetic volumes.
//!
//! The model sees four box features per voxel and predicts `σ(w·φ + b)`. Gradients are
//! chained by hand: `∂L/∂w = Σ_voxels (∂L/∂p) · p(1 − p) · φ`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::loss::{blob_loss, BlobLossConfig};
use crate::metrics::{full_report, EvalOptions, MetricsReport};
use crate::synth::{generate, SynthSpec};
use crate::volume::{BinaryMask, DenseVolume, Dims, InstanceLabeling};

/// Raw intensity, 3³ mean, 3³ standard deviation, 5³ mean.
pub const FEATURE_COUNT: usize = 4;

/// Per-voxel feature vectors in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dims: Dims,
    data: Vec<[f64; FEATURE_COUNT]>,
}

impl FeatureMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        FEATURE_COUNT
    }

    pub fn as_slice(&self) -> &[[f64; FEATURE_COUNT]] {
        &self.data
    }
}

/// Clamped neighbour indices along one axis for a window of half-width `r`.
fn clamped_axis(n: usize, r: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            (0..=2 * r)
                .map(|k| (i + k).saturating_sub(r).min(n - 1))
                .collect()
        })
        .collect()
}

/// Box features with coordinates clamped at the border.
pub fn featurize(intensity: &DenseVolume) -> FeatureMap {
    let dims = intensity.dims();
    let v = intensity.as_slice();
    let [nx, ny, nz] = dims.as_array();
    let (ax1, ay1, az1) = (clamped_axis(nx, 1), clamped_axis(ny, 1), clamped_axis(nz, 1));
    let (ax2, ay2, az2) = (clamped_axis(nx, 2), clamped_axis(ny, 2), clamped_axis(nz, 2));

    let data = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = dims.coords(i);
            let mut window = [0.0; 27];
            let mut k = 0;
            for &zz in &az1[z] {
                for &yy in &ay1[y] {
                    for &xx in &ax1[x] {
                        window[k] = v[dims.index(xx, yy, zz)];
                        k += 1;
                    }
                }
            }
            let mean3 = window.iter().sum::<f64>() / 27.0;
            let var3 = window.iter().map(|w| (w - mean3).powi(2)).sum::<f64>() / 27.0;

            let mut sum5 = 0.0;
            for &zz in &az2[z] {
                for &yy in &ay2[y] {
                    for &xx in &ax2[x] {
                        sum5 += v[dims.index(xx, yy, zz)];
                    }
                }
            }
            [v[i], mean3, var3.sqrt(), sum5 / 125.0]
        })
        .collect();
    FeatureMap { dims, data }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Logistic regression over voxel features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl VoxelModel {
    /// All-zero parameters: the model outputs 0.5 everywhere.
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    fn logit(&self, phi: &[f64; FEATURE_COUNT]) -> f64 {
        let mut z = self.bias;
        for (w, f) in self.weights.iter().zip(phi) {
            z += w * f;
        }
        z
    }

    /// `u32 F` then `F` weights and the bias as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * (self.weights.len() + 1));
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for w in self.weights.iter().chain(std::iter::once(&self.bias)) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: 4,
                found: bytes.len(),
            });
        }
        let width = u32::from_le_bytes(bytes[..4].try_into().expect("length checked")) as usize;
        let expected = 4 + 8 * (width + 1);
        if bytes.len() != expected {
            return Err(if bytes.len() < expected {
                Error::Truncated {
                    expected,
                    found: bytes.len(),
                }
            } else {
                Error::TrailingBytes {
                    extra: bytes.len() - expected,
                }
            });
        }
        let mut params: Vec<f64> = bytes[4..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let bias = params.pop().expect("width + 1 values");
        Ok(Self {
            weights: params,
            bias,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Per-voxel probabilities.
pub fn forward(model: &VoxelModel, features: &FeatureMap) -> Result<DenseVolume> {
    if model.width() != features.width() {
        return Err(Error::FeatureWidth {
            expected: model.width(),
            found: features.width(),
        });
    }
    let values = features
        .data
        .iter()
        .map(|phi| sigmoid(model.logit(phi)))
        .collect();
    DenseVolume::new(features.dims, values)
}

/// One training or evaluation volume with everything the loss needs.
#[derive(Debug, Clone)]
pub struct Sample {
    pub intensity: DenseVolume,
    pub gt: BinaryMask,
    pub labels: InstanceLabeling,
    pub features: FeatureMap,
}

impl Sample {
    pub fn new(intensity: DenseVolume, gt: BinaryMask, conn: Connectivity) -> Result<Self> {
        intensity.dims().ensure_same(&gt.dims())?;
        let labels = label_components(&gt, conn);
        let features = featurize(&intensity);
        Ok(Self {
            intensity,
            gt,
            labels,
            features,
        })
    }
}

/// Gradient of the loss with respect to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ParamGrad {
    fn zeros(width: usize) -> Self {
        Self {
            weights: vec![0.0; width],
            bias: 0.0,
        }
    }

    fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        self.bias += other.bias;
    }

    fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

/// Loss of the model on one sample and its parameter gradient.
pub fn loss_and_gradient(
    model: &VoxelModel,
    sample: &Sample,
    cfg: &BlobLossConfig,
) -> Result<(f64, ParamGrad)> {
    let p = forward(model, &sample.features)?;
    let loss = blob_loss(&p, &sample.gt, &sample.labels, cfg)?;
    let mut grad = ParamGrad::zeros(model.width());
    for ((phi, &pi), &gi) in sample
        .features
        .data
        .iter()
        .zip(p.as_slice())
        .zip(loss.grad.as_slice())
    {
        let delta = gi * pi * (1.0 - pi);
        for (gw, f) in grad.weights.iter_mut().zip(phi) {
            *gw += delta * f;
        }
        grad.bias += delta;
    }
    Ok((loss.value, grad))
}

/// One plain gradient-descent step on a single sample. Returns the updated model and the
/// loss before the update.
pub fn train_step(
    model: &VoxelModel,
    sample: &Sample,
    cfg: &BlobLossConfig,
    lr: f64,
) -> Result<(VoxelModel, f64)> {
    let (value, grad) = loss_and_gradient(model, sample, cfg)?;
    if !grad.is_finite() || !value.is_finite() {
        return Err(Error::NonFiniteGradient {
            epoch: 0,
            detail: format!("loss {value}, gradient {grad:?}"),
        });
    }
    let mut next = model.clone();
    for (w, g) in next.weights.iter_mut().zip(&grad.weights) {
        *w -= lr * g;
    }
    next.bias -= lr * grad.bias;
    Ok((next, value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    #[default]
    Last,
    BestValidationLoss,
}

/// Parameter update rule. Neither variant uses momentum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// `θ ← θ − lr·g`
    Gd,
    /// `θ ← θ − lr·g / (sqrt(v̂) + 1e-8)` with `v` a bias-corrected running mean of `g²`
    /// (decay 0.999).
    #[default]
    Rmsprop,
}

const RMS_DECAY: f64 = 0.999;
const RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub loss: BlobLossConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoint: CheckpointPolicy,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Optimize in z-scored feature coordinates (statistics from the training split).
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation: MetricsReport,
}

pub type TrainHistory = Vec<EpochRecord>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub model: VoxelModel,
    pub history: TrainHistory,
    pub test_report: MetricsReport,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
}

/// Affine map between raw and z-scored feature coordinates.
#[derive(Debug, Clone, PartialEq)]
struct FeatureScaler {
    mean: [f64; FEATURE_COUNT],
    std: [f64; FEATURE_COUNT],
}

impl FeatureScaler {
    fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_COUNT],
            std: [1.0; FEATURE_COUNT],
        }
    }

    fn fit(samples: &[Sample]) -> Self {
        let mut n = 0.0;
        let mut sum = [0.0; FEATURE_COUNT];
        let mut sum2 = [0.0; FEATURE_COUNT];
        for s in samples {
            for phi in &s.features.data {
                n += 1.0;
                for k in 0..FEATURE_COUNT {
                    sum[k] += phi[k];
                    sum2[k] += phi[k] * phi[k];
                }
            }
        }
        let mean: [f64; FEATURE_COUNT] = std::array::from_fn(|k| sum[k] / n);
        let std = std::array::from_fn(|k| {
            let var = sum2[k] / n - mean[k] * mean[k];
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        });
        Self { mean, std }
    }

    /// Raw-space model equivalent to scaled-space parameters.
    fn to_raw(&self, scaled: &VoxelModel) -> VoxelModel {
        let weights: Vec<f64> = scaled
            .weights
            .iter()
            .zip(&self.std)
            .map(|(w, s)| w / s)
            .collect();
        let mut bias = scaled.bias;
        for (w, m) in weights.iter().zip(&self.mean) {
            bias -= w * m;
        }
        VoxelModel { weights, bias }
    }

    /// Scaled-space gradient from a raw-space gradient.
    fn grad_to_scaled(&self, raw: &ParamGrad) -> ParamGrad {
        ParamGrad {
            weights: (0..FEATURE_COUNT)
                .map(|k| (raw.weights[k] - self.mean[k] * raw.bias) * self.std[k])
                .collect(),
            bias: raw.bias,
        }
    }
}

enum OptimizerState {
    Gd,
    Rmsprop { second: Vec<f64>, step: i32 },
}

impl OptimizerState {
    fn new(kind: Optimizer, n_params: usize) -> Self {
        match kind {
            Optimizer::Gd => OptimizerState::Gd,
            Optimizer::Rmsprop => OptimizerState::Rmsprop {
                second: vec![0.0; n_params],
                step: 0,
            },
        }
    }

    fn apply(&mut self, model: &mut VoxelModel, grad: &ParamGrad, lr: f64) {
        let params = model.weights.iter_mut().chain(std::iter::once(&mut model.bias));
        let grads = grad.weights.iter().chain(std::iter::once(&grad.bias));
        match self {
            OptimizerState::Gd => {
                for (p, g) in params.zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerState::Rmsprop { second, step } => {
                *step += 1;
                let correction = 1.0 - RMS_DECAY.powi(*step);
                for ((p, g), v) in params.zip(grads).zip(second.iter_mut()) {
                    *v = RMS_DECAY * *v + (1.0 - RMS_DECAY) * g * g;
                    let v_hat = *v / correction;
                    *p -= lr * g / (v_hat.sqrt() + RMS_EPS);
                }
            }
        }
    }
}

/// Mean loss and summed parameter gradient over `samples`, reduced in sample order.
fn batch_gradient(
    model: &VoxelModel,
    samples: &[Sample],
    cfg: &BlobLossConfig,
) -> Result<(f64, ParamGrad)> {
    let parts = samples
        .par_iter()
        .map(|s| loss_and_gradient(model, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut grad = ParamGrad::zeros(model.width());
    for (l, g) in &parts {
        loss += l;
        grad.add_assign(g);
    }
    Ok((loss / samples.len() as f64, grad))
}

fn mean_loss(model: &VoxelModel, samples: &[Sample], cfg: &BlobLossConfig) -> Result<f64> {
    let values = samples
        .par_iter()
        .map(|s| {
            let p = forward(model, &s.features)?;
            Ok(blob_loss(&p, &s.gt, &s.labels, cfg)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean metrics of the model over `samples`.
pub fn evaluate(model: &VoxelModel, samples: &[Sample], eval: &EvalOptions) -> Result<MetricsReport> {
    let reports = samples
        .par_iter()
        .map(|s| full_report(&forward(model, &s.features)?, &s.gt, eval))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports).ok_or_else(|| Error::InvalidConfig("no samples to evaluate".into()))
}

/// Full-batch training followed by test evaluation of the selected checkpoint.
pub fn run_experiment(
    train: &[Sample],
    validation: &[Sample],
    test: &[Sample],
    cfg: &TrainConfig,
    eval: &EvalOptions,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    for (name, split) in [("train", train), ("validation", validation), ("test", test)] {
        if split.is_empty() {
            return Err(Error::InvalidConfig(format!("{name} split is empty")));
        }
    }
    let scaler = if cfg.standardize {
        FeatureScaler::fit(train)
    } else {
        FeatureScaler::identity()
    };

    let mut scaled = VoxelModel::zeros(FEATURE_COUNT);
    let mut optimizer = OptimizerState::new(cfg.optimizer, FEATURE_COUNT + 1);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, VoxelModel)> = None;

    for epoch in 0..cfg.epochs {
        let raw = scaler.to_raw(&scaled);
        let (train_loss, raw_grad) = batch_gradient(&raw, train, &cfg.loss)?;
        if !raw_grad.is_finite() || !train_loss.is_finite() {
            return Err(Error::NonFiniteGradient {
                epoch,
                detail: format!("train loss {train_loss}, gradient {raw_grad:?}"),
            });
        }
        optimizer.apply(&mut scaled, &scaler.grad_to_scaled(&raw_grad), cfg.learning_rate);

        let raw = scaler.to_raw(&scaled);
        let validation_loss = mean_loss(&raw, validation, &cfg.loss)?;
        let validation_report = evaluate(&raw, validation, eval)?;
        if best.as_ref().is_none_or(|(b, _, _)| validation_loss < *b) {
            best = Some((validation_loss, epoch, raw.clone()));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
            validation: validation_report,
        });
    }

    let (model, selected_epoch) = match cfg.checkpoint {
        CheckpointPolicy::Last => (scaler.to_raw(&scaled), cfg.epochs - 1),
        CheckpointPolicy::BestValidationLoss => {
            let (_, epoch, model) = best.expect("at least one epoch");
            (model, epoch)
        }
    };
    let test_report = evaluate(&model, test, eval)?;
    Ok(ExperimentOutcome {
        model,
        history,
        test_report,
        selected_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Validation = 1,
    Test = 2,
}

/// splitmix64 finalizer over the combined inputs.
pub fn derive_seed(spec_seed: u64, experiment_seed: u64, split: Split, index: usize) -> u64 {
    let mut z = spec_seed
        ^ experiment_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (split as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (index as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates one split. Each sample's seed mixes its spec seed with the experiment seed,
/// the split and its position.
pub fn build_split(
    specs: &[SynthSpec],
    split: Split,
    experiment_seed: u64,
    conn: Connectivity,
) -> Result<Vec<Sample>> {
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let spec = SynthSpec {
                seed: derive_seed(spec.seed, experiment_seed, split, i),
                ..spec.clone()
            };
            let out = generate(&spec)?;
            Sample::new(out.intensity, out.gt, conn)
        })
        .collect()
}
