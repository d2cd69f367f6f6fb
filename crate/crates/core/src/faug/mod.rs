//! Federated augmentation.
//!
//! Devices find the labels they are short of, upload a handful of seed
//! samples for them (optionally mixed with samples of other labels to hide
//! which ones they need), the server inflates the seeds and fits a
//! label-conditioned generator, and every device downloads it to top its
//! short labels up until its dataset is balanced.

pub mod gan;
pub mod gaussian;
pub mod wire;

use std::collections::BTreeSet;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{label_counts, Corpus, DeviceDataset, Provenance};
use crate::metrics::{DeviceLabels, LabelInventory, MetricsError};
use crate::nn::{Activation, ModelWeights, NnError, Sample, WeightSnapshot};
use crate::rng::{stream_rng, Stream};

pub use gan::{ConditionalGan, GanConfig};
pub use gaussian::GaussianModel;
pub use wire::{decode_upload, encode_upload};

/// Generator size charged to each device, whatever the real network holds.
pub const DEFAULT_GENERATOR_PARAMS: u64 = 1_493_520;

#[derive(Debug, Error)]
pub enum FaugError {
    #[error("invalid faug setting: {0}")]
    InvalidConfig(String),
    #[error("label {label} is a target but the device holds none of it")]
    EmptyTarget { label: usize },
    #[error("label {0} is not generable by the downloaded generator")]
    NotGenerable(usize),
    #[error("label {label} has {count} training samples; at least 2 are needed")]
    TooFewSamples { label: usize, count: usize },
    #[error("generator training set is empty")]
    EmptyTraining,
    #[error("malformed seed upload: {0}")]
    Wire(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = FaugError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    ConditionalGan,
    #[default]
    OracleGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaugConfig {
    pub threshold_ratio: f64,
    pub redundant_count: usize,
    pub seeds_per_label: usize,
    pub oversample_factor: usize,
    pub jitter: f64,
    pub backend: BackendKind,
    pub tolerance: f64,
    pub gan: GanConfig,
}

impl Default for FaugConfig {
    fn default() -> Self {
        Self {
            threshold_ratio: 0.5,
            redundant_count: 0,
            seeds_per_label: 5,
            oversample_factor: 20,
            jitter: 0.05,
            backend: BackendKind::OracleGaussian,
            tolerance: 0.05,
            gan: GanConfig::default(),
        }
    }
}

impl FaugConfig {
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let bad = |m: String| Err(FaugError::InvalidConfig(m));
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio < 1.0) {
            return bad(format!(
                "threshold_ratio {} outside (0, 1)",
                self.threshold_ratio
            ));
        }
        if self.redundant_count >= num_labels {
            return bad(format!(
                "redundant_count {} leaves no room for targets among {num_labels} labels",
                self.redundant_count
            ));
        }
        if self.seeds_per_label == 0 || self.oversample_factor == 0 {
            return bad("seeds_per_label and oversample_factor must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 1]", self.jitter));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad(format!(
                "tolerance {} must be finite and nonnegative",
                self.tolerance
            ));
        }
        self.gan.validate().map_err(FaugError::InvalidConfig)
    }
}

/// Labels whose count is below `threshold_ratio` times the median label count.
pub fn detect_target_labels(ds: &DeviceDataset, threshold_ratio: f64) -> BTreeSet<usize> {
    let counts = ds.label_counts();
    if counts.is_empty() {
        return BTreeSet::new();
    }
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let threshold = threshold_ratio * median;
    (0..counts.len())
        .filter(|&l| (counts[l] as f64) < threshold)
        .collect()
}

/// Smallest per-label count that satisfies the balance bound given the current maximum.
fn required_min(max: usize, tolerance: f64) -> usize {
    let mut m = (max as f64 / (1.0 + tolerance)).ceil() as usize;
    while m > 0 && (max as f64) <= (1.0 + tolerance) * (m - 1) as f64 {
        m -= 1;
    }
    while (max as f64) > (1.0 + tolerance) * m as f64 {
        m += 1;
    }
    m
}

/// Labels that need synthetic samples before `is_iid(ds, tolerance)` can hold.
pub fn deficient_labels(ds: &DeviceDataset, tolerance: f64) -> BTreeSet<usize> {
    let counts = ds.label_counts();
    let need = required_min(counts.iter().copied().max().unwrap_or(0), tolerance);
    (0..counts.len()).filter(|&l| counts[l] < need).collect()
}

/// What reaches the server: an id and bare samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedUpload {
    pub device_id: usize,
    pub samples: Vec<Sample>,
}

/// A device's upload plus the label designations it keeps to itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedBundle {
    pub upload: SeedUpload,
    pub targets: BTreeSet<usize>,
    pub redundant: BTreeSet<usize>,
}

impl SeedBundle {
    pub fn labels(&self) -> DeviceLabels {
        DeviceLabels {
            targets: self.targets.clone(),
            redundant: self.redundant.clone(),
        }
    }
}

fn seeds_of<R: Rng + ?Sized>(
    ds: &DeviceDataset,
    label: usize,
    k: usize,
    rng: &mut R,
) -> Vec<Sample> {
    let pool: Vec<&Sample> = ds.samples.iter().filter(|s| s.label == label).collect();
    let mut picked = index::sample(rng, pool.len(), k.min(pool.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i].clone()).collect()
}

/// Seed samples for every target plus `redundant_count` random non-target labels.
pub fn build_seed_upload<R: Rng + ?Sized>(
    ds: &DeviceDataset,
    targets: &BTreeSet<usize>,
    redundant_count: usize,
    seeds_per_label: usize,
    rng: &mut R,
) -> Result<SeedBundle> {
    build_seed_upload_with(
        ds,
        targets,
        &BTreeSet::new(),
        redundant_count,
        seeds_per_label,
        rng,
    )
}

/// Like [`build_seed_upload`], but `required` non-target labels are always
/// among the redundant ones; random picks fill up to `redundant_count`.
pub fn build_seed_upload_with<R: Rng + ?Sized>(
    ds: &DeviceDataset,
    targets: &BTreeSet<usize>,
    required: &BTreeSet<usize>,
    redundant_count: usize,
    seeds_per_label: usize,
    rng: &mut R,
) -> Result<SeedBundle> {
    let l = ds.num_labels;
    if targets.iter().any(|&t| t >= l) || required.iter().any(|&t| t >= l) {
        return Err(FaugError::InvalidConfig("label out of range".into()));
    }
    if redundant_count + targets.len() > l {
        return Err(FaugError::InvalidConfig(format!(
            "{redundant_count} redundant labels requested but only {} non-target labels exist",
            l - targets.len()
        )));
    }
    let counts = ds.label_counts();
    if let Some(&label) = targets.iter().find(|&&t| counts[t] == 0) {
        return Err(FaugError::EmptyTarget { label });
    }
    let mut redundant: BTreeSet<usize> = required.difference(targets).copied().collect();
    if redundant.len() < redundant_count {
        let candidates: Vec<usize> = (0..l)
            .filter(|x| !targets.contains(x) && !redundant.contains(x) && counts[*x] > 0)
            .collect();
        let want = redundant_count - redundant.len();
        if candidates.len() < want {
            return Err(FaugError::InvalidConfig(format!(
                "device {} holds only {} candidate redundant labels, {want} needed",
                ds.device_id,
                candidates.len()
            )));
        }
        redundant.extend(candidates.choose_multiple(rng, want).copied());
    }

    let mut samples = Vec::new();
    for &t in targets.iter().chain(&redundant) {
        samples.extend(seeds_of(ds, t, seeds_per_label, rng));
    }
    Ok(SeedBundle {
        upload: SeedUpload {
            device_id: ds.device_id,
            samples,
        },
        targets: targets.clone(),
        redundant,
    })
}

/// Replicates each uploaded sample `factor` times with uniform jitter of
/// amplitude `jitter`, clamped to `[0, 1]`.
pub fn server_oversample<R: Rng + ?Sized>(
    uploads: &[SeedUpload],
    factor: usize,
    jitter: f64,
    num_labels: usize,
    rng: &mut R,
) -> Result<Corpus> {
    if factor == 0 {
        return Err(FaugError::InvalidConfig(
            "oversample factor must be at least 1".into(),
        ));
    }
    let feature_dim = uploads
        .iter()
        .flat_map(|u| u.samples.first())
        .map(|s| s.features.len())
        .next()
        .unwrap_or(0);
    let mut samples = Vec::new();
    for s in uploads.iter().flat_map(|u| &u.samples) {
        if s.label >= num_labels || s.features.len() != feature_dim {
            return Err(FaugError::Wire(format!(
                "sample with label {} does not fit the corpus",
                s.label
            )));
        }
        for _ in 0..factor {
            let features = s
                .features
                .iter()
                .map(|&v| {
                    let noise = if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    };
                    (v + noise).clamp(0.0, 1.0)
                })
                .collect();
            samples.push(Sample::new(features, s.label));
        }
    }
    Ok(Corpus {
        samples,
        num_labels,
        feature_dim,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum BackendModel {
    Gaussian(GaussianModel),
    Gan(ConditionalGan),
}

/// The downloaded generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeBackend {
    model: BackendModel,
    generable_labels: BTreeSet<usize>,
    num_labels: usize,
    feature_dim: usize,
    pub declared_param_count: u64,
}

/// Serialized generator: dims header, generable labels, flat parameters.
///
/// For the Gaussian backend `dims` is `[num_labels, feature_dim]` and the
/// parameters are, per generable label in ascending order, the mean vector
/// followed by the variance vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheckpoint {
    pub kind: BackendKind,
    pub num_labels: usize,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    pub generable_labels: Vec<usize>,
    pub declared_param_count: u64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub kind: BackendKind,
    pub gan: GanConfig,
    pub declared_param_count: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::default(),
            gan: GanConfig::default(),
            declared_param_count: DEFAULT_GENERATOR_PARAMS,
        }
    }
}

/// Fits the configured backend to the server's (oversampled) training set.
pub fn train_generator<R: Rng + ?Sized>(
    train: &Corpus,
    cfg: &GeneratorConfig,
    rng: &mut R,
) -> Result<GenerativeBackend> {
    if train.is_empty() {
        return Err(FaugError::EmptyTraining);
    }
    let per_label = train.samples_per_label();
    if let Some((&label, &count)) = per_label.iter().find(|(_, &c)| c < 2) {
        return Err(FaugError::TooFewSamples { label, count });
    }
    let model = match cfg.kind {
        BackendKind::OracleGaussian => BackendModel::Gaussian(GaussianModel::fit(&train.samples)),
        BackendKind::ConditionalGan => BackendModel::Gan(gan::train_gan(
            &train.samples,
            train.feature_dim,
            train.num_labels,
            &cfg.gan,
            rng,
        )?),
    };
    Ok(GenerativeBackend {
        model,
        generable_labels: per_label.keys().copied().collect(),
        num_labels: train.num_labels,
        feature_dim: train.feature_dim,
        declared_param_count: cfg.declared_param_count,
    })
}

impl GenerativeBackend {
    pub fn kind(&self) -> BackendKind {
        match self.model {
            BackendModel::Gaussian(_) => BackendKind::OracleGaussian,
            BackendModel::Gan(_) => BackendKind::ConditionalGan,
        }
    }

    pub fn generable_labels(&self) -> &BTreeSet<usize> {
        &self.generable_labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn gaussian(&self) -> Option<&GaussianModel> {
        match &self.model {
            BackendModel::Gaussian(g) => Some(g),
            BackendModel::Gan(_) => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Result<Vec<f64>> {
        if !self.generable_labels.contains(&label) {
            return Err(FaugError::NotGenerable(label));
        }
        Ok(match &self.model {
            BackendModel::Gaussian(g) => g.sample(label, rng).expect("generable label was fitted"),
            BackendModel::Gan(g) => g.generate(label, rng),
        })
    }

    pub fn checkpoint(&self) -> GeneratorCheckpoint {
        let (dims, activation, params) = match &self.model {
            BackendModel::Gaussian(g) => {
                let mut params = Vec::new();
                for l in &self.generable_labels {
                    params.extend(&g.means[l]);
                    params.extend(&g.variances[l]);
                }
                (vec![self.num_labels, self.feature_dim], None, params)
            }
            BackendModel::Gan(g) => {
                let snap = g.generator.snapshot();
                (snap.dims, Some(snap.activation), snap.params)
            }
        };
        GeneratorCheckpoint {
            kind: self.kind(),
            num_labels: self.num_labels,
            dims,
            activation,
            generable_labels: self.generable_labels.iter().copied().collect(),
            declared_param_count: self.declared_param_count,
            params,
        }
    }

    pub fn from_checkpoint(c: &GeneratorCheckpoint) -> Result<Self> {
        let bad = |m: &str| FaugError::InvalidConfig(format!("checkpoint: {m}"));
        let generable_labels: BTreeSet<usize> = c.generable_labels.iter().copied().collect();
        if generable_labels.iter().any(|&l| l >= c.num_labels) {
            return Err(bad("generable label out of range"));
        }
        let (model, feature_dim) = match c.kind {
            BackendKind::OracleGaussian => {
                let d = *c.dims.get(1).ok_or_else(|| bad("missing feature dim"))?;
                if c.params.len() != 2 * d * generable_labels.len() {
                    return Err(bad("parameter count does not match header"));
                }
                let mut g = GaussianModel {
                    means: Default::default(),
                    variances: Default::default(),
                };
                for (l, chunk) in generable_labels
                    .iter()
                    .zip(c.params.chunks_exact(2 * d.max(1)))
                {
                    g.means.insert(*l, chunk[..d].to_vec());
                    g.variances.insert(*l, chunk[d..].to_vec());
                }
                (BackendModel::Gaussian(g), d)
            }
            BackendKind::ConditionalGan => {
                let w = ModelWeights::from_snapshot(&WeightSnapshot {
                    dims: c.dims.clone(),
                    activation: c.activation.unwrap_or(Activation::LeakyRelu),
                    params: c.params.clone(),
                })?;
                let gan = ConditionalGan::from_generator(w, c.num_labels)?;
                let d = gan.feature_dim();
                (BackendModel::Gan(gan), d)
            }
        };
        Ok(Self {
            model,
            generable_labels,
            num_labels: c.num_labels,
            feature_dim,
            declared_param_count: c.declared_param_count,
        })
    }
}

/// Appends synthetic samples to every short label until the dataset is balanced
/// within `tolerance`. Existing samples are kept untouched and in place.
pub fn augment_to_iid<R: Rng + ?Sized>(
    ds: &DeviceDataset,
    gen: &GenerativeBackend,
    tolerance: f64,
    rng: &mut R,
) -> Result<DeviceDataset> {
    if !(tolerance >= 0.0 && tolerance.is_finite()) {
        return Err(FaugError::InvalidConfig(format!("tolerance {tolerance}")));
    }
    if let Some(&l) = ds
        .target_labels
        .iter()
        .find(|l| !gen.generable_labels.contains(l))
    {
        return Err(FaugError::NotGenerable(l));
    }
    let counts = label_counts(&ds.samples, ds.num_labels);
    let need = required_min(counts.iter().copied().max().unwrap_or(0), tolerance);
    let short: Vec<usize> = (0..ds.num_labels).filter(|&l| counts[l] < need).collect();
    if let Some(&l) = short.iter().find(|l| !gen.generable_labels.contains(l)) {
        return Err(FaugError::NotGenerable(l));
    }
    let mut out = ds.clone();
    for l in short {
        for _ in counts[l]..need {
            out.samples.push(Sample::new(gen.sample(l, rng)?, l));
            out.provenance.push(Provenance::Synthetic);
        }
    }
    Ok(out)
}

/// Everything the FAug stage produces for one experiment.
#[derive(Debug, Clone)]
pub struct FaugOutcome {
    pub datasets: Vec<DeviceDataset>,
    pub inventory: LabelInventory,
    /// Seed samples each device uploaded.
    pub seed_counts: Vec<usize>,
    pub upload_bytes: Vec<usize>,
    pub generator: GenerativeBackend,
}

/// Runs the whole exchange over all devices.
///
/// A non-target label that the device must still top up to meet the balance
/// bound is uploaded as a redundant label so the shared generator covers it.
pub fn federated_augmentation(
    datasets: &[DeviceDataset],
    cfg: &FaugConfig,
    declared_generator_params: u64,
    seed: u64,
) -> Result<FaugOutcome> {
    let num_labels = datasets.first().map_or(0, |d| d.num_labels);
    cfg.validate(num_labels)?;

    let mut bundles = Vec::with_capacity(datasets.len());
    let mut wire_forms = Vec::with_capacity(datasets.len());
    for (i, ds) in datasets.iter().enumerate() {
        let targets = detect_target_labels(ds, cfg.threshold_ratio);
        let required = deficient_labels(ds, cfg.tolerance);
        let mut rng = stream_rng(seed, Stream::SeedUpload, i as u64);
        let bundle = build_seed_upload_with(
            ds,
            &targets,
            &required,
            cfg.redundant_count,
            cfg.seeds_per_label,
            &mut rng,
        )?;
        wire_forms.push(encode_upload(&bundle.upload)?);
        bundles.push(bundle);
    }

    // Server side: only the decoded wire bytes are visible here.
    let uploads = wire_forms
        .iter()
        .map(|b| decode_upload(b))
        .collect::<Result<Vec<_>>>()?;
    let train = server_oversample(
        &uploads,
        cfg.oversample_factor,
        cfg.jitter,
        num_labels,
        &mut stream_rng(seed, Stream::Oversample, 0),
    )?;
    let generator = train_generator(
        &train,
        &GeneratorConfig {
            kind: cfg.backend,
            gan: cfg.gan.clone(),
            declared_param_count: declared_generator_params,
        },
        &mut stream_rng(seed, Stream::Generator, 0),
    )?;

    let augmented = datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            augment_to_iid(
                ds,
                &generator,
                cfg.tolerance,
                &mut stream_rng(seed, Stream::Augment, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let inventory =
        LabelInventory::new(num_labels, bundles.iter().map(SeedBundle::labels).collect())?;
    Ok(FaugOutcome {
        datasets: augmented,
        inventory,
        seed_counts: bundles.iter().map(|b| b.upload.samples.len()).collect(),
        upload_bytes: wire_forms.iter().map(Vec::len).collect(),
        generator,
    })
}
