//! Labelled corpora and their non-IID allocation to devices.
//!
//! [`generate_corpus`] builds a seeded synthetic stand-in for an image corpus:
//! every label owns a prototype vector in `[0, 1]^d` and its samples are the
//! prototype plus bounded uniform noise, clamped to `[0, 1]`. [`idx`] loads
//! real IDX-format files into the same [`Corpus`] type.

pub mod idx;
mod partition;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Sample;
use crate::rng::{stream_rng, Stream};

pub use partition::{
    is_iid, label_counts, partition_manifest, partition_non_iid, DeviceDataset, PartitionManifest,
    PartitionSpec, Provenance,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus parameters: {0}")]
    InvalidCorpus(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("device {device}: only {eligible} labels can serve as targets, {requested} requested")]
    InsufficientTargetCandidates {
        device: usize,
        eligible: usize,
        requested: usize,
    },
    #[error("idx format: {0}")]
    Idx(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub num_labels: usize,
    pub feature_dim: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples_per_label(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    /// Checks that every label in `[0, L)` is present and features lie in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let counts = self.samples_per_label();
        if let Some(missing) = (0..self.num_labels).find(|l| !counts.contains_key(l)) {
            return Err(DataError::InvalidCorpus(format!(
                "label {missing} has no samples"
            )));
        }
        for s in &self.samples {
            if s.label >= self.num_labels {
                return Err(DataError::InvalidCorpus(format!(
                    "label {} out of range",
                    s.label
                )));
            }
            if s.features.len() != self.feature_dim {
                return Err(DataError::InvalidCorpus("feature length mismatch".into()));
            }
            if s.features.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(DataError::InvalidCorpus("feature outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub num_labels: usize,
    pub per_label: usize,
    pub feature_dim: usize,
    /// Spread of the label prototypes around 0.5, per feature.
    pub separation: f64,
    /// Half-width of the uniform per-feature noise.
    pub noise: f64,
    /// Fraction of each label held out as the IID test split.
    pub test_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_labels: 10,
            per_label: 600,
            feature_dim: 64,
            separation: 0.3,
            noise: 0.5,
            test_fraction: 0.1,
        }
    }
}

impl CorpusSpec {
    pub fn new(num_labels: usize, per_label: usize, feature_dim: usize) -> Self {
        Self {
            num_labels,
            per_label,
            feature_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 {
            return Err(DataError::InvalidCorpus("need at least 2 labels".into()));
        }
        if self.per_label < 1 {
            return Err(DataError::InvalidCorpus(
                "need at least 1 sample per label".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(DataError::InvalidCorpus(
                "feature_dim must be at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.separation) || !(0.0..=1.0).contains(&self.noise) {
            return Err(DataError::InvalidCorpus(
                "separation and noise must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(DataError::InvalidCorpus(
                "test_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Samples are emitted label-major: all of label 0, then label 1, and so on.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Corpus, 0);
    let d = spec.feature_dim;
    let prototypes: Vec<Vec<f64>> = (0..spec.num_labels)
        .map(|_| {
            (0..d)
                .map(|_| 0.5 + spec.separation * rng.random_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(spec.num_labels * spec.per_label);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_label {
            let features = proto
                .iter()
                .map(|&p| {
                    let jitter = if spec.noise > 0.0 {
                        rng.random_range(-spec.noise..=spec.noise)
                    } else {
                        0.0
                    };
                    (p + jitter).clamp(0.0, 1.0)
                })
                .collect();
            samples.push(Sample::new(features, label));
        }
    }
    Ok(Corpus {
        samples,
        num_labels: spec.num_labels,
        feature_dim: d,
    })
}

/// Stratified split: `round(fraction * n_l)` samples of every label go to the
/// test side, chosen uniformly. Both sides keep corpus order.
pub fn split_train_test(corpus: &Corpus, fraction: f64, seed: u64) -> (Corpus, Corpus) {
    let mut rng = stream_rng(seed, Stream::TestSplit, 0);
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut is_test = vec![false; corpus.len()];
    for idx in by_label.values_mut() {
        let take = (fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(take) {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in corpus.samples.iter().zip(is_test) {
        if t {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    let wrap = |samples| Corpus {
        samples,
        num_labels: corpus.num_labels,
        feature_dim: corpus.feature_dim,
    };
    (wrap(train), wrap(test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_counts_by_construction() {
        let c = generate_corpus(&CorpusSpec::new(10, 200, 64), 1).unwrap();
        assert_eq!(c.len(), 2000);
        assert!(c.samples_per_label().values().all(|&n| n == 200));
        c.validate().unwrap();
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = CorpusSpec::new(4, 20, 8);
        assert_eq!(
            generate_corpus(&spec, 9).unwrap(),
            generate_corpus(&spec, 9).unwrap()
        );
        assert_ne!(
            generate_corpus(&spec, 9).unwrap(),
            generate_corpus(&spec, 10).unwrap()
        );
    }

    #[test]
    fn smallest_corpus() {
        let c = generate_corpus(&CorpusSpec::new(2, 1, 2), 7).unwrap();
        assert_eq!(c.len(), 2);
        assert_ne!(c.samples[0].label, c.samples[1].label);
    }

    #[test]
    fn corpus_rejects_degenerate_shapes() {
        assert!(generate_corpus(&CorpusSpec::new(1, 5, 4), 0).is_err());
        assert!(generate_corpus(&CorpusSpec::new(3, 0, 4), 0).is_err());
        assert!(generate_corpus(&CorpusSpec::new(3, 5, 1), 0).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let c = generate_corpus(&CorpusSpec::new(5, 40, 4), 3).unwrap();
        let (train, test) = split_train_test(&c, 0.1, 3);
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 180);
        assert!(test.samples_per_label().values().all(|&n| n == 4));
    }
}
