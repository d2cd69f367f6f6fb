use std::collections::BTreeSet;

use rand::seq::{index, IndexedRandom};
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, Result};
use crate::nn::Sample;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSpec {
    pub num_devices: usize,
    pub per_device_draw: usize,
    pub num_target_labels: usize,
    pub target_keep_count: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            num_devices: 4,
            per_device_draw: 2000,
            num_target_labels: 3,
            target_keep_count: 5,
            seed: 0,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.num_devices == 0 {
            return Err(DataError::InvalidPartition(
                "num_devices must be positive".into(),
            ));
        }
        if self.per_device_draw == 0 || self.per_device_draw > corpus.len() {
            return Err(DataError::InvalidPartition(format!(
                "per_device_draw {} must lie in 1..={}",
                self.per_device_draw,
                corpus.len()
            )));
        }
        if self.num_target_labels >= corpus.num_labels {
            return Err(DataError::InvalidPartition(format!(
                "num_target_labels {} must be below the label count {}",
                self.num_target_labels, corpus.num_labels
            )));
        }
        if self.target_keep_count == 0 {
            return Err(DataError::InvalidPartition(
                "target_keep_count must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Where a device sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Index into the corpus the device drew from.
    Corpus(usize),
    /// Produced by a downloaded generator.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceDataset {
    pub device_id: usize,
    pub num_labels: usize,
    pub samples: Vec<Sample>,
    /// Parallel to `samples`.
    pub provenance: Vec<Provenance>,
    pub target_labels: BTreeSet<usize>,
}

impl DeviceDataset {
    pub fn new(device_id: usize, num_labels: usize, samples: Vec<Sample>) -> Self {
        let provenance = (0..samples.len()).map(Provenance::Corpus).collect();
        Self {
            device_id,
            num_labels,
            samples,
            provenance,
            target_labels: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        label_counts(&self.samples, self.num_labels)
    }

    pub fn synthetic_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| matches!(p, Provenance::Synthetic))
            .count()
    }
}

pub fn label_counts(samples: &[Sample], num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for s in samples {
        counts[s.label] += 1;
    }
    counts
}

/// Allocates a non-IID dataset to every device.
///
/// Each device independently draws `per_device_draw` corpus samples uniformly
/// without replacement (devices may share samples), picks
/// `num_target_labels` labels uniformly and downsamples each of them to
/// exactly `target_keep_count` samples.
pub fn partition_non_iid(corpus: &Corpus, spec: &PartitionSpec) -> Result<Vec<DeviceDataset>> {
    spec.validate(corpus)?;
    (0..spec.num_devices)
        .map(|device| partition_device(corpus, spec, device))
        .collect()
}

fn partition_device(corpus: &Corpus, spec: &PartitionSpec, device: usize) -> Result<DeviceDataset> {
    let l = corpus.num_labels;
    let mut rng = stream_rng(spec.seed, Stream::Partition, device as u64);

    let mut drawn = index::sample(&mut rng, corpus.len(), spec.per_device_draw).into_vec();
    drawn.sort_unstable();

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); l];
    for &i in &drawn {
        by_label[corpus.samples[i].label].push(i);
    }

    let all: Vec<usize> = (0..l).collect();
    let eligible = |lbl: &usize| by_label[*lbl].len() >= spec.target_keep_count;
    let mut targets: Vec<usize> = all
        .choose_multiple(&mut rng, spec.num_target_labels)
        .copied()
        .collect();
    if !targets.iter().all(eligible) {
        let candidates: Vec<usize> = all.iter().copied().filter(eligible).collect();
        if candidates.len() < spec.num_target_labels {
            return Err(DataError::InsufficientTargetCandidates {
                device,
                eligible: candidates.len(),
                requested: spec.num_target_labels,
            });
        }
        log::warn!(
            "device {device}: drawn set too thin for targets {targets:?}, re-drawing among {candidates:?}"
        );
        targets = candidates
            .choose_multiple(&mut rng, spec.num_target_labels)
            .copied()
            .collect();
    }
    targets.sort_unstable();

    let mut keep = vec![true; corpus.len()];
    for &t in &targets {
        let pool = &by_label[t];
        let mut kept = vec![false; pool.len()];
        for k in index::sample(&mut rng, pool.len(), spec.target_keep_count) {
            kept[k] = true;
        }
        for (&i, k) in pool.iter().zip(kept) {
            keep[i] = k;
        }
    }

    let indices: Vec<usize> = drawn.into_iter().filter(|&i| keep[i]).collect();
    Ok(DeviceDataset {
        device_id: device,
        num_labels: l,
        samples: indices.iter().map(|&i| corpus.samples[i].clone()).collect(),
        provenance: indices.into_iter().map(Provenance::Corpus).collect(),
        target_labels: targets.into_iter().collect(),
    })
}

/// True iff `max count <= (1 + tolerance) * min count` over all labels.
pub fn is_iid(ds: &DeviceDataset, tolerance: f64) -> bool {
    let counts = ds.label_counts();
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    max as f64 <= (1.0 + tolerance) * min as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceManifest {
    pub device_id: usize,
    pub size: usize,
    pub label_counts: Vec<usize>,
    pub target_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub seed: u64,
    pub num_labels: usize,
    pub per_device_draw: usize,
    pub num_target_labels: usize,
    pub target_keep_count: usize,
    /// Devices draw independently, so their samples may overlap.
    pub draws_disjoint: bool,
    pub devices: Vec<DeviceManifest>,
}

pub fn partition_manifest(spec: &PartitionSpec, devices: &[DeviceDataset]) -> PartitionManifest {
    PartitionManifest {
        seed: spec.seed,
        num_labels: devices.first().map_or(0, |d| d.num_labels),
        per_device_draw: spec.per_device_draw,
        num_target_labels: spec.num_target_labels,
        target_keep_count: spec.target_keep_count,
        draws_disjoint: false,
        devices: devices
            .iter()
            .map(|d| DeviceManifest {
                device_id: d.device_id,
                size: d.len(),
                label_counts: d.label_counts(),
                target_labels: d.target_labels.iter().copied().collect(),
            })
            .collect(),
    }
}
