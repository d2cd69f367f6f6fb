//! Pieces shared by the FD and FL round loops.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use crate::nn::{self, Activation, ModelWeights, NnError};
use crate::rng::{stream_rng, Stream};

/// Architecture of the per-device classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn dims(&self, input_dim: usize, num_labels: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(num_labels);
        dims
    }

    pub fn init(
        &self,
        input_dim: usize,
        num_labels: usize,
        seed: u64,
        stream: Stream,
        index: u64,
    ) -> Result<ModelWeights, NnError> {
        ModelWeights::xavier(
            &self.dims(input_dim, num_labels),
            self.activation,
            &mut stream_rng(seed, stream, index),
        )
    }
}

/// Indices of one batch: `min(batch_size, len)` distinct positions, uniformly.
pub fn draw_batch<R: Rng + ?Sized>(rng: &mut R, len: usize, batch_size: usize) -> Vec<usize> {
    index::sample(rng, len, batch_size.min(len)).into_vec()
}

pub fn worker_pool(workers: usize) -> ThreadPool {
    ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool construction")
}

/// One line of the training log: state of one device after one global round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub device_id: usize,
    pub test_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_reported: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulative_logit_scalars: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulative_parameters: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<RoundRecord>,
}

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rounds(&self) -> usize {
        self.records.iter().map(|r| r.round).max().unwrap_or(0)
    }

    /// Per-device accuracy in the last logged round, ordered by device id.
    pub fn final_accuracies(&self) -> Vec<f64> {
        let last = self.rounds();
        let mut finals: Vec<&RoundRecord> = self
            .records
            .iter()
            .filter(|r| r.round == last && last > 0)
            .collect();
        finals.sort_by_key(|r| r.device_id);
        finals.into_iter().map(|r| r.test_accuracy).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A finished run: its log and each device's final model.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrainingLog,
    pub final_models: Vec<ModelWeights>,
}

pub(crate) fn evaluate_all(
    pool: &ThreadPool,
    models: &[&ModelWeights],
    test: &[nn::Sample],
) -> Result<Vec<f64>, NnError> {
    use rayon::prelude::*;
    pool.install(|| models.par_iter().map(|w| nn::accuracy(w, test)).collect())
}
