//! Federated averaging baseline.
//!
//! Every round the server broadcasts the global model, each device runs the
//! same local schedule as FD with the distillation term switched off, and the
//! server replaces the global model with the unweighted element-wise mean.
//!
//! Communication is charged at a declared parameter count rather than the
//! size of the small model actually trained, so reported costs describe the
//! network the experiment stands in for.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DeviceDataset;
use crate::fd::{FdError, Result, RunInputs};
use crate::metrics::LedgerBook;
use crate::nn::{self, ModelWeights, NnError};
use crate::rng::{derive_seed, Stream};
use crate::sim::{draw_batch, evaluate_all, worker_pool, RoundRecord, RunOutcome, TrainingLog};

/// Parameter count of the reference CNN, charged per direction per round.
pub const DEFAULT_DECLARED_PARAMS: u64 = 1_199_648;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub local_steps: usize,
    pub global_rounds: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub seed: u64,
    pub declared_params: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            local_steps: 250,
            global_rounds: 16,
            batch_size: 64,
            eta: 0.05,
            seed: 0,
            declared_params: DEFAULT_DECLARED_PARAMS,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(FdError::Config("batch_size must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FdError::Config(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// `local_steps` batches of per-sample plain cross-entropy SGD.
pub fn fl_local_phase<R: Rng + ?Sized>(
    w: &ModelWeights,
    ds: &DeviceDataset,
    cfg: &FlConfig,
    rng: &mut R,
) -> Result<ModelWeights> {
    let mut w = w.clone();
    if cfg.local_steps > 0 && ds.is_empty() {
        return Err(FdError::Protocol(format!(
            "device {} has no samples",
            ds.device_id
        )));
    }
    for step in 0..cfg.local_steps {
        for i in draw_batch(rng, ds.len(), cfg.batch_size) {
            let grad = nn::fd_loss_gradient(&w, &ds.samples[i], None, 0.0)?;
            let diverged = FdError::Divergence {
                device: ds.device_id,
                step,
            };
            match nn::sgd_step_in_place(&mut w, &grad, cfg.eta) {
                Err(NnError::NonFiniteGradient) => return Err(diverged),
                other => other?,
            }
            if !w.is_finite() {
                return Err(diverged);
            }
        }
    }
    Ok(w)
}

/// Unweighted element-wise mean, summed in list order.
pub fn fl_average(models: &[ModelWeights]) -> Result<ModelWeights> {
    let first = models
        .first()
        .ok_or_else(|| FdError::Protocol("nothing to average".into()))?;
    let mut sum = first.clone();
    for m in &models[1..] {
        sum.add_scaled(m, 1.0).map_err(|_| {
            FdError::Protocol(format!(
                "model dims {:?} differ from {:?}",
                m.dims(),
                first.dims()
            ))
        })?;
    }
    let n = models.len() as f64;
    for v in sum.params_mut() {
        *v /= n;
    }
    Ok(sum)
}

/// Full FL run. Each device is charged `2 * declared_params` per round.
pub fn run_fl(
    inputs: &RunInputs<'_>,
    cfg: &FlConfig,
    ledgers: &mut LedgerBook,
) -> Result<RunOutcome> {
    let mut log = TrainingLog::default();
    let final_models = run_fl_logged(inputs, cfg, ledgers, &mut log)?;
    Ok(RunOutcome { log, final_models })
}

/// [`run_fl`] writing into `log` as it goes, so completed rounds survive a failure.
pub fn run_fl_logged(
    inputs: &RunInputs<'_>,
    cfg: &FlConfig,
    ledgers: &mut LedgerBook,
    log: &mut TrainingLog,
) -> Result<Vec<ModelWeights>> {
    cfg.validate()?;
    let m = inputs.datasets.len();
    if m < 2 {
        return Err(FdError::Protocol(format!(
            "FL needs at least 2 devices, got {m}"
        )));
    }
    if ledgers.len() != m {
        return Err(FdError::Protocol(
            "ledger book size differs from device count".into(),
        ));
    }
    let input_dim = inputs.datasets[0]
        .samples
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| FdError::Protocol("device 0 has no samples".into()))?;
    let num_labels = inputs.datasets[0].num_labels;
    let mut global = inputs
        .model
        .init(input_dim, num_labels, cfg.seed, Stream::GlobalInit, 0)?;
    log::debug!(
        "FL: training {} parameters, charging {} per transfer",
        global.param_count(),
        cfg.declared_params
    );
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::DeviceTraining, i as u64)))
        .collect();
    let pool = worker_pool(inputs.workers);

    for round in 1..=cfg.global_rounds {
        let locals: Vec<ModelWeights> = pool.install(|| {
            rngs.par_iter_mut()
                .zip(inputs.datasets)
                .map(|(rng, ds)| fl_local_phase(&global, ds, cfg, rng))
                .collect::<Result<_>>()
        })?;
        global = fl_average(&locals)?;
        let acc = evaluate_all(&pool, &[&global], inputs.test)?[0];
        for i in 0..m {
            let ledger = ledgers.device_mut(i);
            ledger.charge_fl_round(1, cfg.declared_params);
            log.records.push(RoundRecord {
                round,
                device_id: i,
                test_accuracy: acc,
                labels_reported: None,
                cumulative_logit_scalars: None,
                cumulative_parameters: Some(ledger.model_parameters),
            });
        }
    }

    Ok(vec![global; m])
}
