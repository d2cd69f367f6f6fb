//! Federated distillation.
//!
//! Each round has two phases. In the local phase every device runs SGD on
//! cross-entropy plus a `gamma`-weighted distillation term whose teacher is the
//! global-average logit vector for the sample's label, and accumulates its
//! post-update outputs per label. The per-label means are uploaded. In the
//! ensembling phase the server hands every device, for every label, the mean
//! of the *other* devices' uploads.
//!
//! Before the first exchange no teacher exists and the distillation term is
//! skipped. Labels a device never saw during a round are left out of its
//! upload; the server averages over whoever did report.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DeviceDataset;
use crate::metrics::LedgerBook;
use crate::nn::{self, LogitVector, ModelWeights, NnError, Sample};
use crate::rng::{derive_seed, Stream};
use crate::sim::{
    draw_batch, evaluate_all, worker_pool, ModelSpec, RoundRecord, RunOutcome, TrainingLog,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdError {
    #[error("device {device} diverged at local step {step}")]
    Divergence { device: usize, step: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = FdError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub local_steps: usize,
    pub global_rounds: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            local_steps: 250,
            global_rounds: 16,
            batch_size: 64,
            gamma: 1.0,
            eta: 0.05,
            seed: 0,
        }
    }
}

impl FdConfig {
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
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(FdError::Config(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub device_id: usize,
    pub weights: ModelWeights,
    /// Running sum of post-update outputs, per ground-truth label.
    pub logit_acc: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    /// Teacher per label, from the last ensembling phase.
    pub global_avgs: Vec<Option<LogitVector>>,
    rng: ChaCha8Rng,
}

impl DeviceState {
    /// `stream_seed` keys the device's private batch-sampling stream.
    pub fn new(device_id: usize, weights: ModelWeights, stream_seed: u64) -> Self {
        let l = weights.output_dim();
        Self {
            device_id,
            weights,
            logit_acc: vec![vec![0.0; l]; l],
            counts: vec![0; l],
            global_avgs: vec![None; l],
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.counts.len()
    }

    fn reset_accumulators(&mut self) {
        for acc in &mut self.logit_acc {
            acc.iter_mut().for_each(|v| *v = 0.0);
        }
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub device_id: usize,
    pub round: usize,
    /// Local-average logit vector per label; `None` where the label was not seen.
    pub per_label: Vec<Option<LogitVector>>,
}

impl LocalReport {
    pub fn labels_reported(&self) -> usize {
        self.per_label.iter().filter(|v| v.is_some()).count()
    }
}

/// Teachers for one device, indexed by label.
pub type Teachers = Vec<Option<LogitVector>>;

/// One SGD update on the combined loss, then accumulation of the
/// post-update output for the sample's label.
fn train_on_sample(
    state: &mut DeviceState,
    b: &Sample,
    gamma: f64,
    eta: f64,
    step: usize,
) -> Result<()> {
    let diverged = FdError::Divergence {
        device: state.device_id,
        step,
    };
    let teacher = state.global_avgs[b.label].as_ref();
    let grad = nn::fd_loss_gradient(&state.weights, b, teacher, gamma)?;
    match nn::sgd_step_in_place(&mut state.weights, &grad, eta) {
        Err(NnError::NonFiniteGradient) => return Err(diverged),
        other => other?,
    }
    if !state.weights.is_finite() {
        return Err(diverged);
    }
    let out = nn::forward(&state.weights, &b.features)?;
    for (acc, v) in state.logit_acc[b.label].iter_mut().zip(out.as_slice()) {
        *acc += v;
    }
    state.counts[b.label] += 1;
    Ok(())
}

/// Runs `local_steps` batches of per-sample updates and returns the per-label
/// averages of the outputs recorded this round.
pub fn local_training_phase(
    state: &mut DeviceState,
    ds: &DeviceDataset,
    cfg: &FdConfig,
    round: usize,
) -> Result<LocalReport> {
    if ds.num_labels != state.num_labels() {
        return Err(FdError::Protocol(format!(
            "device {}: dataset has {} labels, model outputs {}",
            state.device_id,
            ds.num_labels,
            state.num_labels()
        )));
    }
    if ds.is_empty() && cfg.local_steps > 0 {
        return Err(FdError::Protocol(format!(
            "device {} has no samples",
            state.device_id
        )));
    }
    state.reset_accumulators();
    for step in 0..cfg.local_steps {
        let batch = draw_batch(&mut state.rng, ds.len(), cfg.batch_size);
        for i in batch {
            train_on_sample(state, &ds.samples[i], cfg.gamma, cfg.eta, step)?;
        }
    }
    let per_label = state
        .logit_acc
        .iter()
        .zip(&state.counts)
        .map(|(acc, &n)| {
            (n > 0)
                .then(|| LogitVector::new(acc.iter().map(|v| v / n as f64).collect()))
                .transpose()
        })
        .collect::<Result<_, NnError>>()?;
    Ok(LocalReport {
        device_id: state.device_id,
        round,
        per_label,
    })
}

/// Leave-one-out averaging on the server.
///
/// For device `i` and label `l` the teacher is the mean of `l`'s reports from
/// every other device, summed in device-id order. It is `None` when no other
/// device reported `l`.
pub fn global_ensembling_phase(reports: &[LocalReport]) -> Result<BTreeMap<usize, Teachers>> {
    if reports.len() < 2 {
        return Err(FdError::Protocol(format!(
            "ensembling needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let mut sorted: Vec<&LocalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.device_id);
    if sorted.windows(2).any(|w| w[0].device_id == w[1].device_id) {
        return Err(FdError::Protocol("duplicate device id in reports".into()));
    }
    let num_labels = sorted[0].per_label.len();
    if sorted.iter().any(|r| r.per_label.len() != num_labels) {
        return Err(FdError::Protocol(
            "reports disagree on the label count".into(),
        ));
    }

    let mut out = BTreeMap::new();
    for me in &sorted {
        let teachers = (0..num_labels)
            .map(|label| {
                let mut sum: Option<Vec<f64>> = None;
                let mut n = 0usize;
                for other in sorted.iter().filter(|r| r.device_id != me.device_id) {
                    if let Some(v) = &other.per_label[label] {
                        let s = sum.get_or_insert_with(|| vec![0.0; v.len()]);
                        for (a, x) in s.iter_mut().zip(v.as_slice()) {
                            *a += x;
                        }
                        n += 1;
                    }
                }
                sum.map(|s| LogitVector::new(s.into_iter().map(|v| v / n as f64).collect()))
                    .transpose()
            })
            .collect::<Result<Teachers, NnError>>()?;
        out.insert(me.device_id, teachers);
    }
    Ok(out)
}

/// Context shared by every device in a run.
pub struct RunInputs<'a> {
    pub datasets: &'a [DeviceDataset],
    pub model: &'a ModelSpec,
    pub test: &'a [Sample],
    pub workers: usize,
}

fn init_states(inputs: &RunInputs<'_>, seed: u64) -> Result<Vec<DeviceState>> {
    let first = inputs
        .datasets
        .first()
        .ok_or_else(|| FdError::Protocol("no devices".into()))?;
    let input_dim = first
        .samples
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| FdError::Protocol("device 0 has no samples".into()))?;
    inputs
        .datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            let w =
                inputs
                    .model
                    .init(input_dim, ds.num_labels, seed, Stream::DeviceInit, i as u64)?;
            Ok(DeviceState::new(
                i,
                w,
                derive_seed(seed, Stream::DeviceTraining, i as u64),
            ))
        })
        .collect()
}

/// Full FD run: `global_rounds` rounds of local training and ensembling.
///
/// Every device's ledger is charged its own uploads and downloads, so
/// `ledgers.device(i)` is the per-device view and `ledgers.aggregate()` the
/// system total.
pub fn run_fd(
    inputs: &RunInputs<'_>,
    cfg: &FdConfig,
    ledgers: &mut LedgerBook,
) -> Result<RunOutcome> {
    let mut log = TrainingLog::default();
    let final_models = run_fd_logged(inputs, cfg, ledgers, &mut log)?;
    Ok(RunOutcome { log, final_models })
}

/// [`run_fd`] writing into `log` as it goes, so completed rounds survive a failure.
pub fn run_fd_logged(
    inputs: &RunInputs<'_>,
    cfg: &FdConfig,
    ledgers: &mut LedgerBook,
    log: &mut TrainingLog,
) -> Result<Vec<ModelWeights>> {
    cfg.validate()?;
    let m = inputs.datasets.len();
    if m < 2 {
        return Err(FdError::Protocol(format!(
            "FD needs at least 2 devices, got {m}"
        )));
    }
    if ledgers.len() != m {
        return Err(FdError::Protocol(
            "ledger book size differs from device count".into(),
        ));
    }
    let pool = worker_pool(inputs.workers);
    let mut states = init_states(inputs, cfg.seed)?;

    for round in 1..=cfg.global_rounds {
        let reports: Vec<LocalReport> = pool.install(|| {
            states
                .par_iter_mut()
                .zip(inputs.datasets)
                .map(|(s, ds)| local_training_phase(s, ds, cfg, round))
                .collect::<Result<_>>()
        })?;
        let mut teachers = global_ensembling_phase(&reports)?;
        let models: Vec<&ModelWeights> = states.iter().map(|s| &s.weights).collect();
        let accuracies = evaluate_all(&pool, &models, inputs.test)?;

        for ((state, report), acc) in states.iter_mut().zip(&reports).zip(accuracies) {
            let id = state.device_id;
            let delivered = teachers.remove(&id).expect("one teacher set per report");
            let down = delivered.iter().filter(|t| t.is_some()).count();
            let ledger = ledgers.device_mut(id);
            ledger.charge_fd_round(
                1,
                report.labels_reported() as u64,
                down as u64,
                state.num_labels() as u64,
            );
            state.global_avgs = delivered;
            log.records.push(RoundRecord {
                round,
                device_id: id,
                test_accuracy: acc,
                labels_reported: Some(report.labels_reported()),
                cumulative_logit_scalars: Some(ledger.logit_scalars),
                cumulative_parameters: None,
            });
        }
    }

    Ok(states.into_iter().map(|s| s.weights).collect())
}

/// Devices train alone on their own data with the exact schedule and RNG
/// streams of [`run_fd`], but nothing is exchanged.
pub fn run_standalone(inputs: &RunInputs<'_>, cfg: &FdConfig) -> Result<RunOutcome> {
    let mut log = TrainingLog::default();
    let final_models = run_standalone_logged(inputs, cfg, &mut log)?;
    Ok(RunOutcome { log, final_models })
}

pub fn run_standalone_logged(
    inputs: &RunInputs<'_>,
    cfg: &FdConfig,
    log: &mut TrainingLog,
) -> Result<Vec<ModelWeights>> {
    cfg.validate()?;
    let pool = worker_pool(inputs.workers);
    let mut states = init_states(inputs, cfg.seed)?;
    for round in 1..=cfg.global_rounds {
        pool.install(|| {
            states
                .par_iter_mut()
                .zip(inputs.datasets)
                .try_for_each(|(s, ds)| local_training_phase(s, ds, cfg, round).map(|_| ()))
        })?;
        let models: Vec<&ModelWeights> = states.iter().map(|s| &s.weights).collect();
        let accuracies = evaluate_all(&pool, &models, inputs.test)?;
        for (state, acc) in states.iter().zip(accuracies) {
            log.records.push(RoundRecord {
                round,
                device_id: state.device_id,
                test_accuracy: acc,
                labels_reported: None,
                cumulative_logit_scalars: None,
                cumulative_parameters: None,
            });
        }
    }
    Ok(states.into_iter().map(|s| s.weights).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusSpec};
    use crate::nn::Activation;
    use proptest::prelude::*;

    fn lv(v: &[f64]) -> Option<LogitVector> {
        Some(LogitVector::new(v.to_vec()).unwrap())
    }

    fn report(id: usize, per_label: Vec<Option<LogitVector>>) -> LocalReport {
        LocalReport {
            device_id: id,
            round: 1,
            per_label,
        }
    }

    fn close(a: &LogitVector, b: &[f64]) -> bool {
        a.as_slice()
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn two_devices_swap() {
        let out = global_ensembling_phase(&[
            report(0, vec![lv(&[0.2, 0.8])]),
            report(1, vec![lv(&[0.6, 0.4])]),
        ])
        .unwrap();
        assert!(close(out[&0][0].as_ref().unwrap(), &[0.6, 0.4]));
        assert!(close(out[&1][0].as_ref().unwrap(), &[0.2, 0.8]));
    }

    #[test]
    fn three_devices_mean_of_others() {
        let out = global_ensembling_phase(&[
            report(0, vec![lv(&[0.2, 0.8])]),
            report(1, vec![lv(&[0.4, 0.6])]),
            report(2, vec![lv(&[0.6, 0.4])]),
        ])
        .unwrap();
        assert!(close(out[&0][0].as_ref().unwrap(), &[0.5, 0.5]));
    }

    #[test]
    fn label_reported_by_one_device_only() {
        let out = global_ensembling_phase(&[
            report(0, vec![lv(&[0.5, 0.5]), None]),
            report(1, vec![lv(&[0.5, 0.5]), None]),
            report(2, vec![lv(&[0.5, 0.5]), lv(&[0.9, 0.1])]),
        ])
        .unwrap();
        assert!(out[&2][1].is_none());
        for i in 0..2 {
            assert_eq!(out[&i][1].as_ref().unwrap().as_slice(), &[0.9, 0.1]);
        }
    }

    #[test]
    fn ensembling_needs_two_reports() {
        assert!(matches!(
            global_ensembling_phase(&[report(0, vec![None])]),
            Err(FdError::Protocol(_))
        ));
        assert!(matches!(
            global_ensembling_phase(&[report(0, vec![None]), report(0, vec![None])]),
            Err(FdError::Protocol(_))
        ));
    }

    fn tiny_dataset(labels: &[usize]) -> DeviceDataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Sample::new(vec![0.1 * i as f64, 1.0 - 0.1 * l as f64, 0.5], l))
            .collect();
        DeviceDataset::new(0, 4, samples)
    }

    fn fresh_state(seed: u64) -> DeviceState {
        let w = ModelWeights::xavier(
            &[3, 5, 4],
            Activation::Tanh,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap();
        DeviceState::new(0, w, seed)
    }

    #[test]
    fn single_step_single_sample_replays_by_hand() {
        let ds = tiny_dataset(&[2]);
        let cfg = FdConfig {
            local_steps: 1,
            batch_size: 1,
            ..FdConfig::default()
        };
        let mut state = fresh_state(3);
        let w0 = state.weights.clone();
        let rep = local_training_phase(&mut state, &ds, &cfg, 1).unwrap();
        assert_eq!(rep.labels_reported(), 1);

        let grad = nn::fd_loss_gradient(&w0, &ds.samples[0], None, cfg.gamma).unwrap();
        let w1 = nn::sgd_step(&w0, &grad, cfg.eta).unwrap();
        let expected = nn::forward(&w1, &ds.samples[0].features).unwrap();
        assert_eq!(state.weights, w1);
        assert_eq!(rep.per_label[2].as_ref().unwrap(), &expected);
    }

    #[test]
    fn missing_label_not_reported() {
        let ds = tiny_dataset(&[0, 1, 1, 3, 0]);
        let cfg = FdConfig {
            local_steps: 5,
            batch_size: 3,
            ..FdConfig::default()
        };
        let rep = local_training_phase(&mut fresh_state(1), &ds, &cfg, 1).unwrap();
        assert!(rep.per_label[2].is_none());
        assert!(rep.per_label[0].is_some());
    }

    #[test]
    fn accumulators_reset_each_round_and_match_replay() {
        let ds = tiny_dataset(&[0, 1, 2, 3, 1, 2]);
        let cfg = FdConfig {
            local_steps: 3,
            batch_size: 4,
            ..FdConfig::default()
        };
        let mut state = fresh_state(5);
        local_training_phase(&mut state, &ds, &cfg, 1).unwrap();

        // Replay round 2 by hand from a clone, recording every output.
        let mut replay = state.clone();
        let mut recorded: Vec<Vec<Vec<f64>>> = vec![Vec::new(); 4];
        for _ in 0..cfg.local_steps {
            for i in draw_batch(&mut replay.rng, ds.len(), cfg.batch_size) {
                let b = &ds.samples[i];
                let g = nn::fd_loss_gradient(&replay.weights, b, None, cfg.gamma).unwrap();
                nn::sgd_step_in_place(&mut replay.weights, &g, cfg.eta).unwrap();
                recorded[b.label].push(
                    nn::forward(&replay.weights, &b.features)
                        .unwrap()
                        .into_inner(),
                );
            }
        }
        let rep = local_training_phase(&mut state, &ds, &cfg, 2).unwrap();
        for (label, outs) in recorded.iter().enumerate() {
            assert_eq!(state.counts[label], outs.len());
            match &rep.per_label[label] {
                None => assert!(outs.is_empty()),
                Some(avg) => {
                    for k in 0..4 {
                        let mean = outs.iter().map(|o| o[k]).sum::<f64>() / outs.len() as f64;
                        assert!((avg.as_slice()[k] - mean).abs() < 1e-12);
                    }
                    let acc_sum: f64 = state.logit_acc[label].iter().sum();
                    assert!((acc_sum - outs.len() as f64).abs() <= 1e-6 * outs.len() as f64);
                }
            }
        }
    }

    #[test]
    fn divergence_reports_device_and_step() {
        let ds = tiny_dataset(&[0, 1]);
        let cfg = FdConfig {
            local_steps: 2,
            batch_size: 2,
            ..FdConfig::default()
        };
        let mut state = fresh_state(2);
        state.weights.layers_mut()[1].bias[0] = f64::NAN;
        let err = local_training_phase(&mut state, &ds, &cfg, 1).unwrap_err();
        assert_eq!(err, FdError::Divergence { device: 0, step: 0 });
    }

    #[test]
    fn symmetric_devices_stay_mirrored() {
        let ds = tiny_dataset(&[0, 1, 2, 3, 0, 1]);
        let cfg = FdConfig {
            local_steps: 4,
            batch_size: 3,
            ..FdConfig::default()
        };
        let mut a = fresh_state(9);
        let mut b = fresh_state(9);
        b.device_id = 1;
        for round in 1..=3 {
            let ra = local_training_phase(&mut a, &ds, &cfg, round).unwrap();
            let rb = local_training_phase(&mut b, &ds, &cfg, round).unwrap();
            assert_eq!(ra.per_label, rb.per_label);
            let mut t = global_ensembling_phase(&[ra.clone(), rb]).unwrap();
            // with two mirrored devices each teacher is the device's own report
            assert_eq!(t[&0], ra.per_label);
            a.global_avgs = t.remove(&0).unwrap();
            b.global_avgs = t.remove(&1).unwrap();
            assert_eq!(a.weights, b.weights);
        }
    }

    fn small_run_inputs(m: usize) -> (Vec<DeviceDataset>, Vec<Sample>) {
        let corpus = generate_corpus(&CorpusSpec::new(3, 40, 4), 1).unwrap();
        // device i holds every fourth sample starting at i: 10 per label
        let datasets = (0..m)
            .map(|i| {
                let own = corpus.samples.iter().skip(i).step_by(4).cloned().collect();
                DeviceDataset::new(i, 3, own)
            })
            .collect();
        (datasets, corpus.samples)
    }

    #[test]
    fn zero_rounds_leave_log_and_ledger_empty() {
        let (datasets, test) = small_run_inputs(2);
        let model = ModelSpec::default();
        let inputs = RunInputs {
            datasets: &datasets,
            model: &model,
            test: &test,
            workers: 1,
        };
        let mut book = LedgerBook::new(2);
        let cfg = FdConfig {
            global_rounds: 0,
            ..FdConfig::default()
        };
        let out = run_fd(&inputs, &cfg, &mut book).unwrap();
        assert!(out.log.is_empty());
        assert!(book.aggregate().is_zero());
    }

    #[test]
    fn run_fd_bookkeeping_and_determinism() {
        let (datasets, test) = small_run_inputs(3);
        let model = ModelSpec {
            hidden: vec![6],
            activation: Activation::Relu,
        };
        let cfg = FdConfig {
            local_steps: 20,
            global_rounds: 3,
            batch_size: 8,
            ..FdConfig::default()
        };
        let run = |workers| {
            let inputs = RunInputs {
                datasets: &datasets,
                model: &model,
                test: &test,
                workers,
            };
            let mut book = LedgerBook::new(3);
            let out = run_fd(&inputs, &cfg, &mut book).unwrap();
            (out.log, book)
        };
        let (log, book) = run(1);
        assert_eq!(log.records.len(), 9);
        // 160 draws over 30 samples cover all three labels, so every label goes
        // up and comes back down each round.
        assert_eq!(book.aggregate().logit_scalars, 3 * 3 * (3 + 3) * 3);
        assert_eq!(book.device(1).logit_scalars, 3 * (3 + 3) * 3);
        let (log4, book4) = run(4);
        assert_eq!(log, log4);
        assert_eq!(book, book4);
    }

    #[test]
    fn fd_needs_two_devices() {
        let (datasets, test) = small_run_inputs(1);
        let model = ModelSpec::default();
        let inputs = RunInputs {
            datasets: &datasets,
            model: &model,
            test: &test,
            workers: 1,
        };
        assert!(matches!(
            run_fd(&inputs, &FdConfig::default(), &mut LedgerBook::new(1)),
            Err(FdError::Protocol(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn self_exclusion(seed in any::<u64>(), m in 2usize..6, l in 2usize..6) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut reports: Vec<LocalReport> = (0..m)
                .map(|i| {
                    let per_label = (0..l)
                        .map(|_| {
                            rng.random_bool(0.8).then(|| {
                                let z: Vec<f64> = (0..l).map(|_| rng.random_range(-3.0..3.0)).collect();
                                LogitVector::from_logits(&z)
                            })
                        })
                        .collect();
                    report(i, per_label)
                })
                .collect();
            let before = global_ensembling_phase(&reports).unwrap();
            let victim = rng.random_range(0..m);
            for v in reports[victim].per_label.iter_mut() {
                *v = Some(LogitVector::from_logits(&vec![rng.random_range(-3.0..3.0); l]));
            }
            let after = global_ensembling_phase(&reports).unwrap();
            prop_assert_eq!(&before[&victim], &after[&victim]);
            for t in after.values().flatten().flatten() {
                let s: f64 = t.as_slice().iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }
    }
}
