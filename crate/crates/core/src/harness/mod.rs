//! Experiment orchestration: partition, optional augmentation, training,
//! metrics, and the files written for each run.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    generate_corpus, idx::load_idx, partition_manifest, partition_non_iid, split_train_test,
    Corpus, DataError, DeviceDataset, PartitionManifest,
};
use crate::faug::{federated_augmentation, FaugError};
use crate::fd::{run_fd_logged, run_standalone_logged, FdError, RunInputs};
use crate::fl::run_fl_logged;
use crate::metrics::{
    device_server_pl, inter_device_pl, CostLedger, LabelInventory, LedgerBook, MetricsError,
};
use crate::nn::{per_label_accuracy, LabelTally, ModelWeights, NnError};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sim::{RoundRecord, TrainingLog};

pub use config::{AccountingConfig, Arm, ConfigError, ExperimentConfig, IdxSource, TrainingConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Training(#[from] FdError),
    #[error(transparent)]
    Faug(#[from] FaugError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Data(DataError::InvalidPartition(_) | DataError::InvalidCorpus(_))
                | HarnessError::Training(FdError::Config(_))
                | HarnessError::Faug(FaugError::InvalidConfig(_))
        )
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, HarnessError::Training(FdError::Divergence { .. }))
    }
}

/// Master seed of repeat `r`; repeat 0 uses the configured seed itself.
pub fn repeat_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, Stream::Repeat, r as u64)
    }
}

/// Device whose ledger and leakage the summary reports.
pub fn reference_device(seed: u64, num_devices: usize) -> usize {
    stream_rng(seed, Stream::ReferenceDevice, 0).random_range(0..num_devices)
}

/// Train and test data plus the per-device partition for one repeat.
pub struct Prepared {
    pub train: Corpus,
    pub test: Corpus,
    pub devices: Vec<DeviceDataset>,
    pub manifest: PartitionManifest,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, HarnessError> {
    let (train, test) = match &cfg.idx {
        Some(src) => (
            load_idx(&src.train_images, &src.train_labels, cfg.corpus.num_labels)?,
            load_idx(&src.test_images, &src.test_labels, cfg.corpus.num_labels)?,
        ),
        None => {
            let corpus = generate_corpus(&cfg.corpus, seed)?;
            split_train_test(&corpus, cfg.corpus.test_fraction, seed)
        }
    };
    let spec = crate::data::PartitionSpec {
        seed,
        ..cfg.partition.clone()
    };
    let devices = partition_non_iid(&train, &spec)?;
    let manifest = partition_manifest(&spec, &devices);
    Ok(Prepared {
        train,
        test,
        devices,
        manifest,
    })
}

/// Outcome of one repeat.
#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub log: TrainingLog,
    pub ledgers: LedgerBook,
    pub manifest: PartitionManifest,
    pub inventory: Option<LabelInventory>,
    /// `[device][label]` on the test split, from the final models.
    pub per_label: Vec<Vec<LabelTally>>,
    pub final_accuracies: Vec<f64>,
}

/// One result row: accuracy, cost and leakage of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub devices: usize,
    pub num_target_labels: usize,
    pub redundant_count: usize,
    pub rounds: usize,
    pub runs: usize,
    pub reference_device: usize,
    pub mean_final_accuracy: f64,
    /// Mean over runs, one entry per device, `;`-separated.
    pub final_accuracy_per_device: String,
    pub logits: u64,
    pub model_parameters: u64,
    pub samples: u64,
    pub total_bits: u64,
    pub device_server_pl: Option<f64>,
    pub inter_device_pl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: SummaryRow,
    pub repeats: Vec<RepeatResult>,
}

impl ExperimentResult {
    /// Mean over runs of the reference device's per-label accuracy.
    pub fn reference_per_label(&self) -> Vec<Option<f64>> {
        let dev = self.summary.reference_device;
        let l = self.repeats[0].per_label[dev].len();
        (0..l)
            .map(|label| {
                let accs: Vec<f64> = self
                    .repeats
                    .iter()
                    .filter_map(|r| r.per_label[dev][label].accuracy())
                    .collect();
                (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
            })
            .collect()
    }
}

fn run_repeat(
    cfg: &ExperimentConfig,
    repeat: usize,
    log: &mut TrainingLog,
) -> Result<(Vec<ModelWeights>, RepeatResultParts), HarnessError> {
    let seed = repeat_seed(cfg.seed, repeat);
    let prepared = prepare(cfg, seed)?;
    let m = prepared.devices.len();
    let mut ledgers = LedgerBook::new(m);

    let (datasets, inventory) = if cfg.arm.uses_faug() {
        let faug_cfg = cfg.faug.as_ref().expect("validated: faug section present");
        let out = federated_augmentation(
            &prepared.devices,
            faug_cfg,
            cfg.accounting.generator_params,
            seed,
        )?;
        for (i, &n) in out.seed_counts.iter().enumerate() {
            ledgers.device_mut(i).charge_faug(
                n as u64,
                cfg.accounting.pixels_per_sample,
                cfg.accounting.generator_params,
            );
        }
        log::info!(
            "repeat {repeat}: FAug uploaded {:?} seeds, generable labels {:?}",
            out.seed_counts,
            out.generator.generable_labels()
        );
        (out.datasets, Some(out.inventory))
    } else {
        (prepared.devices, None)
    };

    let inputs = RunInputs {
        datasets: &datasets,
        model: &cfg.model,
        test: &prepared.test.samples,
        workers: cfg.workers,
    };
    let models = match cfg.arm {
        Arm::Fd | Arm::FdFaug => run_fd_logged(&inputs, &cfg.fd_config(seed), &mut ledgers, log)?,
        Arm::Fl | Arm::FlFaug => run_fl_logged(&inputs, &cfg.fl_config(seed), &mut ledgers, log)?,
        Arm::Standalone => run_standalone_logged(&inputs, &cfg.fd_config(seed), log)?,
    };
    Ok((
        models,
        RepeatResultParts {
            seed,
            ledgers,
            manifest: prepared.manifest,
            inventory,
            test: prepared.test,
        },
    ))
}

struct RepeatResultParts {
    seed: u64,
    ledgers: LedgerBook,
    manifest: PartitionManifest,
    inventory: Option<LabelInventory>,
    test: Corpus,
}

/// Runs every repeat, then writes the outputs when `cfg.out_dir` is set.
///
/// If training fails, the log of everything completed so far is still
/// written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let m = cfg.partition.num_devices;
    let reference = reference_device(cfg.seed, m);
    let mut repeats = Vec::with_capacity(cfg.repeats);

    for r in 0..cfg.repeats {
        let mut log = TrainingLog::default();
        let attempt = run_repeat(cfg, r, &mut log);
        let (models, parts) = match attempt {
            Ok(ok) => ok,
            Err(e) => {
                if let Some(dir) = &cfg.out_dir {
                    let mut logs: Vec<(usize, &TrainingLog)> = repeats
                        .iter()
                        .map(|x: &RepeatResult| (x.repeat, &x.log))
                        .collect();
                    logs.push((r, &log));
                    fs::create_dir_all(dir)?;
                    write_log(&dir.join("log.jsonl"), &logs)?;
                    log::error!(
                        "repeat {r} failed; partial log written to {}",
                        dir.display()
                    );
                }
                return Err(e);
            }
        };
        let per_label = models
            .iter()
            .map(|w| per_label_accuracy(w, &parts.test.samples, parts.test.num_labels))
            .collect::<Result<Vec<_>, _>>()?;
        let final_accuracies = per_label
            .iter()
            .map(|t| {
                let total: usize = t.iter().map(|x| x.total).sum();
                let correct: usize = t.iter().map(|x| x.correct).sum();
                if total == 0 {
                    0.0
                } else {
                    correct as f64 / total as f64
                }
            })
            .collect();
        repeats.push(RepeatResult {
            repeat: r,
            seed: parts.seed,
            log,
            ledgers: parts.ledgers,
            manifest: parts.manifest,
            inventory: parts.inventory,
            per_label,
            final_accuracies,
        });
    }

    let summary = summarize(cfg, reference, &repeats)?;
    let result = ExperimentResult { summary, repeats };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&result, dir)?;
    }
    Ok(result)
}

fn mean_u64(values: impl Iterator<Item = u64>) -> u64 {
    let (sum, n) = values.fold((0u128, 0u128), |(s, n), v| (s + v as u128, n + 1));
    (sum + n / 2).checked_div(n).unwrap_or(0) as u64
}

fn summarize(
    cfg: &ExperimentConfig,
    reference: usize,
    repeats: &[RepeatResult],
) -> Result<SummaryRow, HarnessError> {
    let m = cfg.partition.num_devices;
    let runs = repeats.len();
    let per_device: Vec<f64> = (0..m)
        .map(|i| repeats.iter().map(|r| r.final_accuracies[i]).sum::<f64>() / runs as f64)
        .collect();
    let ledgers: Vec<CostLedger> = repeats
        .iter()
        .map(|r| *r.ledgers.device(reference))
        .collect();

    let mut ds_pl = Vec::new();
    let mut id_pl = Vec::new();
    for inv in repeats.iter().filter_map(|r| r.inventory.as_ref()) {
        if let Ok(v) = device_server_pl(inv, reference) {
            ds_pl.push(v);
        }
        id_pl.push(inter_device_pl(inv, reference)?);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

    let ref_ledger = CostLedger {
        logit_scalars: mean_u64(ledgers.iter().map(|l| l.logit_scalars)),
        model_parameters: mean_u64(ledgers.iter().map(|l| l.model_parameters)),
        samples: mean_u64(ledgers.iter().map(|l| l.samples)),
        sample_pixels: mean_u64(ledgers.iter().map(|l| l.sample_pixels)),
    };
    Ok(SummaryRow {
        method: cfg.arm.name().to_string(),
        devices: m,
        num_target_labels: cfg.partition.num_target_labels,
        redundant_count: cfg
            .faug
            .as_ref()
            .filter(|_| cfg.arm.uses_faug())
            .map_or(0, |f| f.redundant_count),
        rounds: cfg.training.global_rounds,
        runs,
        reference_device: reference,
        mean_final_accuracy: per_device.iter().sum::<f64>() / m as f64,
        final_accuracy_per_device: per_device
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        logits: ref_ledger.logit_scalars,
        model_parameters: ref_ledger.model_parameters,
        samples: ref_ledger.samples,
        total_bits: ref_ledger.total_bits(),
        device_server_pl: mean(&ds_pl),
        inter_device_pl: mean(&id_pl),
    })
}

#[derive(Serialize)]
struct LogLine<'a> {
    repeat: usize,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

fn write_log(path: &Path, logs: &[(usize, &TrainingLog)]) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (repeat, log) in logs {
        for record in &log.records {
            serde_json::to_writer(
                &mut out,
                &LogLine {
                    repeat: *repeat,
                    record,
                },
            )
            .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PerLabelRow {
    repeat: usize,
    device: usize,
    label: usize,
    correct: usize,
    total: usize,
    accuracy: Option<f64>,
}

#[derive(Serialize)]
struct CostLine<'a> {
    repeat: usize,
    device: usize,
    method: &'a str,
    logits: u64,
    model_parameters: u64,
    samples: u64,
    total_bits: u64,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv`, `log.jsonl`, `per_label_accuracy.csv`, `cost.csv`
/// and `partition_manifest.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_summary_csv(
        &dir.join("summary.csv"),
        std::slice::from_ref(&result.summary),
    )?;
    let logs: Vec<(usize, &TrainingLog)> =
        result.repeats.iter().map(|r| (r.repeat, &r.log)).collect();
    write_log(&dir.join("log.jsonl"), &logs)?;

    let mut w = csv::Writer::from_path(dir.join("per_label_accuracy.csv"))?;
    for r in &result.repeats {
        for (device, tallies) in r.per_label.iter().enumerate() {
            for (label, t) in tallies.iter().enumerate() {
                w.serialize(PerLabelRow {
                    repeat: r.repeat,
                    device,
                    label,
                    correct: t.correct,
                    total: t.total,
                    accuracy: t.accuracy(),
                })?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("cost.csv"))?;
    for r in &result.repeats {
        for (device, l) in r.ledgers.devices().iter().enumerate() {
            w.serialize(CostLine {
                repeat: r.repeat,
                device,
                method: &result.summary.method,
                logits: l.logit_scalars,
                model_parameters: l.model_parameters,
                samples: l.samples,
                total_bits: l.total_bits(),
            })?;
        }
    }
    w.flush()?;

    let manifests: Vec<&PartitionManifest> = result.repeats.iter().map(|r| &r.manifest).collect();
    write_manifests(&dir.join("partition_manifest.json"), &manifests)
}

pub fn write_manifests(path: &Path, manifests: &[&PartitionManifest]) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, manifests).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Partition manifests for every repeat, without training anything.
pub fn partition_only(cfg: &ExperimentConfig) -> Result<Vec<PartitionManifest>, HarnessError> {
    cfg.validate()?;
    (0..cfg.repeats)
        .map(|r| prepare(cfg, repeat_seed(cfg.seed, r)).map(|p| p.manifest))
        .collect()
}

/// Per-device cost of one arm without running any training.
///
/// FD devices are assumed to report and receive all `num_labels` labels every
/// round, which a real run matches once every label is drawn in every round.
/// `seed_samples` only matters for the `+faug` arms.
pub fn cost_calculator(
    arm: Arm,
    rounds: u64,
    num_labels: u64,
    declared: &AccountingConfig,
    seed_samples: u64,
) -> CostLedger {
    let mut l = CostLedger::default();
    for _ in 0..rounds {
        match arm {
            Arm::Fd | Arm::FdFaug => l.charge_fd_round(1, num_labels, num_labels, num_labels),
            Arm::Fl | Arm::FlFaug => l.charge_fl_round(1, declared.model_params),
            Arm::Standalone => {}
        }
    }
    if arm.uses_faug() {
        l.charge_faug(
            seed_samples,
            declared.pixels_per_sample,
            declared.generator_params,
        );
    }
    l
}

/// Grid for [`sweep`]; an empty axis keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub devices: Vec<usize>,
    pub redundant_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
}

/// One summary row per grid point, in row-major order (devices outermost).
/// Writes `sweep.csv` to `cfg.out_dir` when set.
pub fn sweep(cfg: &ExperimentConfig, grid: &SweepGrid) -> Result<Vec<SummaryRow>, HarnessError> {
    let or_current = |axis: &[usize], current: usize| {
        if axis.is_empty() {
            vec![current]
        } else {
            axis.to_vec()
        }
    };
    let redundant_now = cfg.faug.as_ref().map_or(0, |f| f.redundant_count);
    let mut points = Vec::new();
    for m in or_current(&grid.devices, cfg.partition.num_devices) {
        for r in or_current(&grid.redundant_counts, redundant_now) {
            for t in or_current(&grid.target_counts, cfg.partition.num_target_labels) {
                let mut point = cfg.clone();
                point.out_dir = None;
                point.partition.num_devices = m;
                point.partition.num_target_labels = t;
                if let Some(f) = point.faug.as_mut() {
                    f.redundant_count = r;
                }
                points.push(point);
            }
        }
    }
    for p in &points {
        p.validate()?;
    }
    let rows = points
        .iter()
        .map(|p| run_experiment(p).map(|r| r.summary))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        write_summary_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}
