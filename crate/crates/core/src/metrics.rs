//! Communication-cost accounting and privacy-leakage measures.
//!
//! Costs are counted per reference device: every charge describes what one
//! device sends and receives. Logits and model parameters cost 32 bits each,
//! raw sample pixels 8 bits. All arithmetic is integral.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BITS_PER_LOGIT: u64 = 32;
pub const BITS_PER_PARAMETER: u64 = 32;
pub const BITS_PER_PIXEL: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("device {0} is not in the label inventory")]
    UnknownDevice(usize),
    #[error("device {0} has no target labels; device-server leakage is undefined")]
    NoTargets(usize),
    #[error("no device uploaded any label; inter-device leakage is undefined")]
    EmptyUnion,
    #[error("device {device}: labels {overlap:?} are both target and redundant")]
    Overlap { device: usize, overlap: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostLedger {
    pub logit_scalars: u64,
    pub model_parameters: u64,
    /// Seed samples uploaded; their pixels are counted in `sample_pixels`.
    pub samples: u64,
    pub sample_pixels: u64,
}

impl CostLedger {
    pub fn total_bits(&self) -> u64 {
        BITS_PER_LOGIT * self.logit_scalars
            + BITS_PER_PARAMETER * self.model_parameters
            + BITS_PER_PIXEL * self.sample_pixels
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    /// One FD exchange: `m` devices each upload `labels_up` and download
    /// `labels_down` logit vectors of `num_labels` scalars.
    pub fn charge_fd_round(&mut self, m: u64, labels_up: u64, labels_down: u64, num_labels: u64) {
        self.logit_scalars += m * (labels_up + labels_down) * num_labels;
    }

    /// One FL exchange: `m` devices each upload and download the full model.
    pub fn charge_fl_round(&mut self, m: u64, declared_params: u64) {
        self.model_parameters += 2 * m * declared_params;
    }

    /// FAug for one device: seed upload plus generator download.
    pub fn charge_faug(
        &mut self,
        num_seed_samples: u64,
        pixels_per_sample: u64,
        generator_params: u64,
    ) {
        self.samples += num_seed_samples;
        self.sample_pixels += num_seed_samples * pixels_per_sample;
        self.model_parameters += generator_params;
    }
}

impl std::ops::AddAssign for CostLedger {
    fn add_assign(&mut self, o: Self) {
        self.logit_scalars += o.logit_scalars;
        self.model_parameters += o.model_parameters;
        self.samples += o.samples;
        self.sample_pixels += o.sample_pixels;
    }
}

/// One ledger per device.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerBook {
    devices: Vec<CostLedger>,
}

impl LedgerBook {
    pub fn new(num_devices: usize) -> Self {
        Self {
            devices: vec![CostLedger::default(); num_devices],
        }
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device(&self, i: usize) -> &CostLedger {
        &self.devices[i]
    }

    pub fn device_mut(&mut self, i: usize) -> &mut CostLedger {
        &mut self.devices[i]
    }

    pub fn devices(&self) -> &[CostLedger] {
        &self.devices
    }

    /// Sum over all devices.
    pub fn aggregate(&self) -> CostLedger {
        let mut total = CostLedger::default();
        for d in &self.devices {
            total += *d;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeviceLabels {
    pub targets: BTreeSet<usize>,
    pub redundant: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    pub num_labels: usize,
    pub devices: Vec<DeviceLabels>,
}

impl LabelInventory {
    pub fn new(num_labels: usize, devices: Vec<DeviceLabels>) -> Result<Self, MetricsError> {
        for (device, d) in devices.iter().enumerate() {
            let overlap: Vec<usize> = d.targets.intersection(&d.redundant).copied().collect();
            if !overlap.is_empty() {
                return Err(MetricsError::Overlap { device, overlap });
            }
        }
        Ok(Self {
            num_labels,
            devices,
        })
    }

    fn get(&self, i: usize) -> Result<&DeviceLabels, MetricsError> {
        self.devices.get(i).ok_or(MetricsError::UnknownDevice(i))
    }

    /// Every label some device uploaded, i.e. what the shared generator can produce.
    pub fn uploaded_union(&self) -> BTreeSet<usize> {
        self.devices
            .iter()
            .flat_map(|d| d.targets.iter().chain(&d.redundant))
            .copied()
            .collect()
    }
}

/// `|targets| / (|targets| + |redundant|)` for device `i`.
pub fn device_server_pl(inv: &LabelInventory, i: usize) -> Result<f64, MetricsError> {
    let d = inv.get(i)?;
    if d.targets.is_empty() {
        return Err(MetricsError::NoTargets(i));
    }
    let t = d.targets.len() as f64;
    Ok(t / (t + d.redundant.len() as f64))
}

/// `|targets_i| / |union over all devices of (targets ∪ redundant)|`.
pub fn inter_device_pl(inv: &LabelInventory, i: usize) -> Result<f64, MetricsError> {
    let d = inv.get(i)?;
    let union = inv.uploaded_union();
    if union.is_empty() {
        return Err(MetricsError::EmptyUnion);
    }
    Ok(d.targets.len() as f64 / union.len() as f64)
}

/// One row of the cost report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub method: String,
    pub logits: u64,
    pub model_parameters: u64,
    pub samples: u64,
    pub total_bits: u64,
}

impl CostRow {
    pub fn from_ledger(method: impl Into<String>, ledger: &CostLedger) -> Self {
        Self {
            method: method.into(),
            logits: ledger.logit_scalars,
            model_parameters: ledger.model_parameters,
            samples: ledger.samples,
            total_bits: ledger.total_bits(),
        }
    }
}

pub fn write_cost_csv<W: Write>(out: W, rows: &[CostRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(t: &[usize], r: &[usize]) -> DeviceLabels {
        DeviceLabels {
            targets: t.iter().copied().collect(),
            redundant: r.iter().copied().collect(),
        }
    }

    #[test]
    fn fd_rounds_per_device() {
        let mut l = CostLedger::default();
        for _ in 0..16 {
            l.charge_fd_round(1, 10, 10, 10);
        }
        assert_eq!(l.logit_scalars, 3_200);
        assert_eq!(l.total_bits(), 102_400);
    }

    #[test]
    fn fd_with_faug_per_device() {
        let mut l = CostLedger::default();
        for _ in 0..16 {
            l.charge_fd_round(1, 10, 10, 10);
        }
        l.charge_faug(15, 784, 1_493_520);
        assert_eq!(l.samples, 15);
        assert_eq!(l.model_parameters, 1_493_520);
        assert_eq!(l.total_bits(), 102_400 + 47_792_640 + 94_080);
        assert_eq!(l.total_bits(), 47_989_120);
    }

    #[test]
    fn fl_rows() {
        let mut l = CostLedger::default();
        for _ in 0..16 {
            l.charge_fl_round(1, 1_199_648);
        }
        assert_eq!(l.model_parameters, 38_388_736);
        assert_eq!(l.total_bits(), 1_228_439_552);
        l.charge_faug(15, 784, 1_493_520);
        assert_eq!(l.model_parameters, 39_882_256);
        assert_eq!(l.total_bits(), 1_276_326_272);
    }

    #[test]
    fn aggregate_mode_scales_with_devices() {
        let mut l = CostLedger::default();
        l.charge_fd_round(4, 10, 9, 10);
        assert_eq!(l.logit_scalars, 4 * 19 * 10);
        let mut book = LedgerBook::new(3);
        book.device_mut(0).charge_fl_round(1, 5);
        book.device_mut(2).charge_fl_round(1, 5);
        assert_eq!(book.aggregate().model_parameters, 20);
    }

    #[test]
    fn device_server_pl_examples() {
        let inv = LabelInventory::new(
            10,
            vec![
                labels(&[0, 1, 2], &[]),
                labels(&[0, 1, 2], &[3, 4, 5]),
                labels(&[0], &[1, 2, 3, 4, 5, 6, 7, 8, 9]),
                labels(&[], &[4]),
            ],
        )
        .unwrap();
        assert_eq!(device_server_pl(&inv, 0).unwrap(), 1.0);
        assert_eq!(device_server_pl(&inv, 1).unwrap(), 0.5);
        assert!((device_server_pl(&inv, 2).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(device_server_pl(&inv, 3), Err(MetricsError::NoTargets(3)));
        assert_eq!(
            device_server_pl(&inv, 9),
            Err(MetricsError::UnknownDevice(9))
        );
    }

    #[test]
    fn inter_device_pl_examples() {
        let full = LabelInventory::new(
            10,
            vec![labels(&[0, 1, 2], &[]), labels(&[3, 4, 5], &[6, 7, 8, 9])],
        )
        .unwrap();
        assert!((inter_device_pl(&full, 0).unwrap() - 0.3).abs() < 1e-15);

        let alone = LabelInventory::new(10, vec![labels(&[0, 1, 2], &[])]).unwrap();
        assert_eq!(inter_device_pl(&alone, 0).unwrap(), 1.0);

        let empty = LabelInventory::new(10, vec![labels(&[], &[])]).unwrap();
        assert_eq!(inter_device_pl(&empty, 0), Err(MetricsError::EmptyUnion));
    }

    #[test]
    fn overlap_rejected() {
        assert!(matches!(
            LabelInventory::new(4, vec![labels(&[1], &[1, 2])]),
            Err(MetricsError::Overlap { .. })
        ));
    }

    #[test]
    fn cost_csv_layout() {
        let mut l = CostLedger::default();
        l.charge_fd_round(1, 10, 10, 10);
        let mut buf = Vec::new();
        write_cost_csv(&mut buf, &[CostRow::from_ledger("fd", &l)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,logits,model_parameters,samples,total_bits\nfd,200,0,0,6400\n"
        );
    }
}
