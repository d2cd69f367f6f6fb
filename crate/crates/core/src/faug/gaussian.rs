//! Per-label diagonal Gaussian fitted to the server's training set.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::Sample;

/// Standard deviation used when a fitted variance is (near) zero.
pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub(crate) means: BTreeMap<usize, Vec<f64>>,
    /// Population variance per feature.
    pub(crate) variances: BTreeMap<usize, Vec<f64>>,
}

impl GaussianModel {
    pub fn fit(samples: &[Sample]) -> Self {
        let mut grouped: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
        for s in samples {
            grouped.entry(s.label).or_default().push(s);
        }
        let mut means = BTreeMap::new();
        let mut variances = BTreeMap::new();
        for (label, group) in grouped {
            let d = group[0].features.len();
            let n = group.len() as f64;
            let mut mean = vec![0.0; d];
            for s in &group {
                for (m, v) in mean.iter_mut().zip(&s.features) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; d];
            for s in &group {
                for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            means.insert(label, mean);
            variances.insert(label, var);
        }
        Self { means, variances }
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.means.keys().copied()
    }

    pub fn mean(&self, label: usize) -> Option<&[f64]> {
        self.means.get(&label).map(Vec::as_slice)
    }

    pub fn variance(&self, label: usize) -> Option<&[f64]> {
        self.variances.get(&label).map(Vec::as_slice)
    }

    /// `None` when the label was not fitted.
    pub fn sample<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Option<Vec<f64>> {
        let mean = self.means.get(&label)?;
        let var = &self.variances[&label];
        Some(
            mean.iter()
                .zip(var)
                .map(|(m, v)| {
                    let z: f64 = rng.sample(StandardNormal);
                    (m + v.sqrt().max(NOISE_FLOOR) * z).clamp(0.0, 1.0)
                })
                .collect(),
        )
    }
}
