//! Label-conditioned GAN built from the dense networks in [`crate::nn`].
//!
//! Generator: `[noise ++ onehot(label)] -> hidden x3 -> features`, sigmoid on
//! the output so samples land in `[0, 1]`. Discriminator:
//! `[features ++ onehot(label)] -> hidden x3 -> 1 logit`. Both are four dense
//! layers with leaky-ReLU hidden units.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{self, sigmoid, Activation, ModelWeights, NnError, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 8,
            hidden: 32,
            steps: 2000,
            batch_size: 32,
            lr_generator: 0.05,
            lr_discriminator: 0.05,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.noise_dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err("gan noise_dim, hidden and batch_size must be positive".into());
        }
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err("gan learning rates must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGan {
    pub(crate) generator: ModelWeights,
    pub(crate) discriminator: ModelWeights,
    pub(crate) noise_dim: usize,
    pub(crate) num_labels: usize,
}

/// Mean losses of one alternating step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub discriminator: f64,
    pub generator: f64,
}

fn with_onehot(x: &[f64], label: usize, num_labels: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + num_labels);
    v.extend_from_slice(x);
    v.extend((0..num_labels).map(|l| if l == label { 1.0 } else { 0.0 }));
    v
}

impl ConditionalGan {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        num_labels: usize,
        cfg: &GanConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let h = cfg.hidden;
        let generator = ModelWeights::xavier(
            &[cfg.noise_dim + num_labels, h, h, h, feature_dim],
            Activation::LeakyRelu,
            rng,
        )?;
        let discriminator = ModelWeights::xavier(
            &[feature_dim + num_labels, h, h, h, 1],
            Activation::LeakyRelu,
            rng,
        )?;
        Ok(Self {
            generator,
            discriminator,
            noise_dim: cfg.noise_dim,
            num_labels,
        })
    }

    /// Rebuilds from a generator alone; the discriminator is not needed to sample.
    pub(crate) fn from_generator(
        generator: ModelWeights,
        num_labels: usize,
    ) -> Result<Self, NnError> {
        let noise_dim = generator
            .input_dim()
            .checked_sub(num_labels)
            .filter(|&n| n > 0)
            .ok_or_else(|| NnError::InvalidDims(generator.dims()))?;
        let discriminator = ModelWeights::zeros(
            &[generator.output_dim() + num_labels, 1],
            Activation::LeakyRelu,
        )?;
        Ok(Self {
            generator,
            discriminator,
            noise_dim,
            num_labels,
        })
    }

    pub fn generator(&self) -> &ModelWeights {
        &self.generator
    }

    pub fn feature_dim(&self) -> usize {
        self.generator.output_dim()
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.noise_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }

    pub fn generate<R: Rng + ?Sized>(&self, label: usize, rng: &mut R) -> Vec<f64> {
        let z = self.noise(rng);
        self.generator
            .logits(&with_onehot(&z, label, self.num_labels))
            .expect("generator input built to size")
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    /// Probability the discriminator assigns to `x` being real for `label`.
    pub fn discriminate(&self, x: &[f64], label: usize) -> Result<f64, NnError> {
        let s = self
            .discriminator
            .logits(&with_onehot(x, label, self.num_labels))?;
        Ok(sigmoid(s[0]))
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        real: &[&Sample],
        cfg: &GanConfig,
        rng: &mut R,
    ) -> Result<StepLosses, NnError> {
        let n = real.len() as f64;
        let l = self.num_labels;

        let mut grad_d = self.discriminator.zeros_like();
        let mut loss_d = 0.0;
        for s in real {
            let cache = self
                .discriminator
                .forward_cache(&with_onehot(&s.features, s.label, l))?;
            let p = sigmoid(cache.logits()[0]);
            loss_d -= (p + nn::LOG_EPS).ln();
            let (g, _) = self.discriminator.backward(&cache, &[p - 1.0]);
            grad_d.add_scaled(&g, 1.0)?;

            let fake = self.generate(s.label, rng);
            let cache = self
                .discriminator
                .forward_cache(&with_onehot(&fake, s.label, l))?;
            let p = sigmoid(cache.logits()[0]);
            loss_d -= (1.0 - p + nn::LOG_EPS).ln();
            let (g, _) = self.discriminator.backward(&cache, &[p]);
            grad_d.add_scaled(&g, 1.0)?;
        }
        grad_d.scale(1.0 / n);
        nn::sgd_step_in_place(&mut self.discriminator, &grad_d, cfg.lr_discriminator)?;

        // Non-saturating generator loss: -ln D(G(z, y), y).
        let mut grad_g = self.generator.zeros_like();
        let mut loss_g = 0.0;
        let d = self.feature_dim();
        for s in real {
            let z = self.noise(rng);
            let g_cache = self.generator.forward_cache(&with_onehot(&z, s.label, l))?;
            let x: Vec<f64> = g_cache.logits().iter().map(|&v| sigmoid(v)).collect();
            let d_cache = self
                .discriminator
                .forward_cache(&with_onehot(&x, s.label, l))?;
            let p = sigmoid(d_cache.logits()[0]);
            loss_g -= (p + nn::LOG_EPS).ln();
            let (_, d_in) = self.discriminator.backward(&d_cache, &[p - 1.0]);
            let d_out: Vec<f64> = d_in[..d]
                .iter()
                .zip(&x)
                .map(|(g, x)| g * x * (1.0 - x))
                .collect();
            let (g, _) = self.generator.backward(&g_cache, &d_out);
            grad_g.add_scaled(&g, 1.0)?;
        }
        grad_g.scale(1.0 / n);
        nn::sgd_step_in_place(&mut self.generator, &grad_g, cfg.lr_generator)?;

        Ok(StepLosses {
            discriminator: loss_d / n,
            generator: loss_g / n,
        })
    }
}

/// Trains for `cfg.steps` alternating steps on minibatches drawn with replacement.
pub fn train_gan<R: Rng + ?Sized>(
    samples: &[Sample],
    feature_dim: usize,
    num_labels: usize,
    cfg: &GanConfig,
    rng: &mut R,
) -> Result<ConditionalGan, NnError> {
    let mut gan = ConditionalGan::new(feature_dim, num_labels, cfg, rng)?;
    for step in 0..cfg.steps {
        let batch: Vec<&Sample> = (0..cfg.batch_size)
            .map(|_| samples.choose(rng).expect("non-empty training set"))
            .collect();
        let losses = gan.train_step(&batch, cfg, rng)?;
        if step % 500 == 0 {
            log::debug!(
                "gan step {step}: d_loss {:.4} g_loss {:.4}",
                losses.discriminator,
                losses.generator
            );
        }
    }
    Ok(gan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_gradient_matches_finite_difference() {
        // d(-ln D(G(z)))/d(bias of generator output unit 0), checked numerically.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = GanConfig {
            noise_dim: 2,
            hidden: 4,
            ..GanConfig::default()
        };
        let gan = ConditionalGan::new(3, 2, &cfg, &mut rng).unwrap();
        let z = [0.3, -0.7];
        let label = 1;
        let loss = |g: &ModelWeights| {
            let x: Vec<f64> = g
                .logits(&with_onehot(&z, label, 2))
                .unwrap()
                .into_iter()
                .map(sigmoid)
                .collect();
            let s = gan
                .discriminator
                .logits(&with_onehot(&x, label, 2))
                .unwrap()[0];
            -sigmoid(s).ln()
        };
        let g_cache = gan
            .generator
            .forward_cache(&with_onehot(&z, label, 2))
            .unwrap();
        let x: Vec<f64> = g_cache.logits().iter().map(|&v| sigmoid(v)).collect();
        let d_cache = gan
            .discriminator
            .forward_cache(&with_onehot(&x, label, 2))
            .unwrap();
        let p = sigmoid(d_cache.logits()[0]);
        let (_, d_in) = gan.discriminator.backward(&d_cache, &[p - 1.0]);
        let d_out: Vec<f64> = d_in[..3]
            .iter()
            .zip(&x)
            .map(|(g, x)| g * x * (1.0 - x))
            .collect();
        let (grad, _) = gan.generator.backward(&g_cache, &d_out);

        let h = 1e-6;
        let last = gan.generator.layers().len() - 1;
        for unit in 0..3 {
            let mut plus = gan.generator.clone();
            plus.layers_mut()[last].bias[unit] += h;
            let mut minus = gan.generator.clone();
            minus.layers_mut()[last].bias[unit] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grad.layers()[last].bias[unit];
            assert!((numeric - analytic).abs() < 1e-6, "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn outputs_are_in_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gan = ConditionalGan::new(5, 3, &GanConfig::default(), &mut rng).unwrap();
        for l in 0..3 {
            let x = gan.generate(l, &mut rng);
            assert_eq!(x.len(), 5);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn from_generator_recovers_noise_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gan = ConditionalGan::new(5, 3, &GanConfig::default(), &mut rng).unwrap();
        let back = ConditionalGan::from_generator(gan.generator.clone(), 3).unwrap();
        assert_eq!(back.noise_dim, 8);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(gan.generate(2, &mut a), back.generate(2, &mut b));
    }
}
