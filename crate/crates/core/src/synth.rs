//! Synthetic datasets with a controllable reward-vs-entropy shape.
//!
//! Entropies come from a mixture of clipped Gaussians（typically a confident
//! mass near zero, a mid-entropy bulk, and a high-entropy tail). Rewards are
//! Bernoulli with a success probability that rises to a peak at a chosen
//! entropy and falls off again, which is the regime where offloading pays:
//! confident predictions rarely need help, hopeless ones can not be helped.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// One clipped-Gaussian entropy component.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EntropyComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    pub mixture: Vec<EntropyComponent>,
    /// Peak offload-success probability.
    pub reward_peak: f64,
    /// Entropy at which the success probability peaks.
    pub reward_center: f64,
    /// Gaussian width of the success bump.
    pub reward_width: f64,
    /// Probability that both models fail at zero entropy.
    pub shared_error_base: f64,
    /// Growth of the shared failure probability per nat of entropy.
    pub shared_error_slope: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            seed: 0,
            // Most of the mass is confident with nothing to gain from
            // offloading; the gains concentrate in a high-entropy minority
            // flanking the response peak, plus a small slice at the peak
            // itself where offloading pays most. The flanks give the metric
            // distribution a gentle upper tail the policy can cut inside,
            // the regime where rate-limited offloading pays.
            mixture: vec![
                EntropyComponent { weight: 0.845, mean: 0.25, sd: 0.08 },
                EntropyComponent { weight: 0.010, mean: 1.30, sd: 0.35 },
                EntropyComponent { weight: 0.060, mean: 2.33, sd: 0.03 },
                EntropyComponent { weight: 0.060, mean: 3.27, sd: 0.03 },
                EntropyComponent { weight: 0.025, mean: 2.80, sd: 0.03 },
            ],
            reward_peak: 0.88,
            reward_center: 2.8,
            reward_width: 0.95,
            shared_error_base: 0.04,
            shared_error_slope: 0.05,
        }
    }
}

impl SynthSpec {
    /// Offload-success probability at entropy `h`.
    pub fn reward_probability(&self, h: f64) -> f64 {
        let d = (h - self.reward_center) / self.reward_width;
        self.reward_peak * (-0.5 * d * d).exp()
    }

    /// Probability that weak and strong both miss at entropy `h`.
    pub fn shared_error_probability(&self, h: f64) -> f64 {
        (self.shared_error_base + self.shared_error_slope * h).clamp(0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("synthesis needs n > 0".into()));
        }
        if self.mixture.is_empty() {
            return Err(Error::InvalidConfig("entropy mixture is empty".into()));
        }
        for c in &self.mixture {
            if !(c.weight > 0.0) || !c.weight.is_finite() || !c.mean.is_finite() || !(c.sd >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bad mixture component (weight {}, mean {}, sd {})",
                    c.weight, c.mean, c.sd
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.reward_peak) || !(self.reward_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "reward bump needs peak in [0,1] and positive width, got {} and {}",
                self.reward_peak, self.reward_width
            )));
        }
        if !(0.0..=1.0).contains(&self.shared_error_base) || !self.shared_error_slope.is_finite() {
            return Err(Error::InvalidConfig("shared error parameters out of range".into()));
        }
        Ok(())
    }
}

/// Standard normal draw by Box-Muller.
fn gaussian(rng: &mut SplitMix64) -> f64 {
    let u1 = 1.0 - rng.u01();
    let u2 = rng.u01();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates `spec.n` samples with 0/1 losses satisfying
/// `reward = loss_weak - loss_strong`.
pub fn synthesize(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SplitMix64::new(derive_seed(spec.seed, "synthesize", &[]));
    let total_weight: f64 = spec.mixture.iter().map(|c| c.weight).sum();
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut pick = rng.u01() * total_weight;
        let mut comp = &spec.mixture[0];
        for c in &spec.mixture {
            if pick < c.weight {
                comp = c;
                break;
            }
            pick -= c.weight;
        }
        let h = (comp.mean + comp.sd * gaussian(&mut rng)).max(0.0);
        let (loss_weak, loss_strong) = if rng.bernoulli(spec.reward_probability(h)) {
            (1.0, 0.0)
        } else {
            let both = rng.bernoulli(spec.shared_error_probability(h));
            (both as u8 as f64, both as u8 as f64)
        };
        samples.push(Sample::new(format!("syn_{i:06}"), h, loss_weak, loss_strong));
    }
    Dataset::from_samples(samples)
}
