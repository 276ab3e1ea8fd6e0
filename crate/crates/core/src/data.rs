//! Samples, datasets, and classification losses.
//!
//! A sample carries the weak (on-device) and strong (offloaded) loss for one
//! input, plus the weak model's predictive entropy. The offloading reward is
//! always `loss_weak - loss_strong`; it is derived, never stored, so the two
//! can not drift apart.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss under which weak and strong predictions are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// 0 if the label is ranked first, else 1.
    Top1,
    /// 0 if the label is ranked in the first five, else 1.
    Top5,
    /// Rank of the label (1-indexed), truncated at 10.
    Rank,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Top1 => write!(f, "top1"),
            LossKind::Top5 => write!(f, "top5"),
            LossKind::Rank => write!(f, "rank"),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(LossKind::Top1),
            "top5" => Ok(LossKind::Top5),
            "rank" => Ok(LossKind::Rank),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?}, expected top1, top5, or rank"
            ))),
        }
    }
}

/// Checks that `probs` is a usable distribution: non-empty, entries finite
/// and non-negative, total within 1e-6 of one.
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Rank of `label` when classes are sorted by descending probability, ties
/// broken by ascending class index. 1-indexed.
fn label_position(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    let mut pos = 1;
    for (j, &q) in probs.iter().enumerate() {
        if q > p || (q == p && j < label) {
            pos += 1;
        }
    }
    pos
}

/// Scores one prediction. The `rank` loss is truncated at 10 so that a badly
/// misranked label costs no more than a missing one.
pub fn loss(probs: &[f64], label: usize, kind: LossKind) -> Result<f64> {
    validate_distribution(probs)?;
    if label >= probs.len() {
        return Err(Error::InvalidDistribution(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let pos = label_position(probs, label);
    Ok(match kind {
        LossKind::Top1 => {
            if pos == 1 {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Top5 => {
            if pos <= 5 {
                0.0
            } else {
                1.0
            }
        }
        LossKind::Rank => pos.min(10) as f64,
    })
}

/// One scored input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Predictive entropy of the weak model, in nats.
    pub entropy: f64,
    pub loss_weak: f64,
    pub loss_strong: f64,
    /// Offloading metric, populated by a fitted metric map.
    pub metric: Option<f64>,
}

impl Sample {
    pub fn new(id: impl Into<String>, entropy: f64, loss_weak: f64, loss_strong: f64) -> Self {
        Self { id: id.into(), entropy, loss_weak, loss_strong, metric: None }
    }

    /// Gain from offloading this sample.
    pub fn reward(&self) -> f64 {
        self.loss_weak - self.loss_strong
    }
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    /// Wraps samples, rejecting duplicate ids and non-finite fields.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !s.entropy.is_finite() || !s.loss_weak.is_finite() || !s.loss_strong.is_finite() {
                return Err(Error::Malformed {
                    line: i + 1,
                    reason: format!("sample {:?} has a non-finite field", s.id),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId { id: s.id.clone(), line: i + 1 });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    pub fn mean_weak_loss(&self) -> Result<f64> {
        self.require_non_empty()?;
        Ok(self.samples.iter().map(|s| s.loss_weak).sum::<f64>() / self.len() as f64)
    }

    pub fn mean_strong_loss(&self) -> Result<f64> {
        self.require_non_empty()?;
        Ok(self.samples.iter().map(|s| s.loss_strong).sum::<f64>() / self.len() as f64)
    }

    /// Fitted metrics in sample order; errors if any sample is unpopulated.
    pub fn metrics(&self) -> Result<Vec<f64>> {
        self.require_non_empty()?;
        self.samples
            .iter()
            .map(|s| s.metric.ok_or_else(|| Error::MetricMissing { id: s.id.clone() }))
            .collect()
    }

    /// Entropies in sample order.
    pub fn entropies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.entropy).collect()
    }

    /// Rewards in sample order.
    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward()).collect()
    }

    /// New dataset containing the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or_else(|| {
                    Error::InvalidConfig(format!("subset index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_samples(samples)
    }

    /// Fills every sample's metric from the map.
    pub fn apply_metric_map(&mut self, map: &crate::metric::MetricMap) {
        for s in &mut self.samples {
            s.metric = Some(map.metric_of(s.entropy));
        }
    }
}
