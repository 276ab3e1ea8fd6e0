//! Deterministic stream simulation.
//!
//! Sequences draw test samples i.i.d. with replacement from per-sequence
//! SplitMix64 streams derived from the root seed, so identical inputs give
//! bit-identical reports. The token bucket starts full; the token histogram
//! is sampled at each arrival before the decision is made.

use serde::{Deserialize, Serialize};

use crate::bucket::ScaledBucket;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::policy::PolicyTable;
use crate::rng::{derive_seed, SplitMix64};

/// Simulation shape and seeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub sequences: u64,
    pub length: u64,
    pub seed: u64,
    /// Equal-width metric bins for offload-odds tables.
    pub metric_bins: usize,
    /// Keep per-slot offload counts in memory for window audits.
    pub record_sends: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { sequences: 100, length: 100_000, seed: 0, metric_bins: 50, record_sends: false }
    }
}

/// Policy driving the simulated decisions.
#[derive(Debug, Clone)]
pub enum SimPolicy<'a> {
    /// Solved state-dependent thresholds.
    Mdp(&'a PolicyTable),
    /// Fixed threshold behind the same token bucket.
    Naive { threshold: f64, bucket: ScaledBucket },
}

impl SimPolicy<'_> {
    pub fn bucket(&self) -> &ScaledBucket {
        match self {
            SimPolicy::Mdp(t) => t.bucket(),
            SimPolicy::Naive { bucket, .. } => bucket,
        }
    }
}

/// Counts of token states observed at arrival instants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHistogram {
    /// Scaled token count corresponding to `counts[0]`.
    pub offset: u64,
    /// Scale factor: real tokens are `state / p`.
    pub p: u64,
    pub counts: Vec<u64>,
}

impl TokenHistogram {
    pub(crate) fn new(bucket: &ScaledBucket) -> Self {
        Self::with_range(bucket.q(), bucket.p(), bucket.state_count() as usize)
    }

    pub(crate) fn with_range(offset: u64, p: u64, len: usize) -> Self {
        Self { offset, p, counts: vec![0; len] }
    }

    /// Mean remaining tokens in real (unscaled) units.
    pub fn mean_real_tokens(&self) -> f64 {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let weighted: f64 =
            self.counts.iter().enumerate().map(|(i, &c)| (self.offset + i as u64) as f64 * c as f64).sum();
        weighted / total as f64 / self.p as f64
    }
}

/// Offload frequency within one metric bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OddsBin {
    pub center: f64,
    pub arrivals: u64,
    pub sends: u64,
    /// `sends / arrivals`, 0 for empty bins.
    pub odds: f64,
}

/// Aggregated outcome of a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub sequences: u64,
    pub length: u64,
    pub avg_loss: f64,
    /// Standard error of per-sequence mean losses.
    pub loss_std_err: f64,
    pub realized_rate: f64,
    pub offloads: u64,
    pub token_histogram: TokenHistogram,
    /// Offload counts by token state at the decision, indexed from state P.
    pub sends_by_state: Vec<u64>,
    pub per_sequence_loss: Vec<f64>,
    /// Total weak loss over all draws, offloaded or not.
    pub weak_loss_sum: f64,
    /// Total reward collected by offloads.
    pub reward_sum: f64,
    /// Total realized loss.
    pub loss_sum: f64,
    /// Per-sequence, per-slot offload counts when recording was requested.
    #[serde(skip)]
    pub sends_per_slot: Option<Vec<Vec<u8>>>,
}

fn check_cfg(cfg: &SimConfig) -> Result<()> {
    if cfg.sequences == 0 || cfg.length == 0 {
        return Err(Error::InvalidConfig(format!(
            "simulation needs at least one sequence and one step, got {} x {}",
            cfg.sequences, cfg.length
        )));
    }
    if cfg.metric_bins == 0 {
        return Err(Error::InvalidConfig("metric_bins must be positive".into()));
    }
    Ok(())
}

/// Runs the simulation and reports losses, rates, and state occupancy.
pub fn simulate(test: &Dataset, policy: &SimPolicy, cfg: &SimConfig) -> Result<SimReport> {
    run(test, policy, cfg, None).map(|(report, _)| report)
}

/// Runs the simulation while tallying offload odds per metric bin.
pub fn offload_odds(test: &Dataset, policy: &SimPolicy, cfg: &SimConfig) -> Result<Vec<OddsBin>> {
    run(test, policy, cfg, Some(cfg.metric_bins)).map(|(_, odds)| odds.unwrap())
}

fn run(
    test: &Dataset,
    policy: &SimPolicy,
    cfg: &SimConfig,
    odds_bins: Option<usize>,
) -> Result<(SimReport, Option<Vec<OddsBin>>)> {
    check_cfg(cfg)?;
    let metrics = test.metrics()?;
    let bucket = *policy.bucket();
    bucket.check_solvable()?;
    let (threshold_table, flat): (&[f64], f64) = match policy {
        SimPolicy::Mdp(t) => (t.thresholds(), f64::NAN),
        SimPolicy::Naive { threshold, .. } => (&[], *threshold),
    };
    let (p, q, m) = (bucket.p(), bucket.q(), bucket.m());

    let weak: Vec<f64> = test.iter().map(|s| s.loss_weak).collect();
    let strong: Vec<f64> = test.iter().map(|s| s.loss_strong).collect();
    let k = test.len() as u64;

    // Bin geometry for odds, over the observed metric range.
    let (bin_lo, bin_width, nbins) = match odds_bins {
        Some(b) => {
            let lo = metrics.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = metrics.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, (hi - lo) / b as f64, b)
            } else {
                (lo, 1.0, 1)
            }
        }
        None => (0.0, 1.0, 0),
    };
    let mut bin_arrivals = vec![0u64; nbins];
    let mut bin_sends = vec![0u64; nbins];

    let mut histogram = TokenHistogram::new(&bucket);
    let mut sends_by_state = vec![0u64; bucket.sendable_state_count() as usize];
    let mut per_sequence_loss = Vec::with_capacity(cfg.sequences as usize);
    let mut sends_per_slot: Option<Vec<Vec<u8>>> =
        if cfg.record_sends { Some(Vec::with_capacity(cfg.sequences as usize)) } else { None };
    let mut loss_sum = 0.0;
    let mut weak_loss_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut offloads = 0u64;

    for s in 0..cfg.sequences {
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, "draws", &[s, 0]));
        let mut n = m;
        let mut seq_loss = 0.0;
        let mut slot_sends = if cfg.record_sends { Some(Vec::with_capacity(cfg.length as usize)) } else { None };
        for _ in 0..cfg.length {
            let i = rng.index(k) as usize;
            histogram.counts[(n - q) as usize] += 1;
            let metric = metrics[i];
            let send = n >= p
                && if threshold_table.is_empty() {
                    metric >= flat
                } else {
                    metric >= threshold_table[(n - p) as usize]
                };
            if nbins > 0 {
                let b = (((metric - bin_lo) / bin_width) as usize).min(nbins - 1);
                bin_arrivals[b] += 1;
                bin_sends[b] += send as u64;
            }
            if send {
                sends_by_state[(n - p) as usize] += 1;
                seq_loss += strong[i];
                reward_sum += weak[i] - strong[i];
                offloads += 1;
            } else {
                seq_loss += weak[i];
            }
            weak_loss_sum += weak[i];
            if let Some(ss) = slot_sends.as_mut() {
                ss.push(send as u8);
            }
            n = bucket.step(n, send).expect("decision respects token availability");
        }
        loss_sum += seq_loss;
        per_sequence_loss.push(seq_loss / cfg.length as f64);
        if let Some(all) = sends_per_slot.as_mut() {
            all.push(slot_sends.unwrap());
        }
    }

    let steps = (cfg.sequences * cfg.length) as f64;
    let avg_loss = loss_sum / steps;
    let loss_std_err = std_err(&per_sequence_loss);
    let odds = odds_bins.map(|_| {
        (0..nbins)
            .map(|b| OddsBin {
                center: bin_lo + (b as f64 + 0.5) * bin_width,
                arrivals: bin_arrivals[b],
                sends: bin_sends[b],
                odds: if bin_arrivals[b] > 0 { bin_sends[b] as f64 / bin_arrivals[b] as f64 } else { 0.0 },
            })
            .collect()
    });
    let report = SimReport {
        sequences: cfg.sequences,
        length: cfg.length,
        avg_loss,
        loss_std_err,
        realized_rate: offloads as f64 / steps,
        offloads,
        token_histogram: histogram,
        sends_by_state,
        per_sequence_loss,
        weak_loss_sum,
        reward_sum,
        loss_sum,
        sends_per_slot,
    };
    Ok((report, odds))
}

/// Standard error of the mean of `xs`; 0 for fewer than two values.
pub fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// One sliding-window conformance violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub window: usize,
    pub start: usize,
    pub count: u64,
    pub cap: u64,
}

/// Checks every window of each width against the arrival-curve cap
/// `ceil((M + w*Q) / P)` offloads, returning all violations.
pub fn audit_windows(sends_per_slot: &[u8], bucket: &ScaledBucket, widths: &[usize]) -> Vec<Violation> {
    let mut prefix = Vec::with_capacity(sends_per_slot.len() + 1);
    prefix.push(0u64);
    for &s in sends_per_slot {
        prefix.push(prefix.last().unwrap() + s as u64);
    }
    let mut violations = Vec::new();
    for &w in widths {
        if w == 0 || w > sends_per_slot.len() {
            continue;
        }
        let cap = (bucket.m() + w as u64 * bucket.q()).div_ceil(bucket.p());
        for start in 0..=(sends_per_slot.len() - w) {
            let count = prefix[start + w] - prefix[start];
            if count > cap {
                violations.push(Violation { window: w, start, count, cap });
            }
        }
    }
    violations
}

/// Replays a token-bucket policer over per-slot offload counts, returning
/// the first slot (if any) where the stream overdraws the bucket.
pub fn audit_policer(counts_per_slot: &[u8], bucket: &ScaledBucket) -> Option<usize> {
    let mut n = bucket.m();
    for (t, &c) in counts_per_slot.iter().enumerate() {
        let need = c as u64 * bucket.p();
        if n < need {
            return Some(t);
        }
        n = bucket.m().min(n - need + bucket.q());
    }
    None
}
