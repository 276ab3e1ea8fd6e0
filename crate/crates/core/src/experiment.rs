//! End-to-end evaluation experiments.
//!
//! `kfold_eval` is the main measurement loop: split the dataset into seeded
//! folds, fit the metric map on each training side, solve policies per rate
//! and burst, and simulate the solved policy against the fixed-threshold
//! baseline on the held-out fold, alongside the deterministic references
//! (always-weak, always-strong, and the rate-matched offline bound). The
//! simulations for one fold share one seed, so policy comparisons pair
//! per-sequence losses draw for draw.
//!
//! `perturb_training` supports ablations that delete the most or least
//! offload-worthy slice of the training data before refitting.

use serde::{Deserialize, Serialize};

use crate::bucket::reduce_bucket;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{build_fg, lower_bound_loss, naive_threshold, solve_policy};
use crate::metric::fit_metric_map;
use crate::rational::RationalParam;
use crate::rng::{derive_seed, SplitMix64};
use crate::sim::{simulate, SimConfig, SimPolicy, SimReport};

/// Shape of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub folds: u64,
    pub rates: Vec<RationalParam>,
    pub bursts: Vec<RationalParam>,
    pub gamma: f64,
    pub sequences: u64,
    pub length: u64,
    pub seed: u64,
    /// Temperature recorded in the fitted metric maps (1.0 unless the
    /// dataset was ingested from raw probabilities with calibration).
    pub temperature: f64,
}

impl EvalConfig {
    pub fn new(rates: Vec<RationalParam>, bursts: Vec<RationalParam>) -> Self {
        Self {
            folds: 3,
            rates,
            bursts,
            gamma: 0.99,
            sequences: 20,
            length: 20_000,
            seed: 0,
            temperature: 1.0,
        }
    }
}

/// One (rate, burst) cell of a fold: both simulated policies plus the
/// deterministic references on the same held-out data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCell {
    pub rate: RationalParam,
    pub burst: RationalParam,
    pub mdp: SimReport,
    pub naive: SimReport,
    pub naive_threshold: f64,
    /// Loss of the offline rate-matched selection on the held-out fold.
    pub lower_bound: f64,
    /// Mean loss over the full dataset when nothing is offloaded.
    pub weak_only: f64,
    /// Mean loss over the full dataset when everything is offloaded.
    pub strong_only: f64,
}

/// All cells evaluated on one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Kernel width selected for this fold's metric map.
    pub lambda: f64,
    pub cells: Vec<EvalCell>,
}

/// Full cross-validated evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub folds: Vec<FoldEval>,
}

/// Seeded fold assignment: a shuffled permutation cut into `folds` nearly
/// equal chunks. Returns per-fold test index sets in dataset order.
fn fold_partition(k: usize, folds: u64, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..k).collect();
    SplitMix64::new(derive_seed(seed, "folds", &[])).shuffle(&mut order);
    (0..folds)
        .map(|f| {
            let lo = (f as usize * k) / folds as usize;
            let hi = ((f as usize + 1) * k) / folds as usize;
            let mut test: Vec<usize> = order[lo..hi].to_vec();
            test.sort_unstable();
            test
        })
        .collect()
}

/// Cross-validated policy evaluation over every (rate, burst) pair.
pub fn kfold_eval(data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", cfg.folds)));
    }
    if cfg.folds as usize > data.len() {
        return Err(Error::InvalidConfig(format!(
            "{} folds cannot partition {} samples",
            cfg.folds,
            data.len()
        )));
    }
    if cfg.rates.is_empty() || cfg.bursts.is_empty() {
        return Err(Error::InvalidConfig("need at least one rate and one burst".into()));
    }

    // Fold-independent references: the always-weak and always-strong curves
    // are properties of the whole dataset, not of any particular split.
    let weak_only = data.mean_weak_loss()?;
    let strong_only = data.mean_strong_loss()?;

    let partitions = fold_partition(data.len(), cfg.folds, cfg.seed);
    let mut folds = Vec::with_capacity(cfg.folds as usize);
    for (f, test_idx) in partitions.iter().enumerate() {
        let in_test: std::collections::HashSet<usize> = test_idx.iter().copied().collect();
        let train_idx: Vec<usize> = (0..data.len()).filter(|i| !in_test.contains(i)).collect();
        let mut train = data.subset(&train_idx)?;
        let mut test = data.subset(test_idx)?;

        let map = fit_metric_map(&train, derive_seed(cfg.seed, "fold-fit", &[f as u64]), cfg.temperature)?;
        train.apply_metric_map(&map);
        test.apply_metric_map(&map);

        let fg = build_fg(&train)?;
        let sim_cfg = SimConfig {
            sequences: cfg.sequences,
            length: cfg.length,
            seed: derive_seed(cfg.seed, "eval-sim", &[f as u64]),
            ..Default::default()
        };

        let mut cells = Vec::with_capacity(cfg.rates.len() * cfg.bursts.len());
        for &rate in &cfg.rates {
            let threshold = naive_threshold(&train, rate)?;
            let lower_bound = lower_bound_loss(&test, rate)?;
            for &burst in &cfg.bursts {
                let bucket = reduce_bucket(rate, burst)?;
                let policy = solve_policy(&fg, &bucket, cfg.gamma)?;
                let mdp = simulate(&test, &SimPolicy::Mdp(&policy), &sim_cfg)?;
                let naive =
                    simulate(&test, &SimPolicy::Naive { threshold, bucket }, &sim_cfg)?;
                cells.push(EvalCell {
                    rate,
                    burst,
                    mdp,
                    naive,
                    naive_threshold: threshold,
                    lower_bound,
                    weak_only,
                    strong_only,
                });
            }
        }
        folds.push(FoldEval {
            fold: f as u64,
            train_size: train.len(),
            test_size: test.len(),
            lambda: map.lambda(),
            cells,
        });
    }
    Ok(EvalReport { config: cfg.clone(), folds })
}

/// Which end of the metric ranking to delete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbSide {
    Highest,
    Lowest,
}

impl std::str::FromStr for PerturbSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "highest" => Ok(Self::Highest),
            "lowest" => Ok(Self::Lowest),
            other => Err(Error::InvalidConfig(format!(
                "unknown side `{other}` (expected highest or lowest)"
            ))),
        }
    }
}

impl std::fmt::Display for PerturbSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Highest => "highest",
            Self::Lowest => "lowest",
        })
    }
}

/// Removes the `fraction` of samples with the highest or lowest metric,
/// keeping the survivors in dataset order. Metric ties keep earlier samples
/// closer to the middle of the ranking.
pub fn perturb_training(data: &Dataset, fraction: f64, side: PerturbSide) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "removal fraction must be in [0, 1), got {fraction}"
        )));
    }
    let metrics = data.metrics()?;
    let k = data.len();
    let cut = (fraction * k as f64).floor() as usize;
    if cut == 0 {
        return Ok(data.clone());
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| metrics[a].total_cmp(&metrics[b]));
    let mut keep: Vec<usize> = match side {
        PerturbSide::Highest => order[..k - cut].to_vec(),
        PerturbSide::Lowest => order[cut..].to_vec(),
    };
    keep.sort_unstable();
    data.subset(&keep)
}
