//! Configuration resolution: defaults, then the TOML file, then flags.
//!
//! The config file is flat and every key has a flag of the same name, so a
//! committed experiment file and an ad-hoc command line express exactly the
//! same settings.

use std::path::PathBuf;

use clap::Args;
use offload_core::{Error, LossKind, MultiStrategy, PerturbSide, RationalParam, Result};
use serde::Deserialize;

/// Keys accepted in the config file. Unknown keys are rejected so typos
/// surface as input errors instead of silently keeping defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub loss: Option<String>,
    pub calibrate: Option<bool>,
    pub r: Option<Vec<String>>,
    pub b: Option<Vec<String>>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub folds: Option<u64>,
    pub sequences: Option<u64>,
    pub length: Option<u64>,
    pub bins: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub devices: Option<u64>,
    pub r_tot: Option<String>,
    pub b_tot: Option<String>,
    pub strategy: Option<String>,
    pub r_prime: Option<String>,
    pub b_prime: Option<String>,
    pub r_grid: Option<Vec<String>>,
    pub b_grid: Option<Vec<String>>,
    pub n: Option<u64>,
    pub fraction: Option<f64>,
    pub side: Option<String>,
}

/// Flag-level overrides; every field mirrors a [`FileConfig`] key.
#[derive(Debug, Args)]
pub struct Overrides {
    /// TOML config file providing any of the other flags as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file: read by most commands, written by `gen`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset format: csv (precomputed losses) or jsonl (raw probabilities).
    #[arg(long)]
    pub format: Option<String>,
    /// Loss kind for jsonl ingestion: top1, top5, or rank.
    #[arg(long)]
    pub loss: Option<String>,
    /// Fit a softmax temperature on jsonl ingestion.
    #[arg(long)]
    pub calibrate: Option<bool>,
    /// Offload rate grid, e.g. 1/20,1/10,1/4.
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<String>>,
    /// Bucket depth grid, e.g. 1,2,5 or 3/2.
    #[arg(long, value_delimiter = ',')]
    pub b: Option<Vec<String>>,
    /// Discount factor in [0, 1).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Root seed; all stage randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cross-validation folds for `eval`.
    #[arg(long)]
    pub folds: Option<u64>,
    /// Independent simulated sequences per cell.
    #[arg(long)]
    pub sequences: Option<u64>,
    /// Steps per simulated sequence.
    #[arg(long)]
    pub length: Option<u64>,
    /// Metric bins for the offload-odds table.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Directory receiving report files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Fleet size for multi-device commands.
    #[arg(long)]
    pub devices: Option<u64>,
    /// Total fleet offload rate.
    #[arg(long)]
    pub r_tot: Option<String>,
    /// Total fleet bucket depth.
    #[arg(long)]
    pub b_tot: Option<String>,
    /// Fleet strategy: individual, hierarchical, or smart.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Per-device rate override for the hierarchical strategy.
    #[arg(long)]
    pub r_prime: Option<String>,
    /// Per-device depth override for the hierarchical strategy.
    #[arg(long)]
    pub b_prime: Option<String>,
    /// Per-device rate grid for `grid-search`.
    #[arg(long, value_delimiter = ',')]
    pub r_grid: Option<Vec<String>>,
    /// Per-device depth grid for `grid-search`.
    #[arg(long, value_delimiter = ',')]
    pub b_grid: Option<Vec<String>>,
    /// Sample count for `gen`.
    #[arg(long)]
    pub n: Option<u64>,
    /// Fraction of training samples `perturb` removes.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Which metric tail `perturb` removes: highest or lowest.
    #[arg(long)]
    pub side: Option<String>,
}

/// Dataset file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => {
                Err(Error::InvalidConfig(format!("unknown format `{other}` (expected csv or jsonl)")))
            }
        }
    }
}

/// Fully resolved settings every command runs from.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: Option<PathBuf>,
    pub format: DataFormat,
    pub loss: LossKind,
    pub calibrate: bool,
    pub rates: Vec<RationalParam>,
    pub bursts: Vec<RationalParam>,
    pub gamma: f64,
    pub seed: u64,
    pub folds: u64,
    pub sequences: u64,
    pub length: u64,
    pub bins: usize,
    pub out_dir: PathBuf,
    pub devices: u64,
    pub r_tot: RationalParam,
    pub b_tot: RationalParam,
    pub strategy: MultiStrategy,
    pub r_prime: Option<RationalParam>,
    pub b_prime: Option<RationalParam>,
    pub r_grid: Option<Vec<RationalParam>>,
    pub b_grid: Option<Vec<RationalParam>>,
    pub n: u64,
    pub fraction: f64,
    pub side: PerturbSide,
}

fn parse_rationals(raw: &[String]) -> Result<Vec<RationalParam>> {
    raw.iter().map(|s| s.parse()).collect()
}

impl Settings {
    /// Resolves flags over file values over defaults.
    pub fn resolve(ov: &Overrides) -> Result<Self> {
        let file = match &ov.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str::<FileConfig>(&text).map_err(|e| {
                    Error::InvalidConfig(format!("config {}: {e}", path.display()))
                })?
            }
            None => FileConfig::default(),
        };

        let pick = |flag: &Option<String>, key: &Option<String>| flag.clone().or_else(|| key.clone());
        let rates = match ov.r.clone().or_else(|| file.r.clone()) {
            Some(raw) => parse_rationals(&raw)?,
            None => vec!["1/10".parse()?],
        };
        let bursts = match ov.b.clone().or_else(|| file.b.clone()) {
            Some(raw) => parse_rationals(&raw)?,
            None => vec!["2".parse()?],
        };
        let r_grid = match ov.r_grid.clone().or_else(|| file.r_grid.clone()) {
            Some(raw) => Some(parse_rationals(&raw)?),
            None => None,
        };
        let b_grid = match ov.b_grid.clone().or_else(|| file.b_grid.clone()) {
            Some(raw) => Some(parse_rationals(&raw)?),
            None => None,
        };

        Ok(Self {
            dataset: ov.dataset.clone().or(file.dataset),
            format: pick(&ov.format, &file.format).as_deref().unwrap_or("csv").parse()?,
            loss: pick(&ov.loss, &file.loss).as_deref().unwrap_or("top1").parse()?,
            calibrate: ov.calibrate.or(file.calibrate).unwrap_or(false),
            rates,
            bursts,
            gamma: ov.gamma.or(file.gamma).unwrap_or(0.99),
            seed: ov.seed.or(file.seed).unwrap_or(0),
            folds: ov.folds.or(file.folds).unwrap_or(3),
            sequences: ov.sequences.or(file.sequences).unwrap_or(20),
            length: ov.length.or(file.length).unwrap_or(20_000),
            bins: ov.bins.or(file.bins).unwrap_or(50),
            out_dir: ov.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("out")),
            devices: ov.devices.or(file.devices).unwrap_or(2),
            r_tot: pick(&ov.r_tot, &file.r_tot).as_deref().unwrap_or("1/5").parse()?,
            b_tot: pick(&ov.b_tot, &file.b_tot).as_deref().unwrap_or("2").parse()?,
            strategy: pick(&ov.strategy, &file.strategy).as_deref().unwrap_or("individual").parse()?,
            r_prime: pick(&ov.r_prime, &file.r_prime).as_deref().map(str::parse).transpose()?,
            b_prime: pick(&ov.b_prime, &file.b_prime).as_deref().map(str::parse).transpose()?,
            r_grid,
            b_grid,
            n: ov.n.or(file.n).unwrap_or(4000),
            fraction: ov.fraction.or(file.fraction).unwrap_or(0.1),
            side: pick(&ov.side, &file.side).as_deref().unwrap_or("lowest").parse()?,
        })
    }

    /// The dataset path, required by every command except pure help output.
    pub fn dataset_path(&self) -> Result<&PathBuf> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no dataset path (set `dataset` or --dataset)".into()))
    }
}
