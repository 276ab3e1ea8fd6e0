//! Offload-policy toolkit for confidence-scored classification streams under
//! token-bucket rate control.
//!
//! The pipeline: ingest or synthesize a dataset of weak/strong losses with
//! weak-model entropies; fit an entropy-to-expected-reward metric map; solve
//! a small MDP over the scaled token state for the optimal threshold policy;
//! then evaluate policies, baselines, and bounds in a deterministic
//! simulator, including multi-device multiplexing strategies behind a shared
//! uplink.

pub mod bucket;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mdp;
pub mod metric;
pub mod multi;
pub mod policy;
pub mod rational;
pub mod rng;
pub mod sim;
pub mod synth;

pub use bucket::{reduce_bucket, ScaledBucket};
pub use data::{loss, Dataset, LossKind, Sample};
pub use error::{Error, Result};
pub use experiment::{kfold_eval, perturb_training, EvalCell, EvalConfig, EvalReport, FoldEval, PerturbSide};
pub use io::{
    load_metric_map, load_policy, read_dataset_csv, read_dataset_jsonl, save_json,
    write_dataset_csv, write_eval_csv, write_grid_csv, write_multi_csv, write_odds_csv,
    write_sim_csv, write_token_histogram_csv,
    RawIngest, RawRecord,
};
pub use mdp::{build_fg, lower_bound_loss, naive_threshold, solve_policy, solve_policy_with_stats, EmpiricalFG};
pub use metric::{apply_temperature, calibrate_temperature, entropy, fit_metric_map, MetricMap, TemperatureFit};
pub use multi::{
    default_burst_grid, default_rate_grid, grid_search_oversubscription, simulate_hierarchical,
    simulate_individual, simulate_multi, simulate_smart, DeviceReport, GridCell, GridSearchReport,
    MultiConfig, MultiReport, MultiStrategy,
};
pub use policy::{apply_policy, PolicyTable, NEVER_SEND};
pub use rational::RationalParam;
pub use rng::{derive_seed, SplitMix64};
pub use sim::{audit_policer, audit_windows, offload_odds, simulate, OddsBin, SimConfig, SimPolicy, SimReport, TokenHistogram};
pub use synth::{synthesize, EntropyComponent, SynthSpec};
