//! One function per subcommand. All paths come from [`Settings`]; everything
//! printed to stdout is deterministic for a fixed config.

use std::path::{Path, PathBuf};

use offload_core::{
    build_fg, default_burst_grid, default_rate_grid, fit_metric_map, grid_search_oversubscription,
    kfold_eval, lower_bound_loss, naive_threshold, offload_odds, perturb_training,
    read_dataset_csv, read_dataset_jsonl, save_json, simulate, simulate_multi, solve_policy_with_stats,
    synthesize, write_dataset_csv, write_eval_csv, write_grid_csv, write_multi_csv, write_odds_csv,
    write_sim_csv, write_token_histogram_csv, Dataset, Error, EvalCell, EvalConfig, MetricMap,
    MultiConfig, Result, SimConfig, SimPolicy, SynthSpec,
};

use crate::config::{DataFormat, Settings};

/// Loads the dataset named by the settings, returning it together with the
/// softmax temperature fitted during ingestion (1 when not calibrating).
fn load_dataset(s: &Settings) -> Result<(Dataset, f64)> {
    let path = s.dataset_path()?;
    let with_path = |e: Error| match e {
        Error::Io(_) | Error::Csv(_) => {
            Error::InvalidConfig(format!("dataset {}: {e}", path.display()))
        }
        other => other,
    };
    match s.format {
        DataFormat::Csv => Ok((read_dataset_csv(path).map_err(with_path)?, 1.0)),
        DataFormat::Jsonl => {
            let raw = read_dataset_jsonl(path, s.loss, s.calibrate).map_err(with_path)?;
            Ok((raw.dataset, raw.temperature))
        }
    }
}

/// Loads the dataset and fits its metric map, leaving metrics applied.
fn fitted(s: &Settings) -> Result<(Dataset, MetricMap)> {
    let (mut data, temperature) = load_dataset(s)?;
    let map = fit_metric_map(&data, s.seed, temperature)?;
    data.apply_metric_map(&map);
    Ok((data, map))
}

fn ensure_out_dir(s: &Settings) -> Result<&Path> {
    std::fs::create_dir_all(&s.out_dir)?;
    Ok(&s.out_dir)
}

/// Rational parameters appear in file names with `/` flattened to `-`.
fn file_tag(r: impl std::fmt::Display) -> String {
    r.to_string().replace('/', "-")
}

pub fn gen(s: &Settings) -> Result<()> {
    let spec = SynthSpec { n: s.n as usize, seed: s.seed, ..Default::default() };
    let data = synthesize(&spec)?;
    let path = s.dataset_path()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_dataset_csv(path, &data)?;
    println!("wrote {} synthetic samples to {}", data.len(), path.display());
    Ok(())
}

pub fn ingest_check(s: &Settings) -> Result<()> {
    let (data, temperature) = load_dataset(s)?;
    let entropies = data.entropies();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &h in &entropies {
        lo = lo.min(h);
        hi = hi.max(h);
    }
    let mean_reward = data.rewards().iter().sum::<f64>() / data.len() as f64;
    println!("dataset: {}", s.dataset_path()?.display());
    println!("samples: {}", data.len());
    println!("entropy range: [{lo:.6}, {hi:.6}]");
    println!("mean weak loss: {:.6}", data.mean_weak_loss()?);
    println!("mean strong loss: {:.6}", data.mean_strong_loss()?);
    println!("mean reward: {mean_reward:.6}");
    println!("temperature: {temperature:.6}");
    Ok(())
}

pub fn fit_metric(s: &Settings) -> Result<()> {
    let (_, map) = fitted(s)?;
    let out = ensure_out_dir(s)?;
    let path = out.join("metric_map.json");
    save_json(&path, &map)?;
    println!(
        "fitted metric map: lambda {}, temperature {}, {} knots",
        map.lambda(),
        map.temperature(),
        map.h_grid().len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn solve(s: &Settings) -> Result<()> {
    let (data, _) = fitted(s)?;
    let fg = build_fg(&data)?;
    let out = ensure_out_dir(s)?;
    for &rate in &s.rates {
        for &burst in &s.bursts {
            let bucket = offload_core::reduce_bucket(rate, burst)?;
            let (policy, stats) = solve_policy_with_stats(&fg, &bucket, s.gamma)?;
            let path = out.join(format!("policy_r{}_b{}.json", file_tag(rate), file_tag(burst)));
            save_json(&path, &policy)?;
            println!(
                "solved r={rate} b={burst} {bucket} in {} sweeps; wrote {}",
                stats.sweeps,
                path.display()
            );
        }
    }
    Ok(())
}

pub fn simulate_cmd(s: &Settings) -> Result<()> {
    if s.rates.len() != 1 || s.bursts.len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "simulate needs exactly one r and one b, got {} x {} (use eval for grids)",
            s.rates.len(),
            s.bursts.len()
        )));
    }
    let (rate, burst) = (s.rates[0], s.bursts[0]);
    let (data, _) = fitted(s)?;
    let fg = build_fg(&data)?;
    let bucket = offload_core::reduce_bucket(rate, burst)?;
    let (policy, _) = solve_policy_with_stats(&fg, &bucket, s.gamma)?;
    let threshold = naive_threshold(&data, rate)?;
    let cfg = SimConfig {
        sequences: s.sequences,
        length: s.length,
        seed: s.seed,
        metric_bins: s.bins,
        record_sends: false,
    };
    let mdp = simulate(&data, &SimPolicy::Mdp(&policy), &cfg)?;
    let naive = simulate(&data, &SimPolicy::Naive { threshold, bucket }, &cfg)?;
    let odds = offload_odds(&data, &SimPolicy::Mdp(&policy), &cfg)?;
    let cell = EvalCell {
        rate,
        burst,
        naive_threshold: threshold,
        lower_bound: lower_bound_loss(&data, rate)?,
        weak_only: data.mean_weak_loss()?,
        strong_only: data.mean_strong_loss()?,
        mdp,
        naive,
    };

    let out = ensure_out_dir(s)?;
    save_json(out.join("sim_report.json"), &cell)?;
    write_sim_csv(out.join("sim_report.csv"), &cell)?;
    write_token_histogram_csv(out.join("token_histogram.csv"), &cell.mdp.token_histogram)?;
    write_odds_csv(out.join("offload_odds.csv"), &odds)?;
    println!(
        "r={rate} b={burst}: mdp loss {:.6} (rate {:.4}), naive loss {:.6}, bound {:.6}",
        cell.mdp.avg_loss, cell.mdp.realized_rate, cell.naive.avg_loss, cell.lower_bound
    );
    println!("wrote {}", out.join("sim_report.json").display());
    Ok(())
}

fn multi_config(s: &Settings) -> MultiConfig {
    MultiConfig {
        n_devices: s.devices,
        r_tot: s.r_tot,
        b_tot: s.b_tot,
        gamma: s.gamma,
        sequences: s.sequences,
        length: s.length,
        seed: s.seed,
        device_rate: s.r_prime,
        device_burst: s.b_prime,
        record_sends: false,
    }
}

pub fn multi_sim(s: &Settings) -> Result<()> {
    let (data, _) = fitted(s)?;
    let report = simulate_multi(&data, &data, s.strategy, &multi_config(s))?;
    let out = ensure_out_dir(s)?;
    save_json(out.join("multi_report.json"), &report)?;
    write_multi_csv(out.join("multi_report.csv"), &report)?;
    println!(
        "{} devices, strategy {}: loss {:.6}, rate {:.4}, drops {}",
        report.n_devices, report.strategy, report.avg_loss, report.realized_rate, report.switch_drops
    );
    println!("wrote {}", out.join("multi_report.json").display());
    Ok(())
}

pub fn grid_search(s: &Settings) -> Result<()> {
    let (data, _) = fitted(s)?;
    let rates = s.r_grid.clone().unwrap_or_else(default_rate_grid);
    let bursts = s.b_grid.clone().unwrap_or_else(default_burst_grid);
    let report = grid_search_oversubscription(&data, &multi_config(s), &rates, &bursts)?;
    let out = ensure_out_dir(s)?;
    save_json(out.join("grid_best.json"), &report)?;
    write_grid_csv(out.join("grid_surface.csv"), &report)?;
    println!(
        "searched {} cells ({} skipped); best r'={} b'={} loss {:.6} (drop rate {:.4})",
        report.cells.len(),
        report.skipped.len(),
        report.best.r_prime,
        report.best.b_prime,
        report.best.avg_loss,
        report.best.switch_drop_rate
    );
    println!("wrote {}", out.join("grid_best.json").display());
    Ok(())
}

pub fn eval(s: &Settings) -> Result<()> {
    let (data, temperature) = load_dataset(s)?;
    let cfg = EvalConfig {
        folds: s.folds,
        rates: s.rates.clone(),
        bursts: s.bursts.clone(),
        gamma: s.gamma,
        sequences: s.sequences,
        length: s.length,
        seed: s.seed,
        temperature,
    };
    let report = kfold_eval(&data, &cfg)?;
    let out = ensure_out_dir(s)?;
    save_json(out.join("eval_report.json"), &report)?;
    write_eval_csv(out.join("eval_report.csv"), &report)?;
    let cells: usize = report.folds.iter().map(|f| f.cells.len()).sum();
    println!("evaluated {} folds, {} cells", report.folds.len(), cells);
    for fold in &report.folds {
        println!(
            "fold {}: train {}, test {}, lambda {}",
            fold.fold, fold.train_size, fold.test_size, fold.lambda
        );
    }
    println!("wrote {}", out.join("eval_report.json").display());
    Ok(())
}

pub fn perturb(s: &Settings) -> Result<()> {
    let (data, _) = fitted(s)?;
    let kept = perturb_training(&data, s.fraction, s.side)?;
    let out = ensure_out_dir(s)?;
    let path: PathBuf = out.join("perturbed.csv");
    write_dataset_csv(&path, &kept)?;
    println!(
        "removed {} of {} samples from the {} metric tail",
        data.len() - kept.len(),
        data.len(),
        s.side
    );
    println!("wrote {}", path.display());
    Ok(())
}
