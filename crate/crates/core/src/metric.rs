//! Offloading metric: expected reward as a function of predictive entropy.
//!
//! The metric map is a radial-basis kernel regression of observed rewards
//! against weak-model entropy, baked onto a uniform 1000-point grid and read
//! back with linear interpolation. Entropy is computed after optional
//! temperature calibration of the weak model.

use serde::{Deserialize, Serialize};

use crate::data::{validate_distribution, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Number of interpolation knots in a fitted map.
const GRID_POINTS: usize = 1000;

/// Kernel width candidates: powers of two from 2^-6 through 2^14.
const LAMBDA_EXPONENTS: std::ops::RangeInclusive<i32> = -6..=14;

/// Temperature search range; sharper than 1/20 or flatter than 20 is outside
/// anything a calibrated classifier produces.
const TEMP_LO: f64 = 0.05;
const TEMP_HI: f64 = 20.0;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    validate_distribution(probs)?;
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Renormalizes `probs` raised to `1/temperature`, computed in log space.
pub fn apply_temperature(probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    validate_distribution(probs)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
    }
    let scaled: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Result of temperature calibration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// Mean negative log-likelihood at the fitted temperature.
    pub mean_nll: f64,
}

/// Per-sample log-probabilities, with zero entries dropped.
struct LogProbs {
    logs: Vec<f64>,
    label_log: f64,
}

fn mean_nll(samples: &[LogProbs], temperature: f64) -> f64 {
    let inv = 1.0 / temperature;
    let mut total = 0.0;
    for s in samples {
        let mut argmax = 0;
        let mut max = f64::NEG_INFINITY;
        for (i, &l) in s.logs.iter().enumerate() {
            if l * inv > max {
                max = l * inv;
                argmax = i;
            }
        }
        // log-sum-exp with the leading term split off through ln_1p, so a
        // near-one softmax keeps a resolvable (tiny, positive) NLL instead
        // of rounding to zero.
        let mut rest = 0.0;
        for (i, &l) in s.logs.iter().enumerate() {
            if i != argmax {
                rest += (l * inv - max).exp();
            }
        }
        total += max + rest.ln_1p() - s.label_log * inv;
    }
    total / samples.len() as f64
}

/// Fits a single softmax temperature by minimizing mean NLL over a log-spaced
/// grid in `[0.05, 20]`, refined by golden-section search to a relative
/// tolerance of 1e-4. Exact objective ties resolve toward `T = 1`.
pub fn calibrate_temperature(probs: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureFit> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "calibration needs matching non-empty inputs, got {} distributions and {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut samples = Vec::with_capacity(probs.len());
    for (i, (p, &y)) in probs.iter().zip(labels).enumerate() {
        validate_distribution(p)?;
        if y >= p.len() {
            return Err(Error::InvalidDistribution(format!(
                "label {y} out of range for {} classes",
                p.len()
            )));
        }
        if p[y] <= 0.0 {
            return Err(Error::CalibrationInfeasible { id: format!("#{i}") });
        }
        let logs: Vec<f64> = p.iter().filter(|&&v| v > 0.0).map(|&v| v.ln()).collect();
        samples.push(LogProbs { logs, label_log: p[y].ln() });
    }

    // 33 grid points, log-spaced with T = 1 at the middle point.
    let lo = TEMP_LO.ln();
    let hi = TEMP_HI.ln();
    let n = 33usize;
    let step = (hi - lo) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|i| (lo + i as f64 * step).exp()).collect();
    let nlls: Vec<f64> = ts.iter().map(|&t| mean_nll(&samples, t)).collect();

    let min_nll = nlls.iter().cloned().fold(f64::INFINITY, f64::min);
    let mid = (n - 1) / 2;
    let mut best = 0usize;
    let mut best_dist = usize::MAX;
    for (i, &v) in nlls.iter().enumerate() {
        let dist = i.abs_diff(mid);
        if v == min_nll && dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }

    // Golden-section refinement over ln T in the bracket around the winner.
    let mut a = if best == 0 { ts[0].ln() } else { ts[best - 1].ln() };
    let mut b = if best == n - 1 { ts[n - 1].ln() } else { ts[best + 1].ln() };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = mean_nll(&samples, x1.exp());
    let mut f2 = mean_nll(&samples, x2.exp());
    while b - a > 1e-4 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = mean_nll(&samples, x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = mean_nll(&samples, x2.exp());
        }
    }
    let (mut t_star, mut nll_star) = if f1 <= f2 { (x1.exp(), f1) } else { (x2.exp(), f2) };

    let nll_one = mean_nll(&samples, 1.0);
    if nll_one <= nll_star + 1e-12 * (1.0 + nll_star.abs()) {
        t_star = 1.0;
        nll_star = nll_one;
    }
    Ok(TemperatureFit { temperature: t_star, mean_nll: nll_star })
}

/// Kernel regression of rewards on entropies, evaluated at `x`.
///
/// Weights are shifted by the largest exponent before exponentiation so the
/// denominator never underflows to zero, which matters for large widths.
pub(crate) fn kernel_regress(hs: &[f64], rs: &[f64], lambda: f64, x: f64) -> f64 {
    debug_assert_eq!(hs.len(), rs.len());
    let mut emax = f64::NEG_INFINITY;
    for &h in hs {
        let d = x - h;
        emax = emax.max(-lambda * d * d);
    }
    let mut wsum = 0.0;
    let mut rsum = 0.0;
    for (&h, &r) in hs.iter().zip(rs) {
        let d = x - h;
        let w = (-lambda * d * d - emax).exp();
        wsum += w;
        rsum += r * w;
    }
    rsum / wsum
}

/// Fitted entropy-to-expected-reward map on a uniform interpolation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMap {
    lambda: f64,
    temperature: f64,
    h_grid: Vec<f64>,
    f_values: Vec<f64>,
}

impl MetricMap {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn h_grid(&self) -> &[f64] {
        &self.h_grid
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    /// Checks the grid is strictly increasing, values are finite, and the
    /// widths are positive; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.h_grid.len() < 2 || self.h_grid.len() != self.f_values.len() {
            return Err(Error::InvalidConfig(format!(
                "metric map needs matching grids, got {} knots and {} values",
                self.h_grid.len(),
                self.f_values.len()
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("metric map width {} must be positive", self.lambda)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "metric map temperature {} must be positive",
                self.temperature
            )));
        }
        for w in self.h_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig("metric map grid is not strictly increasing".into()));
            }
        }
        if self.f_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("metric map has non-finite values".into()));
        }
        Ok(())
    }

    /// Metric for one entropy: linear interpolation on the grid, clamped to
    /// the end values outside it. Knot queries return stored values exactly.
    pub fn metric_of(&self, h: f64) -> f64 {
        let g = &self.h_grid;
        let f = &self.f_values;
        if h <= g[0] {
            return f[0];
        }
        let last = g.len() - 1;
        if h >= g[last] {
            return f[last];
        }
        let hi = g.partition_point(|&v| v <= h);
        let lo = hi - 1;
        let t = (h - g[lo]) / (g[hi] - g[lo]);
        f[lo] * (1.0 - t) + f[hi] * t
    }
}

/// Fits the metric map on a training set.
///
/// The kernel width is chosen from powers of two by a seeded 50/50 split:
/// each candidate is fit on one half and scored by mean squared error against
/// held-out rewards, smallest width winning ties. The final regression uses
/// the whole training set, evaluated on 1000 uniform knots spanning the
/// observed entropy range. If every entropy is identical the map degenerates
/// to the constant mean reward.
pub fn fit_metric_map(train: &Dataset, seed: u64, temperature: f64) -> Result<MetricMap> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hs = train.entropies();
    let rs = train.rewards();
    let hmin = hs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hmax = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let degenerate = |center: f64| -> MetricMap {
        let mean = rs.iter().sum::<f64>() / rs.len() as f64;
        let lo = center - 0.5;
        let step = 1.0 / (GRID_POINTS - 1) as f64;
        let h_grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + i as f64 * step).collect();
        MetricMap { lambda: 1.0, temperature, h_grid, f_values: vec![mean; GRID_POINTS] }
    };
    if hmax <= hmin {
        return Ok(degenerate(hmin));
    }

    let mut indices: Vec<usize> = (0..hs.len()).collect();
    let mut rng = SplitMix64::new(derive_seed(seed, "metric-cv", &[]));
    rng.shuffle(&mut indices);
    let half = hs.len() / 2;
    let (ia, ib) = indices.split_at(half);
    let ha: Vec<f64> = ia.iter().map(|&i| hs[i]).collect();
    let ra: Vec<f64> = ia.iter().map(|&i| rs[i]).collect();

    let mut best_lambda = f64::NAN;
    let mut best_mse = f64::INFINITY;
    for k in LAMBDA_EXPONENTS {
        let lambda = (2f64).powi(k);
        let mse = if ha.is_empty() {
            f64::INFINITY
        } else {
            ib.iter()
                .map(|&i| {
                    let e = kernel_regress(&ha, &ra, lambda, hs[i]) - rs[i];
                    e * e
                })
                .sum::<f64>()
                / ib.len() as f64
        };
        if mse < best_mse {
            best_mse = mse;
            best_lambda = lambda;
        }
    }
    if !best_lambda.is_finite() {
        // A one-sample split can not be cross-validated; any width describes
        // the data equally well.
        best_lambda = 1.0;
    }

    let step = (hmax - hmin) / (GRID_POINTS - 1) as f64;
    let mut h_grid: Vec<f64> = (0..GRID_POINTS).map(|i| hmin + i as f64 * step).collect();
    h_grid[GRID_POINTS - 1] = hmax;
    if h_grid.windows(2).any(|w| !(w[1] > w[0])) {
        // The entropy range is too narrow to carve into distinct knots.
        return Ok(degenerate(hmin));
    }
    let f_values: Vec<f64> = h_grid.iter().map(|&x| kernel_regress(&hs, &rs, best_lambda, x)).collect();
    let map = MetricMap { lambda: best_lambda, temperature, h_grid, f_values };
    map.validate()?;
    Ok(map)
}
