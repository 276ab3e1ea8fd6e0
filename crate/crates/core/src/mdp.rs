//! Optimal threshold policies by value iteration on the token state.
//!
//! The training set induces empirical tail functions over the metric: `F(t)`
//! is the fraction of samples whose metric reaches `t`, `G(t)` the mean
//! reward contributed by those samples. Value iteration then solves, for
//! every sendable token state, the trade-off between the expected reward of
//! offloading now and the discounted drop in future value from spending a
//! token. Only observed metric values (plus the never-send sentinel) can be
//! optimal thresholds, so each state reduces to an argmax over candidates.

use crate::bucket::ScaledBucket;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::policy::{PolicyTable, NEVER_SEND};
use crate::rational::RationalParam;

/// Sweep cap; unreachable for any discount below one, guards misuse.
const MAX_SWEEPS: u64 = 1_000_000;

/// Sorted empirical view of (metric, reward) pairs with suffix-sum queries.
#[derive(Debug, Clone)]
pub struct EmpiricalFG {
    /// Metrics sorted ascending.
    metrics: Vec<f64>,
    /// `suffix_reward[i]` is the reward sum over `metrics[i..]`; one longer
    /// than `metrics`, ending in 0.
    suffix_reward: Vec<f64>,
}

/// Builds the empirical tail functions from a training set with fitted
/// metrics.
pub fn build_fg(train: &Dataset) -> Result<EmpiricalFG> {
    let metrics = train.metrics()?;
    let rewards = train.rewards();
    let mut order: Vec<usize> = (0..metrics.len()).collect();
    order.sort_by(|&a, &b| metrics[a].total_cmp(&metrics[b]));
    let sorted_metrics: Vec<f64> = order.iter().map(|&i| metrics[i]).collect();
    let mut suffix_reward = vec![0.0; metrics.len() + 1];
    for i in (0..metrics.len()).rev() {
        suffix_reward[i] = suffix_reward[i + 1] + rewards[order[i]];
    }
    Ok(EmpiricalFG { metrics: sorted_metrics, suffix_reward })
}

impl EmpiricalFG {
    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    fn first_at_or_above(&self, theta: f64) -> usize {
        self.metrics.partition_point(|&m| m < theta)
    }

    /// Fraction of training samples whose metric is at least `theta`.
    pub fn f(&self, theta: f64) -> f64 {
        (self.len() - self.first_at_or_above(theta)) as f64 / self.len() as f64
    }

    /// Mean reward restricted to samples whose metric is at least `theta`.
    pub fn g(&self, theta: f64) -> f64 {
        self.suffix_reward[self.first_at_or_above(theta)] / self.len() as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.suffix_reward[0] / self.len() as f64
    }

    /// Distinct metric values ascending, each with its tail count and tail
    /// reward sum, followed by the never-send sentinel with an empty tail.
    fn candidates(&self) -> Candidates {
        let mut thetas = Vec::new();
        let mut counts = Vec::new();
        let mut tail_rewards = Vec::new();
        let k = self.len();
        let mut i = 0;
        while i < k {
            thetas.push(self.metrics[i]);
            counts.push((k - i) as f64);
            tail_rewards.push(self.suffix_reward[i]);
            let mut j = i + 1;
            while j < k && self.metrics[j] == self.metrics[i] {
                j += 1;
            }
            i = j;
        }
        thetas.push(NEVER_SEND);
        counts.push(0.0);
        tail_rewards.push(0.0);
        Candidates { thetas, counts, tail_rewards, total: k as f64 }
    }
}

struct Candidates {
    thetas: Vec<f64>,
    /// Tail sample counts as f64, exactly representable.
    counts: Vec<f64>,
    tail_rewards: Vec<f64>,
    total: f64,
}

/// Residual trace of one solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub sweeps: u64,
    /// Sup-norm change of the value vector after each sweep.
    pub residuals: Vec<f64>,
}

/// Solves for the optimal threshold policy, also returning the residual
/// trace.
///
/// Jacobi sweeps run over token states in descending order starting from the
/// zero vector. Non-sendable states pass their discounted refill value
/// through; sendable states pick the candidate threshold maximizing expected
/// reward minus the discounted future-value cost of the spent token, ties
/// resolving toward the largest threshold. Iteration stops once the residual
/// drops below `1e-10 * (1 - gamma)` with an unchanged threshold choice.
pub fn solve_policy_with_stats(
    fg: &EmpiricalFG,
    bucket: &ScaledBucket,
    gamma: f64,
) -> Result<(PolicyTable, SolveStats)> {
    if fg.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("discount {gamma} must be in [0, 1)")));
    }
    bucket.check_solvable()?;

    let cands = fg.candidates();
    let ncands = cands.thetas.len();
    let gs: Vec<f64> = cands.tail_rewards.iter().map(|&s| s / cands.total).collect();
    let fs: Vec<f64> = cands.counts.iter().map(|&c| c / cands.total).collect();

    let (p, q, m) = (bucket.p(), bucket.q(), bucket.m());
    let nstates = bucket.state_count() as usize;
    let idx = |n: u64| (n - q) as usize;
    // Successor indices for each sendable state, send first.
    let transitions: Vec<(usize, usize)> = (p..=m)
        .map(|n| (idx(m.min(n - p + q)), idx(m.min(n + q))))
        .collect();

    let mut v_prev = vec![0.0f64; nstates];
    let mut v_next = vec![0.0f64; nstates];
    let mut choice = vec![usize::MAX; transitions.len()];
    let mut prev_choice = vec![usize::MAX; transitions.len()];
    let tol = 1e-10 * (1.0 - gamma);
    let mut residuals = Vec::new();

    for sweep in 1..=MAX_SWEEPS {
        for n in (q..=m).rev() {
            let i = idx(n);
            if n < p {
                v_next[i] = gamma * v_prev[idx(m.min(n + q))];
                continue;
            }
            let (send, keep) = transitions[(n - p) as usize];
            let vs = v_prev[send];
            let vk = v_prev[keep];
            let u = gamma * (vk - vs);
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for c in 0..ncands {
                let score = cands.tail_rewards[c] - cands.counts[c] * u;
                if score >= best_score {
                    best_score = score;
                    best = c;
                }
            }
            choice[(n - p) as usize] = best;
            v_next[i] = gs[best] + gamma * (fs[best] * vs + (1.0 - fs[best]) * vk);
        }

        let mut residual = 0.0f64;
        for (a, b) in v_next.iter().zip(&v_prev) {
            residual = residual.max((a - b).abs());
        }
        residuals.push(residual);
        std::mem::swap(&mut v_prev, &mut v_next);
        if residual < tol && choice == prev_choice {
            let thresholds: Vec<f64> = choice.iter().map(|&c| cands.thetas[c]).collect();
            let table = PolicyTable::new(*bucket, gamma, thresholds, v_prev)?;
            return Ok((table, SolveStats { sweeps: sweep, residuals }));
        }
        prev_choice.copy_from_slice(&choice);
    }
    Err(Error::NonConvergence { sweeps: MAX_SWEEPS, residual: *residuals.last().unwrap() })
}

/// Solves for the optimal threshold policy.
pub fn solve_policy(fg: &EmpiricalFG, bucket: &ScaledBucket, gamma: f64) -> Result<PolicyTable> {
    solve_policy_with_stats(fg, bucket, gamma).map(|(t, _)| t)
}

/// Rate-matched fixed threshold: the training metric at the nearest-rank
/// `(1 - r)` percentile, so a fraction `r` of training samples sits at or
/// above it.
pub fn naive_threshold(train: &Dataset, r: RationalParam) -> Result<f64> {
    let one = RationalParam::new(1, 1)?;
    if r.is_zero() || r >= one {
        return Err(Error::InvalidConfig(format!("rate {r} is outside (0, 1)")));
    }
    let mut metrics = train.metrics()?;
    metrics.sort_by(f64::total_cmp);
    let k = metrics.len() as u128;
    let rank = ((r.den() - r.num()) as u128 * k).div_ceil(r.den() as u128) as usize;
    debug_assert!(rank >= 1);
    Ok(metrics[rank - 1])
}

/// Clairvoyant reference: mean weak loss minus the best reward sum any
/// policy limited to `floor(r * K)` offloads could collect, per sample.
/// Metric ties rank by ascending id. `r = 1` is allowed and recovers the
/// strong-only loss.
pub fn lower_bound_loss(test: &Dataset, r: RationalParam) -> Result<f64> {
    let one = RationalParam::new(1, 1)?;
    if r.is_zero() || r > one {
        return Err(Error::InvalidConfig(format!("rate {r} is outside (0, 1]")));
    }
    let metrics = test.metrics()?;
    let k = test.len();
    let budget = (r.num() as u128 * k as u128 / r.den() as u128) as usize;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        metrics[b]
            .total_cmp(&metrics[a])
            .then_with(|| test.samples()[a].id.cmp(&test.samples()[b].id))
    });
    let captured: f64 = order.iter().take(budget).map(|&i| test.samples()[i].reward()).sum();
    Ok(test.mean_weak_loss()? - captured / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bucket::reduce_bucket;
    use crate::data::Sample;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn dataset(pairs: &[(f64, f64)]) -> Dataset {
        let samples = pairs
            .iter()
            .enumerate()
            .map(|(i, &(m, r))| {
                let mut s = Sample::new(format!("s{i:04}"), 0.5, r.max(0.0), (-r).max(0.0));
                s.metric = Some(m);
                s
            })
            .collect();
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn tail_functions_match_hand_worked_values() {
        let train = dataset(&[(0.1, 0.0), (0.2, 1.0), (0.3, 0.0), (0.4, 1.0)]);
        let fg = build_fg(&train).unwrap();
        assert_eq!(fg.f(0.25), 0.5);
        assert_eq!(fg.g(0.25), 0.25);
        assert_eq!(fg.f(0.5), 0.0);
        assert_eq!(fg.g(0.5), 0.0);
        assert_eq!(fg.g(f64::NEG_INFINITY), fg.mean_reward());
    }

    /// Suffix-sum queries must agree with a direct scan of the raw pairs.
    #[test]
    fn queries_match_direct_scan() {
        let mut rng = SplitMix64::new(11);
        let pairs: Vec<(f64, f64)> =
            (0..1000).map(|_| (rng.u01(), if rng.bernoulli(0.3) { 1.0 } else { 0.0 })).collect();
        let train = dataset(&pairs);
        let fg = build_fg(&train).unwrap();
        for t in 0..100 {
            let theta = -0.05 + 1.1 * t as f64 / 99.0;
            let count = pairs.iter().filter(|&&(m, _)| m >= theta).count();
            let reward: f64 = pairs.iter().filter(|&&(m, _)| m >= theta).map(|&(_, r)| r).sum();
            assert_eq!(fg.f(theta), count as f64 / 1000.0);
            assert_eq!(fg.g(theta), reward / 1000.0);
        }
    }

    #[test]
    fn myopic_single_metric_instance() {
        let train = dataset(&[(0.5, 1.0)]);
        let fg = build_fg(&train).unwrap();
        let bucket = ScaledBucket::new(2, 1, 2).unwrap();
        let table = solve_policy(&fg, &bucket, 0.0).unwrap();
        assert_eq!(table.thresholds(), &[0.5]);
        assert_eq!(table.value_at(2), 1.0);
        assert_eq!(table.value_at(1), 0.0);
    }

    #[test]
    fn nonpositive_rewards_never_send() {
        let train = dataset(&[(0.1, 0.0), (0.4, -1.0), (0.8, 0.0), (0.9, -1.0)]);
        let fg = build_fg(&train).unwrap();
        let bucket = reduce_bucket("1/3".parse().unwrap(), "2".parse().unwrap()).unwrap();
        let table = solve_policy(&fg, &bucket, 0.9).unwrap();
        assert!(table.thresholds().iter().all(|&t| t == NEVER_SEND), "{:?}", table.thresholds());
    }

    /// Exact discounted value of a fixed threshold assignment, by Gaussian
    /// elimination on the linear policy-evaluation system.
    fn evaluate_assignment(
        fg: &EmpiricalFG,
        bucket: &ScaledBucket,
        gamma: f64,
        assignment: &[f64],
    ) -> Vec<f64> {
        let (p, q, m) = (bucket.p(), bucket.q(), bucket.m());
        let n = bucket.state_count() as usize;
        let idx = |s: u64| (s - q) as usize;
        let mut a = vec![vec![0.0f64; n + 1]; n];
        for s in q..=m {
            let i = idx(s);
            a[i][i] += 1.0;
            if s < p {
                a[i][idx(m.min(s + q))] -= gamma;
            } else {
                let theta = assignment[(s - p) as usize];
                let (f, g) = (fg.f(theta), fg.g(theta));
                a[i][idx(m.min(s - p + q))] -= gamma * f;
                a[i][idx(m.min(s + q))] -= gamma * (1.0 - f);
                a[i][n] = g;
            }
        }
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, pivot);
            let d = a[col][col];
            for j in col..=n {
                a[col][j] /= d;
            }
            for row in 0..n {
                if row != col && a[row][col] != 0.0 {
                    let factor = a[row][col];
                    for j in col..=n {
                        a[row][j] -= factor * a[col][j];
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n]).collect()
    }

    /// Value iteration must match exhaustive enumeration of all candidate
    /// threshold assignments, each scored by exact policy evaluation.
    #[test]
    fn matches_exhaustive_enumeration_on_tiny_instances() {
        let mut rng = SplitMix64::new(2024);
        for trial in 0..40 {
            let k = 1 + (rng.index(5) as usize);
            let pairs: Vec<(f64, f64)> = (0..k)
                .map(|_| ((rng.index(9) as f64) / 8.0, (rng.index(5) as f64) - 1.0))
                .collect();
            let train = dataset(&pairs);
            let fg = build_fg(&train).unwrap();
            let p = 2 + rng.index(3);
            let q = 1 + rng.index(p - 1);
            let m = p + rng.index(3);
            let bucket = ScaledBucket::new(p, q, m).unwrap();
            if bucket.sendable_state_count() > 4 {
                continue;
            }
            for gamma in [0.0, 0.5, 0.9] {
                let table = solve_policy(&fg, &bucket, gamma).unwrap();

                let cands: Vec<f64> = {
                    let mut c: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                    c.sort_by(f64::total_cmp);
                    c.dedup();
                    c.push(NEVER_SEND);
                    c
                };
                let slots = bucket.sendable_state_count() as usize;
                let mut best: Option<Vec<f64>> = None;
                let mut assignment = vec![0usize; slots];
                loop {
                    let thetas: Vec<f64> = assignment.iter().map(|&c| cands[c]).collect();
                    let v = evaluate_assignment(&fg, &bucket, gamma, &thetas);
                    best = Some(match best {
                        None => v,
                        Some(b) => {
                            if v.iter().zip(&b).all(|(x, y)| x >= y) {
                                v
                            } else {
                                b
                            }
                        }
                    });
                    let mut carry = 0;
                    while carry < slots {
                        assignment[carry] += 1;
                        if assignment[carry] < cands.len() {
                            break;
                        }
                        assignment[carry] = 0;
                        carry += 1;
                    }
                    if carry == slots {
                        break;
                    }
                }
                let best = best.unwrap();
                for (s, (&got, &want)) in table.values().iter().zip(&best).enumerate() {
                    assert!(
                        (got - want).abs() < 1e-8,
                        "trial {trial} gamma {gamma} state {s}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn residuals_contract_geometrically() {
        let mut rng = SplitMix64::new(8);
        let pairs: Vec<(f64, f64)> =
            (0..200).map(|_| (rng.u01(), if rng.bernoulli(0.4) { 1.0 } else { 0.0 })).collect();
        let train = dataset(&pairs);
        let fg = build_fg(&train).unwrap();
        let bucket = reduce_bucket("1/4".parse().unwrap(), "3".parse().unwrap()).unwrap();
        let gamma = 0.9;
        let (_, stats) = solve_policy_with_stats(&fg, &bucket, gamma).unwrap();
        for w in stats.residuals.windows(2) {
            assert!(w[1] <= gamma * w[0] + 1e-13, "residuals {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn values_rise_with_tokens_and_thresholds_come_from_training() {
        let mut rng = SplitMix64::new(21);
        let pairs: Vec<(f64, f64)> =
            (0..300).map(|_| (rng.u01(), (rng.index(3) as f64) - 1.0)).collect();
        let train = dataset(&pairs);
        let fg = build_fg(&train).unwrap();
        let bucket = reduce_bucket("2/5".parse().unwrap(), "2".parse().unwrap()).unwrap();
        let table = solve_policy(&fg, &bucket, 0.95).unwrap();
        for w in table.values().windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        let metric_set: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        for &t in table.thresholds() {
            assert!(t == NEVER_SEND || metric_set.contains(&t));
        }
    }

    #[test]
    fn naive_threshold_uses_nearest_rank() {
        let train = dataset(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        let naive = naive_threshold(&train, "1/4".parse().unwrap()).unwrap();
        assert_eq!(naive, 3.0);
        let tiny = dataset(&(0..100).map(|i| (i as f64, 0.0)).collect::<Vec<_>>());
        assert_eq!(naive_threshold(&tiny, "99/100".parse().unwrap()).unwrap(), 0.0);
        assert!(naive_threshold(&train, "1".parse().unwrap()).is_err());
    }

    #[test]
    fn lower_bound_takes_top_metric_rewards() {
        let train = dataset(&[(4.0, 1.0), (3.0, 0.0), (2.0, 1.0), (1.0, 0.0)]);
        let lb = lower_bound_loss(&train, "1/2".parse().unwrap()).unwrap();
        let weak = train.mean_weak_loss().unwrap();
        assert_eq!(lb, weak - 0.25);
        let all = lower_bound_loss(&train, "1".parse().unwrap()).unwrap();
        assert!((all - train.mean_strong_loss().unwrap()).abs() < 1e-15);
    }

    proptest! {
        /// The lower bound never exceeds the weak-only loss and never dips
        /// below the strong-only loss when rewards are non-negative.
        #[test]
        fn lower_bound_sits_between_references(seed in 0u64..200, num in 1u64..10, den in 10u64..20) {
            let mut rng = SplitMix64::new(seed);
            let pairs: Vec<(f64, f64)> =
                (0..50).map(|_| (rng.u01(), if rng.bernoulli(0.5) { 1.0 } else { 0.0 })).collect();
            let train = dataset(&pairs);
            let r = RationalParam::new(num, den).unwrap();
            let lb = lower_bound_loss(&train, r).unwrap();
            prop_assert!(lb <= train.mean_weak_loss().unwrap() + 1e-12);
            prop_assert!(lb >= train.mean_strong_loss().unwrap() - 1e-12);
        }
    }
}
