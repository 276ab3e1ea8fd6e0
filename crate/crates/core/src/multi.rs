//! Fleets of devices sharing one rate-controlled uplink.
//!
//! Three ways to split a total contract (r_tot, b_tot) across N devices:
//!
//! * `individual`: every device owns an equal static share and runs its own
//!   policy; devices never interact.
//! * `hierarchical`: devices run policies for a configurable per-device
//!   bucket while a switch polices the true aggregate contract. Requests hit
//!   the switch in a seeded random order each slot; a dropped request still
//!   costs the device its local token and the image stays on the weak model.
//! * `smart`: the switch itself runs one policy over the pooled bucket,
//!   seeing all devices' images each slot and spending tokens on the highest
//!   metrics first.
//!
//! Devices draw from per-(sequence, device) streams that do not depend on
//! the strategy, so strategy comparisons are paired sample by sample.

use serde::{Deserialize, Serialize};

use crate::bucket::{reduce_bucket, ScaledBucket};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{build_fg, solve_policy};
use crate::policy::PolicyTable;
use crate::rational::RationalParam;
use crate::rng::{derive_seed, SplitMix64};
use crate::sim::{std_err, TokenHistogram};

/// How the shared uplink is divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiStrategy {
    Individual,
    Hierarchical,
    Smart,
}

impl std::str::FromStr for MultiStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(Self::Individual),
            "hierarchical" => Ok(Self::Hierarchical),
            "smart" => Ok(Self::Smart),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (expected individual, hierarchical, or smart)"
            ))),
        }
    }
}

impl std::fmt::Display for MultiStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Individual => "individual",
            Self::Hierarchical => "hierarchical",
            Self::Smart => "smart",
        })
    }
}

/// Fleet shape, contract, and seeding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiConfig {
    pub n_devices: u64,
    pub r_tot: RationalParam,
    pub b_tot: RationalParam,
    pub gamma: f64,
    pub sequences: u64,
    pub length: u64,
    pub seed: u64,
    /// Per-device rate for the hierarchical strategy; equal split when unset.
    pub device_rate: Option<RationalParam>,
    /// Per-device burst for the hierarchical strategy; equal split when unset.
    pub device_burst: Option<RationalParam>,
    /// Keep per-slot forward counts and per-device send streams for audits.
    pub record_sends: bool,
}

impl MultiConfig {
    pub fn new(n_devices: u64, r_tot: RationalParam, b_tot: RationalParam) -> Self {
        Self {
            n_devices,
            r_tot,
            b_tot,
            gamma: 0.99,
            sequences: 20,
            length: 20_000,
            seed: 0,
            device_rate: None,
            device_burst: None,
            record_sends: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::InvalidConfig("fleet needs at least one device".into()));
        }
        if self.sequences == 0 || self.length == 0 {
            return Err(Error::InvalidConfig(format!(
                "simulation needs at least one sequence and one step, got {} x {}",
                self.sequences, self.length
            )));
        }
        Ok(())
    }

    fn equal_rate(&self) -> Result<RationalParam> {
        self.r_tot.div_int(self.n_devices)
    }

    fn equal_burst(&self) -> Result<RationalParam> {
        self.b_tot.div_int(self.n_devices)
    }
}

/// Per-device slice of a fleet run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub offloads: u64,
    pub realized_rate: f64,
    pub avg_loss: f64,
    pub weak_loss_sum: f64,
    pub reward_sum: f64,
    pub loss_sum: f64,
}

/// Aggregated outcome of a fleet simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiReport {
    pub strategy: MultiStrategy,
    pub n_devices: u64,
    pub sequences: u64,
    pub length: u64,
    /// Mean loss per image across all devices.
    pub avg_loss: f64,
    /// Standard error of per-sequence mean losses.
    pub loss_std_err: f64,
    /// Forwarded offloads per slot, comparable to the total contract rate.
    pub realized_rate: f64,
    pub offloads: u64,
    pub switch_drops: u64,
    /// Fraction of requested offloads the switch refused.
    pub switch_drop_rate: f64,
    pub per_sequence_loss: Vec<f64>,
    pub devices: Vec<DeviceReport>,
    /// Occupancy of the coordinating bucket, sampled at each slot start: the
    /// summed device states for `individual`, the policer bucket for
    /// `hierarchical`, the pooled bucket for `smart`.
    pub switch_histogram: TokenHistogram,
    pub weak_loss_sum: f64,
    pub reward_sum: f64,
    pub loss_sum: f64,
    /// Per-sequence, per-slot forwarded counts when recording was requested.
    #[serde(skip)]
    pub forwarded_per_slot: Option<Vec<Vec<u8>>>,
    /// Per-sequence, per-device, per-slot local send decisions.
    #[serde(skip)]
    pub device_sends_per_slot: Option<Vec<Vec<Vec<u8>>>>,
}

/// Running sums shared by the three strategies.
struct Tally {
    per_sequence_loss: Vec<f64>,
    loss_sum: f64,
    weak_loss_sum: f64,
    reward_sum: f64,
    offloads: u64,
    drops: u64,
    dev_offloads: Vec<u64>,
    dev_weak: Vec<f64>,
    dev_reward: Vec<f64>,
}

impl Tally {
    fn new(cfg: &MultiConfig) -> Self {
        let n = cfg.n_devices as usize;
        Self {
            per_sequence_loss: Vec::with_capacity(cfg.sequences as usize),
            loss_sum: 0.0,
            weak_loss_sum: 0.0,
            reward_sum: 0.0,
            offloads: 0,
            drops: 0,
            dev_offloads: vec![0; n],
            dev_weak: vec![0.0; n],
            dev_reward: vec![0.0; n],
        }
    }

    /// Accounts one image outcome; returns the realized loss for the
    /// sequence accumulator.
    fn settle(&mut self, device: usize, weak: f64, strong: f64, forwarded: bool) -> f64 {
        self.weak_loss_sum += weak;
        self.dev_weak[device] += weak;
        if forwarded {
            self.reward_sum += weak - strong;
            self.dev_reward[device] += weak - strong;
            self.offloads += 1;
            self.dev_offloads[device] += 1;
            strong
        } else {
            weak
        }
    }

    fn into_report(
        self,
        cfg: &MultiConfig,
        strategy: MultiStrategy,
        switch_histogram: TokenHistogram,
        forwarded_per_slot: Option<Vec<Vec<u8>>>,
        device_sends_per_slot: Option<Vec<Vec<Vec<u8>>>>,
    ) -> MultiReport {
        let slots = (cfg.sequences * cfg.length) as f64;
        let images = slots * cfg.n_devices as f64;
        let requests = self.offloads + self.drops;
        let devices = (0..cfg.n_devices as usize)
            .map(|d| DeviceReport {
                offloads: self.dev_offloads[d],
                realized_rate: self.dev_offloads[d] as f64 / slots,
                avg_loss: (self.dev_weak[d] - self.dev_reward[d]) / slots,
                weak_loss_sum: self.dev_weak[d],
                reward_sum: self.dev_reward[d],
                loss_sum: self.dev_weak[d] - self.dev_reward[d],
            })
            .collect();
        MultiReport {
            strategy,
            n_devices: cfg.n_devices,
            sequences: cfg.sequences,
            length: cfg.length,
            avg_loss: self.loss_sum / images,
            loss_std_err: std_err(&self.per_sequence_loss),
            realized_rate: self.offloads as f64 / slots,
            offloads: self.offloads,
            switch_drops: self.drops,
            switch_drop_rate: if requests > 0 { self.drops as f64 / requests as f64 } else { 0.0 },
            per_sequence_loss: self.per_sequence_loss,
            devices,
            switch_histogram,
            weak_loss_sum: self.weak_loss_sum,
            reward_sum: self.reward_sum,
            loss_sum: self.loss_sum,
            forwarded_per_slot,
            device_sends_per_slot,
        }
    }
}

fn solve_on(train: &Dataset, bucket: &ScaledBucket, gamma: f64) -> Result<PolicyTable> {
    solve_policy(&build_fg(train)?, bucket, gamma)
}

struct TestView {
    metrics: Vec<f64>,
    weak: Vec<f64>,
    strong: Vec<f64>,
    k: u64,
}

impl TestView {
    fn new(test: &Dataset) -> Result<Self> {
        Ok(Self {
            metrics: test.metrics()?,
            weak: test.iter().map(|s| s.loss_weak).collect(),
            strong: test.iter().map(|s| s.loss_strong).collect(),
            k: test.len() as u64,
        })
    }
}

/// Runs one strategy; dispatch point for callers configured by name.
pub fn simulate_multi(
    train: &Dataset,
    test: &Dataset,
    strategy: MultiStrategy,
    cfg: &MultiConfig,
) -> Result<MultiReport> {
    match strategy {
        MultiStrategy::Individual => simulate_individual(train, test, cfg),
        MultiStrategy::Hierarchical => simulate_hierarchical(train, test, cfg),
        MultiStrategy::Smart => simulate_smart(train, test, cfg),
    }
}

/// Static equal split: each device keeps its own (r_tot/N, b_tot/N) bucket
/// and solved policy.
pub fn simulate_individual(train: &Dataset, test: &Dataset, cfg: &MultiConfig) -> Result<MultiReport> {
    cfg.check()?;
    let bucket = reduce_bucket(cfg.equal_rate()?, cfg.equal_burst()?)?;
    let policy = solve_on(train, &bucket, cfg.gamma)?;
    let view = TestView::new(test)?;
    let n_dev = cfg.n_devices as usize;
    let (p, q, m) = (bucket.p(), bucket.q(), bucket.m());
    let thresholds = policy.thresholds();

    let mut histogram =
        TokenHistogram::with_range(cfg.n_devices * q, p, (cfg.n_devices * (m - q) + 1) as usize);
    let mut tally = Tally::new(cfg);
    let mut forwarded_rec: Option<Vec<Vec<u8>>> = cfg.record_sends.then(Vec::new);
    let mut device_rec: Option<Vec<Vec<Vec<u8>>>> = cfg.record_sends.then(Vec::new);

    for s in 0..cfg.sequences {
        let mut rngs: Vec<SplitMix64> = (0..cfg.n_devices)
            .map(|d| SplitMix64::new(derive_seed(cfg.seed, "draws", &[s, d])))
            .collect();
        let mut states = vec![m; n_dev];
        let mut seq_loss = 0.0;
        let mut slot_fwd = cfg.record_sends.then(|| Vec::with_capacity(cfg.length as usize));
        let mut dev_sends =
            cfg.record_sends.then(|| vec![Vec::with_capacity(cfg.length as usize); n_dev]);
        for _ in 0..cfg.length {
            let pooled: u64 = states.iter().sum();
            histogram.counts[(pooled - cfg.n_devices * q) as usize] += 1;
            let mut forwarded = 0u8;
            for d in 0..n_dev {
                let i = rngs[d].index(view.k) as usize;
                let n = states[d];
                let send = n >= p && view.metrics[i] >= thresholds[(n - p) as usize];
                seq_loss += tally.settle(d, view.weak[i], view.strong[i], send);
                forwarded += send as u8;
                if let Some(ds) = dev_sends.as_mut() {
                    ds[d].push(send as u8);
                }
                states[d] = bucket.step(n, send).expect("decision respects token availability");
            }
            if let Some(sf) = slot_fwd.as_mut() {
                sf.push(forwarded);
            }
        }
        tally.loss_sum += seq_loss;
        tally.per_sequence_loss.push(seq_loss / (cfg.length * cfg.n_devices) as f64);
        if let Some(rec) = forwarded_rec.as_mut() {
            rec.push(slot_fwd.unwrap());
        }
        if let Some(rec) = device_rec.as_mut() {
            rec.push(dev_sends.unwrap());
        }
    }
    Ok(tally.into_report(cfg, MultiStrategy::Individual, histogram, forwarded_rec, device_rec))
}

/// Per-device policies for (device_rate, device_burst) behind a switch that
/// polices the aggregate contract and drops non-conforming requests.
pub fn simulate_hierarchical(train: &Dataset, test: &Dataset, cfg: &MultiConfig) -> Result<MultiReport> {
    cfg.check()?;
    let rate = match cfg.device_rate {
        Some(r) => r,
        None => cfg.equal_rate()?,
    };
    let burst = match cfg.device_burst {
        Some(b) => b,
        None => cfg.equal_burst()?,
    };
    // A device bucket below the equal split in both coordinates wastes
    // aggregate capacity no ordering of requests can recover.
    if rate < cfg.equal_rate()? && burst < cfg.equal_burst()? {
        return Err(Error::InvalidConfig(format!(
            "device bucket ({rate}, {burst}) is dominated by the equal split \
             ({}, {})",
            cfg.equal_rate()?,
            cfg.equal_burst()?
        )));
    }
    let bucket = reduce_bucket(rate, burst)?;
    let agg = reduce_bucket(cfg.r_tot, cfg.b_tot)?;
    let policy = solve_on(train, &bucket, cfg.gamma)?;
    let view = TestView::new(test)?;
    let n_dev = cfg.n_devices as usize;
    let (p, m) = (bucket.p(), bucket.m());
    let (pa, qa, ma) = (agg.p(), agg.q(), agg.m());
    let thresholds = policy.thresholds();

    let mut histogram = TokenHistogram::new(&agg);
    let mut tally = Tally::new(cfg);
    let mut forwarded_rec: Option<Vec<Vec<u8>>> = cfg.record_sends.then(Vec::new);
    let mut device_rec: Option<Vec<Vec<Vec<u8>>>> = cfg.record_sends.then(Vec::new);
    let mut order: Vec<usize> = (0..n_dev).collect();
    let mut draws = vec![0usize; n_dev];
    let mut want = vec![false; n_dev];
    let mut forwarded = vec![false; n_dev];

    for s in 0..cfg.sequences {
        let mut rngs: Vec<SplitMix64> = (0..cfg.n_devices)
            .map(|d| SplitMix64::new(derive_seed(cfg.seed, "draws", &[s, d])))
            .collect();
        let mut order_rng = SplitMix64::new(derive_seed(cfg.seed, "switch-order", &[s]));
        let mut states = vec![m; n_dev];
        let mut n_agg = ma;
        let mut seq_loss = 0.0;
        let mut slot_fwd = cfg.record_sends.then(|| Vec::with_capacity(cfg.length as usize));
        let mut dev_sends =
            cfg.record_sends.then(|| vec![Vec::with_capacity(cfg.length as usize); n_dev]);
        for _ in 0..cfg.length {
            histogram.counts[(n_agg - qa) as usize] += 1;
            for d in 0..n_dev {
                let i = rngs[d].index(view.k) as usize;
                draws[d] = i;
                want[d] = states[d] >= p && view.metrics[i] >= thresholds[(states[d] - p) as usize];
                forwarded[d] = false;
            }
            // The switch sees requests in a fresh seeded order every slot and
            // forwards while the aggregate bucket holds a full token.
            order_rng.shuffle(&mut order);
            let mut fwd_count = 0u8;
            for &d in &order {
                if want[d] && n_agg >= pa {
                    n_agg -= pa;
                    forwarded[d] = true;
                    fwd_count += 1;
                }
            }
            n_agg = ma.min(n_agg + qa);
            // Outcomes settle in device order; a drop leaves the image on
            // the weak model but the local token is already spent.
            for d in 0..n_dev {
                let i = draws[d];
                seq_loss += tally.settle(d, view.weak[i], view.strong[i], forwarded[d]);
                if want[d] && !forwarded[d] {
                    tally.drops += 1;
                }
                if let Some(ds) = dev_sends.as_mut() {
                    ds[d].push(want[d] as u8);
                }
                states[d] =
                    bucket.step(states[d], want[d]).expect("decision respects token availability");
            }
            if let Some(sf) = slot_fwd.as_mut() {
                sf.push(fwd_count);
            }
        }
        tally.loss_sum += seq_loss;
        tally.per_sequence_loss.push(seq_loss / (cfg.length * cfg.n_devices) as f64);
        if let Some(rec) = forwarded_rec.as_mut() {
            rec.push(slot_fwd.unwrap());
        }
        if let Some(rec) = device_rec.as_mut() {
            rec.push(dev_sends.unwrap());
        }
    }
    Ok(tally.into_report(cfg, MultiStrategy::Hierarchical, histogram, forwarded_rec, device_rec))
}

/// One pooled policy at the switch: all devices' images of a slot are ranked
/// by metric and decided one at a time against the shared bucket, which is
/// scaled to per-image epochs (rate r_tot/N, burst b_tot).
pub fn simulate_smart(train: &Dataset, test: &Dataset, cfg: &MultiConfig) -> Result<MultiReport> {
    cfg.check()?;
    let bucket = reduce_bucket(cfg.equal_rate()?, cfg.b_tot)?;
    let policy = solve_on(train, &bucket, cfg.gamma)?;
    let view = TestView::new(test)?;
    let n_dev = cfg.n_devices as usize;
    let (p, q, m) = (bucket.p(), bucket.q(), bucket.m());
    let thresholds = policy.thresholds();

    let mut histogram = TokenHistogram::new(&bucket);
    let mut tally = Tally::new(cfg);
    let mut forwarded_rec: Option<Vec<Vec<u8>>> = cfg.record_sends.then(Vec::new);
    let mut batch: Vec<(f64, usize, usize)> = Vec::with_capacity(n_dev);

    for s in 0..cfg.sequences {
        let mut rngs: Vec<SplitMix64> = (0..cfg.n_devices)
            .map(|d| SplitMix64::new(derive_seed(cfg.seed, "draws", &[s, d])))
            .collect();
        let mut n = m;
        let mut seq_loss = 0.0;
        let mut slot_fwd = cfg.record_sends.then(|| Vec::with_capacity(cfg.length as usize));
        for _ in 0..cfg.length {
            histogram.counts[(n - q) as usize] += 1;
            batch.clear();
            for d in 0..n_dev {
                let i = rngs[d].index(view.k) as usize;
                batch.push((view.metrics[i], d, i));
            }
            // Highest metric first; the stable sort keeps device order on
            // ties.
            batch.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut fwd_count = 0u8;
            for &(metric, d, i) in &batch {
                let send = n >= p && metric >= thresholds[(n - p) as usize];
                seq_loss += tally.settle(d, view.weak[i], view.strong[i], send);
                fwd_count += send as u8;
                n = bucket.step(n, send).expect("decision respects token availability");
            }
            if let Some(sf) = slot_fwd.as_mut() {
                sf.push(fwd_count);
            }
        }
        tally.loss_sum += seq_loss;
        tally.per_sequence_loss.push(seq_loss / (cfg.length * cfg.n_devices) as f64);
        if let Some(rec) = forwarded_rec.as_mut() {
            rec.push(slot_fwd.unwrap());
        }
    }
    Ok(tally.into_report(cfg, MultiStrategy::Smart, histogram, forwarded_rec, None))
}

/// One evaluated point of the hierarchical oversubscription grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub r_prime: RationalParam,
    pub b_prime: RationalParam,
    pub avg_loss: f64,
    pub switch_drop_rate: f64,
}

/// Full grid surface plus the selected optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub cells: Vec<GridCell>,
    pub best: GridCell,
    /// (rate, burst) pairs that were not evaluated: dominated by the equal
    /// split or not representable as a bucket.
    pub skipped: Vec<(RationalParam, RationalParam)>,
}

/// Default per-device rate grid 0.05, 0.10, .., 0.50.
pub fn default_rate_grid() -> Vec<RationalParam> {
    (1..=10).map(|k| RationalParam::new(k, 20).unwrap()).collect()
}

/// Default per-device burst grid 1, 2, .., 10.
pub fn default_burst_grid() -> Vec<RationalParam> {
    (1..=10).map(|k| RationalParam::new(k, 1).unwrap()).collect()
}

/// Evaluates hierarchical splitting over a (rate, burst) grid on the
/// training data and picks the cell with the lowest average loss. Cells the
/// per-device simulation rejects (dominated by the equal split, or not
/// representable as a bucket) are recorded as skipped. Ties resolve to the
/// smaller rate, then the smaller burst, so grids should be passed in
/// ascending order.
pub fn grid_search_oversubscription(
    train: &Dataset,
    cfg: &MultiConfig,
    rates: &[RationalParam],
    bursts: &[RationalParam],
) -> Result<GridSearchReport> {
    cfg.check()?;
    let fair_rate = cfg.equal_rate()?;
    let fair_burst = cfg.equal_burst()?;
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    let mut best: Option<GridCell> = None;
    for &r_prime in rates {
        for &b_prime in bursts {
            if r_prime < fair_rate && b_prime < fair_burst {
                skipped.push((r_prime, b_prime));
                continue;
            }
            let mut cell_cfg = cfg.clone();
            cell_cfg.device_rate = Some(r_prime);
            cell_cfg.device_burst = Some(b_prime);
            cell_cfg.record_sends = false;
            let report = match simulate_hierarchical(train, train, &cell_cfg) {
                Ok(r) => r,
                Err(Error::InvalidBucket(_)) => {
                    skipped.push((r_prime, b_prime));
                    continue;
                }
                Err(e) => return Err(e),
            };
            let cell = GridCell {
                r_prime,
                b_prime,
                avg_loss: report.avg_loss,
                switch_drop_rate: report.switch_drop_rate,
            };
            if best.as_ref().is_none_or(|b| cell.avg_loss < b.avg_loss) {
                best = Some(cell.clone());
            }
            cells.push(cell);
        }
    }
    match best {
        Some(best) => Ok(GridSearchReport { cells, best, skipped }),
        None => Err(Error::InvalidConfig("oversubscription grid is empty".into())),
    }
}
