//! Threshold policies over token states.
//!
//! A policy stores one metric threshold per sendable token state. An input
//! is offloaded when its metric reaches the threshold for the current state
//! and a full token is available. `+inf` marks states that never send; it is
//! serialized as the string `"inf"` because JSON has no infinity literal.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bucket::ScaledBucket;
use crate::error::{Error, Result};

/// Sentinel threshold for "never offload from this state".
pub const NEVER_SEND: f64 = f64::INFINITY;

mod inf_as_string {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            if x == f64::INFINITY {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element(&x)?;
            }
        }
        seq.end()
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Entry {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        entries
            .into_iter()
            .map(|e| match e {
                Entry::Num(x) => Ok(x),
                Entry::Str(s) if s == "inf" => Ok(f64::INFINITY),
                Entry::Str(s) => Err(D::Error::custom(format!("unknown threshold {s:?}"))),
            })
            .collect()
    }
}

/// A solved (or hand-built) threshold policy with its value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    #[serde(flatten)]
    bucket: ScaledBucket,
    gamma: f64,
    /// Thresholds for states `P..=M`, in that order.
    #[serde(with = "inf_as_string")]
    thresholds: Vec<f64>,
    /// Discounted values for states `Q..=M`, in that order.
    values: Vec<f64>,
}

impl PolicyTable {
    pub fn new(bucket: ScaledBucket, gamma: f64, thresholds: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let table = Self { bucket, gamma, thresholds, values };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("discount {} must be in [0, 1)", self.gamma)));
        }
        if self.thresholds.len() as u64 != self.bucket.sendable_state_count() {
            return Err(Error::InvalidConfig(format!(
                "expected {} thresholds for bucket {}, got {}",
                self.bucket.sendable_state_count(),
                self.bucket,
                self.thresholds.len()
            )));
        }
        if self.values.len() as u64 != self.bucket.state_count() {
            return Err(Error::InvalidConfig(format!(
                "expected {} values for bucket {}, got {}",
                self.bucket.state_count(),
                self.bucket,
                self.values.len()
            )));
        }
        if self.thresholds.iter().any(|t| t.is_nan() || *t == f64::NEG_INFINITY) {
            return Err(Error::InvalidConfig("thresholds must be finite or +inf".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("values must be finite".into()));
        }
        Ok(())
    }

    pub fn bucket(&self) -> &ScaledBucket {
        &self.bucket
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Threshold in effect at token state `n`; `n` must be sendable.
    pub fn threshold_at(&self, n: u64) -> f64 {
        self.thresholds[(n - self.bucket.p()) as usize]
    }

    /// Discounted value of token state `n`.
    pub fn value_at(&self, n: u64) -> f64 {
        self.values[(n - self.bucket.q()) as usize]
    }
}

/// Decides whether to offload a sample with `metric` at token state `n`.
pub fn apply_policy(metric: f64, n: u64, policy: &PolicyTable) -> Result<bool> {
    let b = policy.bucket();
    if n < b.q() || n > b.m() {
        return Err(Error::InvalidTokenState(format!(
            "token count {n} outside [{}, {}]",
            b.q(),
            b.m()
        )));
    }
    Ok(b.can_send(n) && metric >= policy.threshold_at(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> PolicyTable {
        let bucket = ScaledBucket::new(5, 1, 15).unwrap();
        let thresholds: Vec<f64> =
            (0..11).map(|i| if i == 10 { NEVER_SEND } else { 0.9 - 0.05 * i as f64 }).collect();
        let values = vec![0.0; 15];
        PolicyTable::new(bucket, 0.9, thresholds, values).unwrap()
    }

    #[test]
    fn boundary_metric_sends() {
        let t = table();
        assert!(apply_policy(0.9, 5, &t).unwrap());
        assert!(!apply_policy(0.89, 5, &t).unwrap());
        assert!(!apply_policy(10.0, 4, &t).unwrap());
        assert!(!apply_policy(10.0, 15, &t).unwrap());
        assert!(apply_policy(0.5, 14, &t).unwrap());
        assert!(apply_policy(10.0, 16, &t).is_err());
    }

    #[test]
    fn json_round_trips_with_inf_sentinel() {
        let t = table();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"inf\""), "{json}");
        assert!(json.contains("\"P\":5"), "{json}");
        let back: PolicyTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_wrong_table_lengths() {
        let bucket = ScaledBucket::new(5, 1, 15).unwrap();
        assert!(PolicyTable::new(bucket, 0.9, vec![0.5; 3], vec![0.0; 15]).is_err());
        assert!(PolicyTable::new(bucket, 0.9, vec![0.5; 11], vec![0.0; 3]).is_err());
        assert!(PolicyTable::new(bucket, 1.0, vec![0.5; 11], vec![0.0; 15]).is_err());
    }

    proptest! {
        /// Raising the metric never turns a send into a keep.
        #[test]
        fn send_is_monotone_in_metric(m1 in -1.0f64..2.0, m2 in -1.0f64..2.0, n in 1u64..=15) {
            let t = table();
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            if apply_policy(lo, n, &t).unwrap() {
                prop_assert!(apply_policy(hi, n, &t).unwrap());
            }
        }
    }
}
