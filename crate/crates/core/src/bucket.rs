//! Token-bucket rate control over a scaled integer state space.
//!
//! A bucket with rational refill rate `r` and depth `b` is rescaled by the
//! least common denominator `P` of `r` and `b`, so the token count becomes an
//! integer `n` with refill `Q = r*P` per step, capacity `M = b*P`, and a cost
//! of `P` per offload. The integer recursion
//!
//! ```text
//! n[t+1] = min(M, n[t] - P*a[t] + Q)
//! ```
//!
//! reproduces the real-valued bucket exactly, with `a[t] = 1` permitted only
//! when `n[t] >= P`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{lcm, RationalParam};

/// Number of distinct token states a solver or simulator will materialize.
pub(crate) const MAX_STATES: u64 = 1 << 22;

/// Integer-scaled token bucket; invariant `Q < P <= M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaledBucket {
    /// Scaled cost of one offload.
    #[serde(rename = "P")]
    p: u64,
    /// Scaled refill per step.
    #[serde(rename = "Q")]
    q: u64,
    /// Scaled capacity; also the initial token count.
    #[serde(rename = "M")]
    m: u64,
}

/// Rescales rate `r` and depth `b` to the integer bucket `(P, Q, M)`.
///
/// Requires `0 < r < 1` and `b >= 1`.
pub fn reduce_bucket(r: RationalParam, b: RationalParam) -> Result<ScaledBucket> {
    let one = RationalParam::new(1, 1)?;
    if r.is_zero() || r >= one {
        return Err(Error::InvalidBucket(format!("rate {r} is outside (0, 1)")));
    }
    if b < one {
        return Err(Error::InvalidBucket(format!("depth {b} is below 1")));
    }
    let p = lcm(r.den(), b.den())?;
    let q = r.num() * (p / r.den());
    let m = b
        .num()
        .checked_mul(p / b.den())
        .ok_or_else(|| Error::InvalidBucket(format!("capacity for depth {b} overflows u64")))?;
    ScaledBucket::new(p, q, m)
}

impl ScaledBucket {
    /// Builds a bucket from already-scaled integers, checking `Q < P <= M`.
    pub fn new(p: u64, q: u64, m: u64) -> Result<Self> {
        if q == 0 || q >= p {
            return Err(Error::InvalidBucket(format!("need 0 < Q < P, got Q={q}, P={p}")));
        }
        if p > m {
            return Err(Error::InvalidBucket(format!("need P <= M, got P={p}, M={m}")));
        }
        Ok(Self { p, q, m })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    /// Reachable token states are `Q..=M` once the first step has run; the
    /// initial state `M` is included.
    pub fn state_count(&self) -> u64 {
        self.m - self.q + 1
    }

    /// States from which an offload is permitted: `P..=M`.
    pub fn sendable_state_count(&self) -> u64 {
        self.m - self.p + 1
    }

    pub fn can_send(&self, n: u64) -> bool {
        n >= self.p
    }

    /// Token count in original (unscaled) units.
    pub fn real_tokens(&self, n: u64) -> f64 {
        n as f64 / self.p as f64
    }

    fn check_state(&self, n: u64) -> Result<()> {
        if n < self.q || n > self.m {
            return Err(Error::InvalidTokenState(format!(
                "token count {n} outside [{}, {}]",
                self.q, self.m
            )));
        }
        Ok(())
    }

    /// One step of the scaled recursion. `send` requires `n >= P`.
    pub fn step(&self, n: u64, send: bool) -> Result<u64> {
        self.check_state(n)?;
        if send {
            if n < self.p {
                return Err(Error::InvalidTokenState(format!(
                    "offload with {n} tokens, need at least {}",
                    self.p
                )));
            }
            Ok((self.m).min(n - self.p + self.q))
        } else {
            Ok((self.m).min(n + self.q))
        }
    }

    pub(crate) fn check_solvable(&self) -> Result<()> {
        if self.state_count() > MAX_STATES {
            return Err(Error::StateSpaceTooLarge { states: self.state_count(), cap: MAX_STATES });
        }
        Ok(())
    }
}

impl std::fmt::Display for ScaledBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(P={}, Q={}, M={})", self.p, self.q, self.m)
    }
}
