//! Neighbor index plans: most-recent, uniform, fixed-rate expanded, and
//! learned-rate plans with possibly fractional indices.
//!
//! Indices are 1-based positions in a node's reverse-chronological
//! neighborhood (1 = most recent) and are carried as full-precision reals
//! end to end; rounding before interpolation would destroy the gradient
//! path through the indices.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when testing `index <= N` so that a rate computed as
/// (N-1)/(S-1) reaches N even when the division rounds up by one ulp.
const INDEX_BOUND_REL_TOL: f64 = 1e-9;

/// Neighbor-sampling strategy. Serialized in configs as
/// `recent | uniform | expanded:<r> | tns`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Recent,
    Uniform,
    Expanded(f64),
    Tns,
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        if let Strategy::Expanded(r) = self {
            if !(*r >= 1.0) {
                return Err(Error::Param(format!("expansion rate {r} must be >= 1")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Recent => write!(f, "recent"),
            Strategy::Uniform => write!(f, "uniform"),
            Strategy::Expanded(r) => write!(f, "expanded:{r}"),
            Strategy::Tns => write!(f, "tns"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recent" => Ok(Strategy::Recent),
            "uniform" => Ok(Strategy::Uniform),
            "tns" => Ok(Strategy::Tns),
            other => {
                if let Some(rate) = other.strip_prefix("expanded:") {
                    let r: f64 = rate
                        .parse()
                        .map_err(|_| Error::Config(format!("bad expansion rate `{rate}`")))?;
                    let s = Strategy::Expanded(r);
                    s.validate()?;
                    Ok(s)
                } else {
                    Err(Error::Config(format!(
                        "unknown strategy `{other}` (expected recent|uniform|expanded:<r>|tns)"
                    )))
                }
            }
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A per-(node, time, layer) plan of neighbor indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    /// 1-based positions in time order, strictly increasing, each in [1, N].
    pub indices: Vec<f64>,
    /// Expansion rate that generated them (1.0 for recent/uniform).
    pub rate: f64,
    /// Configured budget S.
    pub budget: usize,
    /// Count actually emitted (<= budget).
    pub realized: usize,
}

/// A truncated expansion rate together with the raw module output, which
/// the backward pass needs for gradient masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionRate {
    pub value: f64,
    pub pre_truncation: f64,
    /// Upper clamp bound, max(1, (N-1)/(S-1)); 1.0 on the degenerate branch.
    pub upper_bound: f64,
    /// True when the raw value passed through the clamp unchanged, i.e.
    /// N >= S, S >= 2 and 1 <= x <= upper_bound. Gradients flow to the
    /// expansion module only in this case.
    pub in_range: bool,
}

fn plan_from_rate(n: usize, s: usize, rate: f64) -> SamplePlan {
    let n_f = n as f64;
    let tol = INDEX_BOUND_REL_TOL * n_f.max(1.0);
    let mut indices = Vec::with_capacity(s);
    for k in 0..s {
        let idx = 1.0 + k as f64 * rate;
        if idx <= n_f + tol {
            // Snap float dust onto N so a rate at its upper bound lands the
            // final index on N exactly. Spacing >= 1 keeps this collision-free.
            indices.push(if (idx - n_f).abs() <= tol { n_f } else { idx });
        } else {
            break;
        }
    }
    let realized = indices.len();
    SamplePlan { indices, rate, budget: s, realized }
}

/// Indices {1, …, min(N, S)} of the most recent neighbors.
pub fn recent_indices(n: usize, s: usize) -> SamplePlan {
    let realized = n.min(s);
    SamplePlan {
        indices: (1..=realized).map(|i| i as f64).collect(),
        rate: 1.0,
        budget: s,
        realized,
    }
}

/// min(N, S) distinct indices drawn uniformly without replacement from
/// {1..N}, sorted ascending.
pub fn uniform_indices(n: usize, s: usize, rng: &mut impl Rng) -> SamplePlan {
    let take = n.min(s);
    let mut picks: Vec<usize> = if take == n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, take).into_vec()
    };
    picks.sort_unstable();
    SamplePlan {
        indices: picks.into_iter().map(|i| (i + 1) as f64).collect(),
        rate: 1.0,
        budget: s,
        realized: take,
    }
}

/// Fixed-rate expanded sampling: {1 + (s-1)·r} for s = 1…S, keeping
/// indices that land within [1, N]. With integer r every sample skips the
/// next r-1 neighbors in time order; r = 1 recovers `recent_indices`.
pub fn expanded_indices(n: usize, s: usize, r: f64) -> Result<SamplePlan> {
    if !(r >= 1.0) {
        return Err(Error::Param(format!("expansion rate {r} must be >= 1")));
    }
    Ok(plan_from_rate(n, s, r))
}

/// Clamps a raw expansion-module output to a valid rate: when N >= S the
/// activation range is [1, (N-1)/(S-1)]; with fewer neighbors than budget
/// the rate is pinned to 1. With S = 1 only index 1 can ever be emitted,
/// so the rate is likewise pinned to 1.
pub fn truncate_rate(x: f64, n: usize, s: usize) -> ExpansionRate {
    if n >= s && s >= 2 {
        let upper = ((n - 1) as f64 / (s - 1) as f64).max(1.0);
        let value = x.max(1.0).min(upper);
        ExpansionRate {
            value,
            pre_truncation: x,
            upper_bound: upper,
            in_range: (1.0..=upper).contains(&x),
        }
    } else {
        ExpansionRate { value: 1.0, pre_truncation: x, upper_bound: 1.0, in_range: false }
    }
}

/// Plan for a learned rate; fractional indices are kept exact. When the
/// rate sits at its upper bound the last index equals N.
pub fn tns_indices(rate: &ExpansionRate, n: usize, s: usize) -> Result<SamplePlan> {
    let check = truncate_rate(rate.pre_truncation, n, s);
    if check.value != rate.value {
        return Err(Error::Contract(format!(
            "rate {} inconsistent with (N={n}, S={s}); expected {}",
            rate.value, check.value
        )));
    }
    Ok(plan_from_rate(n, s, rate.value))
}
