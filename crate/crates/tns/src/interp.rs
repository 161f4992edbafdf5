//! Fractional-index message interpolation and its explicit adjoints.
//!
//! A message at fractional time-order position n is the kernel-weighted
//! blend Σ_o max(0, 1 - |n - o|)·m(o), which touches at most the two rows
//! ⌊n⌋ and ⌊n⌋+1. The forward pass records an [`InterpTape`] so the
//! backward pass can route gradients both to the message rows (the linear
//! transpose) and to the indices themselves, where
//! ∂L/∂n = uᵀ·m(⌊n⌋+1) - uᵀ·m(⌊n⌋) for non-integral n. At integral n the
//! kernel derivative is undefined; the subgradient is taken as 0.

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::sampler::SamplePlan;

/// Messages for a set of integer time-order positions of one
/// (node, time, layer). Positions are 1-based, sorted ascending, and must
/// cover ⌊n⌋ and ⌊n⌋+1 for every fractional index later queried.
#[derive(Debug, Clone)]
pub struct MessageMatrix {
    rows: Vec<Vec<f64>>,
    positions: Vec<usize>,
    d_m: usize,
}

impl MessageMatrix {
    pub fn new(rows: Vec<Vec<f64>>, positions: Vec<usize>, d_m: usize) -> Result<Self> {
        if rows.len() != positions.len() {
            return Err(Error::Contract(format!(
                "{} rows for {} positions",
                rows.len(),
                positions.len()
            )));
        }
        if rows.iter().any(|r| r.len() != d_m) {
            return Err(Error::Contract("message row dimension mismatch".into()));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) || positions.first().is_some_and(|&p| p < 1) {
            return Err(Error::Contract("positions must be ascending and >= 1".into()));
        }
        Ok(MessageMatrix { rows, positions, d_m })
    }

    pub fn d_m(&self) -> usize {
        self.d_m
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Row index holding time-order position `o`.
    pub fn slot_of(&self, o: usize) -> Result<usize> {
        self.positions
            .binary_search(&o)
            .map_err(|_| Error::Contract(format!("message row for position {o} not materialized")))
    }

    pub fn row_at(&self, o: usize) -> Result<&[f64]> {
        Ok(&self.rows[self.slot_of(o)?])
    }
}

/// One interpolation query: the bracketing slots and kernel weights.
#[derive(Debug, Clone, Copy)]
pub struct InterpEntry {
    pub index: f64,
    /// Slot (not position) of ⌊n⌋ in the matrix.
    pub lo_slot: usize,
    /// Slot of ⌊n⌋+1; equal to `lo_slot` on an integer hit.
    pub hi_slot: usize,
    pub w_lo: f64,
    pub w_hi: f64,
    pub integer_hit: bool,
}

#[derive(Debug, Clone, Default)]
pub struct InterpTape {
    pub entries: Vec<InterpEntry>,
    pub num_rows: usize,
    pub d_m: usize,
}

/// Evaluates messages at the plan's (possibly fractional) indices.
/// Integral indices copy their row exactly, bit for bit.
pub fn interpolate(messages: &MessageMatrix, plan: &SamplePlan) -> Result<(Vec<Vec<f64>>, InterpTape)> {
    let mut out = Vec::with_capacity(plan.indices.len());
    let mut entries = Vec::with_capacity(plan.indices.len());
    for &n in &plan.indices {
        let floor = n.floor();
        if n == floor {
            let o = floor as usize;
            let slot = messages.slot_of(o)?;
            out.push(messages.rows[slot].clone());
            entries.push(InterpEntry {
                index: n,
                lo_slot: slot,
                hi_slot: slot,
                w_lo: 1.0,
                w_hi: 0.0,
                integer_hit: true,
            });
        } else {
            let lo = floor as usize;
            let lo_slot = messages.slot_of(lo)?;
            let hi_slot = messages.slot_of(lo + 1)?;
            let w_hi = n - floor;
            let w_lo = 1.0 - w_hi;
            let a = &messages.rows[lo_slot];
            let b = &messages.rows[hi_slot];
            out.push(a.iter().zip(b).map(|(x, y)| w_lo * x + w_hi * y).collect());
            entries.push(InterpEntry { index: n, lo_slot, hi_slot, w_lo, w_hi, integer_hit: false });
        }
    }
    let tape = InterpTape { entries, num_rows: messages.len(), d_m: messages.d_m };
    Ok((out, tape))
}

/// Transpose of [`interpolate`]: routes upstream gradients back onto the
/// message rows. Rows untouched by any index stay zero.
pub fn backward_messages(tape: &InterpTape, upstream: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if upstream.len() != tape.entries.len() {
        return Err(Error::Contract(format!(
            "{} upstream gradients for {} sampled messages",
            upstream.len(),
            tape.entries.len()
        )));
    }
    let mut grads = vec![vec![0.0; tape.d_m]; tape.num_rows];
    for (entry, u) in tape.entries.iter().zip(upstream) {
        if u.len() != tape.d_m {
            return Err(Error::Contract("upstream gradient dimension mismatch".into()));
        }
        if entry.integer_hit {
            for (g, ui) in grads[entry.lo_slot].iter_mut().zip(u) {
                *g += ui;
            }
        } else {
            for (g, ui) in grads[entry.lo_slot].iter_mut().zip(u) {
                *g += entry.w_lo * ui;
            }
            for (g, ui) in grads[entry.hi_slot].iter_mut().zip(u) {
                *g += entry.w_hi * ui;
            }
        }
    }
    Ok(grads)
}

/// Gradient of the loss with respect to each sampled index: for
/// non-integral n this is uᵀ·m(⌊n⌋+1) - uᵀ·m(⌊n⌋); integral indices get
/// the zero subgradient.
pub fn backward_indices(
    tape: &InterpTape,
    messages: &MessageMatrix,
    upstream: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if upstream.len() != tape.entries.len() {
        return Err(Error::Contract(format!(
            "{} upstream gradients for {} sampled messages",
            upstream.len(),
            tape.entries.len()
        )));
    }
    let mut out = Vec::with_capacity(tape.entries.len());
    for (entry, u) in tape.entries.iter().zip(upstream) {
        if entry.integer_hit {
            out.push(0.0);
        } else {
            let lo = &messages.rows()[entry.lo_slot];
            let hi = &messages.rows()[entry.hi_slot];
            out.push(dot(u, hi) - dot(u, lo));
        }
    }
    Ok(out)
}

/// Sign diagnostic per index: -1 expands toward the older neighbor
/// ⌊n⌋+1 under gradient descent, +1 contracts toward ⌊n⌋, 0 is neutral.
pub fn index_move_sign(
    tape: &InterpTape,
    messages: &MessageMatrix,
    upstream: &[Vec<f64>],
) -> Result<Vec<i8>> {
    let grads = backward_indices(tape, messages, upstream)?;
    Ok(grads
        .into_iter()
        .map(|g| {
            if g > 0.0 {
                1
            } else if g < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect())
}
