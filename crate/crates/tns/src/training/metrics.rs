//! Classification metrics and rank statistics.
//!
//! Accuracy thresholds at 0.5. Average precision follows the
//! recall-weighted precision sum over the score-sorted list. AUC uses the
//! rank statistic with ties contributing 1/2. Kendall's tau uses the
//! tau-b tie correction, computed in O(n log n) by merge-sort inversion
//! counting; the O(n²) pair-count oracle lives in the tests.

use crate::error::{Error, Result};

/// Summary metrics over a scored binary sample set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub average_precision: f64,
    pub auc: f64,
}

fn validate(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Param(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Param("labels must be binary".into()));
    }
    Ok(())
}

/// Fraction of samples classified correctly at the fixed 0.5 threshold.
pub fn accuracy(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Param("no samples".into()));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= 0.5) == (**l == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Indices sorted by score descending, ties by original index ascending.
fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// AP = Σ_k (recall_k - recall_{k-1})·precision_k over the score-sorted
/// list. Requires at least one sample of each class.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Param("average precision undefined for single-class labels".into()));
    }
    let mut ap = 0.0;
    let mut tp = 0usize;
    for (k, &i) in rank_order(scores).iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
            // Δrecall = 1/pos at each positive, precision = tp/(k+1).
            ap += tp as f64 / (k + 1) as f64 / pos as f64;
        }
    }
    Ok(ap)
}

/// Mann-Whitney AUC via average ranks; tied score pairs count 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    validate(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Param("auc undefined for single-class labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Computes accuracy, AP, and AUC together; errors when AP/AUC are
/// undefined (single-class labels) — use [`accuracy`] directly for the
/// threshold metric in that case.
pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<MetricSummary> {
    Ok(MetricSummary {
        accuracy: accuracy(scores, labels)?,
        average_precision: average_precision(scores, labels)?,
        auc: auc(scores, labels)?,
    })
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let c = (j - i + 1) as u64;
        total += c * (c - 1) / 2;
        i = j + 1;
    }
    total
}

/// Merge sort counting strict inversions (b[i] > b[j] for i < j).
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n <= 1 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut inv = count_inversions(left, scratch) + count_inversions(right, scratch);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            scratch[k] = left[i];
            i += 1;
        } else {
            scratch[k] = right[j];
            inv += (left.len() - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < left.len() {
        scratch[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        scratch[k] = right[j];
        j += 1;
        k += 1;
    }
    values.copy_from_slice(&scratch[..n]);
    inv
}

/// Kendall rank correlation between two paired value lists:
/// (concordant - discordant) / (n(n-1)/2), with the tau-b denominator
/// correction when ties exist.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Param(format!("{} vs {} samples", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Param("kendall tau needs at least 2 samples".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        a[x].partial_cmp(&a[y]).unwrap().then(b[x].partial_cmp(&b[y]).unwrap())
    });
    let a_sorted: Vec<f64> = order.iter().map(|&i| a[i]).collect();
    let mut b_by_a: Vec<f64> = order.iter().map(|&i| b[i]).collect();

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(&a_sorted);
    // Joint ties over (a, b) pairs.
    let mut n3 = 0u64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && a_sorted[j + 1] == a_sorted[i] && b_by_a[j + 1] == b_by_a[i] {
                j += 1;
            }
            let c = (j - i + 1) as u64;
            n3 += c * (c - 1) / 2;
            i = j + 1;
        }
    }
    let mut scratch = vec![0.0; n];
    let swaps = count_inversions(&mut b_by_a, &mut scratch);
    // b_by_a is now sorted by b.
    let n2 = tie_pairs(&b_by_a);

    let numerator = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    // Single sqrt over the product keeps perfect agreements at exactly 1.
    let denom = (((n0 - n1) * (n0 - n2)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Param("kendall tau undefined: a ranking is constant".into()));
    }
    Ok(numerator as f64 / denom)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force O(n²) reference routes for the rank metrics.

    /// AUC by counting concordant positive/negative pairs, ties at 1/2.
    pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    /// AP by re-deriving each positive's precision with a full scan.
    pub fn ap_pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let n = scores.len();
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let key = |i: usize| (scores[i], i);
        // i sorts before j when score higher, or equal score and smaller index.
        let before = |i: usize, j: usize| {
            let (si, ii) = key(i);
            let (sj, ij) = key(j);
            si > sj || (si == sj && ii <= ij)
        };
        let mut ap = 0.0;
        for i in 0..n {
            if labels[i] != 1 {
                continue;
            }
            let mut rank = 0usize;
            let mut tp = 0usize;
            for j in 0..n {
                if before(j, i) {
                    rank += 1;
                    if labels[j] == 1 {
                        tp += 1;
                    }
                }
            }
            ap += tp as f64 / rank as f64 / pos;
        }
        ap
    }

    /// Kendall tau-b by examining every pair.
    pub fn tau_pairwise(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let (mut conc, mut disc) = (0i64, 0i64);
        let (mut ties_a, mut ties_b) = (0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let da = a[i] - a[j];
                let db = b[i] - b[j];
                if da == 0.0 && db == 0.0 {
                    ties_a += 1;
                    ties_b += 1;
                } else if da == 0.0 {
                    ties_a += 1;
                } else if db == 0.0 {
                    ties_b += 1;
                } else if (da > 0.0) == (db > 0.0) {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
        let n0 = (n as i64) * (n as i64 - 1) / 2;
        (conc - disc) as f64 / (((n0 - ties_a) * (n0 - ties_b)) as f64).sqrt()
    }
}
