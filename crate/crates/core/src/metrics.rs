//! Ranking and calibration metrics.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{check_dim, Error, Result};

/// Probability clamp used by [`log_loss`] so that saturated predictions stay finite.
pub const LOG_LOSS_EPS: f64 = 1e-15;

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// ROC AUC via the rank-sum statistic with average ranks for ties (a tied
/// positive/negative pair counts one half).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_dim(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of (1-based) ranks of positives, ties sharing their average rank.
    // Twice the rank is an integer, so accumulate doubled ranks exactly.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j, average (i + 1 + j) / 2
        let doubled_avg = (i + 1 + j) as u64;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        doubled_rank_sum += doubled_avg * tied_pos;
        i = j;
    }
    let pos = pos as u64;
    let doubled_u = doubled_rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// User-grouped AUC: per-user AUC averaged with impression-count weights, over
/// users whose impressions include both classes.
pub fn gauc<U: Hash + Eq>(scores: &[f64], labels: &[u8], users: &[U]) -> Result<f64> {
    check_dim(scores.len(), labels.len())?;
    check_dim(scores.len(), users.len())?;
    // groups in order of first appearance, for a deterministic summation order
    let mut index: HashMap<&U, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (row, user) in users.iter().enumerate() {
        let g = *index.entry(user).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(row);
    }
    let mut weighted = 0.0;
    let mut weight = 0.0;
    let mut scored = Vec::new();
    let mut s = Vec::new();
    let mut l = Vec::new();
    for rows in &groups {
        s.clear();
        l.clear();
        s.extend(rows.iter().map(|&r| scores[r]));
        l.extend(rows.iter().map(|&r| labels[r]));
        let (pos, neg) = class_counts(&l);
        if pos == 0 || neg == 0 {
            continue;
        }
        let a = auc(&s, &l)?;
        let n = rows.len() as f64;
        weighted += n * a;
        weight += n;
        scored.push(a);
    }
    if let [only] = scored[..] {
        // n * a / n need not round back to a
        return Ok(only);
    }
    if weight == 0.0 {
        return Err(Error::DegenerateLabels(
            "gAUC needs a user with both classes",
        ));
    }
    Ok(weighted / weight)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn log_loss(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_dim(preds.len(), labels.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Relative improvement over a reference, in percent.
pub fn rel_imp(metric: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference must be positive, got {reference}"
        )));
    }
    Ok((metric - reference) / reference * 100.0)
}

/// O(n²) pair counting; the reference the rank-sum AUC is tested against.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_dim(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels("AUC needs both classes"));
    }
    let mut doubled = 0u64;
    for (i, &yi) in labels.iter().enumerate() {
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj != 0 {
                continue;
            }
            if scores[i] > scores[j] {
                doubled += 2;
            } else if scores[i] == scores[j] {
                doubled += 1;
            }
        }
    }
    Ok(doubled as f64 / 2.0 / (pos as f64 * neg as f64))
}
