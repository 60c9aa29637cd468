//! Accuracy and regression-fairness metrics.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Smoothing added to both losses of a pair when either of them is zero.
pub const ZERO_LOSS_SMOOTHING: f64 = 1e-8;

fn check_pairs(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape {
            what: "predictions",
            expected: targets.len(),
            found: predictions.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::precondition("metrics need at least one prediction"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs(predictions, targets)?;
    let total: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).abs()).sum();
    Ok(total / targets.len() as f64)
}

/// Cumulative score: percentage of predictions with `|p - y| <= level`.
pub fn cs(predictions: &[f64], targets: &[f64], level: f64) -> Result<f64> {
    check_pairs(predictions, targets)?;
    if !(level >= 0.0) {
        return Err(Error::precondition("error level must be non-negative"));
    }
    let hits = predictions.iter().zip(targets).filter(|(p, y)| (*p - *y).abs() <= level).count();
    Ok(100.0 * hits as f64 / targets.len() as f64)
}

/// Mean absolute error and sample count per target group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLosses {
    /// Indexed by group; `None` for empty groups.
    pub per_group: Vec<Option<(f64, usize)>>,
}

impl GroupLosses {
    pub fn from_predictions(predictions: &[f64], targets: &[f64], groups: &[usize], num_groups: usize) -> Result<Self> {
        check_pairs(predictions, targets)?;
        if groups.len() != targets.len() {
            return Err(Error::Shape {
                what: "group labels",
                expected: targets.len(),
                found: groups.len(),
            });
        }
        let mut sums = alloc::vec![(0.0, 0usize); num_groups];
        for ((p, y), &g) in predictions.iter().zip(targets).zip(groups) {
            let slot = sums.get_mut(g).ok_or(Error::Shape {
                what: "group index",
                expected: num_groups,
                found: g,
            })?;
            slot.0 += (p - y).abs();
            slot.1 += 1;
        }
        Ok(GroupLosses {
            per_group: sums
                .into_iter()
                .map(|(s, c)| if c > 0 { Some((s / c as f64, c)) } else { None })
                .collect(),
        })
    }

    pub fn from_losses(losses: &[f64]) -> Self {
        GroupLosses {
            per_group: losses.iter().map(|&l| Some((l, 1))).collect(),
        }
    }

    /// Losses of the non-empty groups in group order.
    pub fn losses(&self) -> Vec<f64> {
        self.per_group.iter().flatten().map(|&(l, _)| l).collect()
    }
}

/// `min(a / b, b / a)`. When either loss is zero both are smoothed by
/// [`ZERO_LOSS_SMOOTHING`]; a negative or non-finite loss is an error.
pub fn pairwise_fairness(loss_a: f64, loss_b: f64) -> Result<f64> {
    if !(loss_a >= 0.0 && loss_b >= 0.0) || !loss_a.is_finite() || !loss_b.is_finite() {
        return Err(Error::precondition("group losses must be finite and non-negative"));
    }
    let (a, b) = if loss_a == 0.0 || loss_b == 0.0 {
        (loss_a + ZERO_LOSS_SMOOTHING, loss_b + ZERO_LOSS_SMOOTHING)
    } else {
        (loss_a, loss_b)
    };
    Ok((a / b).min(b / a))
}

/// Unweighted mean of [`pairwise_fairness`] over all unordered pairs of
/// non-empty groups. Losses are sorted first, so the value does not depend on
/// group order at all.
pub fn fair(losses: &GroupLosses) -> Result<f64> {
    let mut l = losses.losses();
    if l.len() < 2 {
        return Err(Error::precondition("fairness needs at least two non-empty groups"));
    }
    l.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..l.len() {
        for j in i + 1..l.len() {
            total += pairwise_fairness(l[i], l[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
