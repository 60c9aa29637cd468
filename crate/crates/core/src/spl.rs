//! Self-paced sample selection.
//!
//! Every sample gets a ranking score `ln p + gamma * H`: its log-likelihood
//! plus an entropy bonus that lifts samples from sparsely populated target
//! regions. A weighting scheme turns the score into a weight `v` in `[0, 1]`
//! given the pace parameter `lambda` (and `lambda'` for the mixture scheme).
//! Each closed form below is the maximiser over `v` of the per-sample
//! objective `v * score + regulariser(v)` of its scheme.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// `ln p + gamma * H`.
#[inline]
pub fn ranking_score(log_lik: f64, entropy: f64, gamma: f64) -> f64 {
    log_lik + gamma * entropy
}

/// A log-likelihood after capping: densities at or below the cap are excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CappedLogLik {
    Finite(f64),
    /// `ln 0 = -inf`; the sample must receive weight 0 under every scheme.
    Excluded,
}

impl CappedLogLik {
    pub fn value(self) -> Option<f64> {
        match self {
            CappedLogLik::Finite(v) => Some(v),
            CappedLogLik::Excluded => None,
        }
    }
}

/// `ln p` when `p > epsilon`, otherwise [`CappedLogLik::Excluded`].
pub fn capped_loglik(density: f64, epsilon: f64) -> CappedLogLik {
    if density > epsilon {
        CappedLogLik::Finite(math::ln(density))
    } else {
        CappedLogLik::Excluded
    }
}

/// `1` iff `score > -lambda`.
#[inline]
pub fn weight_hard(score: f64, lambda: f64) -> f64 {
    if score > -lambda {
        1.0
    } else {
        0.0
    }
}

/// Hard outside the band `(-lambda, -lambda')`, `-zeta / score - zeta / lambda`
/// inside it, with `zeta = (1/lambda' - 1/lambda)^-1`.
pub fn weight_mixture(score: f64, lambda: f64, lambda_prime: f64) -> Result<f64> {
    if !(lambda > lambda_prime && lambda_prime > 0.0) {
        return Err(Error::config("mixture weighting needs lambda > lambda' > 0"));
    }
    Ok(if score >= -lambda_prime {
        1.0
    } else if score <= -lambda {
        0.0
    } else {
        let zeta = 1.0 / (1.0 / lambda_prime - 1.0 / lambda);
        (-zeta / score - zeta / lambda).clamp(0.0, 1.0)
    })
}

/// `(score + lambda) / lambda` on `score >= -lambda`, clamped to at most 1.
pub fn weight_linear(score: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::config("linear weighting needs lambda > 0"));
    }
    Ok(if score >= -lambda {
        ((score + lambda) / lambda).min(1.0)
    } else {
        0.0
    })
}

/// `ln(zeta - score) / ln(zeta)` on `score >= -lambda`, `zeta = 1 - lambda`.
pub fn weight_log(score: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::config("log weighting needs 0 < lambda < 1"));
    }
    if score < -lambda {
        return Ok(0.0);
    }
    if score >= 0.0 {
        return Ok(1.0);
    }
    let zeta = 1.0 - lambda;
    Ok((math::ln(zeta - score) / math::ln(zeta)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Hard,
    Linear,
    Log,
    Mixture,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 4] = [WeightScheme::Hard, WeightScheme::Linear, WeightScheme::Log, WeightScheme::Mixture];

    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Hard => "hard",
            WeightScheme::Linear => "linear",
            WeightScheme::Log => "log",
            WeightScheme::Mixture => "mixture",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        WeightScheme::ALL.into_iter().find(|w| w.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaDecay {
    /// `gamma0 * (1 - t / (P - 1))`; zero at the last pace.
    LinearToZero,
    /// `gamma0 * rate^t`.
    Multiplicative(f64),
}

/// Threshold above which samples count as underrepresented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaPolicy {
    Absolute(f64),
    /// The `q`-quantile of the current entropies.
    Quantile(f64),
}

impl BetaPolicy {
    pub fn resolve(self, entropies: &[f64]) -> Result<f64> {
        match self {
            BetaPolicy::Absolute(b) => Ok(b),
            BetaPolicy::Quantile(q) => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::config("beta quantile must lie in [0, 1]"));
                }
                if entropies.is_empty() {
                    return Err(Error::precondition("beta quantile of no entropies"));
                }
                let mut sorted = entropies.to_vec();
                sorted.sort_by(f64::total_cmp);
                Ok(sorted[rank_count(q, sorted.len()).saturating_sub(1)])
            }
        }
    }
}

/// `ceil(fraction * n)` guarded against rounding noise such as `0.7 * 10 = 7.000000000000001`.
fn rank_count(fraction: f64, n: usize) -> usize {
    let c = math::ceil(fraction * n as f64 - 1e-9);
    (c.max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaceSchedule {
    pub paces: usize,
    /// Share of eligible samples selected at the first pace.
    pub first_fraction: f64,
    pub gamma0: f64,
    pub gamma_decay: GammaDecay,
    /// Share of selected samples placed in the soft band of the mixture scheme.
    pub soft_fraction: f64,
    /// Share of samples whose likelihood is capped when capping is on.
    pub cap_quantile: f64,
    pub beta: BetaPolicy,
    /// The log scheme needs `0 < lambda < 1`; relative scores are rescaled so
    /// the pace threshold lands at `-log_lambda`.
    pub log_lambda: f64,
    /// Weight given to selected samples whose score falls at or below the
    /// threshold (kept samples and ties) under the soft schemes.
    pub min_selected_weight: f64,
}

impl Default for PaceSchedule {
    fn default() -> Self {
        PaceSchedule {
            paces: 6,
            first_fraction: 0.5,
            gamma0: 5.0,
            gamma_decay: GammaDecay::LinearToZero,
            soft_fraction: 0.15,
            cap_quantile: 0.1,
            beta: BetaPolicy::Quantile(0.9),
            log_lambda: 0.5,
            min_selected_weight: 0.1,
        }
    }
}

impl PaceSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.paces == 0 {
            return Err(Error::config("at least one pace is required"));
        }
        if !(self.first_fraction > 0.0 && self.first_fraction <= 1.0) {
            return Err(Error::config("first fraction must lie in (0, 1]"));
        }
        if !(self.gamma0 >= 0.0) || !self.gamma0.is_finite() {
            return Err(Error::config("gamma0 must be finite and non-negative"));
        }
        if let GammaDecay::Multiplicative(r) = self.gamma_decay {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config("gamma decay rate must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.soft_fraction) {
            return Err(Error::config("soft fraction must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.cap_quantile) {
            return Err(Error::config("cap quantile must lie in [0, 1)"));
        }
        if !(self.log_lambda > 0.0 && self.log_lambda < 1.0) {
            return Err(Error::config("log-scheme lambda must lie in (0, 1)"));
        }
        if !(self.min_selected_weight > 0.0 && self.min_selected_weight <= 1.0) {
            return Err(Error::config("minimum selected weight must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Target selected share at `pace`: rises linearly from `first_fraction` to 1.
    pub fn fraction(&self, pace: usize) -> f64 {
        if self.paces <= 1 {
            return self.first_fraction;
        }
        if pace + 1 >= self.paces {
            return 1.0;
        }
        self.first_fraction + pace as f64 * (1.0 - self.first_fraction) / (self.paces - 1) as f64
    }

    pub fn gamma(&self, pace: usize) -> f64 {
        match self.gamma_decay {
            GammaDecay::LinearToZero => {
                if self.paces <= 1 || pace + 1 >= self.paces {
                    0.0
                } else {
                    self.gamma0 * (1.0 - pace as f64 / (self.paces - 1) as f64)
                }
            }
            GammaDecay::Multiplicative(rate) => self.gamma0 * libm::pow(rate, pace as f64),
        }
    }
}

/// Model outputs for one candidate sample at the start of a pace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub log_lik: f64,
    pub entropy: f64,
}

/// Outcome of [`schedule_pace`]; per-sample vectors are aligned with the candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub pace: usize,
    pub fraction: f64,
    /// Pace parameter, measured from `score_offset`.
    pub lambda: f64,
    pub lambda_prime: f64,
    pub gamma: f64,
    /// Likelihood cap; `None` when capping is off.
    pub epsilon: Option<f64>,
    /// Best eligible score. Weights are computed on `score - score_offset`,
    /// which is never positive.
    pub score_offset: f64,
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub excluded: Vec<bool>,
    pub kept_from_previous: BTreeSet<u64>,
}

impl SelectionState {
    pub fn selected_ids(&self) -> BTreeSet<u64> {
        self.ids.iter().zip(&self.weights).filter(|(_, &v)| v > 0.0).map(|(&id, _)| id).collect()
    }

    pub fn selected_count(&self) -> usize {
        self.weights.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }
}

/// Weight of a score relative to the pace's best score under `scheme`.
pub fn scheme_weight(scheme: WeightScheme, relative_score: f64, lambda: f64, lambda_prime: f64, log_lambda: f64) -> Result<f64> {
    match scheme {
        WeightScheme::Hard => Ok(weight_hard(relative_score, lambda)),
        WeightScheme::Linear => weight_linear(relative_score, lambda),
        WeightScheme::Mixture => weight_mixture(relative_score, lambda, lambda_prime),
        WeightScheme::Log => weight_log(relative_score * log_lambda / lambda, log_lambda),
    }
}

/// Selects the samples of one pace.
///
/// With `capping`, the `floor(cap_quantile * n)` lowest-likelihood samples
/// (ties by ascending id) are excluded and `epsilon` is the largest excluded
/// density. Samples in `kept` that are not excluded stay selected. The rest
/// of the quota, `ceil(fraction * eligible)`, is filled by descending score
/// with ties broken by ascending id, and `lambda` is placed between the last
/// sample taken and the first one left out.
pub fn schedule_pace(
    candidates: &[Candidate],
    schedule: &PaceSchedule,
    pace: usize,
    kept: &BTreeSet<u64>,
    scheme: WeightScheme,
    capping: bool,
) -> Result<SelectionState> {
    schedule_pace_sticky(candidates, schedule, pace, kept, &BTreeSet::new(), scheme, capping)
}

/// As [`schedule_pace`], but with capping the samples in `excluded_before`
/// stay excluded: they fill the `floor(cap_quantile * n)` slots first (lowest
/// likelihood first if there are too many) and only the remaining slots go
/// to the lowest-likelihood other samples. `epsilon` is then the largest
/// density among the excluded samples under the current model.
pub fn schedule_pace_sticky(
    candidates: &[Candidate],
    schedule: &PaceSchedule,
    pace: usize,
    kept: &BTreeSet<u64>,
    excluded_before: &BTreeSet<u64>,
    scheme: WeightScheme,
    capping: bool,
) -> Result<SelectionState> {
    schedule.validate()?;
    if candidates.is_empty() {
        return Err(Error::precondition("no candidates to schedule"));
    }
    if pace >= schedule.paces {
        return Err(Error::precondition("pace index beyond the schedule"));
    }
    if candidates.iter().any(|c| c.log_lik.is_nan() || !c.entropy.is_finite()) {
        return Err(Error::numeric("candidate log-likelihood or entropy is not a number"));
    }
    let n = candidates.len();
    let gamma = schedule.gamma(pace);
    let fraction = schedule.fraction(pace);

    let mut excluded = vec![false; n];
    let mut epsilon = None;
    if capping {
        let k = math::floor(schedule.cap_quantile * n as f64) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let sticky = |i: usize| !excluded_before.contains(&candidates[i].id);
            sticky(a)
                .cmp(&sticky(b))
                .then(candidates[a].log_lik.total_cmp(&candidates[b].log_lik))
                .then(candidates[a].id.cmp(&candidates[b].id))
        });
        for &i in &order[..k] {
            excluded[i] = true;
        }
        let top = order[..k].iter().map(|&i| candidates[i].log_lik).fold(f64::NEG_INFINITY, f64::max);
        epsilon = Some(if k == 0 { 0.0 } else { math::exp(top) });
    }

    let scores: Vec<f64> = candidates.iter().map(|c| ranking_score(c.log_lik, c.entropy, gamma)).collect();
    let eligible: Vec<usize> = (0..n).filter(|&i| !excluded[i]).collect();
    if eligible.is_empty() {
        return Err(Error::config("every sample was excluded by the likelihood cap"));
    }
    let quota = rank_count(fraction, eligible.len()).max(1);
    let kept_eligible: BTreeSet<u64> = eligible
        .iter()
        .map(|&i| candidates[i].id)
        .filter(|id| kept.contains(id))
        .collect();
    let mut rest: Vec<usize> = eligible.iter().copied().filter(|&i| !kept.contains(&candidates[i].id)).collect();
    rest.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(candidates[a].id.cmp(&candidates[b].id)));
    let take = quota.saturating_sub(kept_eligible.len()).min(rest.len());

    let mut selected = vec![false; n];
    for &i in &eligible {
        if kept_eligible.contains(&candidates[i].id) {
            selected[i] = true;
        }
    }
    for &i in &rest[..take] {
        selected[i] = true;
    }

    let offset = eligible.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let lowest = eligible.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
    let margin = 1e-6 * (offset - lowest).max(1.0);
    let threshold = if take == rest.len() {
        lowest - margin
    } else if take == 0 {
        scores[rest[0]]
    } else {
        0.5 * (scores[rest[take - 1]] + scores[rest[take]])
    };
    let lambda = (offset - threshold).max(margin);

    // lambda' puts the lowest `soft_fraction` of the selected samples into the soft band.
    let mut chosen: Vec<f64> = (0..n).filter(|&i| selected[i]).map(|i| scores[i]).collect();
    chosen.sort_by(f64::total_cmp);
    let n_soft = math::floor(schedule.soft_fraction * chosen.len() as f64 + 0.5) as usize;
    let band_edge = if n_soft == 0 {
        chosen[0]
    } else if n_soft >= chosen.len() {
        offset
    } else {
        0.5 * (chosen[n_soft - 1] + chosen[n_soft])
    };
    let lambda_prime = (offset - band_edge).clamp(lambda * 1e-6, lambda * (1.0 - 1e-6));

    let floor = match scheme {
        WeightScheme::Hard => 1.0,
        _ => schedule.min_selected_weight,
    };
    let mut weights = vec![0.0; n];
    for i in 0..n {
        if selected[i] {
            let raw = scheme_weight(scheme, scores[i] - offset, lambda, lambda_prime, schedule.log_lambda)?;
            weights[i] = raw.max(floor);
        }
    }

    Ok(SelectionState {
        pace,
        fraction,
        lambda,
        lambda_prime,
        gamma,
        epsilon,
        score_offset: offset,
        ids: candidates.iter().map(|c| c.id).collect(),
        scores,
        weights,
        excluded,
        kept_from_previous: kept_eligible,
    })
}
