//! Nelson-Aalen cumulative hazard fits, survival evaluation, quantile
//! inversion with tail rules and censoring weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How quantile levels beyond the invertible range of a fit are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// Largest observed time in the node.
    #[default]
    LargestObservation,
    /// Largest uncensored observed time in the node.
    LargestUncensored,
    /// Exponential tail with rate `Λ(t_max) / t_max` fitted at the last event time.
    ExponentialExtrapolation,
}

/// Right-continuous step cumulative hazard.
///
/// `Λ(t)` is the sum of `increments[k]` over `times[k] <= t`, and the survival
/// curve is `exp(-Λ(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival {
    times: Vec<f64>,
    increments: Vec<f64>,
    n_at_risk: Vec<usize>,
    cumulative: Vec<f64>,
}

impl StepSurvival {
    /// The fit that never jumps: `Λ ≡ 0`, `S ≡ 1`.
    pub fn empty() -> Self {
        Self {
            times: Vec::new(),
            increments: Vec::new(),
            n_at_risk: Vec::new(),
            cumulative: Vec::new(),
        }
    }

    /// Rebuilds a fit from its stored parts, checking the step-function invariants.
    pub fn from_parts(times: Vec<f64>, increments: Vec<f64>, n_at_risk: Vec<usize>) -> Result<Self> {
        if times.len() != increments.len() || times.len() != n_at_risk.len() {
            return Err(Error::BadInput("step fit arrays differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::BadInput("step fit times must be strictly increasing".into()));
        }
        if increments.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
            return Err(Error::BadInput("step fit increments must be finite and nonnegative".into()));
        }
        let cumulative = running_sum(&increments);
        Ok(Self {
            times,
            increments,
            n_at_risk,
            cumulative,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn n_at_risk(&self) -> &[usize] {
        &self.n_at_risk
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Λ(∞)`, the hazard accumulated at the last jump.
    pub fn total_hazard(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        // number of jumps at or before t
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    fn cumulative_hazard_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// `S(t) = exp(-Λ(t))`.
    pub fn survival_at(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// `S(t-) = exp(-Λ(t-))`.
    pub fn survival_left_limit(&self, t: f64) -> f64 {
        (-self.cumulative_hazard_left(t)).exp()
    }

    /// Largest quantile level the fit can invert, `1 - exp(-Λ(∞))`.
    pub fn max_estimable_tau(&self) -> f64 {
        -(-self.total_hazard()).exp_m1()
    }

    /// Quantile of the fitted distribution at level `tau`.
    ///
    /// Within the invertible range this is the smallest jump time with
    /// `S(t) <= 1 - tau`, evaluated as `Λ(t) >= -ln(1 - tau)`. Beyond it the tail
    /// rule answers, using the node observations the fit was built from.
    pub fn quantile(&self, tau: f64, rule: TailRule, node_times: &[f64], node_events: &[bool]) -> Result<f64> {
        check_tau(tau)?;
        let h = level_hazard(tau);
        let k = self.cumulative.partition_point(|&c| c < h);
        if k < self.times.len() {
            return Ok(self.times[k]);
        }
        require_event_for_rule(rule, node_events)?;
        Ok(tail_value(rule, h, self.last_jump(), node_times, node_events))
    }

    /// Quantiles at every level of an ascending grid. Agrees exactly with
    /// [`StepSurvival::quantile`] level by level.
    ///
    /// Panics if the `LargestUncensored` tail is needed and `node_events` has no event.
    pub fn quantiles(&self, levels: &[f64], rule: TailRule, node_times: &[f64], node_events: &[bool]) -> Vec<f64> {
        let mut out = Vec::with_capacity(levels.len());
        let mut k = 0;
        for &tau in levels {
            let h = level_hazard(tau);
            while k < self.cumulative.len() && self.cumulative[k] < h {
                k += 1;
            }
            if k < self.times.len() {
                out.push(self.times[k]);
            } else {
                out.push(tail_value(rule, h, self.last_jump(), node_times, node_events));
            }
        }
        out
    }

    fn last_jump(&self) -> Option<(f64, f64)> {
        self.times.last().map(|&t| (t, self.total_hazard()))
    }
}

fn running_sum(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .map(|&v| {
            acc += v;
            acc
        })
        .collect()
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// `LargestUncensored` has no answer for a node without events.
pub(crate) fn require_event_for_rule(rule: TailRule, node_events: &[bool]) -> Result<()> {
    if rule == TailRule::LargestUncensored && !node_events.iter().any(|&e| e) {
        Err(Error::NoUncensored)
    } else {
        Ok(())
    }
}

/// `-ln(1 - tau)`: the cumulative hazard a fit must reach to invert level `tau`.
#[inline]
pub(crate) fn level_hazard(tau: f64) -> f64 {
    -(-tau).ln_1p()
}

/// Tail answer for a level whose hazard target `h` exceeds the fit's total hazard.
/// `last_jump` is `(t_max, Λ(t_max))` when the fit has any jumps.
pub(crate) fn tail_value(
    rule: TailRule,
    h: f64,
    last_jump: Option<(f64, f64)>,
    node_times: &[f64],
    node_events: &[bool],
) -> f64 {
    let largest = || node_times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match rule {
        TailRule::LargestObservation => largest(),
        TailRule::LargestUncensored => {
            let v = node_times
                .iter()
                .zip(node_events)
                .filter(|(_, &e)| e)
                .map(|(&t, _)| t)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(v.is_finite(), "tail rule needs an uncensored observation in the node");
            v
        }
        TailRule::ExponentialExtrapolation => match last_jump {
            Some((t_max, lam)) if t_max > 0.0 && lam > 0.0 => exponential_tail(h, lam, t_max),
            // an exponential law needs positive support and a positive rate
            _ => largest(),
        },
    }
}

#[inline]
pub(crate) fn exponential_tail(h: f64, lam: f64, t_max: f64) -> f64 {
    h / (lam / t_max)
}

/// Nelson-Aalen estimator. At each distinct time with `d >= 1` events among the
/// `r` subjects whose time is at or beyond it, the hazard jumps by `d / r`.
pub fn nelson_aalen(times: &[f64], events: &[bool]) -> Result<StepSurvival> {
    if times.is_empty() {
        return Err(Error::EmptyNode);
    }
    if times.len() != events.len() {
        return Err(Error::BadInput("times and events differ in length".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::BadInput("non-finite time".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let n = times.len();
    let mut out_t = Vec::new();
    let mut out_inc = Vec::new();
    let mut out_r = Vec::new();
    let mut start = 0;
    while start < n {
        let t = times[order[start]];
        let mut end = start;
        let mut d = 0usize;
        while end < n && times[order[end]] == t {
            d += events[order[end]] as usize;
            end += 1;
        }
        if d > 0 {
            let r = n - start;
            out_t.push(t);
            out_inc.push(d as f64 / r as f64);
            out_r.push(r);
        }
        start = end;
    }
    let cumulative = running_sum(&out_inc);
    Ok(StepSurvival {
        times: out_t,
        increments: out_inc,
        n_at_risk: out_r,
        cumulative,
    })
}

/// `Δ = I(Y > u) + I(Y <= u, δ = 1)`: whether the truncated response `T ∧ u` is observed.
#[inline]
pub fn truncated_observed(y: f64, delta: bool, u: f64) -> bool {
    y > u || delta
}

/// Nelson-Aalen fit for the censoring time `C`, under truncation at `u`: an
/// observation is a censoring event iff `δ = 0` and `Y <= u`, and every
/// observation is at risk until `Y ∧ u`.
pub fn censoring_fit(times: &[f64], deltas: &[bool], u: f64) -> Result<StepSurvival> {
    let truncated: Vec<f64> = times.iter().map(|&y| y.min(u)).collect();
    let events: Vec<bool> = times
        .iter()
        .zip(deltas)
        .map(|(&y, &d)| !truncated_observed(y, d, u))
        .collect();
    nelson_aalen(&truncated, &events)
}

/// `Δ / max(Ĝ((Y ∧ u)-), floor)`.
pub fn ipcw_weight(y: f64, delta: bool, u: f64, g: &StepSurvival, floor: f64) -> f64 {
    if truncated_observed(y, delta, u) {
        1.0 / g.survival_left_limit(y.min(u)).max(floor)
    } else {
        0.0
    }
}
