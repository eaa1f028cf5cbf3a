//! Check loss, node-level censored quantile losses and the split objective.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{
    check_tau, censoring_fit, exponential_tail, ipcw_weight, level_hazard, nelson_aalen, require_event_for_rule,
    StepSurvival, TailRule,
};

/// Strictly increasing quantile levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid {
    levels: Arc<[f64]>,
}

impl TauGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::BadInput("tau grid is empty".into()));
        }
        for &t in &levels {
            check_tau(t)?;
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::BadInput("tau grid must be strictly increasing".into()));
        }
        Ok(Self { levels: levels.into() })
    }

    /// `start, start + step, ..., end`, with levels rounded to 12 decimals so
    /// that e.g. `0.05:0.5:0.05` yields exactly `0.15` rather than `0.15000000000000002`.
    pub fn uniform(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(end >= start) {
            return Err(Error::BadInput(format!("bad tau range {start}:{end}:{step}")));
        }
        let count = ((end - start) / step).round() as usize + 1;
        let levels = (0..count)
            .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
            .collect::<Vec<_>>();
        if (levels[count - 1] - end).abs() > 1e-9 {
            return Err(Error::BadInput(format!("step {step} does not divide {start}:{end}")));
        }
        Self::new(levels)
    }

    /// Parses the `start:end:step` form.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::BadInput(format!("tau grid {spec:?} is not start:end:step")));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| Error::BadInput(format!("tau grid {spec:?} has a non-numeric part")))?;
        }
        Self::uniform(v[0], v[1], v[2])
    }

    /// `0.05, 0.10, ..., 0.50`.
    pub fn default_eval() -> Self {
        Self::uniform(0.05, 0.5, 0.05).expect("static grid")
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.levels[0]
    }

    pub fn upper(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(g: TauGrid) -> Self {
        g.levels.to_vec()
    }
}

/// Predicted quantiles on a grid; a step function in `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProcess {
    pub grid: TauGrid,
    pub values: Vec<f64>,
}

impl QuantileProcess {
    pub fn new(grid: TauGrid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::BadInput("quantile process length differs from its grid".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Replaces each value with the running maximum from the left.
pub fn isotonize(values: &mut [f64]) {
    for k in 1..values.len() {
        if values[k] < values[k - 1] {
            values[k] = values[k - 1];
        }
    }
}

/// `ρ_τ(v) = v (τ - I(v < 0))`.
#[inline]
pub fn check_loss(tau: f64, v: f64) -> f64 {
    if v >= 0.0 {
        v * tau
    } else {
        v * (tau - 1.0)
    }
}

/// One training observation as seen by the node losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    pub y: f64,
    pub delta: bool,
}

impl Obs {
    pub fn new(y: f64, delta: bool) -> Self {
        Self { y, delta }
    }
}

/// Canonical member order: ascending time, events before censorings.
pub(crate) fn canonical_cmp(a: &Obs, b: &Obs) -> std::cmp::Ordering {
    a.y.total_cmp(&b.y).then(b.delta.cmp(&a.delta))
}

/// Quantile loss of a node at one level.
///
/// With a censoring fit `g_node` this is the IPCW-weighted mean of
/// `τ(1-τ) ρ_τ(Y ∧ u - q_hat)`; without one the node must be censoring-free and
/// the raw responses are used.
pub fn node_qloss(
    members: &[Obs],
    tau: f64,
    q_hat: f64,
    u: f64,
    g_node: Option<&StepSurvival>,
    floor: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyNode);
    }
    check_tau(tau)?;
    let mut sum = 0.0;
    match g_node {
        Some(g) => {
            for o in members {
                sum += ipcw_weight(o.y, o.delta, u, g, floor) * check_loss(tau, o.y.min(u) - q_hat);
            }
        }
        None => {
            if members.iter().any(|o| !o.delta) {
                return Err(Error::BadInput("uncensored node loss given a censored member".into()));
            }
            for o in members {
                sum += check_loss(tau, o.y - q_hat);
            }
        }
    }
    Ok(tau * (1.0 - tau) * sum / members.len() as f64)
}

/// Grid mean of [`node_qloss`], with node quantiles read off `fit`.
pub fn node_iqloss(
    members: &[Obs],
    grid: &TauGrid,
    fit: &StepSurvival,
    rule: TailRule,
    u: f64,
    g_node: Option<&StepSurvival>,
    floor: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyNode);
    }
    let times: Vec<f64> = members.iter().map(|o| o.y).collect();
    let events: Vec<bool> = members.iter().map(|o| o.delta).collect();
    require_event_for_rule(rule, &events)?;
    let q = fit.quantiles(grid.levels(), rule, &times, &events);
    let mut total = 0.0;
    for (&tau, &qk) in grid.levels().iter().zip(&q) {
        total += node_qloss(members, tau, qk, u, g_node, floor)?;
    }
    Ok(total / grid.len() as f64)
}

/// [`node_iqloss`] with both Nelson-Aalen fits refitted from the members, the way
/// split search evaluates candidate children. The result does not depend on the
/// order of `members`, and equals [`node_iqloss`] up to rounding.
pub fn node_iqloss_refit(members: &[Obs], grid: &TauGrid, rule: TailRule, u: f64, floor: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyNode);
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(canonical_cmp);
    let times: Vec<f64> = sorted.iter().map(|o| o.y).collect();
    let events: Vec<bool> = sorted.iter().map(|o| o.delta).collect();
    require_event_for_rule(rule, &events)?;
    let fit = nelson_aalen(&times, &events)?;
    let q = fit.quantiles(grid.levels(), rule, &times, &events);
    let ctx = LossContext::new(grid, rule, u, floor);
    let mut sums = PrefixSums::default();
    if events.iter().all(|&d| d) {
        return Ok(sums.iqloss(&ctx, &q, &times, None));
    }
    let g = censoring_fit(&times, &events, u)?;
    let r: Vec<f64> = times.iter().map(|&y| y.min(u)).collect();
    let w: Vec<f64> = sorted.iter().map(|o| ipcw_weight(o.y, o.delta, u, &g, floor)).collect();
    Ok(sums.iqloss(&ctx, &q, &r, Some(&w)))
}

/// Prefix sums of `w` and `w r` over ascending responses `r`, so that each
/// level's `Σ w ρ_τ(r - q)` costs one binary search.
#[derive(Debug, Default)]
pub(crate) struct PrefixSums {
    cw: Vec<f64>,
    cwr: Vec<f64>,
}

impl PrefixSums {
    /// Grid mean of `τ(1-τ) Σ w_i ρ_τ(r_i - q_τ) / m`; `w = None` means unit weights.
    fn iqloss(&mut self, ctx: &LossContext, q: &[f64], r: &[f64], w: Option<&[f64]>) -> f64 {
        let m = r.len();
        self.cw.clear();
        self.cwr.clear();
        self.cw.push(0.0);
        self.cwr.push(0.0);
        let (mut a, mut b) = (0.0, 0.0);
        for (i, &ri) in r.iter().enumerate() {
            let wi = w.map_or(1.0, |w| w[i]);
            a += wi;
            b += wi * ri;
            self.cw.push(a);
            self.cwr.push(b);
        }
        let mut total = 0.0;
        for (lvl, (&tau, &qk)) in ctx.levels.iter().zip(q).enumerate() {
            let k = r.partition_point(|&v| v < qk);
            let above = ((self.cwr[m] - self.cwr[k]) - qk * (self.cw[m] - self.cw[k])).max(0.0);
            let below = (qk * self.cw[k] - self.cwr[k]).max(0.0);
            let sum = tau * above + (1.0 - tau) * below;
            total += ctx.level_weights[lvl] * sum / m as f64;
        }
        total / ctx.levels.len() as f64
    }
}

/// `n_P L_P - n_L L_L - n_R L_R`.
pub fn split_gain(
    parent_iqloss: f64,
    n_parent: usize,
    left_iqloss: f64,
    n_left: usize,
    right_iqloss: f64,
    n_right: usize,
) -> f64 {
    n_parent as f64 * parent_iqloss - n_left as f64 * left_iqloss - n_right as f64 * right_iqloss
}

/// Per-grid constants of the node loss.
#[derive(Debug, Clone)]
pub(crate) struct LossContext {
    levels: Vec<f64>,
    hazards: Vec<f64>,
    level_weights: Vec<f64>,
    rule: TailRule,
    u: f64,
    floor: f64,
}

impl LossContext {
    pub(crate) fn new(grid: &TauGrid, rule: TailRule, u: f64, floor: f64) -> Self {
        Self {
            levels: grid.levels().to_vec(),
            hazards: grid.levels().iter().map(|&t| level_hazard(t)).collect(),
            level_weights: grid.levels().iter().map(|&t| t * (1.0 - t)).collect(),
            rule,
            u,
            floor,
        }
    }
}

/// Reusable buffers for [`sorted_iqloss`].
#[derive(Debug, Default)]
pub(crate) struct LossScratch {
    jump_times: Vec<f64>,
    jump_cum: Vec<f64>,
    weights: Vec<f64>,
    r: Vec<f64>,
    q: Vec<f64>,
    sums: PrefixSums,
}

/// Allocation-free [`node_iqloss_refit`] for members already in canonical order.
/// Produces bit-identical results.
pub(crate) fn sorted_iqloss(ctx: &LossContext, ys: &[f64], ds: &[bool], s: &mut LossScratch) -> f64 {
    let m = ys.len();
    debug_assert!(m > 0 && ds.len() == m);

    // Nelson-Aalen for T
    s.jump_times.clear();
    s.jump_cum.clear();
    let mut cum = 0.0;
    let mut start = 0;
    while start < m {
        let t = ys[start];
        let mut end = start;
        let mut d = 0usize;
        while end < m && ys[end] == t {
            d += ds[end] as usize;
            end += 1;
        }
        if d > 0 {
            cum += d as f64 / (m - start) as f64;
            s.jump_times.push(t);
            s.jump_cum.push(cum);
        }
        start = end;
    }

    // node quantiles on the grid
    s.q.clear();
    let last_jump = s.jump_times.last().map(|&t| (t, cum));
    let mut k = 0;
    for &h in &ctx.hazards {
        while k < s.jump_cum.len() && s.jump_cum[k] < h {
            k += 1;
        }
        let q = if k < s.jump_times.len() {
            s.jump_times[k]
        } else {
            tail_sorted(ctx.rule, h, last_jump, ys, ds)
        };
        s.q.push(q);
    }

    if ds.iter().all(|&d| d) {
        return s.sums.iqloss(ctx, &s.q, ys, None);
    }

    // Nelson-Aalen for C on Y ∧ u, and weights at left limits
    let u = ctx.u;
    s.r.clear();
    s.r.extend(ys.iter().map(|&y| y.min(u)));
    s.weights.clear();
    s.weights.resize(m, 0.0);
    let mut cum_c: f64 = 0.0;
    let mut weight_at = (0.0, 1.0 / 1f64.max(ctx.floor));
    let mut start = 0;
    while start < m {
        let t = s.r[start];
        let mut end = start;
        let mut c = 0usize;
        while end < m && s.r[end] == t {
            if ys[end] > u || ds[end] {
                if weight_at.0 != cum_c {
                    weight_at = (cum_c, 1.0 / (-cum_c).exp().max(ctx.floor));
                }
                s.weights[end] = weight_at.1;
            } else {
                c += 1;
            }
            end += 1;
        }
        if c > 0 {
            cum_c += c as f64 / (m - start) as f64;
        }
        start = end;
    }
    s.sums.iqloss(ctx, &s.q, &s.r, Some(&s.weights))
}

fn tail_sorted(rule: TailRule, h: f64, last_jump: Option<(f64, f64)>, ys: &[f64], ds: &[bool]) -> f64 {
    match rule {
        TailRule::LargestObservation => ys[ys.len() - 1],
        TailRule::LargestUncensored => {
            let k = ds.iter().rposition(|&d| d).expect("node has an uncensored member");
            ys[k]
        }
        TailRule::ExponentialExtrapolation => match last_jump {
            Some((t_max, lam)) if t_max > 0.0 && lam > 0.0 => exponential_tail(h, lam, t_max),
            _ => ys[ys.len() - 1],
        },
    }
}
