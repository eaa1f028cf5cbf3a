//! Simulation designs with known conditional quantiles.
//!
//! The response is `T = f(X) + g(Z) + ε` with `Z ~ Bernoulli(0.5)` and
//! `ε ~ N(0, σ²)`. Homogeneous designs use `g(Z) = γZ`; heterogeneous ones use
//! `g(Z) = γξZ` with `ξ ~ N(0, 1)`. Censoring is uniform with `Z`-dependent
//! bounds calibrated to a target censoring rate.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FKind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    Homo,
    Hete,
}

/// Signal part of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// `Xβ` with `X ~ N(0, Σ)`, `Σ_ij = rho^|i-j|`, and the first `active` entries of `β` equal to 1.
    Linear { rho: f64, active: usize },
    /// The sine/cosine design on `Unif([0,1]^p)` with four signal features.
    Nonlinear,
    /// `Xβ` with `X ~ N(0, Σ)`, `Σ` the identity except `Σ_12 = Σ_21 = rho12`.
    Correlated { beta: Vec<f64>, rho12: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// `σ² = (Var f(X) + Var g(Z)) / snr`.
    Snr(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub signal: Signal,
    pub g_kind: GKind,
    /// Coefficient `γ` of `Z`.
    pub z_scale: f64,
    pub n: usize,
    pub p: usize,
    pub noise: Noise,
    pub target_censoring: f64,
    pub seed: u64,
}

/// Data dimensions of the predictive-accuracy study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dims {
    /// n = 100, p = 10
    Low,
    /// n = 100, p = 200
    High,
}

impl Dims {
    pub fn np(self) -> (usize, usize) {
        match self {
            Dims::Low => (100, 10),
            Dims::High => (100, 200),
        }
    }
}

/// Importance case-study coefficients on `X_1..X_6`.
pub const IMPORTANCE_BETA: [f64; 6] = [1.4, 1.4, 1.4, 0.0, 1.0, 2.0];

impl SimSetting {
    pub fn with_dims(f_kind: FKind, g_kind: GKind, dims: Dims, snr: f64, seed: u64) -> Self {
        let (n, p) = dims.np();
        Self::predictive(f_kind, g_kind, n, p, snr, seed)
    }

    pub fn predictive(f_kind: FKind, g_kind: GKind, n: usize, p: usize, snr: f64, seed: u64) -> Self {
        let signal = match f_kind {
            FKind::Linear => Signal::Linear { rho: 0.35, active: 5 },
            FKind::Nonlinear => Signal::Nonlinear,
        };
        Self {
            signal,
            g_kind,
            z_scale: 1.0,
            n,
            p,
            noise: Noise::Snr(snr),
            target_censoring: 0.3,
            seed,
        }
    }

    /// Importance case study: `β = (1.4, 1.4, 1.4, 0, 1, 2)`, `γ = 2`, `σ = 0.1`.
    pub fn importance(g_kind: GKind, rho12: f64, n: usize, seed: u64) -> Self {
        Self {
            signal: Signal::Correlated {
                beta: IMPORTANCE_BETA.to_vec(),
                rho12,
            },
            g_kind,
            z_scale: 2.0,
            n,
            p: 6,
            noise: Noise::Sigma(0.1),
            target_censoring: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need = match &self.signal {
            Signal::Linear { active, .. } => (*active).max(5),
            Signal::Nonlinear => 4,
            Signal::Correlated { beta, .. } => beta.len().max(2),
        };
        if self.p < need {
            return Err(Error::BadInput(format!("design needs p >= {need}, got {}", self.p)));
        }
        match self.noise {
            Noise::Snr(s) if !(s > 0.0) => return Err(Error::BadInput("snr must be positive".into())),
            Noise::Sigma(s) if !(s >= 0.0) => return Err(Error::BadInput("sigma must be nonnegative".into())),
            _ => {}
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return Err(Error::BadInput("target censoring rate outside (0, 1)".into()));
        }
        if let Signal::Correlated { rho12, .. } = self.signal {
            if !(rho12.abs() < 1.0) {
                return Err(Error::BadInput("rho12 must be in (-1, 1)".into()));
            }
        }
        if self.n == 0 {
            return Err(Error::BadInput("n must be positive".into()));
        }
        Ok(())
    }

    /// Short identifier such as `nonlinear-homo-n100-p10`.
    pub fn id(&self) -> String {
        let f = match self.signal {
            Signal::Linear { .. } => "linear",
            Signal::Nonlinear => "nonlinear",
            Signal::Correlated { .. } => "importance",
        };
        let g = match self.g_kind {
            GKind::Homo => "homo",
            GKind::Hete => "hete",
        };
        format!("{f}-{g}-n{}-p{}", self.n, self.p)
    }
}

/// `SNR` values equally spaced on the log scale over `[0.05, 6]`.
pub fn snr_grid() -> Vec<f64> {
    let (lo, hi) = (0.05f64.ln(), 6f64.ln());
    (0..10).map(|k| (lo + (hi - lo) * k as f64 / 9.0).exp()).collect()
}

pub fn f_linear(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

pub fn f_nonlinear(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let s3 = (2.0 * PI * x[2]).sin();
    let (s4, c4) = (2.0 * PI * x[3]).sin_cos();
    x[0] + 4.0 * (x[1] - 0.5).powi(2) + s3 / (2.0 - s3) + s4 + 2.0 * c4 + 3.0 * s4 * s4 + 4.0 * c4 * c4
}

/// `σ² = var / snr`.
pub fn sigma_from_snr(var: f64, snr: f64) -> f64 {
    var / snr
}

/// Monte Carlo draws behind `Var f(X)`.
pub const VAR_F_DRAWS: usize = 1_000_000;
/// Draws behind censoring calibration and its replay checks.
pub const CALIBRATION_DRAWS: usize = 100_000;

fn standard_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

impl Signal {
    fn sample_x(&self, p: usize, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            Signal::Nonlinear => (0..p).map(|_| rng.random::<f64>()).collect(),
            Signal::Linear { rho, .. } => {
                // AR(1) recursion gives Σ_ij = rho^|i-j| exactly
                let mut x = Vec::with_capacity(p);
                let s = (1.0 - rho * rho).sqrt();
                let mut prev = standard_normal(rng);
                x.push(prev);
                for _ in 1..p {
                    prev = rho * prev + s * standard_normal(rng);
                    x.push(prev);
                }
                x
            }
            Signal::Correlated { rho12, .. } => {
                let mut x: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
                x[1] = rho12 * x[0] + (1.0 - rho12 * rho12).sqrt() * x[1];
                x
            }
        }
    }

    fn f(&self, x: &[f64]) -> f64 {
        match self {
            Signal::Nonlinear => f_nonlinear(x),
            Signal::Linear { active, .. } => x[..*active].iter().sum(),
            Signal::Correlated { beta, .. } => f_linear(x, beta),
        }
    }

    /// Smallest dimension that carries the whole signal.
    fn support_dim(&self) -> usize {
        match self {
            Signal::Nonlinear => 4,
            Signal::Linear { active, .. } => *active,
            Signal::Correlated { beta, .. } => beta.len().max(2),
        }
    }

    fn cache_key(&self) -> String {
        format!("{self:?}")
    }
}

/// Monte Carlo `Var f(X)` over [`VAR_F_DRAWS`] draws with a fixed stream; cached per signal.
pub fn var_f(signal: &Signal) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = signal.cache_key();
    if let Some(&v) = cache.lock().unwrap().get(&key) {
        return v;
    }
    let v = var_f_mc(signal, VAR_F_DRAWS, 0x5EED);
    cache.lock().unwrap().insert(key, v);
    v
}

pub fn var_f_mc(signal: &Signal, draws: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[0xF]);
    let d = signal.support_dim();
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..draws {
        let v = signal.f(&signal.sample_x(d, &mut rng));
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    m2 / (draws - 1) as f64
}

/// `Var g(Z)`: `γ²/4` for `g = γZ`; `γ²/2` for `g = γξZ`.
pub fn var_g(g_kind: GKind, z_scale: f64) -> f64 {
    match g_kind {
        GKind::Homo => z_scale * z_scale * 0.25,
        GKind::Hete => z_scale * z_scale * 0.5,
    }
}

/// Uniform censoring bounds `(c_l0, c_u0, c_l1, c_u1)` for `Z = 0` and `Z = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringBounds {
    pub c_l0: f64,
    pub c_u0: f64,
    pub c_l1: f64,
    pub c_u1: f64,
}

impl CensoringBounds {
    pub fn as_array(&self) -> [f64; 4] {
        [self.c_l0, self.c_u0, self.c_l1, self.c_u1]
    }

    fn draw(&self, z: bool, uniform: f64) -> f64 {
        let (lo, hi) = if z { (self.c_l1, self.c_u1) } else { (self.c_l0, self.c_u0) };
        lo + uniform * (hi - lo)
    }
}

/// A design with its noise level and calibrated censoring resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub setting: SimSetting,
    pub sigma: f64,
    pub censoring: CensoringBounds,
    pub achieved_censoring: f64,
}

/// One simulated row with its latent quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDatum {
    pub x: Vec<f64>,
    pub z: bool,
    pub t_true: f64,
    pub c: f64,
    pub y: f64,
    pub delta: bool,
    pub f_value: f64,
    pub g_value: f64,
}

#[derive(Debug, Clone)]
pub struct SimData {
    /// Features `x_1..x_p, z`, with `y` and `delta`.
    pub dataset: Dataset,
    pub rows: Vec<SimDatum>,
    pub simulator: Simulator,
}

impl SimData {
    pub fn t_true(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t_true).collect()
    }

    pub fn censoring_rate(&self) -> f64 {
        self.rows.iter().filter(|r| !r.delta).count() as f64 / self.rows.len() as f64
    }

    /// True conditional quantiles of every row on `levels`.
    pub fn oracle(&self, levels: &[f64]) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| levels.iter().map(|&t| self.simulator.true_quantile(&r.x, r.z, t)).collect())
            .collect()
    }
}

fn normal_quantile(tau: f64) -> f64 {
    Normal::standard().inverse_cdf(tau)
}

impl Simulator {
    /// Resolves `σ` and calibrates censoring to `setting.target_censoring` within 0.01.
    pub fn new(setting: SimSetting) -> Result<Self> {
        setting.validate()?;
        let sigma = match setting.noise {
            Noise::Sigma(s) => s,
            Noise::Snr(snr) => {
                sigma_from_snr(var_f(&setting.signal) + var_g(setting.g_kind, setting.z_scale), snr).sqrt()
            }
        };
        let mut sim = Self {
            setting,
            sigma,
            censoring: CensoringBounds {
                c_l0: f64::INFINITY,
                c_u0: f64::INFINITY,
                c_l1: f64::INFINITY,
                c_u1: f64::INFINITY,
            },
            achieved_censoring: 0.0,
        };
        let mut rng = stream(sim.setting.seed, &[tag::CALIBRATION]);
        let (bounds, rate) = calibrate_censoring(&sim, sim.setting.target_censoring, 0.01, &mut rng)?;
        sim.censoring = bounds;
        sim.achieved_censoring = rate;
        Ok(sim)
    }

    /// Draws `(x, z, T)` without censoring.
    fn draw_event(&self, rng: &mut StreamRng) -> (Vec<f64>, bool, f64, f64, f64) {
        let s = &self.setting;
        let x = s.signal.sample_x(s.p, rng);
        let z = rng.random_bool(0.5);
        let f = s.signal.f(&x);
        let g = match s.g_kind {
            GKind::Homo => s.z_scale * z as u8 as f64,
            GKind::Hete => {
                let xi = standard_normal(rng);
                s.z_scale * xi * z as u8 as f64
            }
        };
        let eps = self.sigma * standard_normal(rng);
        (x, z, f, g, f + g + eps)
    }

    pub fn draw(&self, rng: &mut StreamRng) -> SimDatum {
        let (x, z, f_value, g_value, t) = self.draw_event(rng);
        let c = self.censoring.draw(z, rng.random::<f64>());
        SimDatum {
            x,
            z,
            t_true: t,
            c,
            y: t.min(c),
            delta: t <= c,
            f_value,
            g_value,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<SimData> {
        let rows: Vec<SimDatum> = (0..n).map(|_| self.draw(rng)).collect();
        let p = self.setting.p;
        let mut columns: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r.x[j]).collect()).collect();
        columns.push(rows.iter().map(|r| r.z as u8 as f64).collect());
        let mut names: Vec<String> = (1..=p).map(|j| format!("x_{j}")).collect();
        names.push("z".into());
        let dataset = Dataset::new(
            columns,
            names,
            rows.iter().map(|r| r.y).collect(),
            rows.iter().map(|r| r.delta).collect(),
        )?;
        Ok(SimData {
            dataset,
            rows,
            simulator: self.clone(),
        })
    }

    /// `Q(τ | x, z)`: `f(x) + γz + σΦ⁻¹(τ)` (homogeneous) or
    /// `f(x) + sqrt(σ² + γ² z) Φ⁻¹(τ)` (heterogeneous).
    pub fn true_quantile(&self, x: &[f64], z: bool, tau: f64) -> f64 {
        let s = &self.setting;
        let f = s.signal.f(x);
        let zf = z as u8 as f64;
        match s.g_kind {
            GKind::Homo => f + s.z_scale * zf + self.sigma * normal_quantile(tau),
            GKind::Hete => f + (self.sigma * self.sigma + s.z_scale * s.z_scale * zf).sqrt() * normal_quantile(tau),
        }
    }

    /// Empirical censoring rate of `bounds` on `draws` fresh rows.
    pub fn replay_censoring(&self, bounds: &CensoringBounds, draws: usize, rng: &mut StreamRng) -> f64 {
        let mut censored = 0usize;
        for _ in 0..draws {
            let (_, z, _, _, t) = self.draw_event(rng);
            if t > bounds.draw(z, rng.random::<f64>()) {
                censored += 1;
            }
        }
        censored as f64 / draws as f64
    }
}

/// Censoring bounds whose empirical rate on [`CALIBRATION_DRAWS`] simulated
/// rows is within `tol` of `target`.
///
/// Initial intervals sit at empirical quantiles of `T` within each `Z` group
/// (levels 0.10 to 0.90 for `Z = 0`, 0.30 to 0.99 for `Z = 1`); both are then
/// shifted by a common multiple of their widths, found by bisection. The
/// uniforms are held fixed across the search so the rate is monotone in the shift.
pub fn calibrate_censoring(
    sim: &Simulator,
    target: f64,
    tol: f64,
    rng: &mut StreamRng,
) -> Result<(CensoringBounds, f64)> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::BadInput(format!("target censoring {target} outside (0, 1)")));
    }
    let draws: Vec<(bool, f64, f64)> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let (_, z, _, _, t) = sim.draw_event(rng);
            (z, t, rng.random::<f64>())
        })
        .collect();
    let group_quantiles = |z: bool, lo: f64, hi: f64| {
        let mut ts: Vec<f64> = draws.iter().filter(|d| d.0 == z).map(|d| d.1).collect();
        ts.sort_by(f64::total_cmp);
        if ts.is_empty() {
            return (0.0, 1.0);
        }
        let at = |q: f64| ts[((q * (ts.len() - 1) as f64).round() as usize).min(ts.len() - 1)];
        let (a, b) = (at(lo), at(hi));
        if b > a {
            (a, b)
        } else {
            (a, a + 1.0)
        }
    };
    let (l0, u0) = group_quantiles(false, 0.10, 0.90);
    let (l1, u1) = group_quantiles(true, 0.30, 0.99);
    let (w0, w1) = (u0 - l0, u1 - l1);
    let bounds_at = |s: f64| CensoringBounds {
        c_l0: l0 + s * w0,
        c_u0: u0 + s * w0,
        c_l1: l1 + s * w1,
        c_u1: u1 + s * w1,
    };
    let rate_at = |s: f64| {
        let b = bounds_at(s);
        draws.iter().filter(|(z, t, v)| *t > b.draw(*z, *v)).count() as f64 / draws.len() as f64
    };

    // rate decreases in s; bracket the target
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut guard = 0;
    while rate_at(lo) < target && guard < 60 {
        lo *= 2.0;
        guard += 1;
    }
    while rate_at(hi) > target && guard < 120 {
        hi *= 2.0;
        guard += 1;
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate_at(mid);
        if (r - target).abs() < best.0 {
            best = ((r - target).abs(), mid, r);
        }
        if (r - target).abs() <= tol {
            return Ok((bounds_at(mid), r));
        }
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::CalibrationFailure {
        best_rate: best.2,
        target,
        best_bounds: bounds_at(best.1).as_array(),
    })
}

/// Simulates `setting.n` rows from the stream of `setting.seed`.
pub fn gen_dataset(setting: &SimSetting) -> Result<SimData> {
    let sim = Simulator::new(setting.clone())?;
    let mut rng = stream(setting.seed, &[tag::SIM_TRAIN]);
    sim.sample(setting.n, &mut rng)
}
