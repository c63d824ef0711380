//! Seeded synthetic spot and variance paths under GBM and Heston dynamics.

mod rng;

use std::io::Write;
use std::ops::Range;

pub use rng::{CounterRng, Domain};

use crate::error::{Error, HestonViolation, Result};

/// Daily Euler step used throughout the experiments (250 trading days).
pub const DEFAULT_DT: f64 = 1.0 / 250.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    /// Annual drift.
    pub mu: f64,
    /// Annual volatility.
    pub sigma: f64,
    pub s0: f64,
}

impl Default for GbmParams {
    /// 6% real-world drift, 12.5% vol, spot 100.
    fn default() -> Self {
        GbmParams {
            mu: 0.06,
            sigma: 0.125,
            s0: 100.0,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("sigma", self.sigma), ("s0", self.s0)] {
            if !v.is_finite() {
                return Err(Error::domain("simulate_gbm", format!("{name} is not finite")));
            }
        }
        if self.sigma < 0.0 {
            return Err(Error::domain("simulate_gbm", format!("sigma = {} < 0", self.sigma)));
        }
        if self.s0 <= 0.0 {
            return Err(Error::domain("simulate_gbm", format!("s0 = {} ≤ 0", self.s0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    pub mu: f64,
    /// Mean-reversion speed of the variance.
    pub kappa: f64,
    /// Long-run variance.
    pub theta: f64,
    /// Volatility of variance.
    pub xi: f64,
    /// Spot/variance shock correlation.
    pub rho: f64,
    pub v0: f64,
    pub s0: f64,
}

impl Default for HestonParams {
    /// κ = 1.25, θ = ν₀ = 0.0225, ξ = 0.15, ρ = −0.7, zero drift (risk-neutral at r = 0).
    fn default() -> Self {
        HestonParams {
            mu: 0.0,
            kappa: 1.25,
            theta: 0.0225,
            xi: 0.15,
            rho: -0.7,
            v0: 0.0225,
            s0: 100.0,
        }
    }
}

/// Check the Heston invariants, naming the first failing inequality.
///
/// `xi = 0` is accepted: the variance then follows its deterministic ODE.
pub fn validate_heston(p: &HestonParams) -> std::result::Result<(), HestonViolation> {
    let fields = [
        ("mu", p.mu),
        ("kappa", p.kappa),
        ("theta", p.theta),
        ("xi", p.xi),
        ("rho", p.rho),
        ("v0", p.v0),
        ("s0", p.s0),
    ];
    for (name, v) in fields {
        if !v.is_finite() {
            return Err(HestonViolation::NonFinite { name });
        }
    }
    for (name, value) in [("kappa", p.kappa), ("theta", p.theta), ("v0", p.v0), ("s0", p.s0)] {
        if value <= 0.0 {
            return Err(HestonViolation::NonPositive { name, value });
        }
    }
    if p.xi < 0.0 {
        return Err(HestonViolation::NonPositive {
            name: "xi",
            value: p.xi,
        });
    }
    if p.rho.abs() > 1.0 {
        return Err(HestonViolation::Correlation(p.rho));
    }
    let lhs = 2.0 * p.kappa * p.theta;
    let rhs = p.xi * p.xi;
    if lhs <= rhs {
        return Err(HestonViolation::Feller { lhs, rhs });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    GbmExactStep,
    HestonFullTruncation,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::GbmExactStep => "gbm_exact_step",
            Scheme::HestonFullTruncation => "heston_full_truncation",
        }
    }
}

/// Simulated paths, row-major `n_paths × (n_steps + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub spots: Vec<f64>,
    /// Effective (non-negative) variance, Heston only.
    pub variances: Option<Vec<f64>>,
    pub seed: u64,
    pub scheme: Scheme,
    /// Drift the paths were generated with; risk-neutral iff it equals the rate.
    pub drift: f64,
    /// Paths come in (2i, 2i+1) pairs driven by negated shocks.
    pub antithetic: bool,
    /// Global index of the first stored path.
    pub first_path: usize,
}

impl PathSet {
    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.n_steps + 1;
        &self.spots[i * w..(i + 1) * w]
    }

    pub fn spot(&self, path: usize, step: usize) -> f64 {
        self.spots[path * (self.n_steps + 1) + step]
    }

    pub fn variance_path(&self, i: usize) -> Option<&[f64]> {
        let w = self.n_steps + 1;
        self.variances.as_ref().map(|v| &v[i * w..(i + 1) * w])
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.n_steps]
    }

    /// CSV with header `path_id,step,time,spot[,variance]`, one row per (path, step).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.variances.is_some() {
            writeln!(w, "path_id,step,time,spot,variance")?;
        } else {
            writeln!(w, "path_id,step,time,spot")?;
        }
        for i in 0..self.n_paths {
            let vars = self.variance_path(i);
            for (k, s) in self.path(i).iter().enumerate() {
                let id = self.first_path + i;
                match vars {
                    Some(v) => writeln!(w, "{id},{k},{},{s},{}", self.times[k], v[k])?,
                    None => writeln!(w, "{id},{k},{},{s}", self.times[k])?,
                }
            }
        }
        Ok(())
    }
}

fn check_grid(n_paths: usize, n_steps: usize, dt: f64) -> Result<()> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::domain("simulate", "n_paths and n_steps must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain("simulate", format!("dt = {dt} must be positive")));
    }
    Ok(())
}

fn time_grid(n_steps: usize, dt: f64) -> Vec<f64> {
    (0..=n_steps).map(|k| k as f64 * dt).collect()
}

/// Stream index and shock sign for path `i`.
#[inline]
fn stream_of(i: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((i / 2) as u64, if i % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (i as u64, 1.0)
    }
}

/// GBM paths by the exact log-normal step
/// `S ← S·exp((μ − σ²/2)dt + σ√dt·Z)`.
pub fn simulate_gbm(p: &GbmParams, n_paths: usize, n_steps: usize, dt: f64, seed: u64) -> Result<PathSet> {
    simulate_gbm_with(p, 0..n_paths, n_steps, dt, seed, false)
}

/// Simulate the global path indices in `paths`; path `i` is identical to the
/// `i`-th path of a full run with the same seed.
pub fn simulate_gbm_with(
    p: &GbmParams,
    paths: Range<usize>,
    n_steps: usize,
    dt: f64,
    seed: u64,
    antithetic: bool,
) -> Result<PathSet> {
    p.validate()?;
    let n_paths = paths.len();
    check_grid(n_paths, n_steps, dt)?;
    let drift = (p.mu - 0.5 * p.sigma * p.sigma) * dt;
    let vol = p.sigma * dt.sqrt();
    let width = n_steps + 1;
    let mut spots = vec![0.0; n_paths * width];
    let mut rng = CounterRng::new(seed, Domain::Spot);
    for (i, row) in spots.chunks_exact_mut(width).enumerate() {
        let (stream, sign) = stream_of(paths.start + i, antithetic);
        rng.seek(stream, 0);
        let mut s = p.s0;
        row[0] = s;
        for cell in row.iter_mut().skip(1) {
            let (z, _) = rng.next_normal_pair();
            s *= (drift + vol * sign * z).exp();
            *cell = s;
        }
    }
    Ok(PathSet {
        times: time_grid(n_steps, dt),
        dt,
        n_paths,
        n_steps,
        spots,
        variances: None,
        seed,
        scheme: Scheme::GbmExactStep,
        drift: p.mu,
        antithetic,
        first_path: paths.start,
    })
}

/// Heston paths: full-truncation Euler for the variance and log-Euler for the
/// spot, with shocks correlated through the 2×2 Cholesky factor.
pub fn simulate_heston(p: &HestonParams, n_paths: usize, n_steps: usize, dt: f64, seed: u64) -> Result<PathSet> {
    simulate_heston_with(p, 0..n_paths, n_steps, dt, seed, false)
}

pub fn simulate_heston_with(
    p: &HestonParams,
    paths: Range<usize>,
    n_steps: usize,
    dt: f64,
    seed: u64,
    antithetic: bool,
) -> Result<PathSet> {
    validate_heston(p)?;
    let n_paths = paths.len();
    check_grid(n_paths, n_steps, dt)?;
    let width = n_steps + 1;
    let sqrt_dt = dt.sqrt();
    let rho_perp = (1.0 - p.rho * p.rho).sqrt();
    let mut spots = vec![0.0; n_paths * width];
    let mut vars = vec![0.0; n_paths * width];
    let mut rng = CounterRng::new(seed, Domain::Spot);
    for (i, (srow, vrow)) in spots
        .chunks_exact_mut(width)
        .zip(vars.chunks_exact_mut(width))
        .enumerate()
    {
        let (stream, sign) = stream_of(paths.start + i, antithetic);
        rng.seek(stream, 0);
        let mut s = p.s0;
        let mut v = p.v0;
        srow[0] = s;
        vrow[0] = v.max(0.0);
        for k in 1..width {
            let (z1, z2) = rng.next_normal_pair();
            let zs = sign * z1;
            let zv = sign * (p.rho * z1 + rho_perp * z2);
            let vp = v.max(0.0);
            let sd = (vp).sqrt() * sqrt_dt;
            s *= ((p.mu - 0.5 * vp) * dt + sd * zs).exp();
            v += p.kappa * (p.theta - vp) * dt + p.xi * sd * zv;
            srow[k] = s;
            vrow[k] = v.max(0.0);
        }
    }
    Ok(PathSet {
        times: time_grid(n_steps, dt),
        dt,
        n_paths,
        n_steps,
        spots,
        variances: Some(vars),
        seed,
        scheme: Scheme::HestonFullTruncation,
        drift: p.mu,
        antithetic,
        first_path: paths.start,
    })
}

/// Per-step spot and variance shocks of path `i`, as used by
/// [`simulate_heston`]; exposed for correlation diagnostics.
pub fn heston_shocks(rho: f64, seed: u64, path: usize, n_steps: usize) -> Vec<(f64, f64)> {
    let mut rng = CounterRng::new(seed, Domain::Spot);
    rng.seek(path as u64, 0);
    let rho_perp = (1.0 - rho * rho).sqrt();
    (0..n_steps)
        .map(|_| {
            let (z1, z2) = rng.next_normal_pair();
            (z1, rho * z1 + rho_perp * z2)
        })
        .collect()
}
