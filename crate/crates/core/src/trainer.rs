//! Training pipeline: simulated paths, strike/maturity augmentation,
//! Adam on the hedging loss, early stopping on held-out paths.

use std::fmt::Write as _;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::hedging::{delta_terms, gamma_terms, ttm_next, AtmQuote, AtmQuoter, HedgeSample};
use crate::market_sim::{
    simulate_gbm_with, simulate_heston_with, validate_heston, CounterRng, Domain, GbmParams, HestonParams,
    PathSet, DEFAULT_DT,
};
use crate::model::{clamp_greeks, init_params, save_checkpoint, BatchPass, Channels, MlpParams, N_PARAMS};
use crate::pricers::{Engine, OptionKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    Gbm(GbmParams),
    Heston(HestonParams),
}

impl Process {
    pub fn tag(&self) -> &'static str {
        match self {
            Process::Gbm(_) => "gbm",
            Process::Heston(_) => "heston",
        }
    }

    pub fn drift(&self) -> f64 {
        match self {
            Process::Gbm(p) => p.mu,
            Process::Heston(p) => p.mu,
        }
    }

    /// The analytic engine for this process.
    pub fn engine(&self) -> Engine {
        match *self {
            Process::Gbm(p) => Engine::BlackScholes { sigma: p.sigma },
            Process::Heston(p) => Engine::heston(p),
        }
    }

    /// `key=value` lines naming the process and its parameters.
    pub fn snapshot(&self) -> String {
        let pairs: Vec<(&str, f64)> = match *self {
            Process::Gbm(p) => vec![("mu", p.mu), ("sigma", p.sigma), ("s0", p.s0)],
            Process::Heston(p) => vec![
                ("mu", p.mu),
                ("kappa", p.kappa),
                ("theta", p.theta),
                ("xi", p.xi),
                ("rho", p.rho),
                ("v0", p.v0),
                ("s0", p.s0),
            ],
        };
        let mut out = format!("model={}\n", self.tag());
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn simulate(&self, paths: Range<usize>, n_steps: usize, dt: f64, seed: u64) -> Result<PathSet> {
        match self {
            Process::Gbm(p) => simulate_gbm_with(p, paths, n_steps, dt, seed, false),
            Process::Heston(p) => simulate_heston_with(p, paths, n_steps, dt, seed, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedgeMode {
    Delta,
    DeltaGamma,
}

impl HedgeMode {
    pub fn tag(self) -> &'static str {
        match self {
            HedgeMode::Delta => "delta",
            HedgeMode::DeltaGamma => "delta-gamma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "delta" => Some(HedgeMode::Delta),
            "delta-gamma" | "delta_gamma" => Some(HedgeMode::DeltaGamma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub process: Process,
    pub hedge_mode: HedgeMode,
    /// Maturity of the ATM hedging option (delta-gamma only).
    pub atm_ttm: f64,
    pub kind: OptionKind,
    pub rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Strikes are drawn wider than the usual evaluation strikes so that the
    /// sampled moneyness covers spots 75..125 against every strike in 90..110.
    pub strike_range: (f64, f64),
    /// Sampled on the `dt` grid. The low end reaches down to one step so that
    /// some samples land on expiry and see the payoff.
    pub ttm_range: (f64, f64),
    pub n_train_paths: usize,
    pub n_val_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub patience: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Gradient norm beyond which training aborts.
    pub abort_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            process: Process::Gbm(GbmParams::default()),
            hedge_mode: HedgeMode::Delta,
            atm_ttm: 30.0 / 250.0,
            kind: OptionKind::Call,
            rate: 0.0,
            epochs: 250,
            batch_size: 256,
            learning_rate: 1e-3,
            strike_range: (75.0, 125.0),
            ttm_range: (DEFAULT_DT, 0.48),
            n_train_paths: 1800,
            n_val_paths: 200,
            dt: DEFAULT_DT,
            seed: 0,
            patience: 20,
            clip_norm: 10.0,
            abort_norm: 1e6,
        }
    }
}

impl TrainConfig {
    /// Range of step counts `k` with `τ = k·dt`.
    fn ttm_steps(&self) -> Result<(usize, usize)> {
        let (lo, hi) = self.ttm_range;
        let k_lo = (lo / self.dt - 1e-9).ceil().max(1.0) as usize;
        let k_hi = (hi / self.dt + 1e-9).floor() as usize;
        if k_hi < k_lo {
            return Err(Error::Config(format!("ttm_range {lo}..{hi} holds no multiple of dt = {}", self.dt)));
        }
        Ok((k_lo, k_hi))
    }

    /// Steps per simulated path: enough to cover the longest maturity.
    pub fn n_steps(&self) -> Result<usize> {
        Ok(self.ttm_steps()?.1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Process::Heston(p) = &self.process {
            validate_heston(p)?;
        }
        if let Process::Gbm(p) = &self.process {
            p.validate()?;
        }
        let (klo, khi) = self.strike_range;
        if !(klo > 0.0 && khi > klo && khi.is_finite()) {
            return bad(format!("strike_range {klo}..{khi} must be positive and non-degenerate"));
        }
        let (tlo, thi) = self.ttm_range;
        if !(tlo > 0.0 && thi > tlo && thi.is_finite()) {
            return bad(format!("ttm_range {tlo}..{thi} must be positive and non-degenerate"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        self.ttm_steps()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if self.n_train_paths == 0 || self.n_val_paths == 0 {
            return bad("n_train_paths and n_val_paths must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(self.clip_norm > 0.0 && self.abort_norm > 0.0) {
            return bad("clip_norm and abort_norm must be positive".into());
        }
        if self.hedge_mode == HedgeMode::DeltaGamma && !(self.atm_ttm > self.dt) {
            return bad(format!("atm_ttm = {} must exceed dt", self.atm_ttm));
        }
        if !self.rate.is_finite() {
            return bad("rate is not finite".into());
        }
        Ok(())
    }

    /// Flat `key=value` snapshot, the same keys the CLI config file accepts.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.process.snapshot());
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("hedge", self.hedge_mode.tag().into());
        kv("atm-ttm", self.atm_ttm.to_string());
        kv("kind", self.kind.tag().into());
        kv("rate", self.rate.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch-size", self.batch_size.to_string());
        kv("lr", self.learning_rate.to_string());
        kv("strike-low", self.strike_range.0.to_string());
        kv("strike-high", self.strike_range.1.to_string());
        kv("ttm-low", self.ttm_range.0.to_string());
        kv("ttm-high", self.ttm_range.1.to_string());
        kv("train-paths", self.n_train_paths.to_string());
        kv("val-paths", self.n_val_paths.to_string());
        kv("dt", self.dt.to_string());
        kv("seed", self.seed.to_string());
        kv("patience", self.patience.to_string());
        kv("clip-norm", self.clip_norm.to_string());
        kv("abort-norm", self.abort_norm.to_string());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub delta_clips: u64,
    pub gamma_clips: u64,
    pub seconds: f64,
}

/// Row 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,delta_clips,gamma_clips,seconds")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{:e},{:e},{},{},{:.3}",
                r.epoch, r.train_loss, r.val_loss, r.delta_clips, r.gamma_clips, r.seconds
            )?;
        }
        Ok(())
    }
}

/// Turn every consecutive spot pair into a hedge sample with a random strike
/// and maturity, keyed by `(seed, path, step)`.
pub fn build_samples(paths: &PathSet, cfg: &TrainConfig) -> Result<Vec<HedgeSample>> {
    let (k_lo, k_hi) = cfg.ttm_steps()?;
    if paths.horizon() < cfg.ttm_range.1 - 0.5 * paths.dt {
        return Err(Error::Config(format!(
            "path horizon {} shorter than ttm_range high {}",
            paths.horizon(),
            cfg.ttm_range.1
        )));
    }
    let quoter = match cfg.hedge_mode {
        HedgeMode::Delta => None,
        HedgeMode::DeltaGamma => Some(AtmQuoter::new(&cfg.process.engine(), cfg.rate, cfg.atm_ttm, paths.dt)?),
    };
    let (slo, shi) = cfg.strike_range;
    let n_k = (k_hi - k_lo + 1) as f64;
    let mut rng = CounterRng::new(cfg.seed, Domain::Augment);
    let mut out = Vec::with_capacity(paths.n_paths * paths.n_steps);
    for i in 0..paths.n_paths {
        rng.seek((paths.first_path + i) as u64, 0);
        for k in 0..paths.n_steps {
            let (u1, u2) = rng.next_uniform_pair();
            let steps = k_lo + ((u2 * n_k) as usize).min(k_hi - k_lo);
            let (s_t, s_next) = (paths.spot(i, k), paths.spot(i, k + 1));
            let atm = match &quoter {
                Some(q) => Some(q.quote(s_t, s_next)?),
                None => None,
            };
            out.push(HedgeSample {
                s_t,
                s_next,
                ttm_t: steps as f64 * paths.dt,
                dt: paths.dt,
                rate: cfg.rate,
                strike: slo + (shi - slo) * u1,
                kind: cfg.kind,
                atm,
            });
        }
    }
    Ok(out)
}

/// Samples in path order, split into `batch_size` chunks.
pub fn build_batches(paths: &PathSet, cfg: &TrainConfig) -> Result<Vec<Vec<HedgeSample>>> {
    Ok(build_samples(paths, cfg)?
        .chunks(cfg.batch_size)
        .map(<[HedgeSample]>::to_vec)
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchStats {
    loss: f64,
    delta_clips: u64,
    gamma_clips: u64,
}

/// Reusable buffers for one batch.
#[derive(Default)]
struct Workspace {
    now: BatchPass,
    next: BatchPass,
    m: Vec<f64>,
    tau: Vec<f64>,
    m_next: Vec<f64>,
    tau_next: Vec<f64>,
    /// Batch position of each sample in the `next` pass; `None` at expiry.
    next_slot: Vec<Option<usize>>,
    bar_now: Vec<[f64; 3]>,
    bar_next: Vec<[f64; 3]>,
}

/// Mean squared hedging residual over `batch`; accumulates its gradient
/// into `grad` when given.
fn batch_loss(
    theta: &[f64],
    batch: &[&HedgeSample],
    mode: HedgeMode,
    ws: &mut Workspace,
    grad: Option<&mut [f64]>,
) -> Result<BatchStats> {
    let n = batch.len();
    ws.m.clear();
    ws.tau.clear();
    ws.m_next.clear();
    ws.tau_next.clear();
    ws.next_slot.clear();
    for s in batch {
        let a_t = s.strike * (-s.rate * s.ttm_t).exp();
        ws.m.push(s.s_t / a_t);
        ws.tau.push(s.ttm_t);
        match ttm_next(s.ttm_t, s.dt)? {
            Some(t) => {
                ws.next_slot.push(Some(ws.m_next.len()));
                ws.m_next.push(s.s_next / (s.strike * (-s.rate * t).exp()));
                ws.tau_next.push(t);
            }
            None => ws.next_slot.push(None),
        }
    }
    let ch = match mode {
        HedgeMode::Delta => Channels::Delta,
        HedgeMode::DeltaGamma => Channels::Gamma,
    };
    ws.now.forward(theta, &ws.m, &ws.tau, ch)?;
    ws.next.forward(theta, &ws.m_next, &ws.tau_next, Channels::Value)?;

    let want_grad = grad.is_some();
    ws.bar_now.clear();
    ws.bar_now.resize(n, [0.0; 3]);
    ws.bar_next.clear();
    ws.bar_next.resize(ws.m_next.len(), [0.0; 3]);
    let mut stats = BatchStats::default();
    let inv_n = 1.0 / n as f64;
    for (i, s) in batch.iter().enumerate() {
        let a_t = s.strike * (-s.rate * s.ttm_t).exp();
        let [g, g1, g2] = ws.now.out[i];
        let (price_t, delta, gamma) = (a_t * g, g1, g2 / a_t);
        let c = clamp_greeks(delta, gamma, s.kind);
        let (price_next, a_next) = match ws.next_slot[i] {
            Some(j) => {
                let a_n = s.strike * (-s.rate * ws.tau_next[j]).exp();
                (a_n * ws.next.out[j][0], a_n)
            }
            None => (s.kind.payoff(s.s_next, s.strike), 0.0),
        };
        let (residual, d_price_t, d_delta, d_gamma, d_price_next) = match mode {
            HedgeMode::Delta => {
                let t = delta_terms(s.s_t, s.s_next, s.rate, s.dt, price_t, c.delta, price_next);
                (t.residual, t.d_price_t, t.d_delta, 0.0, t.d_price_next)
            }
            HedgeMode::DeltaGamma => {
                let atm: &AtmQuote = s
                    .atm
                    .as_ref()
                    .ok_or_else(|| Error::Rejected("delta-gamma sample without an ATM quote".into()))?;
                let t = gamma_terms(s.s_t, s.s_next, price_t, c.delta, c.gamma, price_next, atm);
                (t.v_t - t.v_next, t.d_price_t, t.d_delta, t.d_gamma, t.d_price_next)
            }
        };
        stats.loss += residual * residual * inv_n;
        stats.delta_clips += u64::from(c.delta_clipped);
        if mode == HedgeMode::DeltaGamma {
            stats.gamma_clips += u64::from(c.gamma_clipped);
        }
        if want_grad {
            let dr = 2.0 * residual * inv_n;
            let bar = &mut ws.bar_now[i];
            bar[0] = dr * d_price_t * a_t;
            if !c.delta_clipped {
                bar[1] = dr * d_delta;
            }
            if mode == HedgeMode::DeltaGamma && !c.gamma_clipped {
                bar[2] = dr * d_gamma / a_t;
            }
            if let Some(j) = ws.next_slot[i] {
                ws.bar_next[j][0] = dr * d_price_next * a_next;
            }
        }
    }
    if !stats.loss.is_finite() {
        return Err(Error::NonFinite {
            location: "batch loss".into(),
        });
    }
    if let Some(grad) = grad {
        ws.now.backward(theta, &ws.bar_now, grad);
        ws.next.backward(theta, &ws.bar_next, grad);
    }
    Ok(stats)
}

/// Mean loss of `params` over `samples`, evaluated in batches.
pub fn mean_loss(params: &MlpParams, samples: &[HedgeSample], mode: HedgeMode, batch_size: usize) -> Result<f64> {
    let mut ws = Workspace::default();
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&HedgeSample> = chunk.iter().collect();
        total += batch_loss(&params.theta, &refs, mode, &mut ws, None)?.loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Gradient of the mean batch loss; exposed for derivative checks.
pub fn loss_gradient(params: &MlpParams, samples: &[HedgeSample], mode: HedgeMode) -> Result<(f64, Vec<f64>)> {
    let mut ws = Workspace::default();
    let refs: Vec<&HedgeSample> = samples.iter().collect();
    let mut grad = vec![0.0; N_PARAMS];
    let stats = batch_loss(&params.theta, &refs, mode, &mut ws, Some(&mut grad))?;
    Ok((stats.loss, grad))
}

struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Adam {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Train one network; returns the parameters of the best validation epoch.
pub fn train(cfg: &TrainConfig) -> Result<(MlpParams, TrainHistory)> {
    cfg.validate()?;
    let n_steps = cfg.n_steps()?;
    let train_paths = cfg.process.simulate(0..cfg.n_train_paths, n_steps, cfg.dt, cfg.seed)?;
    let val_paths = cfg.process.simulate(
        cfg.n_train_paths..cfg.n_train_paths + cfg.n_val_paths,
        n_steps,
        cfg.dt,
        cfg.seed,
    )?;
    let train_set = build_samples(&train_paths, cfg)?;
    let val_set = build_samples(&val_paths, cfg)?;
    drop((train_paths, val_paths));

    let mut params = init_params(cfg.seed);
    params.meta.process = cfg.process.tag().into();
    params.meta.loss = cfg.hedge_mode.tag().into();
    params.meta.kind = cfg.kind;

    let abort = |epoch: usize, batch: usize, reason: String| Error::TrainingAborted { epoch, batch, reason };
    let eval_bs = 4 * cfg.batch_size;
    let started = Instant::now();
    let mut history = TrainHistory::default();
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&params, &train_set, cfg.hedge_mode, eval_bs).map_err(|e| abort(0, 0, e.to_string()))?,
        val_loss: mean_loss(&params, &val_set, cfg.hedge_mode, eval_bs).map_err(|e| abort(0, 0, e.to_string()))?,
        delta_clips: 0,
        gamma_clips: 0,
        seconds: started.elapsed().as_secs_f64(),
    });
    let mut best = params.clone();

    let mut adam = Adam::new(cfg.learning_rate, N_PARAMS);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = CounterRng::new(cfg.seed, Domain::Shuffle);
    let mut ws = Workspace::default();
    let mut grad = vec![0.0; N_PARAMS];
    let mut batch_refs: Vec<&HedgeSample> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        shuffle_rng.seek(epoch as u64, 0);
        order.shuffle(shuffle_rng.generator());
        let (mut loss_sum, mut delta_clips, mut gamma_clips) = (0.0, 0, 0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch_refs.clear();
            batch_refs.extend(idx.iter().map(|&i| &train_set[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let stats = batch_loss(&params.theta, &batch_refs, cfg.hedge_mode, &mut ws, Some(&mut grad))
                .map_err(|e| abort(epoch, b, e.to_string()))?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(abort(epoch, b, "non-finite gradient".into()));
            }
            if norm > cfg.abort_norm {
                return Err(abort(epoch, b, format!("gradient norm {norm:e} exceeds {:e}", cfg.abort_norm)));
            }
            if norm > cfg.clip_norm {
                let k = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(&mut params.theta, &grad);
            loss_sum += stats.loss * idx.len() as f64;
            delta_clips += stats.delta_clips;
            gamma_clips += stats.gamma_clips;
        }
        let val_loss = mean_loss(&params, &val_set, cfg.hedge_mode, eval_bs)
            .map_err(|e| abort(epoch, order.len().div_ceil(cfg.batch_size), e.to_string()))?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            delta_clips,
            gamma_clips,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if val_loss < history.best_val_loss() {
            history.best_epoch = epoch;
            best.theta.clone_from(&params.theta);
        } else if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    best.meta = params.meta.clone();
    best.meta.epoch = history.best_epoch as u32;
    Ok((best, history))
}

/// Independent runs with seeds `seed, seed + 1, …`, ordered by seed. A failed
/// run is reported in its slot and does not stop the others.
pub fn multi_run(cfg: &TrainConfig, n_runs: usize) -> Vec<(u64, Result<(MlpParams, TrainHistory)>)> {
    (0..n_runs as u64)
        .map(|k| {
            let seed = cfg.seed.wrapping_add(k);
            let run = TrainConfig { seed, ..cfg.clone() };
            (seed, train(&run))
        })
        .collect()
}

/// `root/<tag>/seed<k>/{model.ckpt, history.csv, config.snapshot}`.
pub fn write_run_dir(
    root: &Path,
    tag: &str,
    cfg: &TrainConfig,
    params: &MlpParams,
    history: &TrainHistory,
) -> Result<PathBuf> {
    let dir = root.join(tag).join(format!("seed{}", cfg.seed));
    std::fs::create_dir_all(&dir)?;
    save_checkpoint(params, &dir.join("model.ckpt"))?;
    history.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("history.csv"))?))?;
    std::fs::File::create(dir.join("config.snapshot"))?.write_all(cfg.snapshot().as_bytes())?;
    Ok(dir)
}
