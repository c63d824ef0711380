//! Grid sweeps of a model against an analytic oracle, aggregation over runs
//! and CSV output shaped like the result tables.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market_sim::{validate_heston, HestonParams};
use crate::model::{BatchPass, Channels, MlpParams, ModelMeta};
use crate::pricers::{Engine, OptionKind, OptionSpec};
use crate::stats::{mean, sample_std};

/// Skip rates above this are flagged.
pub const SKIP_CEILING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalGrid {
    pub spots: Vec<f64>,
    pub strikes: Vec<f64>,
    pub ttms: Vec<f64>,
    /// σ for GBM, ξ for Heston.
    pub vols: Vec<f64>,
    pub kind: OptionKind,
    pub rate: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl EvalGrid {
    /// 10,000 spots in [75, 125], strikes 90..=110, τ ∈ {0.24, …, 0.48},
    /// vols {0.125, 0.15, 0.175}.
    pub fn full(kind: OptionKind) -> Self {
        EvalGrid {
            spots: linspace(75.0, 125.0, 10_000),
            strikes: (90..=110).map(f64::from).collect(),
            ttms: (0..7).map(|i| f64::from(24 + 4 * i) / 100.0).collect(),
            vols: vec![0.125, 0.15, 0.175],
            kind,
            rate: 0.0,
        }
    }

    pub fn with_spot_count(mut self, n: usize) -> Self {
        let (lo, hi) = (self.spots[0], self.spots[self.spots.len() - 1]);
        self.spots = linspace(lo, hi, n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, xs: &[f64], positive: bool| -> Result<()> {
            if xs.is_empty() {
                return Err(Error::Config(format!("grid {name} is empty")));
            }
            if xs.iter().any(|x| !x.is_finite() || (positive && *x <= 0.0)) {
                return Err(Error::Config(format!("grid {name} must be finite and positive")));
            }
            if xs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("grid {name} must be strictly increasing")));
            }
            Ok(())
        };
        check("spots", &self.spots, true)?;
        check("strikes", &self.strikes, true)?;
        check("ttms", &self.ttms, true)?;
        check("vols", &self.vols, false)?;
        if !self.rate.is_finite() {
            return Err(Error::Config("grid rate is not finite".into()));
        }
        Ok(())
    }

    pub fn n_points(&self) -> usize {
        self.spots.len() * self.strikes.len() * self.ttms.len() * self.vols.len()
    }

    /// Hex SHA-256 of the exact grid values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.tag().as_bytes());
        h.update(self.rate.to_le_bytes());
        for (tag, xs) in [
            (b's', &self.spots),
            (b'k', &self.strikes),
            (b't', &self.ttms),
            (b'v', &self.vols),
        ] {
            h.update([tag]);
            h.update((xs.len() as u64).to_le_bytes());
            for x in xs.iter() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every grid point, vol outermost and spot innermost.
    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.vols.iter().flat_map(move |&vol| {
            self.ttms.iter().flat_map(move |&ttm| {
                self.strikes.iter().flat_map(move |&strike| {
                    self.spots.iter().map(move |&spot| GridPoint { vol, ttm, strike, spot })
                })
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub vol: f64,
    pub ttm: f64,
    pub strike: f64,
    pub spot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DryRun {
    pub grid_hash: String,
    pub cells: usize,
    pub points_per_run: usize,
    pub runs: usize,
    pub total_points: usize,
}

/// Walk the whole grid without evaluating anything.
pub fn dry_run(grid: &EvalGrid, runs: usize) -> Result<DryRun> {
    grid.validate()?;
    let points_per_run = grid.points().count();
    Ok(DryRun {
        grid_hash: grid.hash(),
        cells: grid.vols.len() * grid.ttms.len(),
        points_per_run,
        runs,
        total_points: points_per_run * runs,
    })
}

/// Reference pricer family; the grid's vol axis selects its volatility parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Oracle {
    BlackScholes,
    /// Base parameters; `xi` is replaced by the grid vol.
    Heston(HestonParams),
}

impl Oracle {
    pub fn process_tag(&self) -> &'static str {
        match self {
            Oracle::BlackScholes => "gbm",
            Oracle::Heston(_) => "heston",
        }
    }

    pub fn engine(&self, vol: f64) -> Result<Engine> {
        match *self {
            Oracle::BlackScholes => Ok(Engine::BlackScholes { sigma: vol }),
            Oracle::Heston(p) => {
                let p = HestonParams { xi: vol, ..p };
                validate_heston(&p)?;
                Ok(Engine::heston(p))
            }
        }
    }
}

/// Something that quotes `(price, delta, gamma)` along a strip of spots.
pub trait StripModel {
    fn meta(&self) -> Option<&ModelMeta> {
        None
    }
    fn strip(&self, spots: &[f64], opt: &OptionSpec, out: &mut Vec<[f64; 3]>) -> Result<()>;
}

impl StripModel for MlpParams {
    fn meta(&self) -> Option<&ModelMeta> {
        Some(&self.meta)
    }

    fn strip(&self, spots: &[f64], opt: &OptionSpec, out: &mut Vec<[f64; 3]>) -> Result<()> {
        let a = opt.strike * opt.discount();
        let m: Vec<f64> = spots.iter().map(|s| s / a).collect();
        let tau = vec![opt.ttm; spots.len()];
        let mut pass = BatchPass::new();
        pass.forward(&self.theta, &m, &tau, Channels::Gamma)?;
        out.clear();
        out.extend(pass.out.iter().map(|[g, g1, g2]| [a * g, *g1, g2 / a]));
        Ok(())
    }
}

impl StripModel for Engine {
    fn strip(&self, spots: &[f64], opt: &OptionSpec, out: &mut Vec<[f64; 3]>) -> Result<()> {
        let prep = self.prepare(opt.ttm, opt.rate)?;
        out.clear();
        for &s in spots {
            let (p, d, g) = prep.greeks(s, opt.strike, opt.kind)?;
            out.push([p, d, g]);
        }
        Ok(())
    }
}

/// Column order of [`CellRun::metrics`] and the table.
pub const METRICS: [&str; 6] = ["price_mad", "price_mse", "delta_mad", "delta_mse", "gamma_mad", "gamma_mse"];

/// MAD and MSE of one `(vol, ttm)` cell for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub vol: f64,
    pub ttm: f64,
    pub n: usize,
    pub metrics: [f64; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub engine: String,
    pub grid_hash: String,
    pub seed: u64,
    pub kind: OptionKind,
    pub with_gamma: bool,
    /// Maturity of the hedging option for delta-gamma runs.
    pub hedge_ttm: Option<f64>,
    pub skipped: usize,
    pub total: usize,
    pub cells: Vec<CellRun>,
}

impl RunReport {
    pub fn skip_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.skipped as f64 / self.total as f64
        }
    }

    pub fn skip_flagged(&self) -> bool {
        self.skip_rate() > SKIP_CEILING
    }

    /// Lossless key=value header followed by a CSV of cells.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "engine={}", self.engine)?;
        writeln!(w, "grid_hash={}", self.grid_hash)?;
        writeln!(w, "seed={}", self.seed)?;
        writeln!(w, "kind={}", self.kind.tag())?;
        writeln!(w, "with_gamma={}", self.with_gamma)?;
        if let Some(h) = self.hedge_ttm {
            writeln!(w, "hedge_ttm={h}")?;
        }
        writeln!(w, "skipped={}", self.skipped)?;
        writeln!(w, "total={}", self.total)?;
        writeln!(w, "vol,ttm,n,{}", METRICS.join(","))?;
        for c in &self.cells {
            write!(w, "{},{},{}", c.vol, c.ttm, c.n)?;
            for m in c.metrics {
                write!(w, ",{m}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("run report: {m}"));
        let mut head = BTreeMap::new();
        let mut cells = Vec::new();
        let mut in_table = false;
        for line in r.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if !in_table {
                if line.starts_with("vol,") {
                    in_table = true;
                } else if let Some((k, v)) = line.split_once('=') {
                    head.insert(k.to_string(), v.to_string());
                } else {
                    return Err(bad(format!("unexpected line `{line}`")));
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 + METRICS.len() {
                return Err(bad(format!("row `{line}` has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            let mut metrics = [0.0; 6];
            for (m, s) in metrics.iter_mut().zip(&f[3..]) {
                *m = num(s)?;
            }
            cells.push(CellRun {
                vol: num(f[0])?,
                ttm: num(f[1])?,
                n: f[2].parse().map_err(|_| bad(format!("bad count `{}`", f[2])))?,
                metrics,
            });
        }
        let get = |k: &str| head.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        let parse_num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };
        Ok(RunReport {
            engine: get("engine")?,
            grid_hash: get("grid_hash")?,
            seed: parse_num("seed")? as u64,
            kind: OptionKind::parse(&get("kind")?).ok_or_else(|| bad("bad `kind`".into()))?,
            with_gamma: get("with_gamma")? == "true",
            hedge_ttm: head.get("hedge_ttm").map(|_| parse_num("hedge_ttm")).transpose()?,
            skipped: parse_num("skipped")? as usize,
            total: parse_num("total")? as usize,
            cells,
        })
    }
}

/// Sweep `grid`, comparing `model` with `oracle` at every point. Oracle
/// failures skip the point. Deltas are compared unclamped.
pub fn evaluate(model: &dyn StripModel, grid: &EvalGrid, oracle: &Oracle) -> Result<RunReport> {
    grid.validate()?;
    let meta = model.meta();
    if let Some(meta) = meta {
        if meta.process != "none" && meta.process != oracle.process_tag() {
            return Err(Error::GridMismatch(format!(
                "model trained on `{}` but oracle prices `{}`",
                meta.process,
                oracle.process_tag()
            )));
        }
        if meta.kind != grid.kind {
            return Err(Error::GridMismatch(format!(
                "model prices {} options but grid asks for {}",
                meta.kind.tag(),
                grid.kind.tag()
            )));
        }
    }
    let mut report = RunReport {
        engine: oracle.engine(grid.vols[0])?.name().into(),
        grid_hash: grid.hash(),
        seed: meta.map_or(0, |m| m.seed),
        kind: grid.kind,
        with_gamma: meta.is_none_or(|m| m.loss == "delta-gamma"),
        hedge_ttm: None,
        skipped: 0,
        total: grid.n_points(),
        cells: Vec::with_capacity(grid.vols.len() * grid.ttms.len()),
    };
    let mut quotes = Vec::with_capacity(grid.spots.len());
    for &vol in &grid.vols {
        let engine = oracle.engine(vol)?;
        for &ttm in &grid.ttms {
            let mut sums = [0.0; 6];
            let mut n = 0usize;
            let cell_points = grid.strikes.len() * grid.spots.len();
            let prep = match engine.prepare(ttm, grid.rate) {
                Ok(p) => p,
                Err(_) => {
                    report.skipped += cell_points;
                    report.cells.push(CellRun {
                        vol,
                        ttm,
                        n: 0,
                        metrics: [f64::NAN; 6],
                    });
                    continue;
                }
            };
            for &strike in &grid.strikes {
                let opt = OptionSpec {
                    strike,
                    ttm,
                    rate: grid.rate,
                    kind: grid.kind,
                };
                model.strip(&grid.spots, &opt, &mut quotes)?;
                for (&spot, q) in grid.spots.iter().zip(&quotes) {
                    let Ok((p, d, g)) = prep.greeks(spot, strike, grid.kind) else {
                        report.skipped += 1;
                        continue;
                    };
                    if !(p.is_finite() && d.is_finite() && g.is_finite()) {
                        report.skipped += 1;
                        continue;
                    }
                    n += 1;
                    for (k, dev) in [q[0] - p, q[1] - d, q[2] - g].into_iter().enumerate() {
                        sums[2 * k] += dev.abs();
                        sums[2 * k + 1] += dev * dev;
                    }
                }
            }
            let metrics = if n == 0 { [f64::NAN; 6] } else { sums.map(|s| s / n as f64) };
            report.cells.push(CellRun { vol, ttm, n, metrics });
        }
    }
    Ok(report)
}

/// Mean and spread of one metric over runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub vol: f64,
    pub ttm: f64,
    pub stats: [Stat; 6],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub engine: String,
    pub grid_hash: String,
    pub seeds: Vec<u64>,
    pub kind: OptionKind,
    pub with_gamma: bool,
    pub hedge_ttm: Option<f64>,
    pub cells: Vec<CellSummary>,
}

impl EvalReport {
    pub fn cell(&self, vol: f64, ttm: f64) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| (c.vol - vol).abs() < 1e-12 && (c.ttm - ttm).abs() < 1e-12)
    }
}

/// Mean and sample std of every cell over runs. Runs must share grid,
/// engine and loss; the result does not depend on run order.
pub fn aggregate(runs: &[RunReport]) -> Result<EvalReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Config("aggregate needs at least one run".into()))?;
    for r in &runs[1..] {
        let mismatch = |what: &str| Err(Error::GridMismatch(format!("run seed {} differs in {what}", r.seed)));
        if r.grid_hash != first.grid_hash {
            return mismatch("grid hash");
        }
        if r.engine != first.engine {
            return mismatch("oracle engine");
        }
        if r.kind != first.kind || r.with_gamma != first.with_gamma || r.hedge_ttm != first.hedge_ttm {
            return mismatch("option kind or hedging setup");
        }
        if r.cells.len() != first.cells.len()
            || r.cells.iter().zip(&first.cells).any(|(a, b)| a.vol != b.vol || a.ttm != b.ttm)
        {
            return mismatch("cell layout");
        }
    }
    let cells = first
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let stats = std::array::from_fn(|k| {
                let mut xs: Vec<f64> = runs.iter().map(|r| r.cells[i].metrics[k]).collect();
                xs.sort_by(f64::total_cmp);
                Stat {
                    mean: mean(&xs),
                    std: sample_std(&xs),
                }
            });
            CellSummary {
                vol: c.vol,
                ttm: c.ttm,
                stats,
            }
        })
        .collect();
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    Ok(EvalReport {
        engine: first.engine.clone(),
        grid_hash: first.grid_hash.clone(),
        seeds,
        kind: first.kind,
        with_gamma: first.with_gamma,
        hedge_ttm: first.hedge_ttm,
        cells,
    })
}

/// `x` rounded to six significant digits, printed in shortest form.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return "nan".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Write reports as one table, rows ordered by vol, hedge maturity, ttm.
/// A `hedge_ttm` column appears when any report has one; gamma columns when
/// any report is a delta-gamma run.
pub fn emit_table<W: Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    let with_hedge = reports.iter().any(|r| r.hedge_ttm.is_some());
    let with_gamma = reports.iter().any(|r| r.with_gamma);
    let n_metrics = if with_gamma { 6 } else { 4 };
    let mut header = vec!["vol".to_string()];
    if with_hedge {
        header.push("hedge_ttm".into());
    }
    header.push("ttm".into());
    for m in &METRICS[..n_metrics] {
        header.push(m.to_string());
        header.push(format!("{m}_std"));
    }
    writeln!(w, "{}", header.join(","))?;

    let mut rows: Vec<(f64, f64, f64, String)> = Vec::new();
    for r in reports {
        for c in &r.cells {
            let mut f = vec![sig6(c.vol)];
            if with_hedge {
                f.push(r.hedge_ttm.map(sig6).unwrap_or_default());
            }
            f.push(sig6(c.ttm));
            for s in &c.stats[..n_metrics] {
                f.push(sig6(s.mean));
                f.push(s.std.map(sig6).unwrap_or_default());
            }
            rows.push((c.vol, r.hedge_ttm.unwrap_or(0.0), c.ttm, f.join(",")));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    for (_, _, _, line) in rows {
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parse a table written by [`emit_table`]: header names and rows, with
/// empty cells as `None`.
pub fn parse_table(text: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("empty table".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let row = line
            .split(',')
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Config(format!("bad table value `{s}`")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Config(format!("table row `{line}` has {} fields", row.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// The fixed axes of an error curve; spots come from the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSpec {
    pub vol: f64,
    pub ttm: f64,
    pub strike: f64,
}

/// One row per spot: model, oracle and deviation for price, delta and gamma.
/// Returns the number of spots skipped on oracle failure.
pub fn emit_error_curves<W: Write>(
    model: &dyn StripModel,
    grid: &EvalGrid,
    oracle: &Oracle,
    fixed: CurveSpec,
    mut w: W,
) -> Result<usize> {
    grid.validate()?;
    let within = |x: f64, xs: &[f64]| x >= xs[0] - 1e-12 && x <= xs[xs.len() - 1] + 1e-12;
    if !(within(fixed.vol, &grid.vols) && within(fixed.ttm, &grid.ttms) && within(fixed.strike, &grid.strikes)) {
        return Err(Error::Config(format!("curve point {fixed:?} lies outside the grid")));
    }
    let prep = oracle.engine(fixed.vol)?.prepare(fixed.ttm, grid.rate)?;
    let opt = OptionSpec {
        strike: fixed.strike,
        ttm: fixed.ttm,
        rate: grid.rate,
        kind: grid.kind,
    };
    let mut quotes = Vec::new();
    model.strip(&grid.spots, &opt, &mut quotes)?;
    writeln!(
        w,
        "spot,model_price,oracle_price,price_dev,model_delta,oracle_delta,delta_dev,model_gamma,oracle_gamma,gamma_dev"
    )?;
    let mut skipped = 0;
    for (&s, q) in grid.spots.iter().zip(&quotes) {
        let Ok((p, d, g)) = prep.greeks(s, fixed.strike, grid.kind) else {
            skipped += 1;
            continue;
        };
        writeln!(
            w,
            "{s},{},{p},{},{},{d},{},{},{g},{}",
            q[0],
            q[0] - p,
            q[1],
            q[1] - d,
            q[2],
            q[2] - g
        )?;
    }
    Ok(skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::pricers::bs_price;
    use proptest::prelude::*;

    fn small_grid() -> EvalGrid {
        EvalGrid {
            spots: linspace(75.0, 125.0, 41),
            strikes: vec![90.0, 100.0, 110.0],
            ttms: vec![0.24, 0.36],
            vols: vec![0.15],
            kind: OptionKind::Call,
            rate: 0.01,
        }
    }

    /// `g ≡ c` in normalised units.
    struct ConstModel(f64);

    impl StripModel for ConstModel {
        fn strip(&self, spots: &[f64], opt: &OptionSpec, out: &mut Vec<[f64; 3]>) -> Result<()> {
            out.clear();
            out.extend(spots.iter().map(|_| [self.0 * opt.strike * opt.discount(), 0.0, 0.0]));
            Ok(())
        }
    }

    #[test]
    fn full_grid_shape() {
        let g = EvalGrid::full(OptionKind::Call);
        g.validate().unwrap();
        assert_eq!(g.spots.len(), 10_000);
        assert_eq!((g.spots[0], g.spots[9_999]), (75.0, 125.0));
        assert_eq!(g.strikes.len(), 21);
        assert_eq!(g.ttms, vec![0.24, 0.28, 0.32, 0.36, 0.4, 0.44, 0.48]);
        let d = dry_run(&g, 10).unwrap();
        assert_eq!(d.points_per_run, 10_000 * 21 * 7 * 3);
        assert_eq!(d.total_points, 10 * d.points_per_run);
        assert_eq!(d.cells, 21);
    }

    #[test]
    fn grid_hash_tracks_values() {
        let a = small_grid();
        assert_eq!(a.hash(), small_grid().hash());
        let mut b = small_grid();
        b.spots[3] += 1e-9;
        assert_ne!(a.hash(), b.hash());
        let c = EvalGrid {
            kind: OptionKind::Put,
            ..small_grid()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unsorted_or_empty_grid_rejected() {
        let mut g = small_grid();
        g.strikes = vec![100.0, 90.0];
        assert!(g.validate().is_err());
        g.strikes.clear();
        assert!(g.validate().is_err());
    }

    #[test]
    fn self_comparison_is_zero() {
        let g = small_grid();
        for oracle in [Oracle::BlackScholes, Oracle::Heston(HestonParams::default())] {
            let engine = oracle.engine(0.15).unwrap();
            let r = evaluate(&engine, &g, &oracle).unwrap();
            assert_eq!(r.skipped, 0);
            assert!(r.with_gamma);
            for c in &r.cells {
                assert_eq!(c.n, 41 * 3);
                assert!(c.metrics.iter().all(|&m| m == 0.0), "{c:?}");
            }
        }
    }

    #[test]
    fn constant_model_matches_brute_force() {
        let g = small_grid();
        let r = evaluate(&ConstModel(0.05), &g, &Oracle::BlackScholes).unwrap();
        for c in &r.cells {
            let mut sum = 0.0;
            for &k in &g.strikes {
                let opt = OptionSpec::call(k, c.ttm, g.rate);
                for &s in &g.spots {
                    sum += (0.05 * k * (-g.rate * c.ttm).exp() - bs_price(s, &opt, 0.15).unwrap()).abs();
                }
            }
            let want = sum / (g.strikes.len() * g.spots.len()) as f64;
            assert!((c.metrics[0] - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn mlp_strip_matches_scalar_path() {
        let p = init_params(3);
        let opt = OptionSpec::put(97.0, 0.3, 0.02);
        let spots = linspace(80.0, 120.0, 9);
        let mut out = Vec::new();
        p.strip(&spots, &opt, &mut out).unwrap();
        for (s, q) in spots.iter().zip(&out) {
            let (pp, d, g) = crate::model::price_delta_gamma(&p, *s, &opt).unwrap();
            assert!((q[0] - pp).abs() < 1e-12 && (q[1] - d).abs() < 1e-12 && (q[2] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn process_mismatch_rejected() {
        let mut p = init_params(0);
        p.meta.process = "heston".into();
        assert!(matches!(
            evaluate(&p, &small_grid(), &Oracle::BlackScholes),
            Err(Error::GridMismatch(_))
        ));
        p.meta.process = "gbm".into();
        let r = evaluate(&p, &small_grid(), &Oracle::BlackScholes).unwrap();
        assert!(!r.with_gamma);
        assert!(r.cells.iter().all(|c| c.metrics.iter().all(|m| *m >= 0.0)));
    }

    fn run(seed: u64, mad: f64) -> RunReport {
        RunReport {
            engine: "bs".into(),
            grid_hash: "h".into(),
            seed,
            kind: OptionKind::Call,
            with_gamma: false,
            hedge_ttm: None,
            skipped: 0,
            total: 10,
            cells: vec![CellRun {
                vol: 0.125,
                ttm: 0.24,
                n: 10,
                metrics: [mad, mad * mad, 0.01, 1e-4, 0.0, 0.0],
            }],
        }
    }

    #[test]
    fn aggregation_arithmetic() {
        let single = aggregate(&[run(0, 0.1)]).unwrap();
        assert_eq!(single.cells[0].stats[0].std, None);
        let same = aggregate(&[run(0, 0.1), run(1, 0.1)]).unwrap();
        assert_eq!(same.cells[0].stats[0].std, Some(0.0));
        let two = aggregate(&[run(0, 0.1), run(1, 0.2)]).unwrap();
        let s = two.cells[0].stats[0];
        assert!((s.mean - 0.15).abs() < 1e-15);
        assert!((s.std.unwrap() - 0.070_710_678).abs() < 1e-9);
        assert_eq!(two.seeds, vec![0, 1]);
    }

    #[test]
    fn aggregation_rejects_mismatch() {
        let mut b = run(1, 0.2);
        b.grid_hash = "other".into();
        assert!(matches!(aggregate(&[run(0, 0.1), b]), Err(Error::GridMismatch(_))));
        let mut c = run(1, 0.2);
        c.cells[0].ttm = 0.28;
        assert!(matches!(aggregate(&[run(0, 0.1), c]), Err(Error::GridMismatch(_))));
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_order_free(mads in prop::collection::vec(0.0f64..1.0, 2..8), rot in 0usize..8) {
            let runs: Vec<RunReport> = mads.iter().enumerate().map(|(i, m)| run(i as u64, *m)).collect();
            let mut shuffled = runs.clone();
            shuffled.rotate_left(rot % runs.len());
            shuffled.reverse();
            prop_assert_eq!(aggregate(&runs).unwrap(), aggregate(&shuffled).unwrap());
        }
    }

    #[test]
    fn run_report_round_trip() {
        let mut r = evaluate(&init_params(1), &small_grid(), &Oracle::BlackScholes).unwrap();
        r.hedge_ttm = Some(0.12);
        r.skipped = 2;
        let mut buf = Vec::new();
        r.write(&mut buf).unwrap();
        assert_eq!(RunReport::read(buf.as_slice()).unwrap(), r);
    }

    #[test]
    fn table_round_trip_and_schema() {
        let runs = [run(0, 0.123_456_789), run(1, 0.2)];
        let rep = aggregate(&runs).unwrap();
        let mut buf = Vec::new();
        emit_table(std::slice::from_ref(&rep), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (header, rows) = parse_table(&text).unwrap();
        assert_eq!(
            header.join(","),
            "vol,ttm,price_mad,price_mad_std,price_mse,price_mse_std,delta_mad,delta_mad_std,delta_mse,delta_mse_std"
        );
        let c = &rep.cells[0];
        let mut want = vec![c.vol, c.ttm];
        for s in &c.stats[..4] {
            want.push(s.mean);
            want.push(s.std.unwrap());
        }
        for (got, w) in rows[0].iter().zip(&want) {
            assert_eq!(got.unwrap(), sig6(*w).parse::<f64>().unwrap());
            assert!((got.unwrap() - w).abs() <= 5e-6 * w.abs());
        }

        let gamma = EvalReport {
            with_gamma: true,
            hedge_ttm: Some(0.36),
            ..rep.clone()
        };
        let short = EvalReport {
            hedge_ttm: Some(0.12),
            ..gamma.clone()
        };
        let mut buf = Vec::new();
        emit_table(&[gamma, short], &mut buf).unwrap();
        let (header, rows) = parse_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(&header[..3], ["vol", "hedge_ttm", "ttm"]);
        assert!(header.iter().any(|h| h == "gamma_mse_std"));
        assert_eq!(rows[0][1], Some(0.12));
        assert_eq!(rows[1][1], Some(0.36));
    }

    #[test]
    fn single_run_std_cells_are_empty() {
        let rep = aggregate(&[run(0, 0.1)]).unwrap();
        let mut buf = Vec::new();
        emit_table(&[rep], &mut buf).unwrap();
        let (_, rows) = parse_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(rows[0][3], None);
    }

    #[test]
    fn sig6_rounds() {
        assert_eq!(sig6(0.164_000_04), "0.164");
        assert_eq!(sig6(123_456_789.0), "123457000");
        assert_eq!(sig6(1.234_567_89e-7), "0.000000123457");
    }

    #[test]
    fn oracle_curves() {
        let g = small_grid();
        let oracle = Oracle::BlackScholes;
        let engine = oracle.engine(0.15).unwrap();
        let mut buf = Vec::new();
        let fixed = CurveSpec {
            vol: 0.15,
            ttm: 0.36,
            strike: 100.0,
        };
        assert_eq!(emit_error_curves(&engine, &g, &oracle, fixed, &mut buf).unwrap(), 0);
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), g.spots.len());
        assert!(rows.iter().all(|r| r[3] == 0.0 && r[6] == 0.0 && r[9] == 0.0));
        assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));
        let outside = CurveSpec { ttm: 0.6, ..fixed };
        assert!(emit_error_curves(&engine, &g, &oracle, outside, Vec::new()).is_err());
    }
}
