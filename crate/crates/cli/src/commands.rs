use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use finn_core::eval::{
    aggregate, dry_run, emit_error_curves, emit_table, evaluate, CurveSpec, EvalGrid, Oracle, RunReport,
    StripModel,
};
use finn_core::market_sim::{validate_heston, GbmParams, HestonParams, PathSet, DEFAULT_DT};
use finn_core::model::{load_checkpoint, MlpParams};
use finn_core::pricers::{Engine, OptionKind, OptionSpec, PriceModel};
use finn_core::trainer::{multi_run, write_run_dir, HedgeMode, Process, TrainConfig};

use crate::args::{Cli, Command, EvaluateArgs, GridArgs, PriceArgs, ProcessArgs, SimulateArgs, TableArgs, TrainArgs};
use crate::config::{parse_kv, Layers};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let layers = Layers::load(cli.config.as_deref())?;
    let seed = layers.get("seed", cli.seed, 0u64)?;
    match cli.cmd {
        Command::Simulate(a) => simulate(a, &layers, seed),
        Command::Train(a) => train(a, &layers, seed),
        Command::Evaluate(a) => evaluate_cmd(a, &layers, cli.config.is_some()),
        Command::Table(a) => table(a),
        Command::Price(a) => price(a, &layers),
    }
}

fn kind_of(layers: &Layers, flag: Option<String>, default: OptionKind) -> Result<OptionKind> {
    match layers.opt::<String>("kind", flag)? {
        None => Ok(default),
        Some(s) => OptionKind::parse(&s).ok_or_else(|| CliError::Usage(format!("kind must be call or put, got `{s}`"))),
    }
}

fn heston_params(a: &ProcessArgs, l: &Layers) -> Result<HestonParams> {
    let d = HestonParams::default();
    Ok(HestonParams {
        mu: l.get("mu", a.mu, d.mu)?,
        kappa: l.get("kappa", a.kappa, d.kappa)?,
        theta: l.get("theta", a.theta, d.theta)?,
        xi: l.get("xi", a.xi, d.xi)?,
        rho: l.get("rho", a.rho, d.rho)?,
        v0: l.get("v0", a.v0, d.v0)?,
        s0: l.get("s0", a.s0, d.s0)?,
    })
}

fn process_of(a: &ProcessArgs, l: &Layers) -> Result<Process> {
    let model = l.get::<String>("model", a.model.clone(), "gbm".into())?;
    match model.as_str() {
        "gbm" => {
            let d = GbmParams::default();
            Ok(Process::Gbm(GbmParams {
                mu: l.get("mu", a.mu, d.mu)?,
                sigma: l.get("sigma", a.sigma, d.sigma)?,
                s0: l.get("s0", a.s0, d.s0)?,
            }))
        }
        "heston" => {
            let p = heston_params(a, l)?;
            validate_heston(&p).map_err(finn_core::Error::from)?;
            Ok(Process::Heston(p))
        }
        other => Err(CliError::Usage(format!("model must be gbm or heston, got `{other}`"))),
    }
}

fn out_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Written before the work starts and never touched again.
fn write_manifest(path: &Path, seeds: &[u64], artifacts: &[PathBuf], config: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let cmdline: Vec<String> = std::env::args().collect();
    writeln!(w, "command={}", cmdline.join(" "))?;
    writeln!(w, "version={}", env!("CARGO_PKG_VERSION"))?;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    writeln!(w, "started_unix={now}")?;
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    writeln!(w, "seeds={}", seeds.join(","))?;
    for a in artifacts {
        writeln!(w, "artifact={}", a.display())?;
    }
    for line in config.lines() {
        writeln!(w, "config.{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs, l: &Layers, seed: u64) -> Result<()> {
    let process = process_of(&a.process, l)?;
    let paths = l.get("paths", a.paths, 1000usize)?;
    let steps = l.get("steps", a.steps, 120usize)?;
    let dt = l.get("dt", a.dt, DEFAULT_DT)?;
    let antithetic = a.antithetic || l.get("antithetic", None, false)?;
    if let Some(out) = &a.out {
        let cfg = format!(
            "{}paths={paths}\nsteps={steps}\ndt={dt}\nseed={seed}\nantithetic={antithetic}\n",
            process.snapshot()
        );
        write_manifest(&manifest_path(out), &[seed], std::slice::from_ref(out), &cfg)?;
    }
    let set: PathSet = match process {
        Process::Gbm(p) => finn_core::market_sim::simulate_gbm_with(&p, 0..paths, steps, dt, seed, antithetic)?,
        Process::Heston(p) => finn_core::market_sim::simulate_heston_with(&p, 0..paths, steps, dt, seed, antithetic)?,
    };
    let mut w = out_writer(a.out.as_deref())?;
    set.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn train_config(a: &TrainArgs, l: &Layers, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let hedge = l.get::<String>("hedge", a.hedge.clone(), "delta".into())?;
    let cfg = TrainConfig {
        process: process_of(&a.process, l)?,
        hedge_mode: HedgeMode::parse(&hedge)
            .ok_or_else(|| CliError::Usage(format!("hedge must be delta or delta-gamma, got `{hedge}`")))?,
        atm_ttm: l.get("atm-ttm", a.atm_ttm, d.atm_ttm)?,
        kind: kind_of(l, a.kind.clone(), d.kind)?,
        rate: l.get("rate", a.rate, d.rate)?,
        epochs: l.get("epochs", a.epochs, d.epochs)?,
        batch_size: l.get("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: l.get("lr", a.lr, d.learning_rate)?,
        strike_range: (
            l.get("strike-low", a.strike_low, d.strike_range.0)?,
            l.get("strike-high", a.strike_high, d.strike_range.1)?,
        ),
        ttm_range: (
            l.get("ttm-low", a.ttm_low, d.ttm_range.0)?,
            l.get("ttm-high", a.ttm_high, d.ttm_range.1)?,
        ),
        n_train_paths: l.get("train-paths", a.train_paths, d.n_train_paths)?,
        n_val_paths: l.get("val-paths", a.val_paths, d.n_val_paths)?,
        dt: l.get("dt", a.dt, d.dt)?,
        seed,
        patience: l.get("patience", a.patience, d.patience)?,
        clip_norm: l.get("clip-norm", a.clip_norm, d.clip_norm)?,
        abort_norm: l.get("abort-norm", a.abort_norm, d.abort_norm)?,
    };
    cfg.validate().map_err(|e| match e {
        finn_core::Error::Config(m) => CliError::Usage(m),
        other => CliError::Core(other),
    })?;
    Ok(cfg)
}

fn train(a: TrainArgs, l: &Layers, seed: u64) -> Result<()> {
    let cfg = train_config(&a, l, seed)?;
    let runs = l.get("runs", a.runs, 1usize)?;
    if runs == 0 {
        return Err(CliError::Usage("runs must be at least 1".into()));
    }
    let tag = l.get(
        "tag",
        a.tag.clone(),
        format!("{}-{}", cfg.process.tag(), cfg.hedge_mode.tag()),
    )?;
    let root = l.get("out-dir", a.out_dir.clone(), PathBuf::from("runs"))?;
    let tag_dir = root.join(&tag);
    std::fs::create_dir_all(&tag_dir)?;
    let seeds: Vec<u64> = (0..runs as u64).map(|k| seed.wrapping_add(k)).collect();
    let artifacts: Vec<PathBuf> = seeds.iter().map(|s| tag_dir.join(format!("seed{s}"))).collect();
    write_manifest(&tag_dir.join("manifest.txt"), &seeds, &artifacts, &cfg.snapshot())?;

    let mut first_err = None;
    for (s, result) in multi_run(&cfg, runs) {
        match result {
            Ok((params, history)) => {
                let run_cfg = TrainConfig { seed: s, ..cfg.clone() };
                let dir = write_run_dir(&root, &tag, &run_cfg, &params, &history)?;
                eprintln!(
                    "seed {s}: best epoch {} of {}, val loss {:.4e}",
                    history.best_epoch,
                    history.epochs.len() - 1,
                    history.best_val_loss()
                );
                println!("{}", dir.display());
            }
            Err(e) => {
                eprintln!("seed {s}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn load_model(path: &Path) -> Result<MlpParams> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.display().to_string()));
    }
    Ok(load_checkpoint(path)?)
}

/// Settings that come with a checkpoint: its training snapshot, if any.
fn snapshot_layers(ckpt: &Path) -> Result<Layers> {
    let snap = ckpt.with_file_name("config.snapshot");
    if !snap.is_file() {
        return Ok(Layers::default());
    }
    let text = std::fs::read_to_string(&snap)?;
    Ok(Layers::from_map(parse_kv(&text, &snap.display().to_string())?, &snap.display().to_string()))
}

fn oracle_of(engine: &str, a: &ProcessArgs, l: &Layers) -> Result<Oracle> {
    match engine {
        "bs" | "gbm" => Ok(Oracle::BlackScholes),
        "heston" | "heston-cf" => Ok(Oracle::Heston(heston_params(a, l)?)),
        other => Err(CliError::Usage(format!("engine must be bs or heston, got `{other}`"))),
    }
}

fn build_grid(g: &GridArgs, l: &Layers, oracle: &Oracle, kind: OptionKind) -> Result<EvalGrid> {
    let full = EvalGrid::full(kind);
    let training_vol = match oracle {
        Oracle::BlackScholes => l.opt::<f64>("sigma", None)?,
        Oracle::Heston(_) => l.opt::<f64>("xi", None)?,
    };
    let grid = EvalGrid {
        strikes: l.list("strikes", g.strikes.clone())?.unwrap_or(full.strikes.clone()),
        ttms: l.list("ttms", g.ttms.clone())?.unwrap_or(full.ttms.clone()),
        vols: match l.list("vols", g.vols.clone())? {
            Some(v) => v,
            None => training_vol.map_or(full.vols.clone(), |v| vec![v]),
        },
        rate: l.get("rate", g.rate, 0.0)?,
        ..full
    }
    .with_spot_count(l.get("spots", g.spots, 10_000usize)?);
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(grid)
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    if !run_dir.is_dir() {
        return Err(CliError::MissingCheckpoint(run_dir.display().to_string()));
    }
    let mut dirs: Vec<(u64, PathBuf)> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let s = name.strip_prefix("seed")?.parse::<u64>().ok()?;
            e.path().is_dir().then_some((s, e.path()))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::MissingCheckpoint(format!("no seed directories under {}", run_dir.display())));
    }
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

fn evaluate_one(a: &EvaluateArgs, l: &Layers, model: &dyn StripModel, engine: &str, kind: OptionKind) -> Result<RunReport> {
    let oracle = oracle_of(engine, &a.process, l)?;
    let grid = build_grid(&a.grid, l, &oracle, kind)?;
    let mut report = evaluate(model, &grid, &oracle)?;
    if l.opt::<String>("hedge", None)?.as_deref() == Some("delta-gamma") {
        report.hedge_ttm = Some(l.get("atm-ttm", None, TrainConfig::default().atm_ttm)?);
    }
    if report.skip_flagged() {
        eprintln!(
            "warning: {} of {} grid points skipped ({:.3}%)",
            report.skipped,
            report.total,
            100.0 * report.skip_rate()
        );
    }
    Ok(report)
}

fn evaluate_cmd(a: EvaluateArgs, file: &Layers, explicit_config: bool) -> Result<()> {
    let pick_layers = |ckpt: Option<&Path>| -> Result<Layers> {
        match ckpt {
            Some(c) if !explicit_config => snapshot_layers(c),
            _ => Ok(file.clone()),
        }
    };
    if a.dry_run {
        let engine = file.get::<String>("engine", a.engine.clone(), "bs".into())?;
        let oracle = oracle_of(&engine, &a.process, file)?;
        let kind = kind_of(file, a.grid.kind.clone(), OptionKind::Call)?;
        let grid = build_grid(&a.grid, file, &oracle, kind)?;
        let d = dry_run(&grid, file.get("runs", a.runs, 10usize)?)?;
        let mut w = out_writer(a.out.as_deref())?;
        writeln!(w, "grid_hash={}", d.grid_hash)?;
        writeln!(
            w,
            "spots={} strikes={} ttms={} vols={}",
            grid.spots.len(),
            grid.strikes.len(),
            grid.ttms.len(),
            grid.vols.len()
        )?;
        writeln!(w, "cells={}", d.cells)?;
        writeln!(w, "points_per_run={}", d.points_per_run)?;
        writeln!(w, "runs={}", d.runs)?;
        writeln!(w, "total_points={}", d.total_points)?;
        w.flush()?;
        return Ok(());
    }

    if let Some(run_dir) = &a.run_dir {
        for dir in seed_dirs(run_dir)? {
            let ckpt = dir.join("model.ckpt");
            let model = load_model(&ckpt)?;
            let l = pick_layers(Some(&ckpt))?;
            let engine = engine_for(&a, &l, &model)?;
            let kind = kind_of(&l, a.grid.kind.clone(), model.meta.kind)?;
            let report = evaluate_one(&a, &l, &model, &engine, kind)?;
            let out = dir.join("eval.csv");
            let mut w = BufWriter::new(File::create(&out)?);
            report.write(&mut w)?;
            w.flush()?;
            println!("{}", out.display());
        }
        return Ok(());
    }

    let (model, l): (Box<dyn StripModel>, Layers) = if a.oracle_as_model {
        let engine = file.get::<String>("engine", a.engine.clone(), "bs".into())?;
        let oracle = oracle_of(&engine, &a.process, file)?;
        let vol = match oracle {
            Oracle::BlackScholes => file.get("sigma", a.process.sigma, GbmParams::default().sigma)?,
            Oracle::Heston(p) => p.xi,
        };
        let mut l = file.clone();
        l.set_default("vols", vol.to_string());
        (Box::new(oracle.engine(vol)?), l)
    } else {
        let ckpt = a
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage("evaluate needs --checkpoint, --run-dir or --oracle-as-model".into()))?;
        let model = load_model(ckpt)?;
        (Box::new(model), pick_layers(Some(ckpt))?)
    };
    let meta = model.meta().cloned();
    let engine = match &meta {
        Some(m) => engine_for_meta(&a, &l, &m.process)?,
        None => l.get::<String>("engine", a.engine.clone(), "bs".into())?,
    };
    let kind = kind_of(&l, a.grid.kind.clone(), meta.as_ref().map_or(OptionKind::Call, |m| m.kind))?;

    if let (Some(ttm), Some(strike)) = (a.curve_ttm, a.curve_strike) {
        let oracle = oracle_of(&engine, &a.process, &l)?;
        let grid = build_grid(&a.grid, &l, &oracle, kind)?;
        let fixed = CurveSpec {
            vol: grid.vols[0],
            ttm,
            strike,
        };
        let mut w = out_writer(a.out.as_deref())?;
        let skipped = emit_error_curves(model.as_ref(), &grid, &oracle, fixed, &mut w)?;
        w.flush()?;
        if skipped > 0 {
            eprintln!("warning: {skipped} spots skipped");
        }
        return Ok(());
    }

    let report = evaluate_one(&a, &l, model.as_ref(), &engine, kind)?;
    let mut w = out_writer(a.out.as_deref())?;
    report.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn engine_for(a: &EvaluateArgs, l: &Layers, model: &MlpParams) -> Result<String> {
    engine_for_meta(a, l, &model.meta.process)
}

fn engine_for_meta(a: &EvaluateArgs, l: &Layers, process: &str) -> Result<String> {
    let default = match process {
        "heston" => "heston",
        _ => "bs",
    };
    l.get::<String>("engine", a.engine.clone(), default.into())
}

fn table(a: TableArgs) -> Result<()> {
    let mut reports = Vec::new();
    for run_dir in &a.run_dir {
        let mut runs = Vec::new();
        for dir in seed_dirs(run_dir)? {
            let path = dir.join("eval.csv");
            if !path.is_file() {
                return Err(CliError::MissingCheckpoint(format!(
                    "{} (run `finn evaluate --run-dir {}` first)",
                    path.display(),
                    run_dir.display()
                )));
            }
            runs.push(RunReport::read(BufReader::new(File::open(&path)?))?);
        }
        reports.push(aggregate(&runs)?);
    }
    if let Some(first) = reports.first() {
        if reports.iter().any(|r| r.grid_hash != first.grid_hash) {
            eprintln!("note: run directories were evaluated on different grids");
        }
    }
    let mut w = out_writer(a.out.as_deref())?;
    emit_table(&reports, &mut w)?;
    w.flush()?;
    Ok(())
}

fn price(a: PriceArgs, l: &Layers) -> Result<()> {
    let spot: f64 = l.require("spot", a.spot)?;
    let opt = OptionSpec {
        strike: l.require("strike", a.strike)?,
        ttm: l.require("ttm", a.ttm)?,
        rate: l.get("rate", a.rate, 0.0)?,
        kind: kind_of(l, a.kind.clone(), OptionKind::Call)?,
    };
    let (p, greeks) = match &a.model {
        Some(path) => {
            let (p, d, g) = load_model(path)?.price_delta_gamma(spot, &opt)?;
            (p, (d, g))
        }
        None => {
            let engine = match l.get::<String>("engine", a.engine.clone(), "bs".into())?.as_str() {
                "bs" => Engine::BlackScholes {
                    sigma: l.get("sigma", a.sigma, GbmParams::default().sigma)?,
                },
                "heston" => {
                    let pa = ProcessArgs {
                        kappa: a.kappa,
                        theta: a.theta,
                        xi: a.xi,
                        rho: a.rho,
                        v0: a.v0,
                        ..ProcessArgs::default()
                    };
                    let p = heston_params(&pa, l)?;
                    validate_heston(&p).map_err(finn_core::Error::from)?;
                    Engine::heston(p)
                }
                other => return Err(CliError::Usage(format!("engine must be bs or heston, got `{other}`"))),
            };
            let prep = engine.prepare(opt.ttm, opt.rate)?;
            if a.greeks {
                let (p, d, g) = prep.greeks(spot, opt.strike, opt.kind)?;
                (p, (d, g))
            } else {
                (prep.price(spot, opt.strike, opt.kind)?, (f64::NAN, f64::NAN))
            }
        }
    };
    let mut w = io::stdout().lock();
    if a.greeks {
        writeln!(w, "price={p:.6} delta={:.6} gamma={:.6}", greeks.0, greeks.1)?;
    } else {
        writeln!(w, "price={p:.6}")?;
    }
    Ok(())
}
