use finn_core::eval::{aggregate, emit_table, evaluate, parse_table, EvalGrid, Oracle};
use finn_core::market_sim::DEFAULT_DT;
use finn_core::model::load_checkpoint;
use finn_core::pricers::OptionKind;
use finn_core::trainer::{multi_run, write_run_dir, HedgeMode, TrainConfig};

fn tiny(mode: HedgeMode) -> TrainConfig {
    TrainConfig {
        hedge_mode: mode,
        epochs: 2,
        n_train_paths: 30,
        n_val_paths: 6,
        ttm_range: (DEFAULT_DT, 0.08),
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn train_save_load_evaluate_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(HedgeMode::DeltaGamma);
    let grid = EvalGrid {
        ttms: vec![0.04, 0.08],
        vols: vec![0.125],
        ..EvalGrid::full(OptionKind::Call).with_spot_count(25)
    };

    let mut runs = Vec::new();
    for (seed, result) in multi_run(&cfg, 2) {
        let (params, history) = result.unwrap();
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let run_dir = write_run_dir(dir.path(), "dg", &cfg, &params, &history).unwrap();
        assert!(run_dir.ends_with(format!("dg/seed{seed}")));

        let loaded = load_checkpoint(&run_dir.join("model.ckpt")).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded.meta.loss, "delta-gamma");
        assert_eq!(loaded.meta.epoch as usize, history.best_epoch);
        assert!(history.best_val_loss() <= history.epochs[0].val_loss);

        let history_csv = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
        assert_eq!(history_csv.lines().count(), history.epochs.len() + 1);
        runs.push(evaluate(&loaded, &grid, &Oracle::BlackScholes).unwrap());
    }
    assert_eq!(runs[0].seed, 11);
    assert_eq!(runs[1].seed, 12);
    assert!(runs.iter().all(|r| r.with_gamma && r.skipped == 0));

    let report = aggregate(&runs).unwrap();
    let mut out = Vec::new();
    emit_table(&[report.clone()], &mut out).unwrap();
    let (header, rows) = parse_table(std::str::from_utf8(&out).unwrap()).unwrap();
    assert!(header.iter().any(|h| h == "gamma_mad_std"));
    assert_eq!(rows.len(), 2);
    for (row, cell) in rows.iter().zip(&report.cells) {
        assert_eq!(row[0], Some(cell.vol));
        let price_mad = row[header.iter().position(|h| h == "price_mad").unwrap()].unwrap();
        assert!((price_mad - cell.stats[0].mean).abs() <= 1e-5 * cell.stats[0].mean);
    }
}

#[test]
fn checkpoint_from_one_process_is_refused_by_the_other_oracle() {
    let (params, _) = finn_core::trainer::train(&tiny(HedgeMode::Delta)).unwrap();
    let grid = EvalGrid {
        ttms: vec![0.08],
        vols: vec![0.15],
        ..EvalGrid::full(OptionKind::Call).with_spot_count(5)
    };
    let err = evaluate(&params, &grid, &Oracle::Heston(Default::default())).unwrap_err();
    assert!(matches!(err, finn_core::Error::GridMismatch(_)), "{err}");
}
