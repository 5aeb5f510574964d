use std::fs;

use sltgnn::config::parse_kv;
use sltgnn::trainer::evaluate;
use sltgnn::{Model, Split};
use sltgnn_cli::plot::emit_plot;
use sltgnn_cli::run::RunConfig;
use sltgnn_cli::sweep::{cells, read_csv, run_cell, run_sweep, write_csv, Method, SweepRow};
use tempfile::TempDir;

fn config(extra: &str) -> RunConfig {
    let mut kv = parse_kv("model.width = 32\ntrain.epochs = 60\nsynth.seed = 2").unwrap();
    kv.extend(parse_kv(extra).unwrap());
    RunConfig::from_kv(kv, None).unwrap()
}

fn sweep_rows(cfg: &RunConfig, workers: usize) -> Vec<SweepRow> {
    let data = cfg.load_dataset().unwrap();
    let spec = cfg.model_spec(&data.graph).unwrap();
    let s = &cfg.sweep;
    run_sweep(&data.graph, &spec, &cfg.train, &cells(&s.methods, &s.grid, s.repeats, s.base_seed), workers).unwrap()
}

fn csv_bytes(rows: &[SweepRow]) -> Vec<u8> {
    let mut out = Vec::new();
    sltgnn_cli::sweep::write_rows(&mut out, rows).unwrap();
    out
}

#[test]
fn row_count_and_order() {
    let cfg = config("sweep.grid = 0.2,0.6\nsweep.methods = ssup,msup:2,msup:3\nsweep.repeats = 3\nsweep.seed = 10\ntrain.epochs = 4");
    let rows = sweep_rows(&cfg, 2);
    assert_eq!(rows.len(), 3 * 2 * 3);
    let keys: Vec<(String, usize, f64, u64)> = rows.iter().map(|r| (r.method.clone(), r.n, r.sparsity, r.seed)).collect();
    assert_eq!(keys[0], ("S-Sup".into(), 1, 0.2, 10));
    assert_eq!(keys[2], ("S-Sup".into(), 1, 0.2, 12));
    assert_eq!(keys[3], ("S-Sup".into(), 1, 0.6, 10));
    assert_eq!(keys[17], ("M-Sup".into(), 3, 0.6, 12));
    assert!(rows.iter().all(|r| r.is_ok()));
}

#[test]
fn default_repeats_is_five() {
    let cfg = config("");
    assert_eq!(cfg.sweep.repeats, 5);
    assert_eq!(cells(&cfg.sweep.methods, &cfg.sweep.grid, cfg.sweep.repeats, 0).len(), 2 * 5 * 5);
}

#[test]
fn csv_is_byte_identical_across_runs_and_worker_counts() {
    let cfg = config("sweep.grid = 0.3,0.7\nsweep.methods = ssup,msup:3\nsweep.repeats = 2\ntrain.epochs = 20");
    let a = csv_bytes(&sweep_rows(&cfg, 1));
    assert_eq!(a, csv_bytes(&sweep_rows(&cfg, 1)));
    assert_eq!(a, csv_bytes(&sweep_rows(&cfg, 3)));
}

#[test]
fn zero_learning_rate_gives_untrained_accuracy() {
    let cfg = config("sweep.grid = 0.0\nsweep.methods = ssup,msup:3\nsweep.repeats = 2\ntrain.lr = 0\ntrain.epochs = 5");
    let data = cfg.load_dataset().unwrap();
    let base = cfg.model_spec(&data.graph).unwrap();
    for row in sweep_rows(&cfg, 1) {
        let mut spec = base.clone();
        spec.seed = row.seed;
        spec.plan = Method::parse(if row.n == 1 { "ssup" } else { "msup:3" }).unwrap().plan(0.0, &base.plan);
        let model = Model::<f32>::new(spec.clone()).unwrap();
        let untrained = evaluate(&model, &data.graph, &spec.plan.sparsities, Split::Test).unwrap();
        assert_eq!(row.acc_test, Some(untrained), "{row:?}");
    }
}

#[test]
fn ssup_and_single_coat_msup_rows_agree() {
    let cfg = config("sweep.grid = 0.3,0.8\nsweep.methods = ssup,msup:1\nsweep.repeats = 2\ntrain.epochs = 30");
    let rows = sweep_rows(&cfg, 1);
    let (s, m) = rows.split_at(4);
    for (a, b) in s.iter().zip(m) {
        assert_eq!((a.sparsity, a.seed), (b.sparsity, b.seed));
        assert_eq!((a.acc_train, a.acc_val, a.acc_test, a.epoch_best), (b.acc_train, b.acc_val, b.acc_test, b.epoch_best));
        assert_eq!((a.mask_bytes, a.params), (b.mask_bytes, b.params));
    }
}

#[test]
fn multicoat_accuracy_is_flat_at_low_sparsity() {
    let cfg = config("sweep.grid = 0.05,0.5,0.9\nsweep.methods = msup:3\nsweep.repeats = 3\ntrain.epochs = 200");
    let rows = sweep_rows(&cfg, 1);
    let mean = |k: f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.sparsity == k).map(|r| r.acc_test.unwrap()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((mean(0.05) - mean(0.5)).abs() <= 0.02, "{} vs {}", mean(0.05), mean(0.5));
}

#[test]
fn failed_cell_becomes_a_status_row() {
    let cfg = config("");
    let data = cfg.load_dataset().unwrap();
    let mut spec = cfg.model_spec(&data.graph).unwrap();
    spec.in_dim += 1;
    let cell = cells(&[Method::MSup(2)], &[0.5], 1, 7)[0];
    let row = run_cell(&data.graph, &spec, &cfg.train, cell);
    assert_eq!(row.status, "failed");
    assert_eq!((row.acc_test, row.params), (None, None));
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("s.csv");
    write_csv(&path, std::slice::from_ref(&row)).unwrap();
    assert_eq!(read_csv(&path).unwrap(), vec![row]);
}

#[test]
fn sweep_grid_values_are_validated() {
    let kv = parse_kv("sweep.grid = 0.5,1.0").unwrap();
    assert_eq!(RunConfig::from_kv(kv, None).unwrap_err().exit_code(), 1);
    let kv = parse_kv("sweep.methods = ssup,dense").unwrap();
    assert_eq!(RunConfig::from_kv(kv, None).unwrap_err().exit_code(), 1);
    let kv = parse_kv("model.widht = 3").unwrap();
    assert!(RunConfig::from_kv(kv, None).unwrap_err().to_string().contains("model.widht"));
}

fn row(method: &str, n: usize, mode: &str, k: f64, seed: u64, acc: f64) -> SweepRow {
    SweepRow {
        method: method.into(),
        n,
        threshold_mode: mode.into(),
        sparsity: k,
        seed,
        epoch_best: Some(1),
        acc_train: Some(acc),
        acc_val: Some(acc),
        acc_test: Some(acc),
        mask_bytes: Some(1.0),
        paper_formula_bytes: Some(1.0),
        params: Some(8),
        macs_linear: Some(8),
        status: "ok".into(),
    }
}

#[test]
fn single_row_plot() {
    let dir = TempDir::new().unwrap();
    let (csv, svg) = (dir.path().join("one.csv"), dir.path().join("one.svg"));
    write_csv(&csv, &[row("S-Sup", 1, "none", 0.5, 0, 0.8)]).unwrap();
    let series = emit_plot(&csv, &svg).unwrap();
    assert_eq!(series.len(), 1);
    assert_eq!(series[0].points.len(), 1);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn three_methods_give_three_legend_entries() {
    let dir = TempDir::new().unwrap();
    let (csv, svg) = (dir.path().join("three.csv"), dir.path().join("three.svg"));
    let mut rows = Vec::new();
    for (m, n, mode) in [("S-Sup", 1, "none"), ("M-Sup", 3, "uniform"), ("M-Sup", 3, "adaptive-linear")] {
        for k in [0.1, 0.5, 0.9] {
            for seed in 0..3 {
                rows.push(row(m, n, mode, k, seed, 0.5 + 0.1 * seed as f64 - 0.2 * k));
            }
        }
    }
    write_csv(&csv, &rows).unwrap();
    let series = emit_plot(&csv, &svg).unwrap();
    assert_eq!(series.len(), 3);
    let p = &series[0].points[0];
    assert_eq!(p.count, 3);
    assert!((p.mean - 0.58).abs() < 1e-12);
    assert!((p.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
    let text = fs::read_to_string(&svg).unwrap();
    for label in ["S-Sup", "M-Sup N=3 (uniform)", "M-Sup N=3 (adaptive-linear)"] {
        assert_eq!(text.lines().filter(|l| l.trim() == label).count(), 1, "{label}");
    }
}

#[test]
fn empty_or_foreign_csv_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (csv, svg) = (dir.path().join("e.csv"), dir.path().join("e.svg"));
    write_csv(&csv, &[]).unwrap();
    assert_eq!(emit_plot(&csv, &svg).unwrap_err().exit_code(), 2);
    fs::write(&csv, "a,b\n1,2\n").unwrap();
    assert!(emit_plot(&csv, &svg).unwrap_err().to_string().contains("schema"));
    fs::write(&csv, "").unwrap();
    assert!(emit_plot(&csv, &svg).is_err());
}
