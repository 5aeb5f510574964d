//! Sparsity sweeps: every (method, sparsity, seed) cell is an isolated
//! training run. Cells run on a worker pool and rows come back in cell order.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sltgnn::compressor::{memory_report, pack};
use sltgnn::config::threshold_name;
use sltgnn::trainer::train;
use sltgnn::{Error, Graph, ModelSpec, SparsityPlan, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    SSup,
    MSup(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SSup => write!(f, "ssup"),
            Method::MSup(n) => write!(f, "msup:{n}"),
        }
    }
}

impl Method {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s.trim() {
            "ssup" => Ok(Method::SSup),
            t => match t.strip_prefix("msup:").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Ok(Method::MSup(n)),
                _ => Err(CliError::Usage(format!("unknown method `{t}` (ssup, msup:N)"))),
            },
        }
    }

    pub fn parse_list(s: &str) -> CliResult<Vec<Self>> {
        let methods = s.split(',').filter(|t| !t.trim().is_empty()).map(Self::parse).collect::<CliResult<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(CliError::Usage("method list is empty".into()));
        }
        Ok(methods)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::SSup => "S-Sup",
            Method::MSup(_) => "M-Sup",
        }
    }

    pub fn coats(&self) -> usize {
        match self {
            Method::SSup => 1,
            Method::MSup(n) => *n,
        }
    }

    /// Plan at sparsity `k`, keeping the threshold mode, alpha and scope of `base`.
    pub fn plan(&self, k: f64, base: &SparsityPlan) -> SparsityPlan {
        let plan = match self {
            Method::SSup => SparsityPlan::single(k),
            Method::MSup(n) => SparsityPlan::multicoat(k, *n, base.mode).with_alpha(base.alpha),
        };
        plan.with_scope(base.scope)
    }

    fn threshold_column(&self, base: &SparsityPlan) -> &'static str {
        match self {
            Method::SSup => "none",
            Method::MSup(_) => threshold_name(base.mode),
        }
    }
}

pub const CSV_HEADER: [&str; 14] = [
    "method",
    "N",
    "threshold_mode",
    "sparsity",
    "seed",
    "epoch_best",
    "acc_train",
    "acc_val",
    "acc_test",
    "mask_bytes",
    "paper_formula_bytes",
    "params",
    "macs_linear",
    "status",
];

/// One sweep cell. Metric fields are empty when the run failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub threshold_mode: String,
    pub sparsity: f64,
    pub seed: u64,
    pub epoch_best: Option<usize>,
    pub acc_train: Option<f64>,
    pub acc_val: Option<f64>,
    pub acc_test: Option<f64>,
    pub mask_bytes: Option<f64>,
    pub paper_formula_bytes: Option<f64>,
    pub params: Option<u64>,
    pub macs_linear: Option<u64>,
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub sparsity: f64,
    pub seed: u64,
}

/// Cells in (method, sparsity, seed) order, `repeats` seeds from `base_seed`.
pub fn cells(methods: &[Method], grid: &[f64], repeats: usize, base_seed: u64) -> Vec<Cell> {
    let mut out = Vec::with_capacity(methods.len() * grid.len() * repeats);
    for &method in methods {
        for &sparsity in grid {
            for r in 0..repeats as u64 {
                out.push(Cell { method, sparsity, seed: base_seed.wrapping_add(r) });
            }
        }
    }
    out
}

/// Trains one cell; model and training seeds are both the cell seed.
pub fn run_cell(graph: &Graph<f32>, base: &ModelSpec, cfg: &TrainConfig, cell: Cell) -> SweepRow {
    let mut row = SweepRow {
        method: cell.method.label().into(),
        n: cell.method.coats(),
        threshold_mode: cell.method.threshold_column(&base.plan).into(),
        sparsity: cell.sparsity,
        seed: cell.seed,
        epoch_best: None,
        acc_train: None,
        acc_val: None,
        acc_test: None,
        mask_bytes: None,
        paper_formula_bytes: None,
        params: None,
        macs_linear: None,
        status: String::new(),
    };
    let mut spec = base.clone();
    spec.seed = cell.seed;
    spec.plan = cell.method.plan(cell.sparsity, &base.plan);
    let cfg = TrainConfig { seed: cell.seed, ..cfg.clone() };
    let result = spec.validate().and_then(|_| train::<f32>(&spec, graph, &cfg)).and_then(|outcome| {
        let packed = pack(&outcome.model)?;
        Ok((outcome.best_record().clone(), memory_report(&packed, graph.num_nodes())))
    });
    match result {
        Ok((best, report)) => {
            row.epoch_best = Some(best.epoch);
            row.acc_train = Some(best.acc_train);
            row.acc_val = Some(best.acc_val);
            row.acc_test = Some(best.acc_test);
            row.mask_bytes = Some(report.mask_bytes());
            row.paper_formula_bytes = Some(report.paper_formula_bytes());
            row.params = Some(report.params_total);
            row.macs_linear = Some(report.macs_linear);
            row.status = "ok".into();
        }
        Err(e) => {
            eprintln!("sweep: {} k={} seed={} failed: {e}", cell.method, cell.sparsity, cell.seed);
            row.status = match e {
                Error::Diverged { .. } => "diverged",
                _ => "failed",
            }
            .into();
        }
    }
    row
}

/// Runs every cell on `workers` threads. Row order and contents do not
/// depend on the worker count.
pub fn run_sweep(
    graph: &Graph<f32>,
    base: &ModelSpec,
    cfg: &TrainConfig,
    cells: &[Cell],
    workers: usize,
) -> CliResult<Vec<SweepRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Data(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|&c| run_cell(graph, base, cfg, c)).collect()))
}

pub fn write_rows<W: std::io::Write>(out: W, rows: &[SweepRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(|e| CliError::Data(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_rows(std::io::BufWriter::new(file), rows)
}

/// Reads a sweep CSV, rejecting any other header.
pub fn read_csv(path: &Path) -> CliResult<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::in_file(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(CliError::in_file(path, format!("header does not match the sweep schema ({})", CSV_HEADER.join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| CliError::in_file(path, e))).collect()
}

/// Mean and population standard deviation of test accuracy at one sparsity.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub sparsity: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub method: String,
    pub n: usize,
    pub threshold_mode: String,
    pub points: Vec<Point>,
}

impl Series {
    pub fn label(&self) -> String {
        match self.method.as_str() {
            "S-Sup" => "S-Sup".into(),
            m => format!("{m} N={} ({})", self.n, self.threshold_mode),
        }
    }
}

/// Groups successful rows by (method, N, threshold mode), in first-seen order,
/// with points sorted by sparsity.
pub fn summarize(rows: &[SweepRow]) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    let mut samples: Vec<Vec<(f64, f64)>> = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let Some(acc) = r.acc_test else { continue };
        let idx = match series.iter().position(|s| s.method == r.method && s.n == r.n && s.threshold_mode == r.threshold_mode) {
            Some(i) => i,
            None => {
                series.push(Series { method: r.method.clone(), n: r.n, threshold_mode: r.threshold_mode.clone(), points: vec![] });
                samples.push(vec![]);
                series.len() - 1
            }
        };
        samples[idx].push((r.sparsity, acc));
    }
    for (s, mut xs) in series.iter_mut().zip(samples) {
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for group in xs.chunk_by(|a, b| a.0 == b.0) {
            let count = group.len();
            let mean = group.iter().map(|p| p.1).sum::<f64>() / count as f64;
            let var = group.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / count as f64;
            s.points.push(Point { sparsity: group[0].0, mean, std: var.sqrt(), count });
        }
    }
    series
}

pub fn write_summary(path: &Path, series: &[Series]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let err = |e: csv::Error| CliError::io(path, e);
    w.write_record(["method", "N", "threshold_mode", "sparsity", "runs", "acc_test_mean", "acc_test_std"]).map_err(err)?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.method.clone(),
                s.n.to_string(),
                s.threshold_mode.clone(),
                p.sparsity.to_string(),
                p.count.to_string(),
                p.mean.to_string(),
                p.std.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
