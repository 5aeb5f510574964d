//! Subcommands of the `sltgnn` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sltgnn::compressor::{dwl_bytes, memory_report, pack, to_mib, PackedModel};
use sltgnn::config::{format_kv, parse_f64_list, parse_kv, spec_to_kv, train_to_kv};
use sltgnn::trainer::{accuracy, train, TrainOutcome};
use sltgnn::Split;

use crate::checkpoint::Checkpoint;
use crate::dataset::{write_dataset, Dataset};
use crate::error::{CliError, CliResult};
use crate::plot::emit_plot;
use crate::run::{synthetic_from_kv, synthetic_to_kv, DatasetSource, Overrides, RunConfig};
use crate::sweep::{cells, run_sweep, summarize, write_csv, write_summary};

#[derive(Debug, Parser)]
#[command(name = "sltgnn", version, about = "Score-only training and packing of multicoated supermask GNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train scores; writes history.csv, checkpoint.json, model.sltg and run.txt to --out.
    Train(RunArgs),
    /// Accuracy of a packed model on the configured dataset.
    Eval {
        model: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sparsity sweep; writes sweep.csv and sweep_summary.csv to --out.
    Sweep(RunArgs),
    /// Pack a checkpoint into the compact model format.
    Pack {
        checkpoint: PathBuf,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate weights of a packed model; writes spec.txt and per-set mask and weight files to --out.
    Unpack {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Memory and compute accounting of a packed model.
    Report {
        model: PathBuf,
        /// Node count used for MAC counts.
        #[arg(long, default_value_t = 1)]
        nodes: usize,
    },
    /// Generate an SBM dataset directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plot a sweep CSV as SVG.
    Plot {
        csv: PathBuf,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sparsities.
    #[arg(long, value_parser = parse_list)]
    pub sparsity: Option<SparsityList>,
    #[arg(long)]
    pub coats: Option<usize>,
    #[arg(long, value_parser = ["uniform", "linear", "adaptive-linear"])]
    pub threshold: Option<String>,
    /// none, ssf or msf:M
    #[arg(long)]
    pub fold: Option<String>,
    #[arg(long, value_parser = ["shared", "unshared"])]
    pub masks: Option<String>,
}

/// Comma-separated `--sparsity` value.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<SparsityList, String> {
    parse_f64_list(s).map(SparsityList).map_err(|e| e.to_string())
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            sparsity: self.sparsity.clone().map(|l| l.0),
            coats: self.coats,
            threshold: self.threshold.clone(),
            fold: self.fold.clone(),
            masks: self.masks.clone(),
            workers: self.workers,
            out: self.out.clone(),
        }
    }

    pub fn run_config(&self) -> CliResult<RunConfig> {
        let o = self.overrides();
        match &self.config {
            Some(path) => RunConfig::from_file(path, &o),
            None => RunConfig::from_overrides(&o),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args.run_config()?),
        Command::Eval { model, run } => cmd_eval(&model, &run.run_config()?),
        Command::Sweep(args) => cmd_sweep(&args.run_config()?),
        Command::Pack { checkpoint, out } => cmd_pack(&checkpoint, &out),
        Command::Unpack { model, out } => cmd_unpack(&model, &out),
        Command::Report { model, nodes } => cmd_report(&model, nodes),
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Command::Plot { csv, out } => {
            let series = emit_plot(&csv, &out)?;
            println!("wrote {} ({} series)", out.display(), series.len());
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_packed(path: &Path) -> CliResult<PackedModel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    PackedModel::from_bytes(&bytes).map_err(|e| CliError::in_file(path, e))
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let data = cfg.load_dataset()?;
    eprintln!("{}", data.summary());
    Ok(data)
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    live_sparsity: String,
    loss: f64,
    acc_train: f64,
    acc_val: f64,
    acc_test: f64,
}

pub fn write_history(path: &Path, outcome: &TrainOutcome<f32>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in &outcome.history {
        let live: Vec<String> = r.live.iter().map(f64::to_string).collect();
        w.serialize(HistoryRow {
            epoch: r.epoch,
            live_sparsity: live.join(";"),
            loss: r.loss,
            acc_train: r.acc_train,
            acc_val: r.acc_val,
            acc_test: r.acc_test,
        })
        .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.output_dir()?;
    let data = load(cfg)?;
    let spec = cfg.model_spec(&data.graph)?;
    let outcome = train::<f32>(&spec, &data.graph, &cfg.train)?;
    create_dir(out)?;
    write_history(&out.join("history.csv"), &outcome)?;
    Checkpoint::from_model(&outcome.model).save(&out.join("checkpoint.json"))?;
    let packed = pack(&outcome.model)?;
    write_file(&out.join("model.sltg"), &packed.to_bytes()?)?;
    let mut kv = spec_to_kv(&outcome.model.spec);
    train_to_kv(&cfg.train, &mut kv);
    match &cfg.dataset {
        DatasetSource::Path(p) => {
            kv.insert("dataset.path".into(), p.display().to_string());
        }
        DatasetSource::Synthetic(s) => kv.extend(synthetic_to_kv(s)),
    }
    write_file(&out.join("run.txt"), format_kv(&kv).as_bytes())?;
    let best = outcome.best_record();
    println!(
        "best epoch {}: train {:.4} val {:.4} test {:.4} (sparsities {:?})",
        best.epoch, best.acc_train, best.acc_val, best.acc_test, outcome.model.spec.plan.sparsities
    );
    Ok(())
}

fn cmd_eval(model: &Path, cfg: &RunConfig) -> CliResult<()> {
    let packed = read_packed(model)?;
    let data = load(cfg)?;
    let g = &data.graph;
    if packed.spec.in_dim != g.num_features() || packed.spec.num_classes != g.num_classes {
        return Err(CliError::Data(format!(
            "model expects {} features / {} classes, dataset has {} / {}",
            packed.spec.in_dim,
            packed.spec.num_classes,
            g.num_features(),
            g.num_classes
        )));
    }
    let logits = packed.unpack()?.sparse_logits(g)?;
    let acc = |s| accuracy(&logits, &g.labels, g.splits.get(s));
    println!("train {:.4} val {:.4} test {:.4}", acc(Split::Train), acc(Split::Val), acc(Split::Test));
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.output_dir()?;
    let data = load(cfg)?;
    let spec = cfg.model_spec(&data.graph)?;
    let s = &cfg.sweep;
    let cells = cells(&s.methods, &s.grid, s.repeats, s.base_seed);
    let rows = run_sweep(&data.graph, &spec, &cfg.train, &cells, s.workers)?;
    create_dir(out)?;
    write_csv(&out.join("sweep.csv"), &rows)?;
    write_summary(&out.join("sweep_summary.csv"), &summarize(&rows))?;
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!("{} runs, {failed} failed; wrote {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn cmd_pack(checkpoint: &Path, out: &Path) -> CliResult<()> {
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    let bytes = pack(&model)?.to_bytes()?;
    write_file(out, &bytes)?;
    println!("wrote {} ({} bytes)", out.display(), bytes.len());
    Ok(())
}

fn matrix_text(rows: usize, cols: usize, value: impl Fn(usize, usize) -> String) -> String {
    let mut text = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| value(r, c)).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    text
}

fn cmd_unpack(model: &Path, out: &Path) -> CliResult<()> {
    let exe = read_packed(model)?.unpack()?;
    create_dir(out)?;
    write_file(&out.join("spec.txt"), format_kv(&spec_to_kv(&exe.spec)).as_bytes())?;
    for (i, m) in exe.masks.iter().enumerate() {
        let counts = m.counts();
        let text = matrix_text(m.rows(), m.cols(), |r, c| counts[r * m.cols() + c].to_string());
        write_file(&out.join(format!("mask-{i}.txt")), text.as_bytes())?;
    }
    for (i, w) in exe.effective_weights()?.iter().enumerate() {
        let text = matrix_text(w.rows(), w.cols(), |r, c| w.get(r, c).to_string());
        write_file(&out.join(format!("effective-{i}.txt")), text.as_bytes())?;
    }
    println!("wrote {} mask sets to {}", exe.masks.len(), out.display());
    Ok(())
}

fn cmd_report(model: &Path, nodes: usize) -> CliResult<()> {
    let packed = read_packed(model)?;
    let r = memory_report(&packed, nodes);
    let dwl = dwl_bytes(&packed.spec)?;
    println!("mask bits            {}", r.mask_bits);
    println!("mask bytes           {:.1} ({:.4} MiB)", r.mask_bytes(), to_mib(r.mask_bytes()));
    println!("formula bytes        {:.1} ({:.4} MiB)", r.paper_formula_bytes(), to_mib(r.paper_formula_bytes()));
    println!("stored real bits     {}", r.stored_real_bits);
    println!("total bytes          {}", r.total_bytes);
    println!("dense 32-bit bytes   {dwl} ({:.4} MiB)", to_mib(dwl as f64));
    println!("params               {}", r.params_total);
    println!("linear MACs ({nodes} nodes) {}", r.macs_linear);
    Ok(())
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut kv = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => Default::default(),
    };
    kv.retain(|k, _| k.starts_with("synth."));
    if let Some(seed) = seed {
        kv.insert("synth.seed".into(), seed.to_string());
    }
    let spec = synthetic_from_kv(&kv)?;
    let graph = sltgnn::synthetic::generate_sbm::<f32>(&spec)?;
    write_dataset(out, &graph, Some("sbm"))?;
    println!("wrote {} ({} nodes, {} features)", out.display(), graph.num_nodes(), graph.num_features());
    Ok(())
}
