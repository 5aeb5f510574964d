//! Run configuration: one flat `section.key = value` file per run.
//!
//! Sections: `dataset.*` (a directory) or `synth.*` (a generated SBM graph),
//! `model.*`, `plan.*` and `train.*` (read by the library), `output.dir`, and
//! `sweep.*` for sparsity sweeps. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use sltgnn::config::{self, parse_f64_list, KeyValues};
use sltgnn::synthetic::{generate_sbm, SyntheticSpec};
use sltgnn::{Graph, ModelSpec, TrainConfig};

use crate::dataset::{load_dataset, Dataset};
use crate::error::{CliError, CliResult};
use crate::sweep::Method;

const KNOWN_KEYS: &[&str] = &[
    "dataset.path",
    "synth.nodes",
    "synth.communities",
    "synth.p_in",
    "synth.p_out",
    "synth.features",
    "synth.noise",
    "synth.seed",
    "model.architecture",
    "model.in_dim",
    "model.width",
    "model.layers",
    "model.classes",
    "model.batch_norm",
    "model.init",
    "model.seed",
    "model.fold",
    "model.masks",
    "plan.kind",
    "plan.coats",
    "plan.sparsity",
    "plan.sparsities",
    "plan.threshold",
    "plan.alpha",
    "plan.scope",
    "train.epochs",
    "train.lr",
    "train.weight_decay",
    "train.optimizer",
    "train.eval_every",
    "train.seed",
    "train.straight_through",
    "output.dir",
    "sweep.grid",
    "sweep.methods",
    "sweep.repeats",
    "sweep.workers",
    "sweep.seed",
];

pub const DEFAULT_REPEATS: usize = 5;
pub const DEFAULT_GRID: &str = "0.1,0.3,0.5,0.7,0.9";
pub const DEFAULT_METHODS: &str = "ssup,msup:3";

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub repeats: usize,
    pub workers: usize,
    pub base_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// `model.*` and `plan.*` entries; in/out dims come from the graph if absent.
    pub model: KeyValues,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    pub sweep: SweepSettings,
}

/// Command-line flags that override config entries.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sparsity: Option<Vec<f64>>,
    pub coats: Option<usize>,
    pub threshold: Option<String>,
    pub fold: Option<String>,
    pub masks: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    /// Applies the flags to raw entries. A single `--sparsity` value sets
    /// `plan.sparsity`; any list also becomes the sweep grid. `--coats`
    /// sets both `plan.coats` and the sweep methods.
    pub fn apply(&self, kv: &mut KeyValues) {
        let mut set = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        if let Some(seed) = self.seed {
            set("model.seed", seed.to_string());
            set("train.seed", seed.to_string());
            set("sweep.seed", seed.to_string());
        }
        if let Some(list) = &self.sparsity {
            if let [k] = list[..] {
                set("plan.sparsity", k.to_string());
            }
            set("sweep.grid", list.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        }
        if let Some(n) = self.coats {
            set("plan.coats", n.to_string());
            set("plan.kind", if n > 1 { "multicoat" } else { "single" }.into());
            set("sweep.methods", Method::MSup(n).to_string());
        }
        if let Some(t) = &self.threshold {
            set("plan.threshold", t.clone());
        }
        if let Some(f) = &self.fold {
            set("model.fold", f.clone());
        }
        if let Some(m) = &self.masks {
            set("model.masks", m.clone());
        }
        if let Some(w) = self.workers {
            set("sweep.workers", w.to_string());
        }
        if let Some(out) = &self.out {
            set("output.dir", out.display().to_string());
        }
        // A list of sparsities implied by the plan would now be stale.
        if self.sparsity.is_some() || self.coats.is_some() || self.threshold.is_some() {
            kv.remove("plan.sparsities");
        }
    }
}

fn parse<T: std::str::FromStr>(kv: &KeyValues, key: &str, default: T) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    match kv.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e| CliError::Usage(format!("{key} = {v}: {e}"))),
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut kv = config::parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        overrides.apply(&mut kv);
        Self::from_kv(kv, path.parent())
    }

    /// Config built from flags alone, on the default synthetic graph.
    pub fn from_overrides(overrides: &Overrides) -> CliResult<Self> {
        let mut kv = KeyValues::new();
        overrides.apply(&mut kv);
        Self::from_kv(kv, None)
    }

    pub fn from_kv(kv: KeyValues, base_dir: Option<&Path>) -> CliResult<Self> {
        if let Some(bad) = kv.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!("unknown config key `{bad}`")));
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }
        };
        let has_synth = kv.keys().any(|k| k.starts_with("synth."));
        let dataset = match kv.get("dataset.path") {
            Some(_) if has_synth => {
                return Err(CliError::Usage("give either dataset.path or synth.* keys, not both".into()));
            }
            Some(p) => {
                let path = resolve(p);
                if !path.is_dir() {
                    return Err(CliError::Data(format!("dataset directory {} does not exist", path.display())));
                }
                DatasetSource::Path(path)
            }
            None => DatasetSource::Synthetic(synthetic_from_kv(&kv)?),
        };
        let model: KeyValues =
            kv.iter().filter(|(k, _)| k.starts_with("model.") || k.starts_with("plan.")).map(|(k, v)| (k.clone(), v.clone())).collect();
        let train = config::train_from_kv(&kv)?;
        let grid = parse_f64_list(kv.get("sweep.grid").map(String::as_str).unwrap_or(DEFAULT_GRID))?;
        if grid.is_empty() {
            return Err(CliError::Usage("sweep.grid is empty".into()));
        }
        if let Some(bad) = grid.iter().find(|k| !(0.0..1.0).contains(*k)) {
            return Err(CliError::Usage(format!("sweep.grid value {bad} outside [0, 1)")));
        }
        let methods = Method::parse_list(kv.get("sweep.methods").map(String::as_str).unwrap_or(DEFAULT_METHODS))?;
        let repeats = parse(&kv, "sweep.repeats", DEFAULT_REPEATS)?;
        if repeats == 0 {
            return Err(CliError::Usage("sweep.repeats must be at least 1".into()));
        }
        let workers = parse(&kv, "sweep.workers", 1usize)?.max(1);
        let base_seed = parse(&kv, "sweep.seed", parse(&kv, "model.seed", 0u64)?)?;
        Ok(Self {
            dataset,
            model,
            train,
            output_dir: kv.get("output.dir").map(|p| resolve(p)),
            sweep: SweepSettings { grid, methods, repeats, workers, base_seed },
        })
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        match &self.dataset {
            DatasetSource::Path(dir) => load_dataset(dir),
            DatasetSource::Synthetic(spec) => {
                let graph = generate_sbm::<f32>(spec)?;
                let num_edges = (graph.sum_adjacency.nnz() - graph.num_nodes()) / 2;
                Ok(Dataset { name: Some("sbm".into()), num_edges, graph })
            }
        }
    }

    /// Model spec for `graph`; `model.in_dim` and `model.classes` default to
    /// the graph's and must agree with it when given.
    pub fn model_spec(&self, graph: &Graph<f32>) -> CliResult<ModelSpec> {
        let mut kv = self.model.clone();
        for (key, actual) in [("model.in_dim", graph.num_features()), ("model.classes", graph.num_classes)] {
            let given = kv.entry(key.to_string()).or_insert_with(|| actual.to_string());
            if given.parse::<usize>().ok() != Some(actual) {
                return Err(CliError::Data(format!("{key} = {given} but the dataset has {actual}")));
            }
        }
        Ok(config::spec_from_kv(&kv)?)
    }

    pub fn output_dir(&self) -> CliResult<&Path> {
        self.output_dir.as_deref().ok_or_else(|| CliError::Usage("no output directory (use --out or output.dir)".into()))
    }
}

pub fn synthetic_from_kv(kv: &KeyValues) -> CliResult<SyntheticSpec> {
    let d = SyntheticSpec::small_sbm(0);
    let spec = SyntheticSpec {
        num_nodes: parse(kv, "synth.nodes", d.num_nodes)?,
        num_communities: parse(kv, "synth.communities", d.num_communities)?,
        p_in: parse(kv, "synth.p_in", d.p_in)?,
        p_out: parse(kv, "synth.p_out", d.p_out)?,
        feature_dim: parse(kv, "synth.features", d.feature_dim)?,
        feature_noise: parse(kv, "synth.noise", d.feature_noise)?,
        seed: parse(kv, "synth.seed", d.seed)?,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn synthetic_to_kv(spec: &SyntheticSpec) -> KeyValues {
    [
        ("synth.nodes", spec.num_nodes.to_string()),
        ("synth.communities", spec.num_communities.to_string()),
        ("synth.p_in", spec.p_in.to_string()),
        ("synth.p_out", spec.p_out.to_string()),
        ("synth.features", spec.feature_dim.to_string()),
        ("synth.noise", spec.feature_noise.to_string()),
        ("synth.seed", spec.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
