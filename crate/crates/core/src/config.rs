//! Flat `section.key = value` configuration text.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Keys are
//! kept sorted so formatting is deterministic.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::model::{Architecture, FoldSpec, ModelSpec};
use crate::rand_init::InitMethod;
use crate::supermask::{MaskKind, SparsityPlan, ThresholdMode, ThresholdScope, DEFAULT_ALPHA};
use crate::trainer::{StraightThrough, TrainConfig};

pub type KeyValues = BTreeMap<String, String>;

pub fn parse_kv(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return config_err(format!("line {}: expected `key = value`", n + 1));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return config_err(format!("line {}: malformed key `{key}`", n + 1));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return config_err(format!("line {}: duplicate key `{key}`", n + 1));
        }
    }
    Ok(out)
}

pub fn format_kv(kv: &KeyValues) -> String {
    kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn get<T: FromStr>(kv: &KeyValues, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    kv.get(key)
        .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = {v}: {e}"))))
        .transpose()
}

fn require<T: FromStr>(kv: &KeyValues, key: &str) -> Result<T>
where
    T::Err: Display,
{
    get(kv, key)?.ok_or_else(|| Error::Config(format!("missing key `{key}`")))
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("`{s}`: {e}"))))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn architecture_name(a: Architecture) -> &'static str {
    match a {
        Architecture::Gcn => "gcn",
        Architecture::Gin => "gin",
        Architecture::ResGcn => "resgcn",
    }
}

pub fn parse_architecture(s: &str) -> Result<Architecture> {
    match s {
        "gcn" => Ok(Architecture::Gcn),
        "gin" => Ok(Architecture::Gin),
        "resgcn" => Ok(Architecture::ResGcn),
        _ => config_err(format!("unknown architecture `{s}`")),
    }
}

pub fn threshold_name(m: ThresholdMode) -> &'static str {
    match m {
        ThresholdMode::Uniform => "uniform",
        ThresholdMode::Linear => "linear",
        ThresholdMode::AdaptiveLinear => "adaptive-linear",
    }
}

pub fn parse_threshold(s: &str) -> Result<ThresholdMode> {
    match s {
        "uniform" => Ok(ThresholdMode::Uniform),
        "linear" => Ok(ThresholdMode::Linear),
        "adaptive-linear" => Ok(ThresholdMode::AdaptiveLinear),
        _ => config_err(format!("unknown threshold mode `{s}`")),
    }
}

/// `none`, `ssf` or `msf:M`; the depth comes from the layer count.
pub fn parse_fold(s: &str, depth: usize, unshared: bool) -> Result<Option<FoldSpec>> {
    match s {
        "none" => Ok(None),
        "ssf" => Ok(Some(FoldSpec::ssf(depth, unshared))),
        _ => match s.strip_prefix("msf:").map(str::parse::<usize>) {
            Some(Ok(m)) => Ok(Some(FoldSpec::msf(depth, m, unshared))),
            _ => config_err(format!("unknown fold `{s}` (none, ssf, msf:M)")),
        },
    }
}

pub fn fold_name(fold: Option<FoldSpec>) -> String {
    match fold {
        None => "none".into(),
        Some(f) if f.stages == 1 => "ssf".into(),
        Some(f) => format!("msf:{}", f.stages),
    }
}

pub fn parse_masks(s: &str) -> Result<bool> {
    match s {
        "shared" => Ok(false),
        "unshared" => Ok(true),
        _ => config_err(format!("unknown mask sharing `{s}` (shared, unshared)")),
    }
}

pub fn plan_to_kv(plan: &SparsityPlan, kv: &mut KeyValues) {
    let kind = match plan.kind {
        MaskKind::Single => "single",
        MaskKind::Multicoat => "multicoat",
    };
    let scope = match plan.scope {
        ThresholdScope::PerLayer => "per-layer",
        ThresholdScope::Global => "global",
    };
    kv.insert("plan.kind".into(), kind.into());
    kv.insert("plan.coats".into(), plan.coats.to_string());
    kv.insert("plan.sparsity".into(), plan.base_sparsity.to_string());
    kv.insert("plan.sparsities".into(), join(&plan.sparsities));
    kv.insert("plan.threshold".into(), threshold_name(plan.mode).into());
    kv.insert("plan.alpha".into(), plan.alpha.to_string());
    kv.insert("plan.scope".into(), scope.into());
}

/// Reads a plan. Without `plan.sparsities` the list is derived from
/// `plan.sparsity` and `plan.coats` (uniform until Linear resolution).
pub fn plan_from_kv(kv: &KeyValues) -> Result<SparsityPlan> {
    let k1: f64 = get(kv, "plan.sparsity")?.unwrap_or(0.5);
    let coats: usize = get(kv, "plan.coats")?.unwrap_or(1);
    let kind = kv.get("plan.kind").map(String::as_str).unwrap_or(if coats > 1 { "multicoat" } else { "single" });
    let mode = parse_threshold(kv.get("plan.threshold").map(String::as_str).unwrap_or("uniform"))?;
    let mut plan = match kind {
        "single" => SparsityPlan::single(k1),
        "multicoat" => SparsityPlan::multicoat(k1, coats, mode),
        _ => return config_err(format!("unknown plan kind `{kind}`")),
    };
    if let Some(list) = kv.get("plan.sparsities") {
        plan.sparsities = parse_f64_list(list)?;
    }
    plan.alpha = get(kv, "plan.alpha")?.unwrap_or(DEFAULT_ALPHA);
    plan.scope = match kv.get("plan.scope").map(String::as_str).unwrap_or("per-layer") {
        "per-layer" => ThresholdScope::PerLayer,
        "global" => ThresholdScope::Global,
        s => return config_err(format!("unknown threshold scope `{s}`")),
    };
    plan.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(plan)
}

pub fn spec_to_kv(spec: &ModelSpec) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.insert("model.architecture".into(), architecture_name(spec.architecture).into());
    kv.insert("model.in_dim".into(), spec.in_dim.to_string());
    kv.insert("model.width".into(), spec.width.to_string());
    kv.insert("model.layers".into(), spec.layers.to_string());
    kv.insert("model.classes".into(), spec.num_classes.to_string());
    kv.insert("model.batch_norm".into(), spec.batch_norm.to_string());
    let init = match spec.init {
        InitMethod::SignedKaimingConstant => "signed-constant",
        InitMethod::KaimingNormal => "kaiming-normal",
    };
    kv.insert("model.init".into(), init.into());
    kv.insert("model.seed".into(), spec.seed.to_string());
    kv.insert("model.fold".into(), fold_name(spec.fold));
    let unshared = spec.fold.is_none_or(|f| f.unshared);
    kv.insert("model.masks".into(), if unshared { "unshared" } else { "shared" }.into());
    plan_to_kv(&spec.plan, &mut kv);
    kv
}

pub fn spec_from_kv(kv: &KeyValues) -> Result<ModelSpec> {
    let architecture = parse_architecture(kv.get("model.architecture").map(String::as_str).unwrap_or("gcn"))?;
    let layers: usize = get(kv, "model.layers")?.unwrap_or(2);
    let unshared = parse_masks(kv.get("model.masks").map(String::as_str).unwrap_or("unshared"))?;
    let mut spec = ModelSpec::new(
        architecture,
        require(kv, "model.in_dim")?,
        get(kv, "model.width")?.unwrap_or(256),
        layers,
        require(kv, "model.classes")?,
        plan_from_kv(kv)?,
    );
    spec.fold = parse_fold(kv.get("model.fold").map(String::as_str).unwrap_or("none"), layers, unshared)?;
    spec.batch_norm = get(kv, "model.batch_norm")?.unwrap_or(false);
    spec.init = match kv.get("model.init").map(String::as_str).unwrap_or("signed-constant") {
        "signed-constant" => InitMethod::SignedKaimingConstant,
        "kaiming-normal" => InitMethod::KaimingNormal,
        s => return config_err(format!("unknown init `{s}`")),
    };
    spec.seed = get(kv, "model.seed")?.unwrap_or(0);
    spec.validate()?;
    Ok(spec)
}

pub fn train_to_kv(cfg: &TrainConfig, kv: &mut KeyValues) {
    kv.insert("train.epochs".into(), cfg.epochs.to_string());
    kv.insert("train.lr".into(), cfg.learning_rate.to_string());
    kv.insert("train.weight_decay".into(), cfg.weight_decay.to_string());
    kv.insert("train.optimizer".into(), "adam".into());
    kv.insert("train.eval_every".into(), cfg.eval_every.to_string());
    kv.insert("train.seed".into(), cfg.seed.to_string());
    let st = match cfg.straight_through {
        StraightThrough::Summed => "summed",
        StraightThrough::PerCoat => "per-coat",
    };
    kv.insert("train.straight_through".into(), st.into());
}

/// Missing keys take the shallow-model defaults of [`TrainConfig::default`].
pub fn train_from_kv(kv: &KeyValues) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    if let Some(opt) = kv.get("train.optimizer") {
        if opt != "adam" {
            return config_err(format!("unsupported optimizer `{opt}`"));
        }
    }
    let cfg = TrainConfig {
        epochs: get(kv, "train.epochs")?.unwrap_or(d.epochs),
        learning_rate: get(kv, "train.lr")?.unwrap_or(d.learning_rate),
        weight_decay: get(kv, "train.weight_decay")?.unwrap_or(d.weight_decay),
        eval_every: get(kv, "train.eval_every")?.unwrap_or(d.eval_every),
        seed: get(kv, "train.seed")?.unwrap_or(d.seed),
        straight_through: match kv.get("train.straight_through").map(String::as_str).unwrap_or("summed") {
            "summed" => StraightThrough::Summed,
            "per-coat" => StraightThrough::PerCoat,
            s => return config_err(format!("unknown straight-through mode `{s}`")),
        },
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}
