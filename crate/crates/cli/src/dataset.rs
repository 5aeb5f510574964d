//! On-disk graph datasets.
//!
//! A dataset directory holds:
//!
//! - `edges.txt`: one `u v` pair per line, `#` comments allowed
//! - `features.bin`: little-endian `u64 rows`, `u64 cols`, then `rows·cols` f32 values
//! - `labels.txt`: one class id per line
//! - `splits.txt`: lines `train: i j ...`, `val: ...`, `test: ...`
//! - `meta.txt` (optional): `name = cora`; known names get their split sizes checked

use std::fs;
use std::path::Path;

use sltgnn::{DenseMatrix, Graph, Splits};

use crate::error::{CliError, CliResult};

pub const EDGES: &str = "edges.txt";
pub const FEATURES: &str = "features.bin";
pub const LABELS: &str = "labels.txt";
pub const SPLITS: &str = "splits.txt";
pub const META: &str = "meta.txt";

/// Expected (train, val, test) sizes of the public Planetoid splits.
pub fn planetoid_split_sizes(name: &str) -> Option<(usize, usize, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "cora" => Some((140, 500, 1000)),
        "citeseer" => Some((120, 500, 1000)),
        "pubmed" => Some((60, 500, 1000)),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: Option<String>,
    pub num_edges: usize,
    pub graph: Graph<f32>,
}

impl Dataset {
    pub fn summary(&self) -> String {
        let g = &self.graph;
        format!(
            "{}: {} nodes, {} edges, {} features, {} classes, splits train {} / val {} / test {}",
            self.name.as_deref().unwrap_or("dataset"),
            g.num_nodes(),
            self.num_edges,
            g.num_features(),
            g.num_classes,
            g.splits.train.len(),
            g.splits.val.len(),
            g.splits.test.len()
        )
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn content(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

fn parse_index(path: &Path, line_no: usize, tok: &str) -> CliResult<usize> {
    tok.parse::<usize>()
        .map_err(|e| CliError::in_file(path, format!("line {line_no}: `{tok}` is not a node index ({e})")))
}

pub fn read_edges(path: &Path, num_nodes: usize) -> CliResult<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [u, v] = toks[..] else {
            return Err(CliError::in_file(path, format!("line {}: expected `u v`", n + 1)));
        };
        let (u, v) = (parse_index(path, n + 1, u)?, parse_index(path, n + 1, v)?);
        if u >= num_nodes || v >= num_nodes {
            return Err(CliError::in_file(path, format!("line {}: edge ({u}, {v}) exceeds {num_nodes} nodes", n + 1)));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> CliResult<DenseMatrix<f32>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() < 16 {
        return Err(CliError::in_file(path, "shorter than the 16-byte header"));
    }
    let rows = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| CliError::in_file(path, format!("header {rows}x{cols} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(CliError::in_file(
            path,
            format!("header says {rows}x{cols} ({expected} bytes) but file has {} bytes", bytes.len()),
        ));
    }
    let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    DenseMatrix::from_vec(rows as usize, cols as usize, data).map_err(|e| CliError::in_file(path, e))
}

pub fn read_labels(path: &Path) -> CliResult<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !content(l).is_empty())
        .map(|(n, l)| {
            content(l)
                .parse::<usize>()
                .map_err(|e| CliError::in_file(path, format!("line {}: bad label `{}` ({e})", n + 1, content(l))))
        })
        .collect()
}

pub fn read_splits(path: &Path, num_nodes: usize) -> CliResult<Splits> {
    let text = read_text(path)?;
    let mut found: [Option<Vec<usize>>; 3] = [None, None, None];
    for (n, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        let Some((name, rest)) = line.split_once(':') else {
            return Err(CliError::in_file(path, format!("line {}: expected `train:`, `val:` or `test:`", n + 1)));
        };
        let slot = match name.trim() {
            "train" => 0,
            "val" => 1,
            "test" => 2,
            other => return Err(CliError::in_file(path, format!("line {}: unknown split `{other}`", n + 1))),
        };
        if found[slot].is_some() {
            return Err(CliError::in_file(path, format!("line {}: split `{}` given twice", n + 1, name.trim())));
        }
        let idx = rest.split_whitespace().map(|t| parse_index(path, n + 1, t)).collect::<CliResult<Vec<_>>>()?;
        found[slot] = Some(idx);
    }
    let [Some(train), Some(val), Some(test)] = found else {
        return Err(CliError::in_file(path, "needs `train:`, `val:` and `test:` lines"));
    };
    let mut owner: Vec<Option<&str>> = vec![None; num_nodes];
    for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
        for &i in set {
            if i >= num_nodes {
                return Err(CliError::in_file(path, format!("{name} index {i} exceeds {num_nodes} nodes")));
            }
            if let Some(prev) = owner[i] {
                return Err(CliError::in_file(path, format!("node {i} is in both {prev} and {name}")));
            }
            owner[i] = Some(name);
        }
    }
    Ok(Splits { train, val, test })
}

fn read_name(path: &Path) -> CliResult<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    let kv = sltgnn::config::parse_kv(&read_text(path)?).map_err(|e| CliError::in_file(path, e))?;
    Ok(kv.get("name").cloned())
}

/// Reads a dataset directory without modifying it.
pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let features = read_features(&dir.join(FEATURES))?;
    let n = features.rows();
    let labels_path = dir.join(LABELS);
    let labels = read_labels(&labels_path)?;
    if labels.len() != n {
        return Err(CliError::in_file(&labels_path, format!("{} labels for {n} feature rows", labels.len())));
    }
    let edges = read_edges(&dir.join(EDGES), n)?;
    let splits_path = dir.join(SPLITS);
    let splits = read_splits(&splits_path, n)?;
    let name = read_name(&dir.join(META))?;
    if let Some(expected) = name.as_deref().and_then(planetoid_split_sizes) {
        let got = (splits.train.len(), splits.val.len(), splits.test.len());
        if got != expected {
            return Err(CliError::in_file(
                &splits_path,
                format!("{} declares splits {expected:?} (train, val, test) but file has {got:?}", name.as_deref().unwrap_or("")),
            ));
        }
    }
    let num_edges = edges.len();
    let graph = Graph::new(&edges, features, labels, splits).map_err(|e| CliError::in_file(dir, e))?;
    Ok(Dataset { name, num_edges, graph })
}

/// Writes `graph` in the directory layout read by [`load_dataset`].
pub fn write_dataset(dir: &Path, graph: &Graph<f32>, name: Option<&str>) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let write = |file: &str, bytes: &[u8]| {
        let path = dir.join(file);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    };
    let mut edges = String::new();
    for u in 0..graph.num_nodes() {
        for (v, _) in graph.sum_adjacency.row(u) {
            if u < v {
                edges.push_str(&format!("{u} {v}\n"));
            }
        }
    }
    write(EDGES, edges.as_bytes())?;
    let (rows, cols) = graph.features.shape();
    let mut feat = Vec::with_capacity(16 + 4 * rows * cols);
    feat.extend_from_slice(&(rows as u64).to_le_bytes());
    feat.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in graph.features.data() {
        feat.extend_from_slice(&v.to_le_bytes());
    }
    write(FEATURES, &feat)?;
    let labels: String = graph.labels.iter().map(|l| format!("{l}\n")).collect();
    write(LABELS, labels.as_bytes())?;
    let line = |name: &str, idx: &[usize]| {
        let list: Vec<String> = idx.iter().map(usize::to_string).collect();
        format!("{name}: {}\n", list.join(" "))
    };
    let s = &graph.splits;
    write(SPLITS, (line("train", &s.train) + &line("val", &s.val) + &line("test", &s.test)).as_bytes())?;
    if let Some(name) = name {
        write(META, format!("name = {name}\n").as_bytes())?;
    }
    Ok(())
}
