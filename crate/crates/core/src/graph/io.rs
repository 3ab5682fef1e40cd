//! Dataset readers and writers.
//!
//! Two inputs are supported: the raw TUDataset text layout (`DS_A.txt`,
//! `DS_graph_indicator.txt`, ...) and a line-oriented native format:
//!
//! ```text
//! # comment
//! G <num_nodes> <label>
//! E <u> <v> [w]
//! F <node> <v0> <v1> ...
//! ```
//!
//! A label is either a class id or a comma-separated list of task targets
//! (`0`, `1`, or `-` for unlabeled), e.g. `1,0,-`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Dataset, Graph, Label};
use crate::error::{Error, Result};

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn find_prefix(dir: &Path) -> Result<String> {
    let missing = || Error::MissingFile {
        file: format!("DS_A.txt (no *_A.txt file in {})", dir.display()),
    };
    let entries = fs::read_dir(dir).map_err(|_| missing())?;
    let mut prefixes: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|name| name.strip_suffix("_A.txt").map(str::to_owned))
        .collect();
    prefixes.sort();
    prefixes.into_iter().next().ok_or_else(missing)
}

fn mandatory(dir: &Path, prefix: &str, suffix: &str) -> Result<PathBuf> {
    let path = dir.join(format!("{prefix}_{suffix}"));
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingFile {
            file: format!("{prefix}_{suffix}"),
        })
    }
}

fn optional(dir: &Path, prefix: &str, suffix: &str) -> Option<PathBuf> {
    let path = dir.join(format!("{prefix}_{suffix}"));
    path.is_file().then_some(path)
}

fn parse_int(path: &Path, line: usize, tok: &str) -> Result<i64> {
    tok.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("expected integer, got `{}`", tok.trim())))
}

fn parse_float(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("expected number, got `{}`", tok.trim())))
}

/// Per-line integer column, skipping blank lines but keeping line numbers.
fn int_column(path: &Path) -> Result<Vec<(usize, i64)>> {
    let mut out = Vec::new();
    for (i, l) in read_lines(path)?.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        out.push((i + 1, parse_int(path, i + 1, l)?));
    }
    Ok(out)
}

fn float_rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, l) in read_lines(path)?.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let row = l
            .split(',')
            .map(|t| parse_float(path, i + 1, t))
            .collect::<Result<Vec<_>>>()?;
        out.push((i + 1, row));
    }
    Ok(out)
}

/// Reads a TUDataset directory.
///
/// Node labels are one-hot encoded over the sorted set of distinct values;
/// continuous node attributes follow the one-hot block. Single-column edge
/// attributes become edge weights. Graph labels are remapped to
/// `[0, num_classes)` in sorted order.
pub fn parse_tudataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = find_prefix(dir)?;
    let a_path = mandatory(dir, &prefix, "A.txt")?;
    let ind_path = mandatory(dir, &prefix, "graph_indicator.txt")?;
    let lab_path = mandatory(dir, &prefix, "graph_labels.txt")?;

    let indicator = int_column(&ind_path)?;
    let num_nodes_total = indicator.len();
    let raw_labels = int_column(&lab_path)?;
    let num_graphs = raw_labels.len();

    let mut graph_of = Vec::with_capacity(num_nodes_total);
    for &(line, g) in &indicator {
        if g < 1 || g as usize > num_graphs {
            return Err(Error::parse(
                &ind_path,
                line,
                format!("graph id {g} outside [1, {num_graphs}]"),
            ));
        }
        graph_of.push(g as usize - 1);
    }
    // local index of every global node, and node counts per graph
    let mut local = Vec::with_capacity(num_nodes_total);
    let mut counts = vec![0usize; num_graphs];
    for &g in &graph_of {
        local.push(counts[g]);
        counts[g] += 1;
    }

    let node_labels = optional(dir, &prefix, "node_labels.txt")
        .map(|p| int_column(&p).map(|c| (p, c)))
        .transpose()?;
    let node_attrs = optional(dir, &prefix, "node_attributes.txt")
        .map(|p| float_rows(&p).map(|c| (p, c)))
        .transpose()?;
    let edge_attrs = optional(dir, &prefix, "edge_attributes.txt")
        .map(|p| float_rows(&p).map(|c| (p, c)))
        .transpose()?;

    let label_values: Vec<i64> = node_labels
        .as_ref()
        .map(|(_, c)| {
            c.iter()
                .map(|&(_, v)| v)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .unwrap_or_default();
    let attr_dim = node_attrs
        .as_ref()
        .and_then(|(_, rows)| rows.first().map(|r| r.1.len()))
        .unwrap_or(0);
    let feat_dim = label_values.len() + attr_dim;

    let mut features: Vec<Array2<f64>> = counts
        .iter()
        .map(|&n| Array2::zeros((n, feat_dim)))
        .collect();
    if let Some((path, col)) = &node_labels {
        if col.len() != num_nodes_total {
            return Err(Error::parse(
                path,
                col.len(),
                format!("expected {num_nodes_total} node labels, found {}", col.len()),
            ));
        }
        for (node, &(_, v)) in col.iter().enumerate() {
            let slot = label_values.binary_search(&v).unwrap_or(0);
            features[graph_of[node]][[local[node], slot]] = 1.0;
        }
    }
    if let Some((path, rows)) = &node_attrs {
        if rows.len() != num_nodes_total {
            return Err(Error::parse(
                path,
                rows.len(),
                format!("expected {num_nodes_total} attribute rows, found {}", rows.len()),
            ));
        }
        for (node, (line, row)) in rows.iter().enumerate() {
            if row.len() != attr_dim {
                return Err(Error::parse(
                    path,
                    *line,
                    format!("expected {attr_dim} attributes, found {}", row.len()),
                ));
            }
            for (j, &x) in row.iter().enumerate() {
                features[graph_of[node]][[local[node], label_values.len() + j]] = x;
            }
        }
    }

    let weights_from_attrs = edge_attrs
        .as_ref()
        .is_some_and(|(_, rows)| rows.iter().all(|r| r.1.len() == 1));
    let mut edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); num_graphs];
    let a_lines = read_lines(&a_path)?;
    let mut edge_no = 0usize;
    for (i, l) in a_lines.iter().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let mut toks = l.split(',');
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(Error::parse(&a_path, line, "expected `i, j`"));
        };
        let (a, b) = (parse_int(&a_path, line, a)?, parse_int(&a_path, line, b)?);
        for x in [a, b] {
            if x < 1 || x as usize > num_nodes_total {
                return Err(Error::parse(
                    &a_path,
                    line,
                    format!("node index {x} outside [1, {num_nodes_total}]"),
                ));
            }
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        if graph_of[a] != graph_of[b] {
            return Err(Error::parse(
                &a_path,
                line,
                format!("edge joins graphs {} and {}", graph_of[a] + 1, graph_of[b] + 1),
            ));
        }
        let w = if weights_from_attrs {
            let (path, rows) = edge_attrs.as_ref().expect("checked above");
            rows.get(edge_no)
                .map(|r| r.1[0])
                .ok_or_else(|| Error::parse(path, rows.len(), "fewer edge attributes than edges"))?
        } else {
            1.0
        };
        edges[graph_of[a]].push((local[a], local[b], w));
        edge_no += 1;
    }

    let classes: BTreeMap<i64, usize> = raw_labels
        .iter()
        .map(|&(_, v)| v)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();

    let graphs = features
        .into_iter()
        .zip(edges)
        .zip(raw_labels.iter())
        .zip(counts)
        .map(|(((x, e), &(_, y)), n)| {
            let label = Label::Class(classes[&y]);
            if weights_from_attrs {
                Graph::with_weights(n, &e, x, label)
            } else {
                let plain: Vec<_> = e.iter().map(|&(u, v, _)| (u, v)).collect();
                Graph::new(n, &plain, x, label)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(prefix, classes.len(), graphs)
}

fn parse_label(path: &Path, line: usize, tok: &str) -> Result<Label> {
    if tok.contains(',') {
        let tasks = tok
            .split(',')
            .map(|t| match t {
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                "-" => Ok(None),
                other => Err(Error::parse(path, line, format!("bad task target `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Label::Tasks(tasks))
    } else {
        let c = parse_int(path, line, tok)?;
        if c < 0 {
            return Err(Error::parse(path, line, "negative class label"));
        }
        Ok(Label::Class(c as usize))
    }
}

struct Pending {
    line: usize,
    n: usize,
    label: Label,
    edges: Vec<(usize, usize, f64)>,
    weighted: bool,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl Pending {
    fn finish(self, path: &Path) -> Result<Graph> {
        let dim = self.rows.values().next().map_or(0, Vec::len);
        if !self.rows.is_empty() && self.rows.len() != self.n {
            return Err(Error::parse(
                path,
                self.line,
                format!("graph has {} nodes but {} F lines", self.n, self.rows.len()),
            ));
        }
        let mut x = Array2::zeros((self.n, dim));
        for (v, row) in &self.rows {
            if row.len() != dim {
                return Err(Error::parse(path, self.line, "ragged feature rows in graph"));
            }
            for (j, &val) in row.iter().enumerate() {
                x[[*v, j]] = val;
            }
        }
        if self.weighted {
            Graph::with_weights(self.n, &self.edges, x, self.label)
        } else {
            let plain: Vec<_> = self.edges.iter().map(|&(u, v, _)| (u, v)).collect();
            Graph::new(self.n, &plain, x, self.label)
        }
    }
}

/// Reads a dataset in the native line format.
pub fn parse_native(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut graphs = Vec::new();
    let mut cur: Option<Pending> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[0] {
            "G" => {
                if toks.len() != 3 {
                    return Err(Error::parse(path, line, "expected `G <num_nodes> <label>`"));
                }
                if let Some(p) = cur.take() {
                    graphs.push(p.finish(path)?);
                }
                let n = parse_int(path, line, toks[1])?;
                if n < 0 {
                    return Err(Error::parse(path, line, "negative node count"));
                }
                cur = Some(Pending {
                    line,
                    n: n as usize,
                    label: parse_label(path, line, toks[2])?,
                    edges: Vec::new(),
                    weighted: false,
                    rows: BTreeMap::new(),
                });
            }
            "E" => {
                let p = cur
                    .as_mut()
                    .ok_or_else(|| Error::parse(path, line, "E line before any G line"))?;
                if !(3..=4).contains(&toks.len()) {
                    return Err(Error::parse(path, line, "expected `E <u> <v> [w]`"));
                }
                let u = parse_int(path, line, toks[1])?;
                let v = parse_int(path, line, toks[2])?;
                for x in [u, v] {
                    if x < 0 || x as usize >= p.n {
                        return Err(Error::parse(
                            path,
                            line,
                            format!("node {x} outside [0, {})", p.n),
                        ));
                    }
                }
                let w = match toks.get(3) {
                    Some(t) => {
                        p.weighted = true;
                        parse_float(path, line, t)?
                    }
                    None => 1.0,
                };
                p.edges.push((u as usize, v as usize, w));
            }
            "F" => {
                let p = cur
                    .as_mut()
                    .ok_or_else(|| Error::parse(path, line, "F line before any G line"))?;
                if toks.len() < 2 {
                    return Err(Error::parse(path, line, "expected `F <node> <values...>`"));
                }
                let v = parse_int(path, line, toks[1])?;
                if v < 0 || v as usize >= p.n {
                    return Err(Error::parse(path, line, format!("node {v} outside [0, {})", p.n)));
                }
                let row = toks[2..]
                    .iter()
                    .map(|t| parse_float(path, line, t))
                    .collect::<Result<Vec<_>>>()?;
                if p.rows.insert(v as usize, row).is_some() {
                    return Err(Error::parse(path, line, format!("duplicate F line for node {v}")));
                }
            }
            other => {
                return Err(Error::parse(path, line, format!("unknown record `{other}`")));
            }
        }
    }
    if let Some(p) = cur.take() {
        graphs.push(p.finish(path)?);
    }

    let num_classes = match graphs.first().map(Graph::label) {
        Some(Label::Tasks(t)) => t.len(),
        _ => graphs
            .iter()
            .filter_map(|g| g.label().class())
            .max()
            .map_or(0, |m| m + 1),
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_owned();
    Dataset::new(name, num_classes, graphs)
}

fn format_label(label: &Label) -> String {
    match label {
        Label::Class(c) => c.to_string(),
        Label::Tasks(t) => t
            .iter()
            .map(|x| match x {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            })
            .collect::<Vec<_>>()
            .join(","),
    }
}

/// Canonical native serialization: edges sorted with `u < v`, one `F` line
/// per node when the feature dimension is nonzero.
pub fn write_native_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    for g in dataset.graphs() {
        let _ = writeln!(out, "G {} {}", g.num_nodes(), format_label(g.label()));
        for (i, &(u, v)) in g.edges().iter().enumerate() {
            match g.edge_weights() {
                Some(w) => {
                    let _ = writeln!(out, "E {u} {v} {}", w[i]);
                }
                None => {
                    let _ = writeln!(out, "E {u} {v}");
                }
            }
        }
        if g.feature_dim() > 0 {
            for (v, row) in g.features().rows().into_iter().enumerate() {
                let _ = write!(out, "F {v}");
                for x in row {
                    let _ = write!(out, " {x}");
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_native(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_native_string(dataset))?;
    Ok(())
}
