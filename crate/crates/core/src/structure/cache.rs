//! Prototype sidecar file.
//!
//! ```text
//! # spgp-prototypes v1 graphs=<N> kinds=bcc,clique
//! <graph_idx> <kind> <n0> <n1> ...
//! ```
//!
//! One line per set. The header records which kinds were extracted so that
//! graphs without any set still round-trip.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PrototypeKind, PrototypeSet};
use crate::error::{Error, Result};

const MAGIC: &str = "# spgp-prototypes v1";

pub fn write_cache(
    path: impl AsRef<Path>,
    kinds: &[PrototypeKind],
    prototypes: &[Vec<PrototypeSet>],
) -> Result<()> {
    let kinds_str: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
    let mut out = format!(
        "{MAGIC} graphs={} kinds={}\n",
        prototypes.len(),
        kinds_str.join(",")
    );
    for (gi, per_graph) in prototypes.iter().enumerate() {
        for ps in per_graph {
            for s in ps.sets() {
                let _ = write!(out, "{gi} {}", ps.kind);
                for v in s {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a sidecar; returns the recorded kinds and per-graph prototype sets
/// (one [`PrototypeSet`] per kind, in header order).
pub fn read_cache(path: impl AsRef<Path>) -> Result<(Vec<PrototypeKind>, Vec<Vec<PrototypeSet>>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .filter(|l| l.starts_with(MAGIC))
        .ok_or_else(|| Error::parse(path, 1, "missing prototype cache header"))?;

    let mut num_graphs = None;
    let mut kinds = Vec::new();
    for field in header[MAGIC.len()..].split_whitespace() {
        if let Some(v) = field.strip_prefix("graphs=") {
            num_graphs = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::parse(path, 1, "bad graph count"))?,
            );
        } else if let Some(v) = field.strip_prefix("kinds=") {
            kinds = v
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<PrototypeKind>>>()?;
        }
    }
    let num_graphs = num_graphs.ok_or_else(|| Error::parse(path, 1, "header lacks graphs="))?;

    let mut raw: Vec<Vec<Vec<Vec<usize>>>> = vec![vec![Vec::new(); kinds.len()]; num_graphs];
    for (i, l) in lines {
        let line = i + 1;
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut toks = l.split_whitespace();
        let gi: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .filter(|&g| g < num_graphs)
            .ok_or_else(|| Error::parse(path, line, "bad graph index"))?;
        let kind: PrototypeKind = toks
            .next()
            .ok_or_else(|| Error::parse(path, line, "missing kind"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let slot = kinds
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::parse(path, line, format!("kind {kind} not in header")))?;
        let set = toks
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(path, line, "bad node index"))?;
        if set.is_empty() {
            return Err(Error::parse(path, line, "empty set"));
        }
        raw[gi][slot].push(set);
    }
    let protos = raw
        .into_iter()
        .map(|per_kind| {
            per_kind
                .into_iter()
                .zip(&kinds)
                .map(|(sets, &k)| PrototypeSet::new(k, sets))
                .collect()
        })
        .collect();
    Ok((kinds, protos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_empty_graphs() {
        let kinds = PrototypeKind::ALL.to_vec();
        let protos = vec![
            vec![
                PrototypeSet::new(PrototypeKind::Bcc, vec![vec![0, 1, 2]]),
                PrototypeSet::new(PrototypeKind::Clique, vec![vec![0, 1, 2], vec![2, 3, 4]]),
            ],
            vec![
                PrototypeSet::empty(PrototypeKind::Bcc),
                PrototypeSet::empty(PrototypeKind::Clique),
            ],
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.txt");
        write_cache(&p, &kinds, &protos).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\n0 clique 2 3 4\n"));
        let (k, back) = read_cache(&p).unwrap();
        assert_eq!(k, kinds);
        assert_eq!(back, protos);
    }

    #[test]
    fn rejects_unknown_graph() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache.txt");
        fs::write(&p, format!("{MAGIC} graphs=1 kinds=bcc\n3 bcc 0 1 2\n")).unwrap();
        assert!(matches!(read_cache(&p), Err(Error::Parse { line: 2, .. })));
    }
}
