//! Named parameter storage and the text checkpoint format.
//!
//! ```text
//! spgp-checkpoint v1
//! meta <one line of free text, e.g. JSON>
//! param <name> <rows> <cols> <v0> <v1> ...
//! ```
//!
//! Values are row-major and printed with shortest round-trip formatting, so
//! a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Matrix;
use crate::error::{Error, Result};

const MAGIC: &str = "spgp-checkpoint v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Matrix,
    grad: Option<Matrix>,
}

#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<Entry>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Matrix> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn add_grad(&mut self, id: ParamId, g: &Matrix) {
        let e = &mut self.entries[id.0];
        match &mut e.grad {
            Some(existing) => *existing += g,
            slot => *slot = Some(g.clone()),
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for e in &mut self.entries {
            if let Some(g) = &mut e.grad {
                *g *= c;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Gives every parameter without a gradient an explicit zero gradient.
    pub fn fill_missing_grads(&mut self) {
        for e in &mut self.entries {
            if e.grad.is_none() {
                e.grad = Some(Array2::zeros(e.value.raw_dim()));
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values_from(&mut self, other: &Params) -> Result<()> {
        for e in &mut self.entries {
            let src = other
                .find(&e.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::Parameter {
                    name: e.name.clone(),
                    msg: "missing from checkpoint".into(),
                })?;
            if src.dim() != e.value.dim() {
                return Err(Error::Parameter {
                    name: e.name.clone(),
                    msg: format!("shape {:?} in checkpoint, model expects {:?}", src.dim(), e.value.dim()),
                });
            }
            e.value.assign(src);
        }
        if other.len() != self.len() {
            let extra = other
                .entries
                .iter()
                .find(|o| self.find(&o.name).is_none())
                .map_or_else(String::new, |o| o.name.clone());
            return Err(Error::Parameter {
                name: extra,
                msg: "not used by the model".into(),
            });
        }
        Ok(())
    }

    pub fn to_checkpoint_string(&self, meta: &str) -> String {
        let mut out = format!("{MAGIC}\nmeta {}\n", meta.replace('\n', " "));
        for e in &self.entries {
            let _ = write!(out, "param {} {} {}", e.name, e.value.nrows(), e.value.ncols());
            for x in e.value.iter() {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &str) -> Result<()> {
        fs::write(path, self.to_checkpoint_string(meta))?;
        Ok(())
    }

    /// Reads a checkpoint; returns the parameters and the `meta` line.
    pub fn load(path: impl AsRef<Path>) -> Result<(Params, String)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::parse(path, 1, format!("expected `{MAGIC}` header")));
        }
        let mut meta = String::new();
        let mut params = Params::new();
        for (i, l) in lines.enumerate() {
            let line = i + 2;
            if let Some(m) = l.strip_prefix("meta ") {
                meta = m.to_owned();
                continue;
            }
            if l.trim().is_empty() {
                continue;
            }
            let mut toks = l.split_whitespace();
            if toks.next() != Some("param") {
                return Err(Error::parse(path, line, "expected `param` record"));
            }
            let name = toks
                .next()
                .ok_or_else(|| Error::parse(path, line, "missing name"))?;
            let mut dim = || -> Result<usize> {
                toks.next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(path, line, "bad shape"))
            };
            let (r, c) = (dim()?, dim()?);
            let values = toks
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(path, line, "bad value"))?;
            let m = Array2::from_shape_vec((r, c), values)
                .map_err(|_| Error::parse(path, line, format!("expected {} values", r * c)))?;
            params.add(name, m);
        }
        Ok((params, meta))
    }
}
