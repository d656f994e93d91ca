//! Named parameter storage, initialization and the checkpoint text format.
//!
//! Checkpoint layout (UTF-8, `\n` line endings):
//!
//! ```text
//! mpcd-checkpoint 1
//! params <count>
//! param <name> <d0>x<d1>x...
//! <v0> <v1> ... (one line, shortest round-trip decimal form)
//! ...
//! ```
//!
//! Values are written with Rust's shortest representation that parses back to
//! the identical `f64`, so save/load is lossless and byte-stable.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "mpcd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Glorot-uniform bound for the given fan-in and fan-out.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Adds a tensor drawn uniformly from `[-b, b]` with `b = glorot_bound(fan_in, fan_out)`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = glorot_bound(fan_in, fan_out);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::filled(shape, value))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces all values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(NnError::Checkpoint("parameter names differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(NnError::Shape {
                    op: "copy_values_from",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "params {}", self.len());
        for (_, name, t) in self.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {name} {}", dims.join("x"));
            let mut first = true;
            for v in t.data() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| NnError::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(ln, "missing checkpoint header"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(ln, "missing format version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(ln, &format!("unsupported format version {version}")));
        }
        let (ln, count_line) = lines.next().ok_or_else(|| bad(2, "missing parameter count"))?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad(ln, "malformed parameter count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let (ln, decl) = lines.next().ok_or_else(|| bad(0, "truncated checkpoint"))?;
            let mut p = decl.split_whitespace();
            if p.next() != Some("param") {
                return Err(bad(ln, "expected `param` declaration"));
            }
            let name = p.next().ok_or_else(|| bad(ln, "missing parameter name"))?;
            let shape: Vec<usize> = p
                .next()
                .ok_or_else(|| bad(ln, "missing shape"))?
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(ln, "malformed shape")))
                .collect::<Result<_>>()?;
            let (ln, vals) = lines.next().ok_or_else(|| bad(ln + 1, "missing values"))?;
            let data: Vec<f64> = vals
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(ln, "malformed value")))
                .collect::<Result<_>>()?;
            let t = Tensor::new(shape, data).map_err(|e| bad(ln, &e.to_string()))?;
            if store.id(name).is_some() {
                return Err(bad(ln, &format!("duplicate parameter {name}")));
            }
            store.add(name, t);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_values_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.add_glorot("w", &[16, 8], 16, 8, &mut rng);
        let b = glorot_bound(16, 8);
        assert!(store.get(id).data().iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.add_glorot("enc.w", &[3, 2, 5], 10, 15, &mut rng);
        store.add("tiny", Tensor::from_slice(&[1e-300, -0.1, 1.0 / 3.0]));
        let text = store.to_checkpoint();
        let back = ParamStore::from_checkpoint(&text).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_checkpoint(), text);
    }

    #[test]
    fn checkpoint_rejects_bad_input() {
        assert!(ParamStore::from_checkpoint("").is_err());
        assert!(ParamStore::from_checkpoint("mpcd-checkpoint 9\nparams 0\n").is_err());
        let bad_shape = "mpcd-checkpoint 1\nparams 1\nparam w 2x2\n1 2 3\n";
        assert!(matches!(ParamStore::from_checkpoint(bad_shape), Err(NnError::Checkpoint(_))));
    }
}
