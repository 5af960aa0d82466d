use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every tensor of a [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    endianness: String,
    total: usize,
    params: Vec<ManifestEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Put every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        Bound { vars }
    }

    /// Gradients for every tensor; parameters that did not influence the
    /// loss get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Tensor> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, v)| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Write `manifest` (JSON shapes) and `blob` (little-endian f64).
    pub fn write(&self, manifest: &Path, blob: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        let m = Manifest {
            dtype: "f64".into(),
            endianness: "little".into(),
            total: offset,
            params: entries,
        };
        fs::write(manifest, serde_json::to_string_pretty(&m)?)?;
        fs::write(blob, f64s_to_le(&self.flatten()))?;
        Ok(())
    }

    pub fn read(manifest: &Path, blob: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
        if m.dtype != "f64" || m.endianness != "little" {
            return Err(Error::format(format!(
                "unsupported parameter blob {}/{}",
                m.dtype, m.endianness
            )));
        }
        let data = le_to_f64s(&fs::read(blob)?)?;
        if data.len() != m.total {
            return Err(Error::format(format!(
                "manifest declares {} values, blob has {}",
                m.total,
                data.len()
            )));
        }
        let mut set = ParamSet::new();
        for e in m.params {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(n).filter(|&end| end <= data.len());
            let Some(end) = end else {
                return Err(Error::format(format!("parameter {} overruns blob", e.name)));
            };
            set.push(e.name, Tensor::new(e.shape, data[e.offset..end].to_vec())?);
        }
        Ok(set)
    }

    /// Check that `other` has identical names and shapes.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::format(
                "parameter layout does not match model configuration",
            ));
        }
        Ok(())
    }
}

pub(crate) fn f64s_to_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn le_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::format(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Affine layer `y = x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/sqrt(in_dim)`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::uniform([in_dim, out_dim], bound, rng),
        );
        let bias = params.push(
            format!("{name}.bias"),
            Tensor::uniform([out_dim], bound, rng),
        );
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn zeros(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = params.push(format!("{name}.weight"), Tensor::zeros([in_dim, out_dim]));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add(y, p[self.bias])
    }

    /// Same map on plain row-major rows, without recording anything.
    pub fn apply(&self, params: &ParamSet, x: &[f64], rows: usize) -> Vec<f64> {
        let w = params.get(self.weight).data();
        let b = params.get(self.bias).data();
        let mut out = Vec::with_capacity(rows * self.out_dim);
        for r in 0..rows {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let mut acc = b[o];
                for (i, xi) in xr.iter().enumerate() {
                    acc += xi * w[i * self.out_dim + o];
                }
                out.push(acc);
            }
        }
        out
    }
}
