use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{RngState, Tensor};
use crate::error::{bail, Result};

/// Index of a parameter inside its [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named, ordered collection of parameter tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<ParamEntry>,
    #[serde(skip)]
    by_name: BTreeMap<String, ParamId>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            bail!(InvalidArgument, "duplicate parameter name {name}");
        }
        let id = ParamId(self.entries.len() as u32);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Adds a tensor initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// where `fan_in` is the column count (1 for vectors).
    pub fn add_init(
        &mut self,
        name: &str,
        shape: &[usize],
        trainable: bool,
        rng: &mut RngState,
    ) -> Result<ParamId> {
        let fan_in = if shape.len() > 1 {
            shape[1..].iter().product()
        } else {
            1
        };
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        self.add_uniform(name, shape, bound, trainable, rng)
    }

    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        trainable: bool,
        rng: &mut RngState,
    ) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
        self.add(name, t, trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.index()].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.index()].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.index()].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.index()].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.index()].trainable = trainable;
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len() as u32).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Rebuild the name index (needed after deserialization).
    pub fn reindex(&mut self) {
        self.by_name = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), ParamId(i as u32)))
            .collect();
    }

    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut set = Self::new();
        for e in entries {
            set.add(&e.name, e.tensor, e.trainable)?;
        }
        Ok(set)
    }

    /// Round every value through 32-bit precision (the on-disk representation).
    pub fn round_to_f32(&mut self) {
        for e in &mut self.entries {
            for v in e.tensor.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Gradient buffers aligned with a [`ParameterSet`]. Frozen parameters get an
/// empty buffer and never accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let bufs = params
            .entries()
            .iter()
            .map(|e| {
                if e.trainable {
                    vec![0.0; e.tensor.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self { bufs }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.index()]
    }

    pub fn tracks(&self, id: ParamId) -> bool {
        !self.bufs[id.index()].is_empty()
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.bufs.iter().flatten().map(|v| v * v).sum())
    }

    pub fn is_all_zero(&self) -> bool {
        self.bufs.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.bufs
            .iter()
            .position(|b| b.iter().any(|v| !v.is_finite()))
            .map(|i| ParamId(i as u32))
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.bufs
    }
}
