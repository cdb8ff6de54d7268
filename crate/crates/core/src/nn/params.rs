use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{CrsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Learning-rate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Weights that came from a pretrained backbone.
    Pretrained,
    /// Everything initialised for this task.
    New,
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Array2<f64>,
    group: ParamGroup,
}

/// Named, ordered collection of trainable matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>, group: ParamGroup) -> ParamId {
        let name = name.into();
        if let Some(id) = self.index.get(&name) {
            self.params[id.0].value = value;
            self.params[id.0].group = group;
            return *id;
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, group });
        id
    }

    /// Zero-mean uniform init with half-width `scale`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        scale: f64,
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        let value = if scale > 0.0 {
            let dist = Uniform::new_inclusive(-scale, scale).expect("valid range");
            Array2::from_shape_fn(shape, |_| dist.sample(rng))
        } else {
            Array2::zeros(shape)
        };
        self.insert(name, value, group)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.id(name).map(|id| &mut self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.params[id.0].group
    }

    pub fn set_group(&mut self, id: ParamId, group: ParamGroup) {
        self.params[id.0].group = group;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Parameters whose name starts with `prefix`, for checkpoint sections.
    pub fn export_prefix(&self, prefix: &str) -> BTreeMap<String, StoredMatrix> {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| (p.name.clone(), StoredMatrix::from_array(&p.value, p.group)))
            .collect()
    }

    pub fn import(&mut self, stored: &BTreeMap<String, StoredMatrix>) -> Result<()> {
        for (name, m) in stored {
            let value = m.to_array()?;
            self.insert(name.clone(), value, m.group);
        }
        Ok(())
    }
}

/// Serialized matrix inside a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub group: ParamGroup,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub fn from_array(a: &Array2<f64>, group: ParamGroup) -> Self {
        StoredMatrix {
            rows: a.nrows(),
            cols: a.ncols(),
            group,
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone()).map_err(|e| {
            CrsError::Checkpoint(format!("matrix of {}x{}: {e}", self.rows, self.cols))
        })
    }
}
