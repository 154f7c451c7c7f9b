use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plain dense value tensor: the storage type used outside computation
/// graphs (parameters, buffers, checkpoints, sequence frames).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(TensorData { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorData {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        TensorData {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Named parameter collection. Paths are `.`-separated and unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    map: BTreeMap<String, TensorData>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, data: TensorData) {
        self.map.insert(path.into(), data);
    }

    pub fn get(&self, path: &str) -> Result<&TensorData> {
        self.map
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut TensorData> {
        self.map
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.map.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorData)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut TensorData)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Sub-collection of every parameter whose path starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            map: self
                .map
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrite matching entries from `other`; unknown paths are an error.
    /// Insert every entry of `other`, overwriting duplicates.
    pub fn merge(&mut self, other: ParamSet) {
        for (k, v) in other.map {
            self.map.insert(k, v);
        }
    }

    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        for (k, v) in other.iter() {
            let slot = self.get_mut(k)?;
            if slot.shape != v.shape {
                return Err(Error::shape(format!(
                    "parameter {k}: shape {:?} vs {:?}",
                    slot.shape, v.shape
                )));
            }
            *slot = v.clone();
        }
        Ok(())
    }
}

impl FromIterator<(String, TensorData)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, TensorData)>>(iter: I) -> Self {
        ParamSet {
            map: iter.into_iter().collect(),
        }
    }
}

/// Gradients keyed by parameter path; shapes mirror the parameters.
#[derive(Debug, Clone, Default)]
pub struct GradRecord {
    map: BTreeMap<String, TensorData>,
}

impl GradRecord {
    pub fn insert(&mut self, path: impl Into<String>, data: TensorData) {
        self.map.insert(path.into(), data);
    }

    pub fn get(&self, path: &str) -> Result<&TensorData> {
        self.map
            .get(path)
            .ok_or_else(|| Error::UnknownParam(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorData)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(|g| g.is_finite())
    }

    /// Global L2 norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|g| g.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
