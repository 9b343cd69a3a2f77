use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Matrix, NnError};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Matrix,
    frozen: bool,
}

/// Named, ordered collection of trainable matrices.
///
/// Parameters are addressed by [`ParamId`] during the forward pass and by
/// name when saving or restoring checkpoints.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

/// Row-major serialized form of one parameter matrix.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix, NnError> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| NnError::Shape(e.to_string()))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        id
    }

    /// Adds a parameter drawn from N(0, std²).
    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("std must be finite and positive");
        let value = Array2::from_shape_fn((rows, cols), |_| normal.sample(rng));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn add_filled(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fill: f64,
    ) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), fill))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_stored(&self) -> BTreeMap<String, StoredMatrix> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), StoredMatrix::from_matrix(&p.value)))
            .collect()
    }

    /// Overwrites every parameter from `stored`. Every registered name must be
    /// present with a matching shape; extra entries are rejected.
    pub fn load_stored(&mut self, stored: &BTreeMap<String, StoredMatrix>) -> Result<(), NnError> {
        if stored.len() != self.params.len() {
            let extra: Vec<_> = stored
                .keys()
                .filter(|k| !self.by_name.contains_key(*k))
                .cloned()
                .collect();
            if !extra.is_empty() {
                return Err(NnError::UnknownParam(extra.join(", ")));
            }
        }
        for p in &mut self.params {
            let s = stored
                .get(&p.name)
                .ok_or_else(|| NnError::MissingParam(p.name.clone()))?;
            if (s.rows, s.cols) != p.value.dim() {
                return Err(NnError::Shape(format!(
                    "parameter {} expects {:?}, checkpoint has ({}, {})",
                    p.name,
                    p.value.dim(),
                    s.rows,
                    s.cols
                )));
            }
            p.value = s.to_matrix()?;
        }
        Ok(())
    }

    /// Copies values from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(self.params.len(), other.params.len());
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            debug_assert_eq!(dst.name, src.name);
            dst.value.assign(&src.value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stored_roundtrip_and_shape_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add_normal("w", 3, 2, 0.1, &mut rng);
        store.add_zeros("b", 1, 2);
        let saved = store.to_stored();

        let mut other = ParamStore::new();
        other.add_zeros("w", 3, 2);
        other.add_zeros("b", 1, 2);
        other.load_stored(&saved).unwrap();
        assert_eq!(other.get(ParamId(0)), store.get(ParamId(0)));

        let mut wrong = ParamStore::new();
        wrong.add_zeros("w", 2, 2);
        wrong.add_zeros("b", 1, 2);
        assert!(matches!(wrong.load_stored(&saved), Err(NnError::Shape(_))));

        let mut missing = ParamStore::new();
        missing.add_zeros("w", 3, 2);
        missing.add_zeros("c", 1, 2);
        assert!(missing.load_stored(&saved).is_err());
    }

    #[test]
    fn freeze_by_prefix() {
        let mut store = ParamStore::new();
        let a = store.add_zeros("encoder.a", 1, 1);
        let b = store.add_zeros("stack.b", 1, 1);
        store.set_frozen_prefix("encoder.", true);
        assert!(store.is_frozen(a));
        assert!(!store.is_frozen(b));
    }
}
