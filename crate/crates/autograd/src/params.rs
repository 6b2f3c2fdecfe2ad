use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Text encoder weights (the slow group).
    Encoder,
    /// Everything stacked on top of the encoder.
    Heads,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Mat,
    group: ParamGroup,
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry { name, value, group });
        ParamId(id)
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize, group: ParamGroup) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)), group)
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize, group: ParamGroup) -> ParamId {
        self.add(name, Array2::ones((rows, cols)), group)
    }

    /// Glorot-uniform initialisation with fan-in `rows` and fan-out `cols`.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.add(name, value, group)
    }

    /// Uniform initialisation in `[-scale, scale)`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        group: ParamGroup,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale));
        self.add(name, value, group)
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Mat) {
        let slot = &mut self.entries[id.0].value;
        assert_eq!(slot.dim(), value.dim(), "shape change for {}", self.entries[id.0].name);
        *slot = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
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

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}
