use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named parameter arrays. Values are kept exactly representable as `f32`
/// so that checkpoints (stored as 32-bit floats) reload bit-identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("parameter {name} has non-finite value {bad}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            shape: shape.to_vec(),
            values: values.into_iter().map(to_f32_grid).collect(),
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Adds a trainable array drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], rng: &mut R) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect();
        self.add(name, shape, values, true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Rounds every value onto the `f32` grid.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            p.values.iter_mut().for_each(|v| *v = to_f32_grid(*v));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.values.iter().all(|v| v.is_finite()))
    }
}

/// Dense gradient buffers aligned with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Gradients {
            grads: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn norm(&self, id: ParamId) -> f64 {
        self.grads[id.0].iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn clear(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_shapes_checked() {
        let mut store = ParameterStore::new();
        store.add("w", &[2, 3], vec![0.0; 6], true).unwrap();
        assert!(matches!(
            store.add("w", &[1], vec![0.0], true),
            Err(Error::DuplicateParameter(_))
        ));
        assert!(matches!(
            store.add("v", &[2, 2], vec![0.0; 3], true),
            Err(Error::DimensionMismatch { expected: 4, actual: 3 })
        ));
        assert!(store.add("nan", &[1], vec![f64::NAN], true).is_err());
    }

    #[test]
    fn uniform_init_is_seeded_and_bounded() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut s = ParameterStore::new();
            s.add_uniform("w", &[10, 10], &mut rng).unwrap();
            s
        };
        let (a, b) = (build(), build());
        assert_eq!(a, b);
        let w = a.values(a.id("w").unwrap());
        assert!(w.iter().all(|v| v.abs() <= INIT_SCALE));
        assert!(w.iter().all(|&v| v == v as f32 as f64));
    }
}
