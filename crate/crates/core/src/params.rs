//! Named parameter tensors and their deterministic initialization.
//!
//! A model is described by an ordered list of [`ParamSpec`]s. Initialization
//! draws from a single seeded ChaCha stream, walking the specs in order, so
//! a (seed, spec list) pair always produces bitwise-identical parameters
//! regardless of thread count or platform.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    /// Zero-mean normal with std = sqrt(2 / fan_in); the usual choice in
    /// front of a ReLU.
    FanInNormal { fan_in: usize },
    Zero,
    One,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, init: InitKind) -> Self {
        ParamSpec { name: name.into(), shape, init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Parameter tensors keyed by name. BTreeMap so iteration order (and thus
/// anything serialized from it) is stable.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar = f32> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    /// Initializes every spec in order from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in specs {
            let tensor = match spec.init {
                InitKind::FanInNormal { fan_in } => {
                    if fan_in == 0 {
                        return Err(Error::config(format!(
                            "{}: fan_in must be positive",
                            spec.name
                        )));
                    }
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0f64, std)
                        .map_err(|e| Error::numeric(format!("{}: {e}", spec.name)))?;
                    let data: Vec<S> = (0..spec.numel())
                        .map(|_| S::from_f64(dist.sample(&mut rng)))
                        .collect();
                    Tensor::new(&spec.shape, data)?
                }
                InitKind::Zero => Tensor::zeros(&spec.shape)?,
                InitKind::One => Tensor::full(&spec.shape, S::one())?,
            };
            store.insert(&spec.name, tensor)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        if self.map.insert(name.to_string(), tensor).is_some() {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Name-ordered iteration (BTreeMap order).
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn total_params(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Checks that the store holds exactly the named specs with the right
    /// shapes — nothing missing, nothing extra.
    pub fn validate_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {:?}: stored shape {:?} does not match spec {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if self.len() != specs.len() {
            let known: std::collections::BTreeSet<&str> =
                specs.iter().map(|s| s.name.as_str()).collect();
            let extra: Vec<&str> = self
                .map
                .keys()
                .map(|k| k.as_str())
                .filter(|k| !known.contains(k))
                .collect();
            return Err(Error::config(format!("unexpected parameters: {extra:?}")));
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let map = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), v.cast::<T>()))
            .collect();
        ParamStore { map }
    }
}
