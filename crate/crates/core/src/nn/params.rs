use std::collections::HashMap;

use rand::RngExt;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{ConvShape, Real};

pub type ParamId = usize;

/// A named learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered collection of named parameters. Insertion order is stable and is
/// the order used for checkpoints and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param `{name}` shape");
        assert!(!self.index.contains_key(&name), "duplicate param `{name}`");
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, shape, data });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id(name).map(|i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        self.map(|_| T::zero())
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| f(v)).collect(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        self.map(|v| U::from_f64_lossy(v.as_f64()))
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.data.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for p in &mut self.params {
            for v in &mut p.data {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet<T>) {
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            for (a, &b) in p.data.iter_mut().zip(&q.data) {
                *a += b;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Replaces values from `other`, which must carry exactly the same names
    /// and shapes.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let q = other
                .by_name(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if q.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name, q.shape, p.shape
                )));
            }
            p.data.clone_from(&q.data);
        }
        Ok(())
    }
}

/// Parameter handles for one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub shape: ConvShape,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLayer {
    /// Registers `{name}.weight` / `{name}.bias`, He-normal weights scaled by
    /// `gain`, zero bias.
    pub fn register<T: Real, R: rand::Rng + ?Sized>(
        params: &mut ParamSet<T>,
        name: &str,
        shape: ConvShape,
        gain: f64,
        rng: &mut R,
    ) -> ConvLayer {
        let fan_in = (shape.in_channels * shape.kernel * shape.kernel) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
        let weight: Vec<T> = (0..shape.weight_len())
            .map(|_| T::from_f64_lossy(normal.sample(rng)))
            .collect();
        let w = params.insert(
            format!("{name}.weight"),
            vec![shape.out_channels, shape.in_channels, shape.kernel, shape.kernel],
            weight,
        );
        let b = params.insert(
            format!("{name}.bias"),
            vec![shape.out_channels],
            vec![T::zero(); shape.out_channels],
        );
        ConvLayer {
            shape,
            weight: w,
            bias: b,
        }
    }

    /// Sets the centre tap so output channel `o` copies input channel `i`.
    pub fn set_identity_tap<T: Real>(&self, params: &mut ParamSet<T>, out_channel: usize, in_channel: usize) {
        let k = self.shape.kernel;
        let idx = ((out_channel * self.shape.in_channels + in_channel) * k + k / 2) * k + k / 2;
        params.get_mut(self.weight).data[idx] = T::one();
    }
}

/// Draws uniform values in `[-scale, scale)`; handy for tests and probes.
pub fn uniform_fill<T: Real, R: rand::Rng + ?Sized>(params: &mut ParamSet<T>, scale: f64, rng: &mut R) {
    for p in params.iter_mut() {
        for v in &mut p.data {
            *v = T::from_f64_lossy(rng.random_range(-scale..scale));
        }
    }
}
