//! Named, ordered parameter storage shared by the model and the optimizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Float, Gradients, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Vec<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Records every parameter on `tape` as a gradient-carrying leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Result<Bound<'t, T>> {
        self.bind_with(tape, true)
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Result<Bound<'t, T>> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape<T>, grad: bool) -> Result<Bound<'t, T>> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), grad))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Moves gradients of a backward sweep into `Parameter::grad`.
    pub fn absorb(&mut self, bound: &Bound<'_, T>, mut grads: Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad = grads.take(v);
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
        }
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_values_from<U: Float>(&mut self, other: &ParamStore<U>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "parameter count {} vs {}",
                other.len(),
                self.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(other.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::CheckpointShape {
                    name: src.name.clone(),
                    expected: dst.value.shape().to_vec(),
                    found: src.value.shape().to_vec(),
                });
            }
            dst.value = src.value.cast();
        }
        Ok(())
    }
}

/// Parameters recorded on a tape, addressable by [`ParamId`].
pub struct Bound<'t, T: Float> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Float> Bound<'t, T> {
    /// Binds caller-recorded variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }
}

/// Seeded parameter initialization.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal<T: Float>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::of(dist.sample(&mut self.rng)))
    }

    /// He (fan-in) scaled normal weights for a `[cout, cin_per_group, k, k]` kernel.
    pub fn he<T: Float>(&mut self, shape: &[usize]) -> Tensor<T> {
        let fan_in: usize = shape[1..].iter().product();
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    /// `n` rows drawn uniformly on the unit sphere in `ℝ^dim`.
    pub fn unit_rows<T: Float>(&mut self, n: usize, dim: usize) -> Tensor<T> {
        let raw: Tensor<f64> = self.normal(&[n, dim], 1.0);
        let mut data = Vec::with_capacity(n * dim);
        for row in raw.data().chunks(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            data.extend(row.iter().map(|v| T::of(v / norm)));
        }
        Tensor::new(&[n, dim], data).expect("row data")
    }
}
