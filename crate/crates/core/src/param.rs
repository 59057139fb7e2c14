//! Trainable parameters and the visitor trait that exposes them.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Scalar, Tensor};

static NEXT_KEY: AtomicU64 = AtomicU64::new(0);

/// Identity of a parameter, used to look up its gradient after backward.
/// Clones of a parameter share the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey(u64);

#[derive(Debug, Clone)]
pub struct Param<T> {
    key: ParamKey,
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            key: ParamKey(NEXT_KEY.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    pub fn ones(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::ones(shape))
    }

    /// Normal(0, std) truncated to two standard deviations.
    pub fn trunc_normal<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Self {
        let value = Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::of(z * std);
            }
        });
        Self::new(name, value)
    }

    pub fn key(&self) -> ParamKey {
        self.key
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Total number of scalar parameters.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Overwrites every parameter with zeros.
    fn zero_params(&mut self) {
        self.visit_params_mut(&mut |p| p.value = Tensor::zeros(p.value.shape()));
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Vec<M> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        for m in self {
            m.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for m in self {
            m.visit_params_mut(f);
        }
    }
}

impl<T: Scalar, M: Module<T>> Module<T> for Option<M> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_params_mut(f);
        }
    }
}

impl<T: Scalar> Module<T> for Param<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(self);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(self);
    }
}
