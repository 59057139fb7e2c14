//! Small parameterized building blocks.

use rand::Rng;

use crate::error::Result;
use crate::param::{Module, Param};
use crate::tape::Var;
use crate::tensor::Scalar;

/// Standard deviation used for every weight matrix at construction.
pub const INIT_STD: f64 = 0.02;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map over the last axis with weight `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            weight: Param::trunc_normal(format!("{name}.weight"), &[input, output], INIT_STD, rng),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let b = self.bias.as_ref().map(|b| tape.param(b));
        x.linear(tape.param(&self.weight), b)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        self.bias.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        self.bias.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::ones(format!("{name}.gamma"), &[dim]),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        x.layer_norm(tape.param(&self.gamma), tape.param(&self.beta), self.eps)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Overwrites every parameter with uniform draws from `[-scale, scale]`.
/// Construction uses small weights; tests use this to get non-degenerate
/// attention patterns.
pub fn randomize<T: Scalar, M: Module<T> + ?Sized, R: Rng + ?Sized>(m: &mut M, scale: f64, rng: &mut R) {
    m.visit_params_mut(&mut |p| {
        for v in p.value.data_mut() {
            *v = T::of(rng.random_range(-scale..=scale));
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_counts_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f32>::new("fc", 192, 486, true, &mut rng);
        assert_eq!(l.num_params(), 93_798);
        let l = Linear::<f32>::new("v", 192, 192, false, &mut rng);
        assert_eq!(l.num_params(), 36_864);
    }

    #[test]
    fn layer_norm_module_standardizes() {
        let ln = LayerNorm::<f64>::new("ln", 4);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_f64(&[4], &[1., 2., 3., 4.]).unwrap());
        let y = ln.forward(x).unwrap().value();
        assert!(y.sum().abs() < 1e-12);
        let var: f64 = y.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }
}
