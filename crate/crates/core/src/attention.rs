//! Token mixing layers: outlook attention, local self-attention, global
//! multi-head self-attention and plain 2-D convolution.
//!
//! Spatial layers take token maps shaped `[B, H, W, C]` (or `[H, W, C]`);
//! self-attention takes sequences shaped `[B, L, C]` (or `[L, C]`). Outputs
//! keep the input rank.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::nn::{Linear, INIT_STD};
use crate::param::{Module, Param};
use crate::tape::Var;
use crate::tensor::{Scalar, Tensor};
use crate::window::WindowGeometry;

/// Lifts `[H, W, C]` / `[L, C]` inputs to a batch of one. Returns the
/// batched variable and whether the caller should squeeze the result.
fn batched<'t, T: Scalar>(x: Var<'t, T>, rank: usize) -> Result<(Var<'t, T>, bool)> {
    let shape = x.shape();
    if shape.len() == rank {
        Ok((x, false))
    } else if shape.len() + 1 == rank {
        let mut s = vec![1];
        s.extend_from_slice(&shape);
        Ok((x.reshape(&s)?, true))
    } else {
        Err(TensorError::InvalidArgument(format!(
            "expected a rank-{rank} input (or unbatched rank-{}), got {shape:?}",
            rank - 1
        )))
    }
}

fn unbatch<'t, T: Scalar>(y: Var<'t, T>, squeeze: bool) -> Result<Var<'t, T>> {
    if squeeze {
        let s = y.shape();
        y.reshape(&s[1..])
    } else {
        Ok(y)
    }
}

fn check_channels(op: &'static str, shape: &[usize], dim: usize) -> Result<()> {
    if shape.last() != Some(&dim) {
        return Err(TensorError::shape(op, shape, &[dim]));
    }
    Ok(())
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(TensorError::Config(format!(
            "dim {dim} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Multi-head outlook attention.
///
/// Per head `n`, window weights for the window centered at `(i, j)` are the
/// `K^4` logits `attn[n*K^4 .. (n+1)*K^4]` generated from the (pooled) center
/// token, reshaped to `K^2 x K^2` (row: destination offset, column: source
/// offset) and softmaxed over the source axis. The weighted windows are
/// folded back densely, heads concatenated, and projected.
///
/// With stride `s > 1`, logits come from the `s x s` average-pooled map, one
/// window per pooled cell, and the fold still targets the full `H x W` grid.
#[derive(Debug, Clone)]
pub struct OutlookAttention<T> {
    pub dim: usize,
    pub heads: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `W_V`, `[C, C]`, no bias.
    pub value: Linear<T>,
    /// `W_A`, `[C, N*K^4]` with bias.
    pub attn: Linear<T>,
    /// Output projection `[C, C]` with bias.
    pub proj: Linear<T>,
}

impl<T: Scalar> OutlookAttention<T> {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        if kernel.is_multiple_of(2) {
            return Err(TensorError::Geometry(format!("kernel {kernel} must be odd")));
        }
        if stride == 0 {
            return Err(TensorError::Geometry("stride must be positive".into()));
        }
        let k4 = kernel.pow(4);
        Ok(Self {
            dim,
            heads,
            kernel,
            stride,
            value: Linear::new("v", dim, dim, false, rng),
            attn: Linear::new("attn", dim, heads * k4, true, rng),
            proj: Linear::new("proj", dim, dim, true, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn geometry(&self, height: usize, width: usize) -> Result<WindowGeometry> {
        WindowGeometry::centered(self.kernel, self.stride, height, width)
    }

    /// Softmaxed window weights `[B, windows, N, K^2, K^2]`.
    pub fn attention_weights<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, _) = batched(x, 4)?;
        let s = x.shape();
        check_channels("outlook_attention", &s, self.dim)?;
        let g = self.geometry(s[1], s[2])?;
        let kk = self.kernel * self.kernel;
        let src = if self.stride > 1 { x.avg_pool(self.stride)? } else { x };
        self.attn
            .forward(src)?
            .reshape(&[s[0], g.windows(), self.heads, kk, kk])?
            .softmax(4)
    }

    /// Aggregated values before the output projection, `[B, H, W, C]`.
    pub fn aggregate<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, squeeze) = batched(x, 4)?;
        let s = x.shape();
        check_channels("outlook_attention", &s, self.dim)?;
        let (b, h, w) = (s[0], s[1], s[2]);
        let g = self.geometry(h, w)?;
        let (kk, nw) = (self.kernel * self.kernel, g.windows());
        let values = self
            .value
            .forward(x)?
            .unfold(&g)?
            .reshape(&[b, nw, kk, self.heads, self.head_dim()])?
            .permute(&[0, 1, 3, 2, 4])?;
        let weights = self.attention_weights(x)?;
        let y = weights
            .bmm(values)?
            .permute(&[0, 1, 3, 2, 4])?
            .reshape(&[b, nw, kk, self.dim])?
            .fold(&g)?;
        unbatch(y, squeeze)
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.aggregate(x)?;
        self.proj.forward(y)
    }
}

impl<T: Scalar> Module<T> for OutlookAttention<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.value.visit_params(f);
        self.attn.visit_params(f);
        self.proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.value.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.proj.visit_params_mut(f);
    }
}

/// Scaled dot-product attention restricted to the `K x K` neighborhood of
/// every token (stride 1). Neighbors in the zero padding are excluded from
/// the softmax.
#[derive(Debug, Clone)]
pub struct LocalSelfAttention<T> {
    pub dim: usize,
    pub heads: usize,
    pub kernel: usize,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> LocalSelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        check_heads(dim, heads)?;
        if kernel.is_multiple_of(2) {
            return Err(TensorError::Geometry(format!("kernel {kernel} must be odd")));
        }
        Ok(Self {
            dim,
            heads,
            kernel,
            query: Linear::new("q", dim, dim, false, rng),
            key: Linear::new("k", dim, dim, false, rng),
            value: Linear::new("v", dim, dim, false, rng),
            proj: Linear::new("proj", dim, dim, true, rng),
        })
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, squeeze) = batched(x, 4)?;
        let s = x.shape();
        check_channels("local_self_attention", &s, self.dim)?;
        let (b, h, w) = (s[0], s[1], s[2]);
        let (n, d) = (self.heads, self.dim / self.heads);
        let g = WindowGeometry::centered(self.kernel, 1, h, w)?;
        let kk = g.offsets();
        let hw = h * w;

        let q = self.query.forward(x)?.reshape(&[b, hw, n, 1, d])?;
        let k = self
            .key
            .forward(x)?
            .unfold(&g)?
            .reshape(&[b, hw, kk, n, d])?
            .permute(&[0, 1, 3, 4, 2])?;
        let v = self
            .value
            .forward(x)?
            .unfold(&g)?
            .reshape(&[b, hw, kk, n, d])?
            .permute(&[0, 1, 3, 2, 4])?;

        let valid = g.validity_mask();
        let mut mask = Vec::with_capacity(b * hw * n * kk);
        for _ in 0..b {
            for t in 0..hw {
                for _ in 0..n {
                    mask.extend(valid[t * kk..(t + 1) * kk].iter().map(|ok| !ok));
                }
            }
        }
        let attn = q
            .bmm(k)?
            .scale(1.0 / (d as f64).sqrt())
            .mask_fill(Arc::new(mask), T::neg_infinity())?
            .softmax(4)?;
        let y = attn.bmm(v)?.reshape(&[b, h, w, self.dim])?;
        unbatch(self.proj.forward(y)?, squeeze)
    }
}

impl<T: Scalar> Module<T> for LocalSelfAttention<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.query.visit_params(f);
        self.key.visit_params(f);
        self.value.visit_params(f);
        self.proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.query.visit_params_mut(f);
        self.key.visit_params_mut(f);
        self.value.visit_params_mut(f);
        self.proj.visit_params_mut(f);
    }
}

/// Global multi-head scaled dot-product attention over a token sequence.
#[derive(Debug, Clone)]
pub struct SelfAttention<T> {
    pub dim: usize,
    pub heads: usize,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(dim, heads)?;
        Ok(Self {
            dim,
            heads,
            query: Linear::new("q", dim, dim, false, rng),
            key: Linear::new("k", dim, dim, false, rng),
            value: Linear::new("v", dim, dim, false, rng),
            proj: Linear::new("proj", dim, dim, true, rng),
        })
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, squeeze) = batched(x, 3)?;
        let s = x.shape();
        check_channels("self_attention", &s, self.dim)?;
        let (b, l) = (s[0], s[1]);
        let (n, d) = (self.heads, self.dim / self.heads);
        let q = self.query.forward(x)?.reshape(&[b, l, n, d])?.permute(&[0, 2, 1, 3])?;
        let k = self.key.forward(x)?.reshape(&[b, l, n, d])?.permute(&[0, 2, 3, 1])?;
        let v = self.value.forward(x)?.reshape(&[b, l, n, d])?.permute(&[0, 2, 1, 3])?;
        let attn = q.bmm(k)?.scale(1.0 / (d as f64).sqrt()).softmax(3)?;
        let y = attn
            .bmm(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, l, self.dim])?;
        unbatch(self.proj.forward(y)?, squeeze)
    }
}

impl<T: Scalar> Module<T> for SelfAttention<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.query.visit_params(f);
        self.key.visit_params(f);
        self.value.visit_params(f);
        self.proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.query.visit_params_mut(f);
        self.key.visit_params_mut(f);
        self.value.visit_params_mut(f);
        self.proj.visit_params_mut(f);
    }
}

/// 2-D cross-correlation with zero padding `K / 2`.
///
/// The weight is stored as `[K*K*C_in, C_out]` with row index
/// `(i*K + j)*C_in + c` for kernel tap `(i, j)` and input channel `c`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        kernel: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || stride == 0 {
            return Err(TensorError::Geometry(format!(
                "convolution needs odd kernel and positive stride, got {kernel}/{stride}"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            in_channels,
            out_channels,
            weight: Param::trunc_normal(
                format!("{name}.weight"),
                &[kernel * kernel * in_channels, out_channels],
                INIT_STD,
                rng,
            ),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[out_channels])),
        })
    }

    /// Builds a layer from an explicit weight `[K*K*C_in, C_out]` and bias.
    pub fn from_weights(kernel: usize, stride: usize, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let s = weight.shape().to_vec();
        if s.len() != 2 || kernel.is_multiple_of(2) || !s[0].is_multiple_of(kernel * kernel) {
            return Err(TensorError::shape("conv2d weight", &s, &[kernel * kernel]));
        }
        Ok(Self {
            kernel,
            stride,
            in_channels: s[0] / (kernel * kernel),
            out_channels: s[1],
            weight: Param::new("conv.weight", weight),
            bias: bias.map(|b| Param::new("conv.bias", b)),
        })
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, squeeze) = batched(x, 4)?;
        let s = x.shape();
        check_channels("conv2d", &s, self.in_channels)?;
        let g = WindowGeometry::centered(self.kernel, self.stride, s[1], s[2])?;
        let tape = x.tape();
        let cols = x.unfold(&g)?.reshape(&[
            s[0],
            g.out_height(),
            g.out_width(),
            g.offsets() * self.in_channels,
        ])?;
        let b = self.bias.as_ref().map(|b| tape.param(b));
        unbatch(cols.linear(tape.param(&self.weight), b)?, squeeze)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        self.bias.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        self.bias.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randomize;
    use crate::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn random_map(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// `(x W_V) W_O + b_O` evaluated directly.
    fn value_then_proj(x: &Tensor<f64>, value: &Linear<f64>, proj: &Linear<f64>) -> Tensor<f64> {
        let (v, _) = crate::ops::linear(x, &value.weight.value, None).unwrap();
        let (o, _) = crate::ops::linear(
            &v,
            &proj.weight.value,
            proj.bias.as_ref().map(|b| &b.value),
        )
        .unwrap();
        o
    }

    fn assert_close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn outlook_kernel_one_collapses_to_projections() {
        let mut r = rng();
        let mut layer = OutlookAttention::<f64>::new(6, 3, 1, 1, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        let x = random_map(&[3, 4, 6], &mut r);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x.clone())).unwrap().value();
        assert_close(&y, &value_then_proj(&x, &layer.value, &layer.proj), 1e-12);
    }

    #[test]
    fn outlook_single_token_zero_logits_divides_by_nine() {
        let mut r = rng();
        let mut layer = OutlookAttention::<f64>::new(4, 1, 3, 1, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        layer.attn.weight.value = Tensor::zeros(&[4, 81]);
        layer.attn.bias = Some(Param::zeros("attn.bias", &[81]));
        layer.proj.bias = Some(Param::zeros("proj.bias", &[4]));
        let x = random_map(&[1, 1, 4], &mut r);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x.clone())).unwrap().value();
        let expected = value_then_proj(&x, &layer.value, &layer.proj).scale(1.0 / 9.0);
        assert_close(&y, &expected, 1e-12);
    }

    #[test]
    fn outlook_preserves_shape_with_stride_two() {
        let mut r = rng();
        let layer = OutlookAttention::<f64>::new(8, 2, 3, 2, &mut r).unwrap();
        for (h, w) in [(4, 4), (5, 3), (1, 1), (6, 7)] {
            let tape = Tape::new();
            let x = tape.constant(random_map(&[2, h, w, 8], &mut r));
            assert_eq!(layer.forward(x).unwrap().shape(), vec![2, h, w, 8]);
        }
    }

    #[test]
    fn outlook_weights_rows_sum_to_one() {
        let mut r = rng();
        let mut layer = OutlookAttention::<f64>::new(8, 2, 3, 1, &mut r).unwrap();
        randomize(&mut layer, 1.0, &mut r);
        let tape = Tape::new();
        let a = layer
            .attention_weights(tape.constant(random_map(&[5, 5, 8], &mut r)))
            .unwrap()
            .value();
        assert_eq!(a.shape(), &[1, 25, 2, 9, 9]);
        for row in a.data().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outlook_rejects_bad_inputs() {
        let mut r = rng();
        assert!(OutlookAttention::<f64>::new(8, 3, 3, 1, &mut r).is_err());
        assert!(OutlookAttention::<f64>::new(8, 2, 2, 1, &mut r).is_err());
        let layer = OutlookAttention::<f64>::new(8, 2, 3, 1, &mut r).unwrap();
        let tape = Tape::new();
        assert!(layer.forward(tape.constant(Tensor::zeros(&[4, 4, 6]))).is_err());
    }

    #[test]
    fn local_attention_single_token() {
        let mut r = rng();
        let mut layer = LocalSelfAttention::<f64>::new(4, 2, 3, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        let x = random_map(&[1, 1, 4], &mut r);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x.clone())).unwrap().value();
        assert_close(&y, &value_then_proj(&x, &layer.value, &layer.proj), 1e-12);
    }

    #[test]
    fn local_attention_uniform_tokens() {
        let mut r = rng();
        let mut layer = LocalSelfAttention::<f64>::new(4, 2, 3, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        let token = [0.3, -0.2, 0.9, 0.1];
        let x = Tensor::from_fn(&[5, 5, 4], |i| token[i % 4]);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x)).unwrap().value();
        let first = &y.data()[..4];
        for pix in y.data().chunks(4) {
            for (a, b) in pix.iter().zip(first) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_attention_single_token() {
        let mut r = rng();
        let mut layer = SelfAttention::<f64>::new(6, 2, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        let x = random_map(&[1, 6], &mut r);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x.clone())).unwrap().value();
        assert_close(&y, &value_then_proj(&x, &layer.value, &layer.proj), 1e-12);
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let mut r = rng();
        let mut layer = SelfAttention::<f64>::new(6, 3, &mut r).unwrap();
        randomize(&mut layer, 0.5, &mut r);
        let x = random_map(&[5, 6], &mut r);
        let perm = [3, 0, 4, 1, 2];
        let xp = Tensor::from_fn(&[5, 6], |i| x.data()[perm[i / 6] * 6 + i % 6]);
        let tape = Tape::new();
        let y = layer.forward(tape.constant(x)).unwrap().value();
        let yp = layer.forward(tape.constant(xp)).unwrap().value();
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..6 {
                assert!((yp.data()[i * 6 + c] - y.data()[p * 6 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let conv = Conv2d::from_weights(1, 1, Tensor::from_vec(&[3, 3], w).unwrap(), Some(Tensor::zeros(&[3]))).unwrap();
        let mut r = rng();
        let x = random_map(&[4, 5, 3], &mut r);
        let tape = Tape::new();
        assert_eq!(conv.forward(tape.constant(x.clone())).unwrap().value(), x);
    }

    #[test]
    fn conv_ones_kernel_counts_coverage() {
        let conv = Conv2d::from_weights(3, 1, Tensor::ones(&[9, 1]), Some(Tensor::zeros(&[1]))).unwrap();
        let tape = Tape::new();
        let y = conv.forward(tape.constant(Tensor::<f64>::ones(&[3, 3, 1]))).unwrap().value();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut r = rng();
        let conv = Conv2d::<f64>::new("c", 3, 1, 2, 4, true, &mut r).unwrap();
        let tape = Tape::new();
        assert!(conv.forward(tape.constant(Tensor::zeros(&[3, 3, 3]))).is_err());
    }
}
