//! Pre-norm residual blocks.
//!
//! Every block computes `x + branch(norm(x))` for each of its branches. In
//! training mode a branch is dropped per sample with probability
//! `drop_path_rate` and kept branches are scaled by `1 / (1 - rate)`.

use rand::{Rng, RngCore};

use crate::attention::{Conv2d, LocalSelfAttention, OutlookAttention, SelfAttention};
use crate::cost::MixerKind;
use crate::error::{Result, TensorError};
use crate::nn::{LayerNorm, Linear};
use crate::param::{Module, Param};
use crate::tape::Var;
use crate::tensor::Scalar;

/// Evaluation mode for a forward pass. Training mode owns the RNG that
/// drives stochastic depth.
pub struct ForwardCtx<'r> {
    rng: Option<&'r mut dyn RngCore>,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        Self { rng: None }
    }

    pub fn train(rng: &'r mut dyn RngCore) -> Self {
        Self { rng: Some(rng) }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }
}

/// Per-sample keep factors: `1 / (1 - rate)` with probability `1 - rate`,
/// otherwise zero.
pub fn stochastic_depth_mask<T: Scalar, R: Rng + ?Sized>(rate: f64, batch: usize, rng: &mut R) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidArgument(format!(
            "drop path rate {rate} outside [0, 1)"
        )));
    }
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    Ok((0..batch)
        .map(|_| {
            if rate == 0.0 || rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Linearly increasing drop-path rates from 0 (first block) to `max`
/// (last block).
pub fn drop_path_schedule(max: f64, blocks: usize) -> Vec<f64> {
    match blocks {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect(),
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(TensorError::Config(format!("drop path rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// `x + drop_path(branch())`. A rate of exactly 1 drops the branch
/// unconditionally in training.
fn residual<'t, T: Scalar>(
    x: Var<'t, T>,
    rate: f64,
    ctx: &mut ForwardCtx<'_>,
    branch: impl FnOnce() -> Result<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    match ctx.rng.as_deref_mut() {
        Some(_) if rate >= 1.0 => Ok(x),
        Some(rng) if rate > 0.0 => {
            let batch = x.shape()[0];
            let mask = stochastic_depth_mask::<T, _>(rate, batch, rng)?;
            x.add(branch()?.scale_rows(&mask)?)
        }
        _ => x.add(branch()?),
    }
}

fn hidden_width(dim: usize, ratio: f64) -> usize {
    (dim as f64 * ratio).round() as usize
}

/// Two-layer perceptron `C -> rC -> C` with a GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, ratio: f64, rng: &mut R) -> Self {
        let hidden = hidden_width(dim, ratio);
        Self {
            fc1: Linear::new("mlp.fc1", dim, hidden, true, rng),
            fc2: Linear::new("mlp.fc2", hidden, dim, true, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.output_dim()
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.fc2.forward(self.fc1.forward(x)?.gelu())
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
}

/// Spatial mixer used inside a fine-level block.
#[derive(Debug, Clone)]
pub enum TokenMixer<T> {
    Outlook(OutlookAttention<T>),
    LocalSelfAttention(LocalSelfAttention<T>),
    Convolution(Conv2d<T>),
}

impl<T: Scalar> TokenMixer<T> {
    pub fn new<R: Rng + ?Sized>(
        kind: MixerKind,
        dim: usize,
        heads: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        match kind {
            MixerKind::Oa => Ok(Self::Outlook(OutlookAttention::new(dim, heads, kernel, stride, rng)?)),
            MixerKind::Lsa => Ok(Self::LocalSelfAttention(LocalSelfAttention::new(dim, heads, kernel, rng)?)),
            MixerKind::Conv => Ok(Self::Convolution(Conv2d::new("conv", kernel, 1, dim, dim, true, rng)?)),
            MixerKind::Sa => Err(TensorError::Config(
                "global self-attention is not a fine-level mixer".into(),
            )),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Self::Outlook(_) => MixerKind::Oa,
            Self::LocalSelfAttention(_) => MixerKind::Lsa,
            Self::Convolution(_) => MixerKind::Conv,
        }
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Self::Outlook(m) => m.forward(x),
            Self::LocalSelfAttention(m) => m.forward(x),
            Self::Convolution(m) => m.forward(x),
        }
    }
}

impl<T: Scalar> Module<T> for TokenMixer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            Self::Outlook(m) => m.visit_params(f),
            Self::LocalSelfAttention(m) => m.visit_params(f),
            Self::Convolution(m) => m.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Self::Outlook(m) => m.visit_params_mut(f),
            Self::LocalSelfAttention(m) => m.visit_params_mut(f),
            Self::Convolution(m) => m.visit_params_mut(f),
        }
    }
}

/// Fine-level block on `[B, H, W, C]` token maps:
/// `x' = x + mix(LN(x))`, `z = x' + MLP(LN(x'))`.
#[derive(Debug, Clone)]
pub struct OutlookerBlock<T> {
    pub norm1: LayerNorm<T>,
    pub mixer: TokenMixer<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub drop_path_rate: f64,
}

impl<T: Scalar> OutlookerBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: MixerKind,
        dim: usize,
        heads: usize,
        kernel: usize,
        stride: usize,
        mlp_ratio: f64,
        drop_path_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_rate(drop_path_rate)?;
        Ok(Self {
            norm1: LayerNorm::new("norm1", dim),
            mixer: TokenMixer::new(kind, dim, heads, kernel, stride, rng)?,
            norm2: LayerNorm::new("norm2", dim),
            mlp: Mlp::new(dim, mlp_ratio, rng),
            drop_path_rate,
        })
    }

    pub fn forward<'t>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t, T>> {
        if x.shape().len() != 4 {
            return Err(TensorError::InvalidArgument(format!(
                "outlooker block expects [B, H, W, C], got {:?}",
                x.shape()
            )));
        }
        let rate = self.drop_path_rate;
        let x = residual(x, rate, ctx, || self.mixer.forward(self.norm1.forward(x)?))?;
        residual(x, rate, ctx, || self.mlp.forward(self.norm2.forward(x)?))
    }
}

impl<T: Scalar> Module<T> for OutlookerBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm1.visit_params(f);
        self.mixer.visit_params(f);
        self.norm2.visit_params(f);
        self.mlp.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_params_mut(f);
        self.mixer.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.mlp.visit_params_mut(f);
    }
}

/// Coarse-level block on `[B, L, C]` sequences.
#[derive(Debug, Clone)]
pub struct TransformerBlock<T> {
    pub norm1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub drop_path_rate: f64,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, mlp_ratio: f64, drop_path_rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(drop_path_rate)?;
        Ok(Self {
            norm1: LayerNorm::new("norm1", dim),
            attn: SelfAttention::new(dim, heads, rng)?,
            norm2: LayerNorm::new("norm2", dim),
            mlp: Mlp::new(dim, mlp_ratio, rng),
            drop_path_rate,
        })
    }

    pub fn forward<'t>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t, T>> {
        if x.shape().len() != 3 {
            return Err(TensorError::InvalidArgument(format!(
                "transformer block expects [B, L, C], got {:?}",
                x.shape()
            )));
        }
        let rate = self.drop_path_rate;
        let x = residual(x, rate, ctx, || self.attn.forward(self.norm1.forward(x)?))?;
        residual(x, rate, ctx, || self.mlp.forward(self.norm2.forward(x)?))
    }
}

impl<T: Scalar> Module<T> for TransformerBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm1.visit_params(f);
        self.attn.visit_params(f);
        self.norm2.visit_params(f);
        self.mlp.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.mlp.visit_params_mut(f);
    }
}

/// Attention where only the class token (position 0) forms a query; keys
/// and values come from the class token and all patch tokens.
#[derive(Debug, Clone)]
pub struct ClassAttention<T> {
    pub dim: usize,
    pub heads: usize,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub proj: Linear<T>,
}

impl<T: Scalar> ClassAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(TensorError::Config(format!(
                "dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            dim,
            heads,
            query: Linear::new("q", dim, dim, false, rng),
            key: Linear::new("k", dim, dim, false, rng),
            value: Linear::new("v", dim, dim, false, rng),
            proj: Linear::new("proj", dim, dim, true, rng),
        })
    }

    /// `x: [B, 1+L, C]` -> class update `[B, 1, C]`.
    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim || s[1] == 0 {
            return Err(TensorError::shape("class_attention", &s, &[self.dim]));
        }
        let (b, l) = (s[0], s[1]);
        let (n, d) = (self.heads, self.dim / self.heads);
        let q = self
            .query
            .forward(x.narrow(1, 0, 1)?)?
            .reshape(&[b, 1, n, d])?
            .permute(&[0, 2, 1, 3])?;
        let k = self.key.forward(x)?.reshape(&[b, l, n, d])?.permute(&[0, 2, 3, 1])?;
        let v = self.value.forward(x)?.reshape(&[b, l, n, d])?.permute(&[0, 2, 1, 3])?;
        let attn = q.bmm(k)?.scale(1.0 / (d as f64).sqrt()).softmax(3)?;
        let y = attn
            .bmm(v)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, 1, self.dim])?;
        self.proj.forward(y)
    }
}

impl<T: Scalar> Module<T> for ClassAttention<T> {
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

#[derive(Debug, Clone)]
pub struct ClassAttentionBlock<T> {
    pub norm1: LayerNorm<T>,
    pub attn: ClassAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub drop_path_rate: f64,
}

impl<T: Scalar> ClassAttentionBlock<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, mlp_ratio: f64, drop_path_rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(drop_path_rate)?;
        Ok(Self {
            norm1: LayerNorm::new("norm1", dim),
            attn: ClassAttention::new(dim, heads, rng)?,
            norm2: LayerNorm::new("norm2", dim),
            mlp: Mlp::new(dim, mlp_ratio, rng),
            drop_path_rate,
        })
    }

    /// Updated class token `[B, 1, C]` given the current class token
    /// `[B, 1, C]` and patch tokens `[B, L, C]`. Patch tokens are read only.
    pub fn update_class_token<'t>(
        &self,
        class_token: Var<'t, T>,
        patches: Var<'t, T>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var<'t, T>> {
        let (cs, ps) = (class_token.shape(), patches.shape());
        if cs.len() != 3 || ps.len() != 3 || cs[1] != 1 || cs[0] != ps[0] || cs[2] != ps[2] {
            return Err(TensorError::shape("class_attention_block", &cs, &ps));
        }
        let tokens = class_token.tape().concat(&[class_token, patches], 1)?;
        let rate = self.drop_path_rate;
        let cls = residual(class_token, rate, ctx, || self.attn.forward(self.norm1.forward(tokens)?))?;
        residual(cls, rate, ctx, || self.mlp.forward(self.norm2.forward(cls)?))
    }

    /// `[B, 1+L, C] -> [B, 1+L, C]` with only position 0 changed.
    pub fn forward<'t>(&self, x: Var<'t, T>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || s[1] < 1 {
            return Err(TensorError::InvalidArgument(format!(
                "class attention block expects [B, 1+L, C], got {s:?}"
            )));
        }
        let cls = x.narrow(1, 0, 1)?;
        let patches = x.narrow(1, 1, s[1] - 1)?;
        let cls = self.update_class_token(cls, patches, ctx)?;
        x.tape().concat(&[cls, patches], 1)
    }
}

impl<T: Scalar> Module<T> for ClassAttentionBlock<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.norm1.visit_params(f);
        self.attn.visit_params(f);
        self.norm2.visit_params(f);
        self.mlp.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.norm1.visit_params_mut(f);
        self.attn.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.mlp.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randomize;
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn outlooker(rng: &mut ChaCha8Rng, rate: f64) -> OutlookerBlock<f64> {
        OutlookerBlock::new(MixerKind::Oa, 8, 2, 3, 1, 3.0, rate, rng).unwrap()
    }

    #[test]
    fn zero_weights_make_blocks_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut o = outlooker(&mut r, 0.0);
        o.zero_params();
        let mut t = TransformerBlock::<f64>::new(8, 2, 3.0, 0.0, &mut r).unwrap();
        t.zero_params();
        let mut c = ClassAttentionBlock::<f64>::new(8, 2, 3.0, 0.0, &mut r).unwrap();
        c.zero_params();
        let tape = Tape::new();
        let x = random(&[2, 4, 5, 8], &mut r);
        let y = o.forward(tape.constant(x.clone()), &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.value(), x);
        let s = random(&[2, 6, 8], &mut r);
        let y = t.forward(tape.constant(s.clone()), &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.value(), s);
        let y = c.forward(tape.constant(s.clone()), &mut ForwardCtx::eval()).unwrap();
        assert_eq!(y.value(), s);
    }

    #[test]
    fn full_drop_rate_in_training_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut o = outlooker(&mut r, 1.0);
        randomize(&mut o, 0.5, &mut r);
        let x = random(&[3, 4, 4, 8], &mut r);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = o.forward(tape.constant(x.clone()), &mut ForwardCtx::train(&mut rng)).unwrap();
        assert_eq!(y.value(), x);
    }

    #[test]
    fn outlooker_matches_manual_composition() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut o = outlooker(&mut r, 0.1);
        randomize(&mut o, 0.5, &mut r);
        let x = random(&[1, 5, 4, 8], &mut r);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let y = o.forward(xv, &mut ForwardCtx::eval()).unwrap().value();

        let TokenMixer::Outlook(oa) = &o.mixer else { unreachable!() };
        let a = oa.forward(o.norm1.forward(xv).unwrap()).unwrap();
        let x1 = xv.add(a).unwrap();
        let m = o.mlp.forward(o.norm2.forward(x1).unwrap()).unwrap();
        let manual = x1.add(m).unwrap().value();
        assert_eq!(y, manual);
    }

    #[test]
    fn transformer_single_token_reduces_to_value_path() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut t = TransformerBlock::<f64>::new(6, 2, 2.0, 0.0, &mut r).unwrap();
        randomize(&mut t, 0.5, &mut r);
        let x = random(&[1, 1, 6], &mut r);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let y = t.forward(xv, &mut ForwardCtx::eval()).unwrap().value();
        // with one token the attention weight is exactly 1
        let n1 = t.norm1.forward(xv).unwrap();
        let v = t.attn.value.forward(n1).unwrap();
        let x1 = xv.add(t.attn.proj.forward(v).unwrap()).unwrap();
        let expected = x1.add(t.mlp.forward(t.norm2.forward(x1).unwrap()).unwrap()).unwrap().value();
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn class_attention_leaves_patches_untouched() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut c = ClassAttentionBlock::<f64>::new(8, 2, 3.0, 0.0, &mut r).unwrap();
        randomize(&mut c, 0.5, &mut r);
        let x = random(&[2, 7, 8], &mut r);
        let tape = Tape::new();
        let y = c.forward(tape.constant(x.clone()), &mut ForwardCtx::eval()).unwrap().value();
        assert_eq!(y.narrow(1, 1, 6).unwrap(), x.narrow(1, 1, 6).unwrap());
        assert_ne!(y.narrow(1, 0, 1).unwrap(), x.narrow(1, 0, 1).unwrap());
    }

    #[test]
    fn class_update_with_uniform_patches_is_proportional_to_patch() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let dim = 4;
        let mut c = ClassAttentionBlock::<f64>::new(dim, 1, 2.0, 0.0, &mut r).unwrap();
        c.zero_params();
        c.norm1.gamma.value = Tensor::ones(&[dim]);
        c.attn.value.weight.value = Tensor::eye(dim);
        c.attn.proj.weight.value = Tensor::eye(dim);
        // zero-mean patch token so LayerNorm only rescales it
        let t = [1.0, -2.0, 0.5, 0.5];
        let patches = 5;
        let tape = Tape::new();
        let cls = tape.constant(Tensor::zeros(&[1, 1, dim]));
        let p = tape.constant(Tensor::from_fn(&[1, patches, dim], |i| t[i % dim]));
        let out = c
            .update_class_token(cls, p, &mut ForwardCtx::eval())
            .unwrap()
            .value();
        // uniform weights over the zero class token and 5 equal patches
        let std = (t.iter().map(|v| v * v).sum::<f64>() / 4.0 + 1e-5).sqrt();
        for (o, v) in out.data().iter().zip(t) {
            let expected = patches as f64 / (patches + 1) as f64 * v / std;
            assert!((o - expected).abs() < 1e-12, "{o} vs {expected}");
        }
    }

    #[test]
    fn stochastic_depth_mask_properties() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        assert!(stochastic_depth_mask::<f64, _>(0.0, 5, &mut r).unwrap().iter().all(|&m| m == 1.0));
        assert!(stochastic_depth_mask::<f64, _>(1.0, 5, &mut r).is_err());
        assert!(stochastic_depth_mask::<f64, _>(-0.1, 5, &mut r).is_err());
        let n = 100_000;
        let mask = stochastic_depth_mask::<f64, _>(0.5, n, &mut r).unwrap();
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "{kept}");
        let mean = mask.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn drop_path_ramp() {
        let s = drop_path_schedule(0.1, 18);
        assert_eq!(s[0], 0.0);
        assert!((s[17] - 0.1).abs() < 1e-15);
        let mean = s.iter().sum::<f64>() / 18.0;
        assert!((mean - 0.05).abs() < 1e-12);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mlp_hidden_width() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(Mlp::<f32>::new(192, 3.0, &mut r).hidden_dim(), 576);
        assert_eq!(Mlp::<f32>::new(384, 4.0, &mut r).hidden_dim(), 1536);
    }

    #[test]
    fn blocks_reject_unbatched_inputs() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let o = outlooker(&mut r, 0.0);
        let tape = Tape::new();
        assert!(o.forward(tape.constant(Tensor::zeros(&[4, 4, 8])), &mut ForwardCtx::eval()).is_err());
    }
}
