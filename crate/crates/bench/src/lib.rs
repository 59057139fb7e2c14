//! Fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volo::{Conv2d, LocalSelfAttention, MixerKind, OutlookAttention, Result, SelfAttention, Tape, Tensor, Var};

/// One token mixer at stride 1, built from a fixed seed.
pub enum Mixer {
    Oa(OutlookAttention<f32>),
    Lsa(LocalSelfAttention<f32>),
    Sa(SelfAttention<f32>),
    Conv(Conv2d<f32>),
}

impl Mixer {
    pub fn new(kind: MixerKind, channels: usize, heads: usize, kernel: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match kind {
            MixerKind::Oa => Self::Oa(OutlookAttention::new(channels, heads, kernel, 1, &mut rng)?),
            MixerKind::Lsa => Self::Lsa(LocalSelfAttention::new(channels, heads, kernel, &mut rng)?),
            MixerKind::Sa => Self::Sa(SelfAttention::new(channels, heads, &mut rng)?),
            MixerKind::Conv => Self::Conv(Conv2d::new("conv", kernel, 1, channels, channels, true, &mut rng)?),
        })
    }

    /// `x` is `[B, H, W, C]`; self-attention sees it flattened to tokens.
    pub fn forward<'t>(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        match self {
            Self::Oa(l) => l.forward(x),
            Self::Lsa(l) => l.forward(x),
            Self::Sa(l) => {
                let s = x.shape();
                l.forward(x.reshape(&[s[0], s[1] * s[2], s[3]])?)
            }
            Self::Conv(l) => l.forward(x),
        }
    }

    /// Forward then backward of the plain sum; returns the input gradient.
    pub fn forward_backward(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let input = tape.leaf(x.clone());
        let loss = self.forward(input)?.sum();
        let grads = tape.backward(loss)?;
        Ok(grads.wrt(input).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

/// Standard-normal-ish input of shape `[1, H, W, C]`.
pub fn token_map(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, h, w, c], |_| rng.random_range(-1.0f32..1.0))
}
