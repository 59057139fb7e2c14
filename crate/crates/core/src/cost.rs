//! Closed-form multiply-add counts for the token mixers, and the measured
//! counterpart obtained by running a layer under a counting tape.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{Conv2d, LocalSelfAttention, OutlookAttention, SelfAttention};
use crate::error::{Result, TensorError};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    /// global self-attention
    Sa,
    /// local (windowed) self-attention
    Lsa,
    /// outlook attention
    Oa,
    /// K x K convolution, C -> C
    Conv,
}

impl MixerKind {
    pub const ALL: [MixerKind; 4] = [Self::Oa, Self::Lsa, Self::Sa, Self::Conv];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sa => "sa",
            Self::Lsa => "lsa",
            Self::Oa => "oa",
            Self::Conv => "conv",
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixerKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" | "self-attention" => Ok(Self::Sa),
            "lsa" | "local-self-attention" => Ok(Self::Lsa),
            "oa" | "outlook" | "outlook-attention" => Ok(Self::Oa),
            "conv" | "convolution" => Ok(Self::Conv),
            other => Err(TensorError::InvalidArgument(format!(
                "unknown layer kind '{other}' (expected oa, lsa, sa or conv)"
            ))),
        }
    }
}

/// Problem size for a single token-mixing layer on `H x W` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostQuery {
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub k: u64,
    pub n: u64,
}

impl CostQuery {
    pub fn new(h: u64, w: u64, c: u64, k: u64, n: u64) -> Result<Self> {
        if [h, w, c, k, n].contains(&0) {
            return Err(TensorError::InvalidArgument(
                "cost query extents must be positive".into(),
            ));
        }
        if k.is_multiple_of(2) {
            return Err(TensorError::InvalidArgument(format!("kernel {k} must be odd")));
        }
        Ok(Self { h, w, c, k, n })
    }

    /// Multiply-adds of one layer of `kind`.
    ///
    /// * SA:  `4HWC^2 + 2(HW)^2 C`
    /// * LSA: `4HWC^2 + 2HW K^2 C`
    /// * OA:  `HWC(2C + N K^4) + HW K^2 C`
    /// * Conv: `HW K^2 C^2` (bias adds not counted)
    pub fn madds(&self, kind: MixerKind) -> u64 {
        let Self { h, w, c, k, n } = *self;
        let hw = h * w;
        let k2 = k * k;
        match kind {
            MixerKind::Sa => 4 * hw * c * c + 2 * hw * hw * c,
            MixerKind::Lsa => 4 * hw * c * c + 2 * hw * k2 * c,
            MixerKind::Oa => hw * c * (2 * c + n * k2 * k2) + hw * k2 * c,
            MixerKind::Conv => hw * k2 * c * c,
        }
    }
}

/// Counted multiply-adds of one stride-1 forward pass of a freshly built
/// layer of `kind` on an `H x W x C` input.
pub fn measured_madds(kind: MixerKind, q: &CostQuery) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (h, w, c) = (q.h as usize, q.w as usize, q.c as usize);
    let (k, n) = (q.k as usize, q.n as usize);
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, h, w, c], 0.5));
    match kind {
        MixerKind::Oa => {
            OutlookAttention::new(c, n, k, 1, &mut rng)?.forward(x)?;
        }
        MixerKind::Lsa => {
            LocalSelfAttention::new(c, n, k, &mut rng)?.forward(x)?;
        }
        MixerKind::Sa => {
            SelfAttention::new(c, n, &mut rng)?.forward(x.reshape(&[1, h * w, c])?)?;
        }
        MixerKind::Conv => {
            Conv2d::new("conv", k, 1, c, c, true, &mut rng)?.forward(x)?;
        }
    }
    Ok(tape.madds())
}
