//! The two-stage VOLO network: a convolutional stem that tokenizes 8x8
//! patches, a fine stage of Outlookers, a 2x2 patch merge, a coarse stage of
//! Transformers, class attention and a linear classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Conv2d;
use crate::blocks::{drop_path_schedule, ClassAttentionBlock, ForwardCtx, OutlookerBlock, TransformerBlock};
use crate::cost::{CostQuery, MixerKind};
use crate::error::{Result, TensorError};
use crate::nn::{LayerNorm, Linear, INIT_STD};
use crate::param::{Module, Param};
use crate::tape::Var;
use crate::tensor::Scalar;

fn default_stem_dim() -> usize {
    64
}

/// Hyper-parameters of a VOLO network. Serialized as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub stage1_layers: usize,
    pub stage1_heads: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub stage1_mlp_ratio: f64,
    pub stage1_dim: usize,
    pub downsample_patch: usize,
    pub stage2_layers: usize,
    pub stage2_heads: usize,
    pub stage2_mlp_ratio: f64,
    pub stage2_dim: usize,
    pub class_attention_layers: usize,
    pub num_classes: usize,
    pub drop_path_rate: f64,
    /// Hidden width of the convolutional stem.
    #[serde(default = "default_stem_dim")]
    pub stem_dim: usize,
}

const fn preset(
    stage1: (usize, usize, usize),
    stage2: (usize, usize, usize),
    mlp_ratio: f64,
    drop_path_rate: f64,
) -> ModelConfig {
    ModelConfig {
        image_size: 224,
        patch_size: 8,
        stage1_layers: stage1.0,
        stage1_heads: stage1.1,
        kernel_size: 3,
        stride: 2,
        stage1_mlp_ratio: mlp_ratio,
        stage1_dim: stage1.2,
        downsample_patch: 2,
        stage2_layers: stage2.0,
        stage2_heads: stage2.1,
        stage2_mlp_ratio: mlp_ratio,
        stage2_dim: stage2.2,
        class_attention_layers: 2,
        num_classes: 1000,
        drop_path_rate,
        stem_dim: 64,
    }
}

/// (layers, heads, dim) per stage.
pub const D1: ModelConfig = preset((4, 6, 192), (14, 12, 384), 3.0, 0.1);
pub const D2: ModelConfig = preset((6, 8, 256), (18, 16, 512), 3.0, 0.2);
pub const D3: ModelConfig = preset((8, 8, 256), (28, 16, 512), 3.0, 0.5);
pub const D4: ModelConfig = preset((8, 12, 384), (28, 16, 768), 3.0, 0.5);
pub const D5: ModelConfig = preset((12, 12, 384), (36, 16, 768), 4.0, 0.75);

/// Two Outlookers and two Transformers on 32x32 images; trains in seconds.
pub const TINY: ModelConfig = ModelConfig {
    image_size: 32,
    patch_size: 8,
    stage1_layers: 2,
    stage1_heads: 2,
    kernel_size: 3,
    stride: 2,
    stage1_mlp_ratio: 3.0,
    stage1_dim: 16,
    downsample_patch: 2,
    stage2_layers: 2,
    stage2_heads: 4,
    stage2_mlp_ratio: 3.0,
    stage2_dim: 32,
    class_attention_layers: 2,
    num_classes: 10,
    drop_path_rate: 0.1,
    stem_dim: 16,
};

pub const PRESET_NAMES: [&str; 6] = ["d1", "d2", "d3", "d4", "d5", "tiny"];

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "d1" => Ok(D1),
            "d2" => Ok(D2),
            "d3" => Ok(D3),
            "d4" => Ok(D4),
            "d5" => Ok(D5),
            "tiny" => Ok(TINY),
            other => Err(TensorError::Config(format!(
                "unknown preset '{other}' (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| TensorError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Outlookers plus Transformers (class attention excluded).
    pub fn total_layers(&self) -> usize {
        self.stage1_layers + self.stage2_layers
    }

    /// Token grid of the fine stage at `resolution`.
    pub fn stage1_grid(&self, resolution: usize) -> usize {
        resolution / self.patch_size
    }

    pub fn stage2_grid(&self, resolution: usize) -> usize {
        self.stage1_grid(resolution) / self.downsample_patch
    }

    /// Checks structural consistency. Returns advisory warnings for
    /// unusual but buildable configs.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(TensorError::Config(m));
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("stage1_heads", self.stage1_heads),
            ("kernel_size", self.kernel_size),
            ("stride", self.stride),
            ("stage1_dim", self.stage1_dim),
            ("downsample_patch", self.downsample_patch),
            ("stage2_heads", self.stage2_heads),
            ("stage2_dim", self.stage2_dim),
            ("num_classes", self.num_classes),
            ("stem_dim", self.stem_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.patch_size.is_multiple_of(2) {
            return bad(format!(
                "patch_size {} must be even (stride-2 stem followed by a patch projection)",
                self.patch_size
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if !self.stage1_dim.is_multiple_of(self.stage1_heads) {
            return bad(format!(
                "stage1_dim {} not divisible by {} heads",
                self.stage1_dim, self.stage1_heads
            ));
        }
        if !self.stage2_dim.is_multiple_of(self.stage2_heads) {
            return bad(format!(
                "stage2_dim {} not divisible by {} heads",
                self.stage2_dim, self.stage2_heads
            ));
        }
        for (name, r) in [
            ("stage1_mlp_ratio", self.stage1_mlp_ratio),
            ("stage2_mlp_ratio", self.stage2_mlp_ratio),
        ] {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("{name} must be positive, got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&self.drop_path_rate) {
            return bad(format!("drop_path_rate {} outside [0, 1]", self.drop_path_rate));
        }
        check_resolution(self, self.image_size)?;
        let mut warnings = Vec::new();
        if 2 * self.stage1_dim != self.stage2_dim {
            warnings.push(format!(
                "stage1_dim {} is not half of stage2_dim {}",
                self.stage1_dim, self.stage2_dim
            ));
        }
        Ok(warnings)
    }
}

fn check_resolution(c: &ModelConfig, resolution: usize) -> Result<()> {
    if resolution == 0 || !resolution.is_multiple_of(c.patch_size) {
        return Err(TensorError::Geometry(format!(
            "resolution {resolution} must be a positive multiple of the patch size {}",
            c.patch_size
        )));
    }
    let grid = c.stage1_grid(resolution);
    if !grid.is_multiple_of(c.downsample_patch) {
        return Err(TensorError::Geometry(format!(
            "stage-1 grid {grid} must be divisible by the downsample patch {}",
            c.downsample_patch
        )));
    }
    Ok(())
}

/// Published size of one named variant, used to report deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceTarget {
    pub name: &'static str,
    pub outlookers: usize,
    pub transformers: usize,
    pub stage1_heads: usize,
    pub stage2_heads: usize,
    pub stage1_dim: usize,
    pub stage2_dim: usize,
    pub mlp_ratio: f64,
    pub kernel_size: usize,
    pub stride: usize,
    pub total_layers: usize,
    pub params_millions: f64,
    pub madds_billions: f64,
}

pub const REFERENCE_TARGETS: [ReferenceTarget; 5] = [
    ReferenceTarget {
        name: "d1",
        outlookers: 4,
        transformers: 14,
        stage1_heads: 6,
        stage2_heads: 12,
        stage1_dim: 192,
        stage2_dim: 384,
        mlp_ratio: 3.0,
        kernel_size: 3,
        stride: 2,
        total_layers: 18,
        params_millions: 26.6,
        madds_billions: 6.8,
    },
    ReferenceTarget {
        name: "d2",
        outlookers: 6,
        transformers: 18,
        stage1_heads: 8,
        stage2_heads: 16,
        stage1_dim: 256,
        stage2_dim: 512,
        mlp_ratio: 3.0,
        kernel_size: 3,
        stride: 2,
        total_layers: 24,
        params_millions: 58.7,
        madds_billions: 14.1,
    },
    ReferenceTarget {
        name: "d3",
        outlookers: 8,
        transformers: 28,
        stage1_heads: 8,
        stage2_heads: 16,
        stage1_dim: 256,
        stage2_dim: 512,
        mlp_ratio: 3.0,
        kernel_size: 3,
        stride: 2,
        total_layers: 36,
        params_millions: 86.3,
        madds_billions: 20.6,
    },
    ReferenceTarget {
        name: "d4",
        outlookers: 8,
        transformers: 28,
        stage1_heads: 12,
        stage2_heads: 16,
        stage1_dim: 384,
        stage2_dim: 768,
        mlp_ratio: 3.0,
        kernel_size: 3,
        stride: 2,
        total_layers: 36,
        params_millions: 193.0,
        madds_billions: 43.8,
    },
    ReferenceTarget {
        name: "d5",
        outlookers: 12,
        transformers: 36,
        stage1_heads: 12,
        stage2_heads: 16,
        stage1_dim: 384,
        stage2_dim: 768,
        mlp_ratio: 4.0,
        kernel_size: 3,
        stride: 2,
        total_layers: 48,
        params_millions: 296.0,
        madds_billions: 69.0,
    },
];

pub fn reference_target(name: &str) -> Option<&'static ReferenceTarget> {
    REFERENCE_TARGETS.iter().find(|t| t.name.eq_ignore_ascii_case(name))
}

/// Non-overlapping `p x p` patch projection `[B, H, W, C] -> [B, H/p, W/p, C']`.
#[derive(Debug, Clone)]
pub struct PatchEmbed<T> {
    pub patch: usize,
    pub proj: Linear<T>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, patch: usize, input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            patch,
            proj: Linear::new(name, patch * patch * input, output, true, rng),
        }
    }

    pub fn forward<'t>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let p = self.patch;
        if s.len() != 4 {
            return Err(TensorError::InvalidArgument(format!(
                "patch embedding expects [B, H, W, C], got {s:?}"
            )));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        if h % p != 0 || w % p != 0 {
            return Err(TensorError::Geometry(format!(
                "token map {h}x{w} is not divisible by the {p}x{p} patch"
            )));
        }
        if c * p * p != self.proj.input_dim() {
            return Err(TensorError::shape("patch_embed", &s, &[self.proj.input_dim() / (p * p)]));
        }
        let patches = x
            .reshape(&[b, h / p, p, w / p, p, c])?
            .permute(&[0, 1, 3, 2, 4, 5])?
            .reshape(&[b, h / p, w / p, p * p * c])?;
        self.proj.forward(patches)
    }
}

impl<T: Scalar> Module<T> for PatchEmbed<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj.visit_params_mut(f);
    }
}

/// Three convolutions (7x7 stride 2, then two 3x3), each followed by
/// LayerNorm and ReLU, then a patch projection to the stage-1 width.
#[derive(Debug, Clone)]
pub struct Stem<T> {
    pub convs: Vec<(Conv2d<T>, LayerNorm<T>)>,
    pub proj: PatchEmbed<T>,
}

impl<T: Scalar> Stem<T> {
    pub fn new<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = c.stem_dim;
        let convs = vec![
            (Conv2d::new("stem.conv1", 7, 2, 3, d, false, rng)?, LayerNorm::new("stem.norm1", d)),
            (Conv2d::new("stem.conv2", 3, 1, d, d, false, rng)?, LayerNorm::new("stem.norm2", d)),
            (Conv2d::new("stem.conv3", 3, 1, d, d, false, rng)?, LayerNorm::new("stem.norm3", d)),
        ];
        Ok(Self {
            convs,
            proj: PatchEmbed::new("stem.proj", c.patch_size / 2, d, c.stage1_dim, rng),
        })
    }

    pub fn forward<'t>(&self, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut x = images;
        for (conv, norm) in &self.convs {
            x = norm.forward(conv.forward(x)?)?.relu();
        }
        self.proj.forward(x)
    }
}

impl<T: Scalar> Module<T> for Stem<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        for (conv, norm) in &self.convs {
            conv.visit_params(f);
            norm.visit_params(f);
        }
        self.proj.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for (conv, norm) in &mut self.convs {
            conv.visit_params_mut(f);
            norm.visit_params_mut(f);
        }
        self.proj.visit_params_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct VoloModel<T> {
    pub config: ModelConfig,
    pub stage1_kind: MixerKind,
    pub stem: Stem<T>,
    pub stage1: Vec<OutlookerBlock<T>>,
    pub downsample: PatchEmbed<T>,
    /// `[grid, grid, C2]`, added to the stage-2 token map.
    pub pos_embed: Param<T>,
    pub stage2: Vec<TransformerBlock<T>>,
    /// `[1, C2]`
    pub class_token: Param<T>,
    pub class_attention: Vec<ClassAttentionBlock<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> VoloModel<T> {
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        Self::build_with_mixer(config, MixerKind::Oa, rng)
    }

    pub fn from_seed(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Builds the network with `kind` as the fine-stage token mixer.
    pub fn build_with_mixer<R: Rng + ?Sized>(config: &ModelConfig, kind: MixerKind, rng: &mut R) -> Result<Self> {
        let c = *config;
        c.validate()?;
        let rates = drop_path_schedule(c.drop_path_rate, c.total_layers());
        let stem = Stem::new(&c, rng)?;
        let stage1 = (0..c.stage1_layers)
            .map(|i| {
                OutlookerBlock::new(
                    kind,
                    c.stage1_dim,
                    c.stage1_heads,
                    c.kernel_size,
                    c.stride,
                    c.stage1_mlp_ratio,
                    rates[i],
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let downsample = PatchEmbed::new("downsample", c.downsample_patch, c.stage1_dim, c.stage2_dim, rng);
        let grid = c.stage2_grid(c.image_size);
        let pos_embed = Param::trunc_normal("pos_embed", &[grid, grid, c.stage2_dim], INIT_STD, rng);
        let stage2 = (0..c.stage2_layers)
            .map(|i| {
                TransformerBlock::new(
                    c.stage2_dim,
                    c.stage2_heads,
                    c.stage2_mlp_ratio,
                    rates[c.stage1_layers + i],
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let class_token = Param::trunc_normal("class_token", &[1, c.stage2_dim], INIT_STD, rng);
        let class_attention = (0..c.class_attention_layers)
            .map(|_| ClassAttentionBlock::new(c.stage2_dim, c.stage2_heads, c.stage2_mlp_ratio, 0.0, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: c,
            stage1_kind: kind,
            stem,
            stage1,
            downsample,
            pos_embed,
            stage2,
            class_token,
            class_attention,
            norm: LayerNorm::new("norm", c.stage2_dim),
            head: Linear::new("head", c.stage2_dim, c.num_classes, true, rng),
        })
    }

    pub fn count_params(&self) -> usize {
        self.num_params()
    }

    fn check_images(&self, s: &[usize]) -> Result<()> {
        if s.len() != 4 || s[3] != 3 {
            return Err(TensorError::InvalidArgument(format!(
                "images must be [B, H, W, 3], got {s:?}"
            )));
        }
        check_resolution(&self.config, s[1])?;
        check_resolution(&self.config, s[2])?;
        Ok(())
    }

    /// `[B, H, W, 3] -> [B, H/8, W/8, C1]`
    pub fn stem_forward<'t>(&self, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = images.shape();
        if s.len() != 4 || !s[1].is_multiple_of(self.config.patch_size) || !s[2].is_multiple_of(self.config.patch_size) {
            return Err(TensorError::Geometry(format!(
                "image extents {s:?} must be multiples of the patch size {}",
                self.config.patch_size
            )));
        }
        self.stem.forward(images)
    }

    /// `[B, h, w, C1] -> [B, h/2, w/2, C2]`
    pub fn downsample_forward<'t>(&self, tokens: Var<'t, T>) -> Result<Var<'t, T>> {
        self.downsample.forward(tokens)
    }

    /// Class logits `[B, classes]`.
    pub fn forward<'t>(&self, images: Var<'t, T>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t, T>> {
        let s = images.shape();
        self.check_images(&s)?;
        let tape = images.tape();
        let mut x = self.stem_forward(images)?;
        for block in &self.stage1 {
            x = block.forward(x, ctx)?;
        }
        let x = self.downsample_forward(x)?;
        let xs = x.shape();
        if xs[1..3] != self.pos_embed.value.shape()[..2] {
            return Err(TensorError::Geometry(format!(
                "stage-2 grid {}x{} does not match the positional embedding grid {:?}",
                xs[1],
                xs[2],
                &self.pos_embed.value.shape()[..2]
            )));
        }
        let (b, dim) = (xs[0], xs[3]);
        let mut x = x.add(tape.param(&self.pos_embed))?.reshape(&[b, xs[1] * xs[2], dim])?;
        for block in &self.stage2 {
            x = block.forward(x, ctx)?;
        }
        let mut cls = tape
            .constant(crate::tensor::Tensor::zeros(&[b, 1, dim]))
            .add(tape.param(&self.class_token))?;
        for block in &self.class_attention {
            cls = block.update_class_token(cls, x, ctx)?;
        }
        let cls = self.norm.forward(cls)?.reshape(&[b, dim])?;
        self.head.forward(cls)
    }
}

impl<T: Scalar> Module<T> for VoloModel<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit_params(f);
        self.stage1.visit_params(f);
        self.downsample.visit_params(f);
        f(&self.pos_embed);
        self.stage2.visit_params(f);
        f(&self.class_token);
        self.class_attention.visit_params(f);
        self.norm.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_params_mut(f);
        self.stage1.visit_params_mut(f);
        self.downsample.visit_params_mut(f);
        f(&mut self.pos_embed);
        self.stage2.visit_params_mut(f);
        f(&mut self.class_token);
        self.class_attention.visit_params_mut(f);
        self.norm.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

/// Per-part totals, either parameters or multiply-adds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub stem: u64,
    pub stage1: u64,
    pub downsample: u64,
    pub stage2: u64,
    pub class_attention: u64,
    pub head: u64,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.stem + self.stage1 + self.downsample + self.stage2 + self.class_attention + self.head
    }
}

fn hidden(dim: usize, ratio: f64) -> u64 {
    (dim as f64 * ratio).round() as u64
}

fn mlp_params(c: u64, h: u64) -> u64 {
    c * h + h + h * c + c
}

/// Parameters of one fine-stage token mixer.
pub fn mixer_params(kind: MixerKind, c: u64, heads: u64, k: u64) -> u64 {
    match kind {
        MixerKind::Oa => {
            let a = heads * k.pow(4);
            c * c + (c * a + a) + (c * c + c)
        }
        MixerKind::Lsa | MixerKind::Sa => 3 * c * c + c * c + c,
        MixerKind::Conv => k * k * c * c + c,
    }
}

/// Exact parameter count without allocating any weights.
pub fn param_breakdown(config: &ModelConfig, kind: MixerKind) -> Breakdown {
    let c = config;
    let (c1, c2, sd) = (c.stage1_dim as u64, c.stage2_dim as u64, c.stem_dim as u64);
    let p = (c.patch_size / 2) as u64;
    let stem = 49 * 3 * sd + 2 * sd + 2 * (9 * sd * sd + 2 * sd) + p * p * sd * c1 + c1;
    let outlooker = 4 * c1
        + mixer_params(kind, c1, c.stage1_heads as u64, c.kernel_size as u64)
        + mlp_params(c1, hidden(c.stage1_dim, c.stage1_mlp_ratio));
    let d = c.downsample_patch as u64;
    let grid = c.stage2_grid(c.image_size) as u64;
    let mlp2 = mlp_params(c2, hidden(c.stage2_dim, c.stage2_mlp_ratio));
    let attn2 = 4 * c2 * c2 + c2;
    Breakdown {
        stem,
        stage1: c.stage1_layers as u64 * outlooker,
        downsample: d * d * c1 * c2 + c2 + grid * grid * c2,
        stage2: c.stage2_layers as u64 * (4 * c2 + attn2 + mlp2),
        class_attention: c2 + c.class_attention_layers as u64 * (4 * c2 + attn2 + mlp2),
        head: 2 * c2 + c2 * c.num_classes as u64 + c.num_classes as u64,
    }
}

pub fn param_count(config: &ModelConfig) -> u64 {
    param_breakdown(config, MixerKind::Oa).total()
}

/// Multiply-adds of one fine-stage mixer on an `h x w` map, with the
/// attention-generation and aggregation terms taken over the strided
/// window grid.
pub fn mixer_madds(kind: MixerKind, config: &ModelConfig, h: u64, w: u64) -> u64 {
    let (c, n, k) = (config.stage1_dim as u64, config.stage1_heads as u64, config.kernel_size as u64);
    let s = config.stride as u64;
    match kind {
        MixerKind::Oa => {
            let windows = h.div_ceil(s) * w.div_ceil(s);
            2 * h * w * c * c + windows * c * n * k.pow(4) + windows * k * k * c
        }
        _ => CostQuery { h, w, c, k, n }.madds(kind),
    }
}

/// Multiply-adds of a forward pass on one `resolution x resolution` image.
/// Only matrix products are counted; normalization, activations and
/// softmax are not.
pub fn madds_breakdown(config: &ModelConfig, kind: MixerKind, resolution: usize) -> Result<Breakdown> {
    let c = config;
    check_resolution(c, resolution)?;
    let (c1, c2, sd) = (c.stage1_dim as u64, c.stage2_dim as u64, c.stem_dim as u64);
    let r = resolution as u64;
    let r1 = r.div_ceil(2);
    let p = (c.patch_size / 2) as u64;
    let g1 = c.stage1_grid(resolution) as u64;
    let tokens1 = g1 * g1;
    let stem = r1 * r1 * 49 * 3 * sd + 2 * r1 * r1 * 9 * sd * sd + tokens1 * p * p * sd * c1;
    let h1 = hidden(c.stage1_dim, c.stage1_mlp_ratio);
    let outlooker = mixer_madds(kind, c, g1, g1) + 2 * tokens1 * c1 * h1;
    let d = c.downsample_patch as u64;
    let g2 = g1 / d;
    let l = g2 * g2;
    let h2 = hidden(c.stage2_dim, c.stage2_mlp_ratio);
    let sa = CostQuery { h: g2, w: g2, c: c2, k: 1, n: c.stage2_heads as u64 }.madds(MixerKind::Sa);
    let transformer = sa + 2 * l * c2 * h2;
    let l1 = l + 1;
    let class_block = c2 * c2 + 2 * l1 * c2 * c2 + 2 * l1 * c2 + c2 * c2 + 2 * c2 * h2;
    Ok(Breakdown {
        stem,
        stage1: c.stage1_layers as u64 * outlooker,
        downsample: l * d * d * c1 * c2,
        stage2: c.stage2_layers as u64 * transformer,
        class_attention: c.class_attention_layers as u64 * class_block,
        head: c2 * c.num_classes as u64,
    })
}

pub fn analytic_madds(config: &ModelConfig, resolution: usize) -> Result<u64> {
    Ok(madds_breakdown(config, MixerKind::Oa, resolution)?.total())
}
