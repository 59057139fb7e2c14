//! Outlook attention and the VOLO family of vision models, on a small
//! reverse-mode autodiff engine over dense channels-last tensors.

pub mod attention;
pub mod blocks;
pub mod cost;
pub mod data;
pub mod counter;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod ops;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod window;

pub use attention::{Conv2d, LocalSelfAttention, OutlookAttention, SelfAttention};
pub use blocks::{ClassAttentionBlock, ForwardCtx, Mlp, OutlookerBlock, TokenMixer, TransformerBlock};
pub use cost::{CostQuery, MixerKind};
pub use counter::MAddCounter;
pub use error::{Result, TensorError};
pub use param::{Module, Param, ParamKey};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
pub use window::{fold, unfold, WindowGeometry};
pub use model::{analytic_madds, param_count, ModelConfig, VoloModel};
