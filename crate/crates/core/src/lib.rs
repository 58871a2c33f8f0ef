//! Multi-view building classification with a latent-bottleneck fusion model.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks); `Tensor32`/`Tensor64` name the two instantiations.

pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod perceiver;
pub mod rollout;
pub mod sample;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod taxonomy;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use attention::{scaled_dot_product_attention, AttnWeights};
pub use baselines::{ConcatConfig, ConcatModel, FvtConfig, FvtModel, PoolMode, UnimodalConfig, UnimodalModel};
pub use checkpoint::{AnyModel, ModelSpec};
pub use error::{Error, Result};
pub use image::{BinaryMask, Image};
pub use masking::{apply_masking, MaskingStrategy};
pub use metrics::{average_precision, EvalReport};
pub use model::{BackboneConfig, Checkpoint, Classifier, Logits, ModelKind};
pub use params::{Graph, ParamGroup, ParamId, ParamStore};
pub use perceiver::{AttentionTrace, PerceiverConfig, PerceiverModel};
pub use rollout::attention_rollout;
pub use sample::{BuildingSample, InputSpec, PreparedSample, View};
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use taxonomy::Labels;
pub use tensor::Tensor;
pub use training::{fit, TrainConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
