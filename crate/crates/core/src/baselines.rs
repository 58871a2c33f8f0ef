//! Comparison architectures: single-modality pooling models, late
//! concatenation, and a small transformer over per-view feature vectors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{take_words, view_features, Backbone, BackboneConfig, Classifier, Heads, Logits, ModelKind};
use crate::nn::TransformerLayer;
use crate::params::{Graph, ParamGroup, ParamId, ParamStore};
use crate::sample::{PreparedSample, PreparedView};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tokenizer::PatchTokenizer;

pub const UNIMODAL_MAGIC: [u8; 4] = *b"LFU1";
pub const CONCAT_MAGIC: [u8; 4] = *b"LFC1";
pub const FVT_MAGIC: [u8; 4] = *b"LFT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Mean,
    Attention,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Max => "max",
            PoolMode::Mean => "mean",
            PoolMode::Attention => "attention",
        }
    }

    fn word(self) -> u32 {
        match self {
            PoolMode::Max => 0,
            PoolMode::Mean => 1,
            PoolMode::Attention => 2,
        }
    }

    fn from_word(w: usize) -> Result<Self> {
        match w {
            0 => Ok(PoolMode::Max),
            1 => Ok(PoolMode::Mean),
            2 => Ok(PoolMode::Attention),
            _ => Err(Error::config(format!("unknown pooling code {w}"))),
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(PoolMode::Max),
            "mean" => Ok(PoolMode::Mean),
            "attention" | "attn" => Ok(PoolMode::Attention),
            other => Err(Error::config(format!("unknown pooling mode `{other}`"))),
        }
    }
}

/// Pools `[n, D]` view features into one `[1, D]` vector.
///
/// Attention mode scores each row against `scorer` (`[D, 1]`) and returns
/// the softmax-weighted sum.
pub fn pool_views<T: Scalar>(
    g: &mut Graph<'_, T>,
    features: Var,
    mode: PoolMode,
    scorer: Option<ParamId>,
) -> Result<Var> {
    let n = g.value(features).rows();
    if n == 0 {
        return Err(Error::contract("pooling over zero views"));
    }
    match mode {
        PoolMode::Max => g.tape.max_rows(features),
        PoolMode::Mean => g.tape.mean_rows(features),
        PoolMode::Attention => {
            let scorer = scorer.ok_or_else(|| Error::config("attention pooling needs a scoring vector"))?;
            let s = g.param(scorer);
            let logits = g.tape.matmul(features, s)?;
            let logits = g.tape.transpose(logits)?;
            let w = g.tape.softmax_rows(logits)?;
            g.tape.matmul(w, features)
        }
    }
}

/// Pools a list of `[1, D]` feature vectors.
pub fn pool_feature_list<T: Scalar>(
    g: &mut Graph<'_, T>,
    features: &[Var],
    mode: PoolMode,
    scorer: Option<ParamId>,
) -> Result<Var> {
    if features.is_empty() {
        return Err(Error::contract("pooling over zero views"));
    }
    let stacked = g.tape.concat_rows(features)?;
    pool_views(g, stacked, mode, scorer)
}

fn add_scorer<T: Scalar, R: Rng>(store: &mut ParamStore<T>, mode: PoolMode, dim: usize, rng: &mut R) -> Option<ParamId> {
    (mode == PoolMode::Attention).then(|| store.add_normal("pool.scorer", &[dim, 1], ParamGroup::Heads, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Satellite,
    Street,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnimodalConfig {
    pub backbone: BackboneConfig,
    pub branch: Branch,
    pub pool: PoolMode,
}

impl UnimodalConfig {
    pub const WORDS: usize = BackboneConfig::WORDS + 2;

    pub fn words(&self) -> Vec<u32> {
        let mut w = self.backbone.words();
        w.push(match self.branch {
            Branch::Satellite => 0,
            Branch::Street => 1,
        });
        w.push(self.pool.word());
        w
    }

    pub fn from_words(w: &[u32]) -> Result<Self> {
        let backbone = BackboneConfig::from_words(w)?;
        let [branch, pool] = take_words(&w[BackboneConfig::WORDS..])?;
        let branch = match branch {
            0 => Branch::Satellite,
            1 => Branch::Street,
            b => return Err(Error::config(format!("unknown branch code {b}"))),
        };
        Ok(Self { backbone, branch, pool: PoolMode::from_word(pool)? })
    }
}

/// One modality only: mean-pooled tokens per view, pooled across views for
/// the street branch, then the two heads.
#[derive(Debug, Clone)]
pub struct UnimodalModel<T> {
    pub config: UnimodalConfig,
    pub tokenizer: PatchTokenizer,
    pub scorer: Option<ParamId>,
    pub heads: Heads,
    pub params: ParamStore<T>,
}

impl<T: Scalar> UnimodalModel<T> {
    pub fn new(config: UnimodalConfig, seed: u64) -> Result<Self> {
        config.backbone.validate()?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = config.backbone;
        let channels = match config.branch {
            Branch::Satellite => b.sat_channels,
            Branch::Street => b.street_channels,
        };
        let tokenizer = PatchTokenizer::new(&mut store, "tokenizer", channels, b.patch_size, b.token_dim, &mut rng);
        let scorer = match config.branch {
            Branch::Street => add_scorer(&mut store, config.pool, b.token_dim, &mut rng),
            Branch::Satellite => None,
        };
        let heads = Heads::new(&mut store, b.token_dim, &mut rng);
        Ok(Self { config, tokenizer, scorer, heads, params: store })
    }
}

impl<T: Scalar> Classifier<T> for UnimodalModel<T> {
    fn kind(&self) -> ModelKind {
        match self.config.branch {
            Branch::Satellite => ModelKind::Satellite,
            Branch::Street => ModelKind::Street,
        }
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn check_input(&self, x: &PreparedSample<T>) -> Result<()> {
        if self.config.branch == Branch::Street && x.street.is_empty() {
            return Err(Error::contract(format!(
                "street-only model needs at least one street view, segment {} has N=0",
                x.segment_id
            )));
        }
        Ok(())
    }

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits> {
        self.check_input(x)?;
        let y = match self.config.branch {
            Branch::Satellite => view_features(g, &self.tokenizer, &[&x.satellite])?,
            Branch::Street => {
                let views: Vec<&PreparedView<T>> = x.street.iter().collect();
                let f = view_features(g, &self.tokenizer, &views)?;
                pool_views(g, f, self.config.pool, self.scorer)?
            }
        };
        self.heads.forward(g, y)
    }

    fn magic(&self) -> [u8; 4] {
        UNIMODAL_MAGIC
    }

    fn config_words(&self) -> Vec<u32> {
        self.config.words()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatConfig {
    pub backbone: BackboneConfig,
    pub pool: PoolMode,
}

impl ConcatConfig {
    pub const WORDS: usize = BackboneConfig::WORDS + 1;

    pub fn words(&self) -> Vec<u32> {
        let mut w = self.backbone.words();
        w.push(self.pool.word());
        w
    }

    pub fn from_words(w: &[u32]) -> Result<Self> {
        let backbone = BackboneConfig::from_words(w)?;
        let [pool] = take_words(&w[BackboneConfig::WORDS..])?;
        Ok(Self { backbone, pool: PoolMode::from_word(pool)? })
    }
}

/// `heads([satellite ; pooled street])`, with a learned placeholder standing
/// in for the street half when there are no street views.
#[derive(Debug, Clone)]
pub struct ConcatModel<T> {
    pub config: ConcatConfig,
    pub backbone: Backbone,
    pub placeholder: ParamId,
    pub scorer: Option<ParamId>,
    pub heads: Heads,
    pub params: ParamStore<T>,
}

impl<T: Scalar> ConcatModel<T> {
    pub fn new(config: ConcatConfig, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.backbone.token_dim;
        let backbone = Backbone::new(&mut store, config.backbone, &mut rng)?;
        let placeholder = store.add_normal("placeholder", &[1, d], ParamGroup::Heads, &mut rng);
        let scorer = add_scorer(&mut store, config.pool, d, &mut rng);
        let heads = Heads::new(&mut store, 2 * d, &mut rng);
        Ok(Self { config, backbone, placeholder, scorer, heads, params: store })
    }

    /// The `[1, 2D]` fused vector fed to the heads.
    pub fn fused(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Var> {
        let sat = view_features(g, &self.backbone.satellite, &[&x.satellite])?;
        let street = if x.street.is_empty() {
            g.param(self.placeholder)
        } else {
            let views: Vec<&PreparedView<T>> = x.street.iter().collect();
            let f = view_features(g, self.backbone.street_tokenizer(), &views)?;
            pool_views(g, f, self.config.pool, self.scorer)?
        };
        g.tape.concat_cols(&[sat, street])
    }
}

impl<T: Scalar> Classifier<T> for ConcatModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Concat
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits> {
        let y = self.fused(g, x)?;
        self.heads.forward(g, y)
    }

    fn magic(&self) -> [u8; 4] {
        CONCAT_MAGIC
    }

    fn config_words(&self) -> Vec<u32> {
        self.config.words()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FvtConfig {
    pub backbone: BackboneConfig,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for FvtConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::default(), layers: 2, heads: 8, mlp_ratio: 4 }
    }
}

impl FvtConfig {
    pub const WORDS: usize = BackboneConfig::WORDS + 3;

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.layers == 0 {
            return Err(Error::config("feature-vector transformer needs at least one layer"));
        }
        if self.heads == 0 || !self.backbone.token_dim.is_multiple_of(self.heads) || self.mlp_ratio == 0 {
            return Err(Error::config(format!(
                "{} heads do not divide token width {}",
                self.heads, self.backbone.token_dim
            )));
        }
        Ok(())
    }

    pub fn words(&self) -> Vec<u32> {
        let mut w = self.backbone.words();
        w.extend([self.layers as u32, self.heads as u32, self.mlp_ratio as u32]);
        w
    }

    pub fn from_words(w: &[u32]) -> Result<Self> {
        let backbone = BackboneConfig::from_words(w)?;
        let [layers, heads, mlp_ratio] = take_words(&w[BackboneConfig::WORDS..])?;
        Ok(Self { backbone, layers, heads, mlp_ratio })
    }
}

/// Transformer encoder over `[CLS, satellite, street_1..N]` feature vectors
/// with modality embeddings only; the CLS output feeds the heads.
#[derive(Debug, Clone)]
pub struct FvtModel<T> {
    pub config: FvtConfig,
    pub backbone: Backbone,
    pub cls: ParamId,
    pub modality: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub heads: Heads,
    pub params: ParamStore<T>,
}

impl<T: Scalar> FvtModel<T> {
    pub fn new(config: FvtConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.backbone.token_dim;
        let backbone = Backbone::new(&mut store, config.backbone, &mut rng)?;
        let cls = store.add_normal("cls", &[1, d], ParamGroup::Heads, &mut rng);
        let modality = store.add_normal("embed.modality", &[2, d], ParamGroup::Heads, &mut rng);
        let layers = (0..config.layers)
            .map(|l| TransformerLayer::new(&mut store, &format!("layer.{l}"), d, config.heads, config.mlp_ratio, &mut rng))
            .collect();
        let heads = Heads::new(&mut store, d, &mut rng);
        Ok(Self { config, backbone, cls, modality, layers, heads, params: store })
    }

    /// Transformer output at the CLS position, `[1, D]`.
    pub fn cls_output(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Var> {
        let modality = g.param(self.modality);
        let sat_mod = g.tape.slice_rows(modality, 0, 1)?;
        let street_mod = g.tape.slice_rows(modality, 1, 1)?;
        let sat = view_features(g, &self.backbone.satellite, &[&x.satellite])?;
        let sat = g.tape.add(sat, sat_mod)?;
        let cls = g.param(self.cls);
        let mut parts = vec![cls, sat];
        if !x.street.is_empty() {
            let views: Vec<&PreparedView<T>> = x.street.iter().collect();
            let f = view_features(g, self.backbone.street_tokenizer(), &views)?;
            parts.push(g.tape.add_row(f, street_mod)?);
        }
        let mut h = g.tape.concat_rows(&parts)?;
        for layer in &self.layers {
            h = layer.forward(g, h)?.0;
        }
        g.tape.slice_rows(h, 0, 1)
    }
}

impl<T: Scalar> Classifier<T> for FvtModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Fvt
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits> {
        let y = self.cls_output(g, x)?;
        self.heads.forward(g, y)
    }

    fn magic(&self) -> [u8; 4] {
        FVT_MAGIC
    }

    fn config_words(&self) -> Vec<u32> {
        self.config.words()
    }
}
