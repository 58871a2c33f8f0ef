//! Latent-bottleneck fusion: learned latents read the token sequence via
//! cross-attention, are refined by a shared self-attention block, and are
//! read out by a single learned query.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::attention::mean_over_heads;
use crate::error::{Error, Result};
use crate::model::{take_words, Backbone, BackboneConfig, Classifier, Heads, Logits, ModelKind};
use crate::nn::{CrossAttention, TransformerLayer};
use crate::params::{Graph, ParamGroup, ParamId, ParamStore};
use crate::sample::PreparedSample;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenizer::{augment_tokens, view_meta, EmbeddingTables, TokenSequence};

pub const PERCEIVER_MAGIC: [u8; 4] = *b"LFZ1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceiverConfig {
    pub backbone: BackboneConfig,
    /// Latent count `N_z`.
    pub num_latents: usize,
    /// Latent width `D_z`.
    pub latent_dim: usize,
    /// Applications `B` of the shared block.
    pub blocks: usize,
    /// Self-attention layers `L` inside the block.
    pub layers: usize,
    /// Decoded embedding width `D_out`.
    pub out_dim: usize,
    pub mlp_ratio: usize,
    pub latent_heads: usize,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            num_latents: 16,
            latent_dim: 64,
            blocks: 2,
            layers: 2,
            out_dim: 64,
            mlp_ratio: 4,
            latent_heads: 4,
        }
    }
}

impl PerceiverConfig {
    pub const WORDS: usize = BackboneConfig::WORDS + 7;

    /// Same config with `N_z`/`D_z` replaced; `D_out` follows `D_z`, and the
    /// head count drops until it divides `D_z`.
    pub fn with_latents(mut self, num_latents: usize, latent_dim: usize) -> Self {
        self.num_latents = num_latents;
        self.latent_dim = latent_dim;
        self.out_dim = latent_dim;
        while self.latent_heads > 1 && !latent_dim.is_multiple_of(self.latent_heads) {
            self.latent_heads -= 1;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_latents == 0 || self.latent_dim == 0 || self.out_dim == 0 {
            return Err(Error::config("latent count, latent width and output width must be positive"));
        }
        if self.blocks > 0 && self.layers == 0 {
            return Err(Error::config("a refinement block needs at least one layer"));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("MLP ratio must be positive"));
        }
        if self.latent_heads == 0 || !self.latent_dim.is_multiple_of(self.latent_heads) {
            return Err(Error::config(format!(
                "{} latent heads do not divide latent width {}",
                self.latent_heads, self.latent_dim
            )));
        }
        Ok(())
    }

    pub fn words(&self) -> Vec<u32> {
        let mut w = self.backbone.words();
        w.extend(
            [
                self.num_latents,
                self.latent_dim,
                self.blocks,
                self.layers,
                self.out_dim,
                self.mlp_ratio,
                self.latent_heads,
            ]
            .iter()
            .map(|&v| v as u32),
        );
        w
    }

    pub fn from_words(w: &[u32]) -> Result<Self> {
        let backbone = BackboneConfig::from_words(w)?;
        let [num_latents, latent_dim, blocks, layers, out_dim, mlp_ratio, latent_heads] =
            take_words(&w[BackboneConfig::WORDS..])?;
        Ok(Self { backbone, num_latents, latent_dim, blocks, layers, out_dim, mlp_ratio, latent_heads })
    }
}

/// Attention maps recorded during one forward pass, heads averaged.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `[N_z, T]`.
    pub encoder: Option<Tensor<f64>>,
    /// `B·L` maps of shape `[N_z, N_z]`, in application order.
    pub latent: Vec<Tensor<f64>>,
    /// `[1, N_z]`.
    pub decoder: Option<Tensor<f64>>,
    /// Latent maps a complete trace must hold.
    pub expected_latent: usize,
    /// View index of every input token.
    pub token_views: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PerceiverOutput {
    pub logits: Logits,
    pub trace: AttentionTrace,
    /// Shape of the latent array after encoding.
    pub latent_shape: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct PerceiverNet {
    pub backbone: Backbone,
    pub embed: EmbeddingTables,
    pub latents: ParamId,
    pub encoder: CrossAttention,
    /// One block of `L` layers, applied `B` times.
    pub block: Vec<TransformerLayer>,
    pub query: ParamId,
    pub decoder: CrossAttention,
    pub heads: Heads,
}

#[derive(Debug, Clone)]
pub struct PerceiverModel<T> {
    pub config: PerceiverConfig,
    pub net: PerceiverNet,
    pub params: ParamStore<T>,
}

impl<T: Scalar> PerceiverModel<T> {
    pub fn new(config: PerceiverConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let b = config.backbone;
        let (d, dz) = (b.token_dim, config.latent_dim);
        let backbone = Backbone::new(&mut store, b, &mut rng)?;
        let embed = EmbeddingTables::new(&mut store, b.grid(), d, &mut rng);
        let latents = store.add_normal("latents", &[config.num_latents, dz], ParamGroup::Heads, &mut rng);
        let encoder = CrossAttention::new(&mut store, "encoder", dz, d, dz, d == dz, &mut rng);
        let block_layers = if config.blocks == 0 { 0 } else { config.layers };
        let block = (0..block_layers)
            .map(|l| {
                TransformerLayer::new(&mut store, &format!("block.{l}"), dz, config.latent_heads, config.mlp_ratio, &mut rng)
            })
            .collect();
        let query = store.add_normal("query", &[1, dz], ParamGroup::Heads, &mut rng);
        let decoder = CrossAttention::new(&mut store, "decoder", dz, dz, config.out_dim, true, &mut rng);
        let heads = Heads::new(&mut store, config.out_dim, &mut rng);
        let net = PerceiverNet { backbone, embed, latents, encoder, block, query, decoder, heads };
        Ok(Self { config, net, params: store })
    }

    /// Patch tokens of every view with all three embeddings added.
    pub fn embed_tokens(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<TokenSequence> {
        let grid = self.config.backbone.grid();
        let tokens = self.net.backbone.tokens(g, x)?;
        let meta = x.views().flat_map(|v| view_meta(v.view_index, v.modality, grid)).collect();
        augment_tokens(g, &TokenSequence { tokens, meta }, &self.net.embed)
    }

    pub fn forward_traced(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<PerceiverOutput> {
        let seq = self.embed_tokens(g, x)?;
        self.forward_tokens(g, &seq)
    }

    /// Encoder, shared refinement, decoder and heads over an embedded sequence.
    pub fn forward_tokens(&self, g: &mut Graph<'_, T>, seq: &TokenSequence) -> Result<PerceiverOutput> {
        if seq.is_empty() {
            return Err(Error::contract("perceiver input sequence is empty"));
        }
        let net = &self.net;
        let zq = g.param(net.latents);
        let (mut z, enc) = net.encoder.forward(g, zq, seq.tokens)?;
        let latent_shape = {
            let s = g.value(z).shape();
            [s[0], s[1]]
        };
        let mut latent = Vec::with_capacity(self.config.blocks * net.block.len());
        for _ in 0..self.config.blocks {
            for layer in &net.block {
                let (next, w) = layer.forward(g, z)?;
                latent.push(mean_over_heads(&w).cast());
                z = next;
            }
        }
        let q = g.param(net.query);
        let (y, dec) = net.decoder.forward(g, q, z)?;
        let logits = net.heads.forward(g, y)?;
        let trace = AttentionTrace {
            encoder: Some(mean_over_heads(&enc).cast()),
            expected_latent: self.config.blocks * self.config.layers,
            latent,
            decoder: Some(mean_over_heads(&dec).cast()),
            token_views: seq.meta.iter().map(|m| m.view_index).collect(),
        };
        Ok(PerceiverOutput { logits, trace, latent_shape })
    }
}

impl<T: Scalar> Classifier<T> for PerceiverModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Perceiver
    }

    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits> {
        Ok(self.forward_traced(g, x)?.logits)
    }

    fn magic(&self) -> [u8; 4] {
        PERCEIVER_MAGIC
    }

    fn config_words(&self) -> Vec<u32> {
        self.config.words()
    }
}
