//! What every classifier shares: the patch backbone, the two logit heads,
//! and the checkpoint container.
//!
//! Checkpoint layout: 4-byte architecture magic, the architecture's config
//! as little-endian u32 words, a little-endian u64 count of parameter
//! scalars, then that many little-endian f32 values in declaration order.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Graph, ParamGroup, ParamStore};
use crate::sample::{PreparedSample, PreparedView};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::taxonomy::{NUM_ELEMENTS, NUM_MATERIALS};
use crate::tensor::Tensor;
use crate::tokenizer::PatchTokenizer;

/// `[1, 6]` element logits and `[1, 7]` material logits.
#[derive(Debug, Clone, Copy)]
pub struct Logits {
    pub elements: Var,
    pub materials: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Satellite,
    Street,
    Concat,
    Fvt,
    Perceiver,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::Satellite, ModelKind::Street, ModelKind::Concat, ModelKind::Fvt, ModelKind::Perceiver];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Satellite => "satellite",
            ModelKind::Street => "street",
            ModelKind::Concat => "concat",
            ModelKind::Fvt => "fvt",
            ModelKind::Perceiver => "perceiver",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown model kind `{s}`")))
    }
}

/// Geometry of the patch tokenizers shared by all architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub sat_channels: usize,
    pub street_channels: usize,
    /// Token width `D`.
    pub token_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { image_size: 32, patch_size: 8, sat_channels: 3, street_channels: 3, token_dim: 64 }
    }
}

impl BackboneConfig {
    pub const WORDS: usize = 5;

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patches_per_view(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        for c in [self.sat_channels, self.street_channels] {
            if c != 3 && c != 4 {
                return Err(Error::config(format!("tokenizers take 3 or 4 channels, got {c}")));
            }
        }
        if self.token_dim == 0 {
            return Err(Error::config("token dimension must be positive"));
        }
        Ok(())
    }

    pub fn words(&self) -> Vec<u32> {
        [self.image_size, self.patch_size, self.sat_channels, self.street_channels, self.token_dim]
            .iter()
            .map(|&v| v as u32)
            .collect()
    }

    pub fn from_words(w: &[u32]) -> Result<Self> {
        let [image_size, patch_size, sat_channels, street_channels, token_dim] = take_words(w)?;
        Ok(Self { image_size, patch_size, sat_channels, street_channels, token_dim })
    }
}

pub(crate) fn take_words<const N: usize>(w: &[u32]) -> Result<[usize; N]> {
    if w.len() < N {
        return Err(Error::config(format!("config header has {} words, expected {N}", w.len())));
    }
    Ok(std::array::from_fn(|i| w[i] as usize))
}

/// Stacks row-major tensors that share a column count.
pub(crate) fn stack_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let cols = parts.first().ok_or_else(|| Error::contract("nothing to stack"))?.cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::dim(format!("stacking width {} onto width {cols}", p.cols())));
        }
        data.extend_from_slice(p.data());
        rows += p.rows();
    }
    Tensor::new(&[rows, cols], data)
}

/// Column means of a patch matrix as a `[1, width]` row.
pub(crate) fn mean_patch<T: Scalar>(patches: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (patches.rows(), patches.cols());
    let mut out = vec![T::zero(); c];
    for i in 0..r {
        for (o, &v) in out.iter_mut().zip(patches.row(i)) {
            *o = *o + v;
        }
    }
    let n = T::from_usize(r).expect("row count fits the scalar");
    out.iter_mut().for_each(|v| *v = *v / n);
    Tensor::new(&[1, c], out).expect("non-empty patch matrix")
}

/// Satellite and street tokenizers. Both modalities share one projection
/// when their channel counts agree.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub satellite: PatchTokenizer,
    /// `None` when street views reuse the satellite projection.
    pub street: Option<PatchTokenizer>,
}

impl Backbone {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shared = config.sat_channels == config.street_channels;
        let name = if shared { "tokenizer" } else { "tokenizer.satellite" };
        let satellite =
            PatchTokenizer::new(store, name, config.sat_channels, config.patch_size, config.token_dim, rng);
        let street = (!shared).then(|| {
            PatchTokenizer::new(
                store,
                "tokenizer.street",
                config.street_channels,
                config.patch_size,
                config.token_dim,
                rng,
            )
        });
        Ok(Self { config, satellite, street })
    }

    pub fn street_tokenizer(&self) -> &PatchTokenizer {
        self.street.as_ref().unwrap_or(&self.satellite)
    }

    /// All patch tokens, views in sample order, as one `[(N+1)·P, D]` matrix.
    pub fn tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Var> {
        match &self.street {
            None => {
                let parts: Vec<&Tensor<T>> = x.views().map(|v| &v.patches).collect();
                let p = g.input(stack_rows(&parts)?);
                self.satellite.forward(g, p)
            }
            Some(street) => {
                let sat = g.input(x.satellite.patches.clone());
                let sat = self.satellite.forward(g, sat)?;
                if x.street.is_empty() {
                    return Ok(sat);
                }
                let parts: Vec<&Tensor<T>> = x.street.iter().map(|v| &v.patches).collect();
                let st = g.input(stack_rows(&parts)?);
                let st = street.forward(g, st)?;
                g.tape.concat_rows(&[sat, st])
            }
        }
    }
}

/// Mean-pooled patch tokens of each view as a `[V, D]` matrix.
///
/// The projection is affine, so projecting the mean patch equals averaging
/// the projected tokens; the cheaper form is used.
pub fn view_features<T: Scalar>(
    g: &mut Graph<'_, T>,
    tok: &PatchTokenizer,
    views: &[&PreparedView<T>],
) -> Result<Var> {
    if views.is_empty() {
        return Err(Error::contract("no views to featurize"));
    }
    let means: Vec<Tensor<T>> = views.iter().map(|v| mean_patch(&v.patches)).collect();
    let refs: Vec<&Tensor<T>> = means.iter().collect();
    let x = g.input(stack_rows(&refs)?);
    tok.forward(g, x)
}

/// Linear element and material classifiers over one embedding.
#[derive(Debug, Clone)]
pub struct Heads {
    pub elements: Linear,
    pub materials: Linear,
}

impl Heads {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, in_dim: usize, rng: &mut R) -> Self {
        let h = ParamGroup::Heads;
        Self {
            elements: Linear::new(store, "head.elements", in_dim, NUM_ELEMENTS, true, h, rng),
            materials: Linear::new(store, "head.materials", in_dim, NUM_MATERIALS, true, h, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, y: Var) -> Result<Logits> {
        Ok(Logits { elements: self.elements.forward(g, y)?, materials: self.materials.forward(g, y)? })
    }
}

/// Common interface of the five architectures.
pub trait Classifier<T: Scalar>: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits>;

    /// Checkpoint magic.
    fn magic(&self) -> [u8; 4];

    /// Architecture configuration as checkpoint header words.
    fn config_words(&self) -> Vec<u32>;

    /// Rejects inputs the architecture cannot consume, before any compute.
    fn check_input(&self, _x: &PreparedSample<T>) -> Result<()> {
        Ok(())
    }
}

/// Raw checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 4],
    pub words: Vec<u32>,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn of<T: Scalar, M: Classifier<T> + ?Sized>(model: &M) -> Self {
        Self {
            magic: model.magic(),
            words: model.config_words(),
            values: model.params().flatten().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.magic)?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        let mut blob = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a checkpoint whose header holds `words_for(magic)` config words.
    pub fn read_from<R: Read>(mut r: R, words_for: impl Fn(&[u8; 4]) -> Option<usize>) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        let n_words = words_for(&magic).ok_or_else(|| {
            Error::validation(format!("unknown checkpoint magic {:?}", String::from_utf8_lossy(&magic)))
        })?;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            words.push(crate::image::read_u32(&mut r)?);
        }
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let count = u64::from_le_bytes(b) as usize;
        let mut blob = vec![0u8; count * 4];
        r.read_exact(&mut blob)?;
        let values = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { magic, words, values })
    }

    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let flat: Vec<T> = self.values.iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        store.load_flat(&flat)
    }
}
