//! Patch tokenization and the additive token embeddings.
//!
//! A single trainable linear projection of flattened patches plays the role
//! of the image backbone. Tokens then receive a factorized 2-D positional
//! embedding (row table + column table), a modality embedding, and a view
//! embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::Linear;
use crate::params::{Graph, ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Street views per sample at most; the view table has one more slot for
/// the satellite image.
pub const MAX_STREET_VIEWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Satellite,
    Street,
}

impl Modality {
    pub fn row(self) -> usize {
        match self {
            Modality::Satellite => 0,
            Modality::Street => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenMeta {
    pub view_index: usize,
    pub modality: Modality,
    /// (row, col) on the patch grid.
    pub grid_pos: (usize, usize),
}

/// Tokens on a graph plus their provenance, one entry per token row.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Var,
    pub meta: Vec<TokenMeta>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Number of distinct views contributing tokens.
    pub fn view_count(&self) -> usize {
        let mut seen: Vec<usize> = self.meta.iter().map(|m| m.view_index).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Flattens a square image into a `[P, patch·patch·C]` matrix, patches in
/// row-major grid order and each patch flattened as (row, col, channel).
pub fn patchify<T: Scalar>(img: &Image, patch_size: usize) -> Result<Tensor<T>> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if h != w {
        return Err(Error::config(format!("tokenizer needs square images, got {h}x{w}")));
    }
    if patch_size == 0 || h % patch_size != 0 {
        return Err(Error::config(format!("image side {h} not divisible by patch {patch_size}")));
    }
    let grid = h / patch_size;
    let width = patch_size * patch_size * c;
    let mut data = Vec::with_capacity(grid * grid * width);
    for gy in 0..grid {
        for gx in 0..grid {
            for py in 0..patch_size {
                for px in 0..patch_size {
                    for ch in 0..c {
                        let v = img.get(ch, gy * patch_size + py, gx * patch_size + px);
                        data.push(T::from_f64_lossy(v as f64));
                    }
                }
            }
        }
    }
    Tensor::new(&[grid * grid, width], data)
}

#[derive(Debug, Clone)]
pub struct PatchTokenizer {
    pub proj: Linear,
    pub channels: usize,
    pub patch_size: usize,
}

impl PatchTokenizer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        patch_size: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let in_dim = patch_size * patch_size * channels;
        let proj = Linear::new(store, name, in_dim, out_dim, true, ParamGroup::Backbone, rng);
        Self { proj, channels, patch_size }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.out_dim
    }

    /// Patch matrix for an image, rejecting images this projection was not
    /// built for (e.g. a 4-channel RGB-M input on a 3-channel projection).
    pub fn patches<T: Scalar>(&self, img: &Image) -> Result<Tensor<T>> {
        if img.channels() != self.channels {
            return Err(Error::config(format!(
                "{}-channel image given to a {}-channel patch projection",
                img.channels(),
                self.channels
            )));
        }
        patchify(img, self.patch_size)
    }

    /// Projects a precomputed patch matrix to `[P, D]` tokens.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, patches: Var) -> Result<Var> {
        if g.value(patches).cols() != self.proj.in_dim {
            return Err(Error::config(format!(
                "patch width {} does not match projection input {}",
                g.value(patches).cols(),
                self.proj.in_dim
            )));
        }
        self.proj.forward(g, patches)
    }

    pub fn tokenize<T: Scalar>(&self, g: &mut Graph<'_, T>, img: &Image) -> Result<Var> {
        let p = self.patches(img)?;
        let p = g.input(p);
        self.forward(g, p)
    }
}

/// Learned positional (factorized), modality, and view tables.
#[derive(Debug, Clone)]
pub struct EmbeddingTables {
    pub pos_row: ParamId,
    pub pos_col: ParamId,
    pub modality: ParamId,
    pub view: ParamId,
    pub grid: usize,
}

impl EmbeddingTables {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, grid: usize, dim: usize, rng: &mut R) -> Self {
        let h = ParamGroup::Heads;
        Self {
            pos_row: store.add_normal("embed.pos_row", &[grid, dim], h, rng),
            pos_col: store.add_normal("embed.pos_col", &[grid, dim], h, rng),
            modality: store.add_normal("embed.modality", &[2, dim], h, rng),
            view: store.add_normal("embed.view", &[MAX_STREET_VIEWS + 1, dim], h, rng),
            grid,
        }
    }
}

/// `token + pos_row[r] + pos_col[c] + modality[m] + view[v]` per token.
pub fn augment_tokens<T: Scalar>(
    g: &mut Graph<'_, T>,
    seq: &TokenSequence,
    tables: &EmbeddingTables,
) -> Result<TokenSequence> {
    if g.value(seq.tokens).rows() != seq.meta.len() {
        return Err(Error::contract("token count and metadata length differ"));
    }
    let view_rows = g.store().value(tables.view).rows();
    if let Some(m) = seq.meta.iter().find(|m| m.view_index >= view_rows) {
        return Err(Error::config(format!(
            "view index {} outside the {view_rows}-slot view table",
            m.view_index
        )));
    }
    if let Some(m) = seq.meta.iter().find(|m| m.grid_pos.0 >= tables.grid || m.grid_pos.1 >= tables.grid) {
        return Err(Error::config(format!("grid position {:?} outside {}x{} grid", m.grid_pos, tables.grid, tables.grid)));
    }
    let rows: Vec<usize> = seq.meta.iter().map(|m| m.grid_pos.0).collect();
    let cols: Vec<usize> = seq.meta.iter().map(|m| m.grid_pos.1).collect();
    let mods: Vec<usize> = seq.meta.iter().map(|m| m.modality.row()).collect();
    let views: Vec<usize> = seq.meta.iter().map(|m| m.view_index).collect();

    let (pr, pc, md, vw) = (g.param(tables.pos_row), g.param(tables.pos_col), g.param(tables.modality), g.param(tables.view));
    let mut x = seq.tokens;
    for (table, index) in [(pr, rows), (pc, cols), (md, mods), (vw, views)] {
        let e = g.tape.gather_rows(table, &index)?;
        x = g.tape.add(x, e)?;
    }
    Ok(TokenSequence { tokens: x, meta: seq.meta.clone() })
}

/// Metadata for the `grid²` tokens of one view.
pub fn view_meta(view_index: usize, modality: Modality, grid: usize) -> Vec<TokenMeta> {
    (0..grid * grid)
        .map(|p| TokenMeta { view_index, modality, grid_pos: (p / grid, p % grid) })
        .collect()
}
