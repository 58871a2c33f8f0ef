//! One labelled segment and its model-ready form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::masking::{apply_masking, MaskingStrategy};
use crate::scalar::Scalar;
use crate::synth::geometry::Camera;
use crate::taxonomy::Labels;
use crate::tensor::Tensor;
use crate::tokenizer::{patchify, Modality, MAX_STREET_VIEWS};

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    pub mask: BinaryMask,
}

/// A satellite view, 0..=8 street views, and the two label vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingSample {
    pub segment_id: u64,
    pub satellite: View,
    pub street: Vec<View>,
    /// Camera of each street view, same order as `street`.
    pub cameras: Vec<Camera>,
    pub labels: Labels,
}

impl BuildingSample {
    pub fn street_count(&self) -> usize {
        self.street.len()
    }
}

/// Anything batched by street-view count.
pub trait StreetCount {
    fn street_count(&self) -> usize;
}

impl StreetCount for BuildingSample {
    fn street_count(&self) -> usize {
        self.street.len()
    }
}

impl<T> StreetCount for PreparedSample<T> {
    fn street_count(&self) -> usize {
        self.street.len()
    }
}

/// How raw views become model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub mask_sat: MaskingStrategy,
    pub mask_street: MaskingStrategy,
    pub patch_size: usize,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self { mask_sat: MaskingStrategy::Full, mask_street: MaskingStrategy::Full, patch_size: 8 }
    }
}

/// Random horizontal flip plus brightness jitter, applied per view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub flip_prob: f64,
    pub brightness: f32,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { flip_prob: 0.5, brightness: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedView<T> {
    /// `[P, patch²·C]` patch matrix.
    pub patches: Tensor<T>,
    pub view_index: usize,
    pub modality: Modality,
}

/// Masked, patchified views ready for any model.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub segment_id: u64,
    pub satellite: PreparedView<T>,
    pub street: Vec<PreparedView<T>>,
    pub labels: Labels,
}

impl<T: Scalar> PreparedSample<T> {
    /// Satellite first, then street views in order.
    pub fn views(&self) -> impl Iterator<Item = &PreparedView<T>> {
        std::iter::once(&self.satellite).chain(self.street.iter())
    }

    pub fn element_targets(&self) -> Vec<T> {
        self.labels.elements.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }

    pub fn material_targets(&self) -> Vec<T> {
        self.labels.materials.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }
}

fn prepare_view<T: Scalar>(
    view: &View,
    strategy: MaskingStrategy,
    patch_size: usize,
    aug: Option<(bool, f32)>,
) -> Result<Tensor<T>> {
    let (image, mask) = match aug {
        Some((flip, delta)) => {
            let (img, mask) = if flip {
                (view.image.flip_horizontal(), view.mask.flip_horizontal())
            } else {
                (view.image.clone(), view.mask.clone())
            };
            (img.adjust_brightness(delta), mask)
        }
        None => (view.image.clone(), view.mask.clone()),
    };
    let masked = apply_masking(&image, Some(&mask), strategy)?;
    patchify(&masked, patch_size)
}

impl InputSpec {
    pub fn prepare<T: Scalar>(&self, sample: &BuildingSample) -> Result<PreparedSample<T>> {
        self.prepare_inner(sample, &mut |_| None)
    }

    pub fn prepare_augmented<T: Scalar, R: Rng>(
        &self,
        sample: &BuildingSample,
        aug: &Augmentation,
        rng: &mut R,
    ) -> Result<PreparedSample<T>> {
        self.prepare_inner(sample, &mut |_| {
            let flip = rng.gen_bool(aug.flip_prob);
            let delta = if aug.brightness > 0.0 { rng.gen_range(-aug.brightness..aug.brightness) } else { 0.0 };
            Some((flip, delta))
        })
    }

    fn prepare_inner<T: Scalar>(
        &self,
        sample: &BuildingSample,
        aug: &mut dyn FnMut(usize) -> Option<(bool, f32)>,
    ) -> Result<PreparedSample<T>> {
        if sample.street.len() > MAX_STREET_VIEWS {
            return Err(Error::contract(format!(
                "{} street views exceed the maximum of {MAX_STREET_VIEWS}",
                sample.street.len()
            )));
        }
        let satellite = PreparedView {
            patches: prepare_view(&sample.satellite, self.mask_sat, self.patch_size, aug(0))?,
            view_index: 0,
            modality: Modality::Satellite,
        };
        let street = sample
            .street
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Ok(PreparedView {
                    patches: prepare_view(v, self.mask_street, self.patch_size, aug(i + 1))?,
                    view_index: i + 1,
                    modality: Modality::Street,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSample { segment_id: sample.segment_id, satellite, street, labels: sample.labels })
    }
}
