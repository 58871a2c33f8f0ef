//! Whole datasets: generation, splitting, and the on-disk layout.
//!
//! A dataset directory holds `manifest.json` plus one `.lft` image and one
//! `.lfm` mask per view.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::sample::{BuildingSample, View};
use crate::synth::geometry::Camera;
use crate::synth::scene::{generate_scene, SceneConfig};
use crate::taxonomy::{Labels, NUM_CLASSES};

pub const TRAIN_VAL_TEST: (f64, f64, f64) = (0.85, 0.075, 0.075);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub size: usize,
    pub seed: u64,
    pub priors: [f64; NUM_CLASSES],
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { size: 2000, seed: 0, priors: [0.3; NUM_CLASSES], scene: SceneConfig::default() }
    }
}

/// Scene seed of sample `index`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    SplitMix64::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<BuildingSample>> {
    (0..config.size)
        .map(|i| {
            let (_, mut sample) = generate_scene(sample_seed(config.seed, i), &config.priors, &config.scene)?;
            sample.segment_id = i as u64;
            Ok(sample)
        })
        .collect()
}

/// Shuffled partition by fractions; the validation and test sizes are
/// rounded and the training split takes the remainder.
pub fn split_dataset<S: Clone>(
    samples: &[S],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("split fractions {a}/{b}/{c} must be in [0,1] and sum to 1")));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let n_val = ((b * n as f64).round() as usize).min(n);
    let n_test = ((c * n as f64).round() as usize).min(n - n_val);
    let n_train = n - n_val - n_test;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<S>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ViewRecord {
    image: String,
    mask: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    camera: Option<Camera>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRecord {
    id: u64,
    labels: String,
    satellite: ViewRecord,
    street: Vec<ViewRecord>,
}

fn write_view(dir: &Path, stem: &str, view: &View) -> Result<(String, String)> {
    let (img, mask) = (format!("{stem}.lft"), format!("{stem}.lfm"));
    view.image.write_to(BufWriter::new(File::create(dir.join(&img))?))?;
    view.mask.write_to(BufWriter::new(File::create(dir.join(&mask))?))?;
    Ok((img, mask))
}

fn read_view(dir: &Path, rec: &ViewRecord) -> Result<View> {
    Ok(View {
        image: Image::read_from(BufReader::new(File::open(dir.join(&rec.image))?))?,
        mask: BinaryMask::read_from(BufReader::new(File::open(dir.join(&rec.mask))?))?,
    })
}

pub fn write_dataset(dir: &Path, samples: &[BuildingSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let (image, mask) = write_view(dir, &format!("{:06}_sat", s.segment_id), &s.satellite)?;
        let satellite = ViewRecord { image, mask, camera: None };
        let street = s
            .street
            .iter()
            .zip(&s.cameras)
            .enumerate()
            .map(|(i, (v, cam))| {
                let (image, mask) = write_view(dir, &format!("{:06}_st{}", s.segment_id, i + 1), v)?;
                Ok(ViewRecord { image, mask, camera: Some(*cam) })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(SampleRecord { id: s.segment_id, labels: s.labels.bits(), satellite, street });
    }
    let json = serde_json::to_string_pretty(&records)?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<BuildingSample>> {
    let manifest = fs::read_to_string(dir.join("manifest.json"))?;
    let records: Vec<SampleRecord> = serde_json::from_str(&manifest)?;
    records
        .iter()
        .map(|r| {
            let labels = Labels::from_bits(&r.labels)
                .ok_or_else(|| Error::validation(format!("bad label bits `{}` for sample {}", r.labels, r.id)))?;
            let street = r.street.iter().map(|v| read_view(dir, v)).collect::<Result<Vec<_>>>()?;
            let cameras = r
                .street
                .iter()
                .map(|v| v.camera.ok_or_else(|| Error::validation(format!("street view of {} lacks a camera", r.id))))
                .collect::<Result<Vec<_>>>()?;
            Ok(BuildingSample { segment_id: r.id, satellite: read_view(dir, &r.satellite)?, street, cameras, labels })
        })
        .collect()
}
