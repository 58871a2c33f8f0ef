//! Procedural buildings with known attributes, rendered top-down and from
//! street-level pinhole cameras.
//!
//! Every attribute has a fixed 8×8 signature, aligned to the 8-pixel patch
//! grid and mirror-symmetric about the vertical axis so horizontal flips
//! preserve it. Materials tile their signature over the building region;
//! elements stamp a 4×4 glyph in the centre of one grid cell. Each class
//! is drawn only in the views its [`Visibility`] allows.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::sample::{BuildingSample, View};
use crate::synth::geometry::{project_building, top_down_mask, Building, Camera};
use crate::taxonomy::{Labels, NUM_CLASSES, NUM_ELEMENTS};
use crate::tokenizer::MAX_STREET_VIEWS;

pub const CELL: usize = 8;
const GLYPH: usize = 4;
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.20;

/// Where an attribute can be seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Both,
    SatelliteOnly,
    StreetOnly,
    /// Satellite view only, and only outside the footprint.
    SatelliteContext,
}

impl Visibility {
    fn on_roof(self) -> bool {
        matches!(self, Visibility::Both | Visibility::SatelliteOnly)
    }

    fn in_street(self) -> bool {
        matches!(self, Visibility::Both | Visibility::StreetOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Ground distance covered by the satellite image, metres.
    pub sat_extent: f64,
    /// Flat class order, elements first.
    pub visibility: [Visibility; NUM_CLASSES],
    /// Street-view count is Binomial(max_views, view_prob) before filtering.
    pub max_views: usize,
    pub view_prob: f64,
    pub visibility_threshold: f64,
    /// Chance of an opaque rectangle over a street image.
    pub occlusion_prob: f64,
    /// Chance of trees in the satellite context.
    pub tree_prob: f64,
    /// Half-width of uniform pixel noise.
    pub noise: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        use Visibility::*;
        let mut visibility = [Both; NUM_CLASSES];
        for k in [2, 5, 6] {
            // skylight, external installations, bitumen
            visibility[k] = SatelliteOnly;
        }
        for k in [1, 7, 12] {
            // dormer, slate, glass
            visibility[k] = StreetOnly;
        }
        Self {
            image_size: 32,
            sat_extent: 24.0,
            visibility,
            max_views: MAX_STREET_VIEWS,
            view_prob: 0.5625,
            visibility_threshold: DEFAULT_VISIBILITY_THRESHOLD,
            occlusion_prob: 0.2,
            tree_prob: 0.5,
            noise: 0.04,
        }
    }
}

impl SceneConfig {
    /// Variant where a few classes appear only around the building in the
    /// satellite image, so context pixels carry label signal.
    pub fn context_variant() -> Self {
        let mut cfg = Self::default();
        for k in [0, 5, 9, 11] {
            // solar panels, external installations, aluminium, corrugated sheets
            cfg.visibility[k] = Visibility::SatelliteContext;
        }
        cfg
    }

    pub fn classes_with(&self, vis: Visibility) -> Vec<usize> {
        (0..NUM_CLASSES).filter(|&k| self.visibility[k] == vis).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(CELL) {
            return Err(Error::config(format!("image size must be a multiple of {CELL}")));
        }
        if self.max_views > MAX_STREET_VIEWS {
            return Err(Error::config(format!("at most {MAX_STREET_VIEWS} street views")));
        }
        for (name, p) in [
            ("view_prob", self.view_prob),
            ("visibility_threshold", self.visibility_threshold),
            ("occlusion_prob", self.occlusion_prob),
            ("tree_prob", self.tree_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.sat_extent > 0.0) {
            return Err(Error::config("satellite extent must be positive"));
        }
        Ok(())
    }
}

/// Geometry, attributes and accepted cameras of one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub building: Building,
    pub attributes: Labels,
    pub cameras: Vec<Camera>,
}

type Pattern = [[[f32; CELL]; CELL]; 3];

/// Fixed signature of a class: a full 8×8 texture for materials, a 4×4
/// glyph (top-left corner of the array) for elements.
pub fn signature(class: usize) -> Pattern {
    let mut rng = SplitMix64::seed_from_u64(0x5157_0000 + class as u64);
    let (size, lo, hi) = if class < NUM_ELEMENTS { (GLYPH, 0.0, 1.0) } else { (CELL, 0.15, 0.85) };
    let mut p = [[[0.0; CELL]; CELL]; 3];
    for plane in p.iter_mut() {
        for row in plane.iter_mut().take(size) {
            for c in 0..size / 2 {
                let v = if rng.next_u64() & 1 == 1 { hi } else { lo };
                row[c] = v;
                row[size - 1 - c] = v;
            }
        }
    }
    p
}

fn draw_labels(rng: &mut SplitMix64, priors: &[f64; NUM_CLASSES]) -> Labels {
    let mut flags = [false; NUM_CLASSES];
    for (f, &p) in flags.iter_mut().zip(priors) {
        *f = rng.gen::<f64>() < p;
    }
    Labels::from_flat(&flags)
}

fn draw_building(rng: &mut SplitMix64) -> Building {
    let n = rng.gen_range(5..=8);
    let (a, b) = (rng.gen_range(7.0..11.0), rng.gen_range(7.0..11.0));
    let rot: f64 = rng.gen_range(0.0..PI);
    let (cx, cy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let footprint = (0..n)
        .map(|i| {
            let t = 2.0 * PI * (i as f64 + rng.gen_range(0.15..0.85)) / n as f64;
            let (x, y) = (a * t.cos(), b * t.sin());
            let (s, c) = rot.sin_cos();
            [cx + c * x - s * y, cy + s * x + c * y]
        })
        .collect();
    Building { footprint, height: rng.gen_range(4.0..12.0) }
}

fn draw_camera(rng: &mut SplitMix64, building: &Building, size: usize) -> Camera {
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let dist = building.radius() + rng.gen_range(3.0..10.0);
    let size = size as f64;
    Camera {
        position: [dist * phi.cos(), dist * phi.sin(), 1.6],
        yaw: phi + PI + rng.gen_range(-0.15..0.15),
        focal: 0.8 * size * rng.gen_range(0.9..1.1),
        cx: size / 2.0,
        cy: 0.7 * size,
    }
}

/// Keeps a view iff its mask covers at least `threshold` of the image.
pub fn passes_visibility(mask: &BinaryMask, threshold: f64) -> bool {
    threshold <= 0.0 || mask.coverage() >= threshold
}

/// Drops views whose footprint mask covers less than `threshold`; order is
/// preserved.
pub fn visibility_filter(pairs: Vec<View>, threshold: f64) -> Result<Vec<View>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::validation(format!("visibility threshold {threshold} outside [0, 1]")));
    }
    Ok(pairs.into_iter().filter(|v| passes_visibility(&v.mask, threshold)).collect())
}

/// Pixel canvas with a noise-free base layer; noise is added last.
struct Canvas {
    size: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Self { size, px: vec![0.0; 3 * size * size] }
    }

    fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let n = self.size * self.size;
        for (c, v) in rgb.into_iter().enumerate() {
            self.px[c * n + y * self.size + x] = v;
        }
    }

    fn finish(mut self, rng: &mut SplitMix64, noise: f32) -> Image {
        if noise > 0.0 {
            for p in &mut self.px {
                *p = (*p + rng.gen_range(-noise..noise)).clamp(0.0, 1.0);
            }
        }
        Image::new(3, self.size, self.size, self.px).expect("canvas values are clamped")
    }
}

fn pattern_rgb(p: &Pattern, y: usize, x: usize) -> [f32; 3] {
    [p[0][y][x], p[1][y][x], p[2][y][x]]
}

/// Grid cells ordered by how many building pixels they hold, descending,
/// with ties in row-major order.
fn cells_by_coverage(mask: &BinaryMask) -> Vec<(usize, usize, usize)> {
    let grid = mask.height() / CELL;
    let mut cells: Vec<(usize, usize, usize)> = (0..grid * grid)
        .map(|i| {
            let (gy, gx) = (i / grid, i % grid);
            let count = (0..CELL)
                .flat_map(|y| (0..CELL).map(move |x| (y, x)))
                .filter(|&(y, x)| mask.get(gy * CELL + y, gx * CELL + x))
                .count();
            (gy, gx, count)
        })
        .collect();
    cells.sort_by(|a, b| b.2.cmp(&a.2));
    cells
}

/// Paints materials and element glyphs onto the building pixels of `mask`.
fn paint_attributes(canvas: &mut Canvas, mask: &BinaryMask, materials: &[usize], elements: &[usize], rng: &mut SplitMix64) {
    let cells = cells_by_coverage(mask);
    let occupied: Vec<_> = cells.iter().filter(|c| c.2 > 0).collect();
    if occupied.is_empty() {
        return;
    }
    if !materials.is_empty() {
        let offset = rng.gen_range(0..materials.len());
        let sigs: Vec<Pattern> = materials.iter().map(|&k| signature(k)).collect();
        for (j, &&(gy, gx, _)) in occupied.iter().enumerate() {
            let sig = &sigs[(j + offset) % sigs.len()];
            for y in 0..CELL {
                for x in 0..CELL {
                    let (py, px) = (gy * CELL + y, gx * CELL + x);
                    if mask.get(py, px) {
                        canvas.set(py, px, pattern_rgb(sig, y, x));
                    }
                }
            }
        }
    }
    // Present glyphs cycle through the occupied cells like the materials.
    if elements.is_empty() {
        return;
    }
    let offset = rng.gen_range(0..elements.len());
    let glyphs: Vec<Pattern> = elements.iter().map(|&k| signature(k)).collect();
    let lead = CELL / 2 - GLYPH / 2;
    for (j, &&(gy, gx, _)) in occupied.iter().enumerate() {
        let sig = &glyphs[(j + offset) % glyphs.len()];
        for y in 0..GLYPH {
            for x in 0..GLYPH {
                let (py, px) = (gy * CELL + lead + y, gx * CELL + lead + x);
                if mask.get(py, px) {
                    canvas.set(py, px, pattern_rgb(sig, y, x));
                }
            }
        }
    }
}

/// Paints context-only classes outside the footprint, least-covered cells
/// first. Elements tile their glyph across the cell here.
fn paint_context(canvas: &mut Canvas, mask: &BinaryMask, classes: &[usize]) {
    if classes.is_empty() {
        return;
    }
    let mut cells = cells_by_coverage(mask);
    cells.reverse();
    let total = CELL * CELL;
    let free: Vec<_> = cells.iter().filter(|c| c.2 < total).collect();
    for (j, &&(gy, gx, _)) in free.iter().enumerate() {
        let k = classes[j % classes.len()];
        let sig = signature(k);
        let period = if k < NUM_ELEMENTS { GLYPH } else { CELL };
        for y in 0..CELL {
            for x in 0..CELL {
                let (py, px) = (gy * CELL + y, gx * CELL + x);
                if !mask.get(py, px) {
                    canvas.set(py, px, pattern_rgb(&sig, y % period, x % period));
                }
            }
        }
    }
}

fn positives(labels: &Labels, config: &SceneConfig, pred: impl Fn(Visibility) -> bool) -> (Vec<usize>, Vec<usize>) {
    let flat = labels.flat();
    let on: Vec<usize> = (0..NUM_CLASSES).filter(|&k| flat[k] && pred(config.visibility[k])).collect();
    let elements = on.iter().copied().filter(|&k| k < NUM_ELEMENTS).collect();
    let materials = on.into_iter().filter(|&k| k >= NUM_ELEMENTS).collect();
    (materials, elements)
}

const GROUND: [f32; 3] = [0.42, 0.45, 0.40];
const ROOF: [f32; 3] = [0.55, 0.50, 0.48];
const TREE: [f32; 3] = [0.12, 0.35, 0.15];
const SKY: [f32; 3] = [0.62, 0.76, 0.90];
const STREET: [f32; 3] = [0.34, 0.34, 0.33];
const FACADE: [f32; 3] = [0.70, 0.65, 0.60];

fn render_satellite(building: &Building, labels: &Labels, config: &SceneConfig, rng: &mut SplitMix64) -> View {
    let size = config.image_size;
    let mask = top_down_mask(building, config.sat_extent, size);
    let mut canvas = Canvas::new(size);
    for y in 0..size {
        for x in 0..size {
            canvas.set(y, x, if mask.get(y, x) { ROOF } else { GROUND });
        }
    }
    if rng.gen::<f64>() < config.tree_prob {
        for _ in 0..rng.gen_range(1..=3) {
            let (ty, tx, r) = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), rng.gen_range(1.5..3.5));
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f64 + 0.5 - ty).powi(2) + (x as f64 + 0.5 - tx).powi(2)).sqrt();
                    if d <= r && !mask.get(y, x) {
                        canvas.set(y, x, TREE);
                    }
                }
            }
        }
    }
    let (materials, elements) = positives(labels, config, Visibility::on_roof);
    paint_attributes(&mut canvas, &mask, &materials, &elements, rng);
    let flat = labels.flat();
    let context: Vec<usize> =
        (0..NUM_CLASSES).filter(|&k| flat[k] && config.visibility[k] == Visibility::SatelliteContext).collect();
    paint_context(&mut canvas, &mask, &context);
    View { image: canvas.finish(rng, config.noise), mask }
}

fn render_street(
    camera: &Camera,
    mask: BinaryMask,
    labels: &Labels,
    config: &SceneConfig,
    rng: &mut SplitMix64,
) -> View {
    let size = config.image_size;
    let mut canvas = Canvas::new(size);
    for y in 0..size {
        let bg = if (y as f64 + 0.5) < camera.cy { SKY } else { STREET };
        for x in 0..size {
            canvas.set(y, x, if mask.get(y, x) { FACADE } else { bg });
        }
    }
    let (materials, elements) = positives(labels, config, Visibility::in_street);
    paint_attributes(&mut canvas, &mask, &materials, &elements, rng);
    if rng.gen::<f64>() < config.occlusion_prob {
        let (h, w) = (rng.gen_range(6..=14), rng.gen_range(6..=14));
        let (y0, x0) = (rng.gen_range(0..=size - h), rng.gen_range(0..=size - w));
        let shade = rng.gen_range(0.1..0.4);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                canvas.set(y, x, [shade, shade + 0.1, shade]);
            }
        }
    }
    View { image: canvas.finish(rng, config.noise), mask }
}

/// Draws one scene and renders it. A pure function of its arguments.
pub fn generate_scene(seed: u64, priors: &[f64; NUM_CLASSES], config: &SceneConfig) -> Result<(SceneSpec, BuildingSample)> {
    config.validate()?;
    if let Some(p) = priors.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::validation(format!("class prior {p} outside [0, 1]")));
    }
    let mut master = SplitMix64::seed_from_u64(seed);
    let mut streams: [SplitMix64; 5] = std::array::from_fn(|_| SplitMix64::seed_from_u64(master.next_u64()));
    let [label_rng, geom_rng, cam_rng, sat_rng, street_rng] = &mut streams;

    let labels = draw_labels(label_rng, priors);
    let building = draw_building(geom_rng);
    let satellite = render_satellite(&building, &labels, config, sat_rng);

    let target = (0..config.max_views).filter(|_| cam_rng.gen::<f64>() < config.view_prob).count();
    let mut cameras = Vec::with_capacity(target);
    let mut street = Vec::with_capacity(target);
    let mut attempts = 0;
    while street.len() < target && attempts < 4 * config.max_views.max(1) {
        attempts += 1;
        let cam = draw_camera(cam_rng, &building, config.image_size);
        let mask = project_building(&building, &cam, config.image_size);
        if !passes_visibility(&mask, config.visibility_threshold) {
            continue;
        }
        street.push(render_street(&cam, mask, &labels, config, street_rng));
        cameras.push(cam);
    }
    let sample = BuildingSample { segment_id: seed, satellite, street, cameras: cameras.clone(), labels };
    Ok((SceneSpec { building, attributes: labels, cameras }, sample))
}

/// Footprint mask of camera `camera_index` of a scene at `out_size` pixels.
pub fn project_footprint_mask(spec: &SceneSpec, camera_index: usize, out_size: usize) -> Result<BinaryMask> {
    let cam = spec
        .cameras
        .get(camera_index)
        .ok_or_else(|| Error::contract(format!("scene has no camera {camera_index}")))?;
    if !(cam.focal > 0.0) {
        return Err(Error::contract("camera focal length must be positive"));
    }
    Ok(project_building(&spec.building, cam, out_size))
}
