//! Footprints, pinhole cameras, and polygon rasterization.
//!
//! World frame: x/y on the ground, z up, metres. A camera looks
//! horizontally along its yaw; image u grows to the right and v downward,
//! and pixel `(row, col)` is sampled at its centre `(col + 0.5, row + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::image::BinaryMask;

pub const NEAR_PLANE: f64 = 0.1;

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    /// Heading in the ground plane, radians from +x toward +y.
    pub yaw: f64,
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Right, down and forward unit vectors.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (s, c) = self.yaw.sin_cos();
        ([s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0])
    }

    /// World point to camera coordinates `(x right, y down, depth)`.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let (r, d, f) = self.basis();
        let rel = sub(p, self.position);
        [dot(rel, r), dot(rel, d), dot(rel, f)]
    }

    pub fn project_camera(&self, pc: Vec3) -> [f64; 2] {
        [self.cx + self.focal * pc[0] / pc[2], self.cy + self.focal * pc[1] / pc[2]]
    }

    /// World direction of the ray through image point `(u, v)`, with unit
    /// forward component.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        let (r, d, f) = self.basis();
        let (a, b) = ((u - self.cx) / self.focal, (v - self.cy) / self.focal);
        [r[0] * a + d[0] * b + f[0], r[1] * a + d[1] * b + f[1], r[2] * a + d[2] * b + f[2]]
    }
}

/// A convex footprint, counter-clockwise, extruded from the ground to
/// `height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub footprint: Vec<[f64; 2]>,
    pub height: f64,
}

impl Building {
    pub fn area(&self) -> f64 {
        polygon_area(&self.footprint)
    }

    /// Largest vertex distance from the origin.
    pub fn radius(&self) -> f64 {
        self.footprint.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max)
    }

    /// Bottom, top and side faces as 3-D polygons.
    pub fn faces(&self) -> Vec<Vec<Vec3>> {
        let fp = &self.footprint;
        let n = fp.len();
        let mut faces = Vec::with_capacity(n + 2);
        faces.push(fp.iter().map(|p| [p[0], p[1], 0.0]).collect());
        faces.push(fp.iter().map(|p| [p[0], p[1], self.height]).collect());
        for i in 0..n {
            let (a, b) = (fp[i], fp[(i + 1) % n]);
            faces.push(vec![[a[0], a[1], 0.0], [b[0], b[1], 0.0], [b[0], b[1], self.height], [a[0], a[1], self.height]]);
        }
        faces
    }

    /// Whether the ray `origin + t·dir`, `t ≥ t_min`, meets the solid.
    pub fn ray_hits(&self, origin: Vec3, dir: Vec3, t_min: f64) -> bool {
        let (mut lo, mut hi) = (t_min, f64::INFINITY);
        let mut clip = |n: Vec3, c: f64| -> bool {
            // Keep n·(o + t·d) ≤ c.
            let (num, den) = (c - dot(n, origin), dot(n, dir));
            if den.abs() < 1e-15 {
                return num >= 0.0;
            }
            let t = num / den;
            if den > 0.0 {
                hi = hi.min(t);
            } else {
                lo = lo.max(t);
            }
            lo <= hi
        };
        if !clip([0.0, 0.0, -1.0], 0.0) || !clip([0.0, 0.0, 1.0], self.height) {
            return false;
        }
        let fp = &self.footprint;
        for i in 0..fp.len() {
            let (a, b) = (fp[i], fp[(i + 1) % fp.len()]);
            // Outward normal of a counter-clockwise edge.
            let n = [b[1] - a[1], a[0] - b[0], 0.0];
            if !clip(n, n[0] * a[0] + n[1] * a[1]) {
                return false;
            }
        }
        true
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

/// Clips a camera-space polygon to `depth ≥ near` (Sutherland–Hodgman).
pub fn clip_near(poly: &[Vec3], near: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ina, inb) = (a[2] >= near, b[2] >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a[2]) / (b[2] - a[2]);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), near]);
        }
    }
    out
}

/// Sets every pixel whose centre lies inside or on a convex polygon given
/// in pixel coordinates `(u, v)`.
pub fn fill_convex(mask: &mut BinaryMask, poly: &[[f64; 2]]) {
    if poly.len() < 3 {
        return;
    }
    let area = polygon_area(poly);
    if area == 0.0 {
        return;
    }
    let sign = area.signum();
    let (h, w) = (mask.height(), mask.width());
    let min_v = poly.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_v = poly.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let min_u = poly.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_u = poly.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let row_range = pixel_span(min_v, max_v, h);
    let col_range = pixel_span(min_u, max_u, w);
    for row in row_range {
        let v = row as f64 + 0.5;
        for col in col_range.clone() {
            let u = col as f64 + 0.5;
            let inside = (0..poly.len()).all(|i| {
                let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                let cross = (b[0] - a[0]) * (v - a[1]) - (b[1] - a[1]) * (u - a[0]);
                cross * sign >= 0.0
            });
            if inside {
                mask.set(row, col, true);
            }
        }
    }
}

/// Pixel indices whose centres may fall in `[lo, hi]`, clamped to `0..n`.
fn pixel_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    if !(hi >= 0.0) || lo > n as f64 {
        return 0..0;
    }
    let start = (lo - 0.5).ceil().max(0.0) as usize;
    let end = ((hi - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
    start.min(end)..end
}

/// Footprint mask of the building as seen by a pinhole camera.
///
/// Every face is clipped to the near plane, projected, and filled; the
/// union of the filled faces is the projected solid. Geometry entirely
/// behind the camera yields an empty mask.
pub fn project_building(building: &Building, camera: &Camera, size: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(size, size);
    for face in building.faces() {
        let cam: Vec<Vec3> = face.iter().map(|&p| camera.to_camera(p)).collect();
        let clipped = clip_near(&cam, NEAR_PLANE);
        if clipped.len() < 3 {
            continue;
        }
        let px: Vec<[f64; 2]> = clipped.iter().map(|&p| camera.project_camera(p)).collect();
        fill_convex(&mut mask, &px);
    }
    mask
}

/// Reference mask by casting one ray per pixel centre.
pub fn raycast_building(building: &Building, camera: &Camera, size: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(size, size);
    for row in 0..size {
        for col in 0..size {
            let dir = camera.ray(col as f64 + 0.5, row as f64 + 0.5);
            if building.ray_hits(camera.position, dir, NEAR_PLANE) {
                mask.set(row, col, true);
            }
        }
    }
    mask
}

/// Top-down orthographic mask: the image spans `extent` metres centred on
/// the origin, north (+y) up.
pub fn top_down_mask(building: &Building, extent: f64, size: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(size, size);
    let poly: Vec<[f64; 2]> = building.footprint.iter().map(|&p| world_to_top_down(p, extent, size)).collect();
    fill_convex(&mut mask, &poly);
    mask
}

pub fn world_to_top_down(p: [f64; 2], extent: f64, size: usize) -> [f64; 2] {
    let scale = size as f64 / extent;
    [(p[0] + extent / 2.0) * scale, (extent / 2.0 - p[1]) * scale]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Building {
        Building { footprint: vec![[0.0, -0.5], [1.0, -0.5], [1.0, 0.5], [0.0, 0.5]], height: 1.0 }
    }

    fn mask_width(mask: &BinaryMask) -> usize {
        (0..mask.height()).map(|r| (0..mask.width()).filter(|&c| mask.get(r, c)).count()).max().unwrap()
    }

    #[test]
    fn facade_width_follows_similar_triangles() {
        let f = 40.0;
        for d in [2.0, 4.0, 8.0] {
            let cam = Camera { position: [-d, 0.0, 0.5], yaw: 0.0, focal: f, cx: 32.0, cy: 32.0 };
            let mask = project_building(&unit_cube(), &cam, 64);
            let w = mask_width(&mask) as f64;
            assert!((w - f / d).abs() <= 1.0, "d={d}: width {w} vs {}", f / d);
        }
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let cam = Camera { position: [-3.0, 0.0, 0.5], yaw: std::f64::consts::PI, focal: 30.0, cx: 16.0, cy: 16.0 };
        assert_eq!(project_building(&unit_cube(), &cam, 32).count(), 0);
        assert_eq!(raycast_building(&unit_cube(), &cam, 32).count(), 0);
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // Camera inside the footprint's x-range, looking along +x.
        let b = Building { footprint: vec![[-5.0, -1.0], [5.0, -1.0], [5.0, 1.0], [-5.0, 1.0]], height: 3.0 };
        let cam = Camera { position: [0.0, -3.0, 1.5], yaw: std::f64::consts::FRAC_PI_2, focal: 16.0, cx: 16.0, cy: 16.0 };
        let proj = project_building(&b, &cam, 32);
        let ray = raycast_building(&b, &cam, 32);
        assert!(proj.count() > 0);
        let agree = proj.values().iter().zip(ray.values()).filter(|(a, b)| a == b).count();
        assert!(agree >= 1020, "agreement {agree}");
    }

    #[test]
    fn top_down_square() {
        let b = Building { footprint: vec![[-4.0, -4.0], [4.0, -4.0], [4.0, 4.0], [-4.0, 4.0]], height: 1.0 };
        let m = top_down_mask(&b, 16.0, 16);
        assert_eq!(m.count(), 64);
        assert!(m.get(4, 4) && m.get(11, 11) && !m.get(3, 3));
    }
}
