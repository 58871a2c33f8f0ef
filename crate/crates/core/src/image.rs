//! Planar images, binary masks, and their raw on-disk encodings.
//!
//! `.lft`: magic `LFT0`, u32 channels, u32 height, u32 width (little-endian),
//! then f32 pixels row-major over (channel, row, col).
//! `.lfm`: magic `LFM0`, u32 height, u32 width, then one u8 (0/1) per pixel.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 4] = b"LFT0";
pub const MASK_MAGIC: &[u8; 4] = b"LFM0";

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if !(channels == 3 || channels == 4) {
            return Err(Error::validation(format!("images have 3 or 4 channels, got {channels}")));
        }
        if height == 0 || width == 0 || pixels.len() != channels * height * width {
            return Err(Error::validation(format!(
                "{} pixels for a {channels}x{height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("pixel values must lie in [0, 1]"));
        }
        Ok(Self { channels, height, width, pixels })
    }

    /// A constant RGB image.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * height * width);
        for c in rgb {
            pixels.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), height * width));
        }
        Self { channels: 3, height, width, pixels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Writes a pixel, clamping to [0, 1].
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = (c * self.height + y) * self.width + x;
        self.pixels[i] = v.clamp(0.0, 1.0);
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn mean_intensity(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.pixels[(c * self.height + y) * self.width + x] =
                        self.get(c, y, self.width - 1 - x);
                }
            }
        }
        out
    }

    /// Adds `delta` to the colour channels (not a mask channel), clamped.
    pub fn adjust_brightness(&self, delta: f32) -> Self {
        let mut out = self.clone();
        let n = self.height * self.width;
        for p in &mut out.pixels[..3 * n] {
            *p = (*p + delta).clamp(0.0, 1.0);
        }
        out
    }

    /// Appends a mask as an extra channel.
    pub(crate) fn with_extra_channel(&self, mask: &BinaryMask) -> Self {
        let mut pixels = self.pixels.clone();
        pixels.extend(mask.values().iter().map(|&m| m as f32));
        Self { channels: self.channels + 1, height: self.height, width: self.width, pixels }
    }

    pub(crate) fn map_pixels(&self, f: impl Fn(usize, f32) -> f32) -> Self {
        let n = self.height * self.width;
        let pixels = self.pixels.iter().enumerate().map(|(i, &p)| f(i % n, p)).collect();
        Self { pixels, ..self.clone() }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(IMAGE_MAGIC)?;
        for d in [self.channels, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for p in &self.pixels {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != IMAGE_MAGIC {
            return Err(Error::validation("not an LFT0 image file"));
        }
        let c = read_u32(&mut r)? as usize;
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; c * h * w * 4];
        r.read_exact(&mut buf)?;
        let pixels = buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Self::new(c, h, w, pixels)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "{} mask values for {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::validation("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, values })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0; height * width] }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![1; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.values[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.values[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of pixels inside the mask.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.values[y * self.width + x] = self.values[y * self.width + self.width - 1 - x];
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MASK_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&self.values)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MASK_MAGIC {
            return Err(Error::validation("not an LFM0 mask file"));
        }
        let h = read_u32(&mut r)? as usize;
        let w = read_u32(&mut r)? as usize;
        let mut values = vec![0u8; h * w];
        r.read_exact(&mut values)?;
        Self::new(h, w, values)
    }
}
