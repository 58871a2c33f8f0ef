//! The four ways a footprint mask can isolate the target building.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingStrategy {
    /// Unmodified RGB.
    Full,
    /// `I ⊙ M`: background zeroed.
    Crop,
    /// `I ⊙ (1 − M)`: building zeroed, context kept.
    InvCrop,
    /// `[I; M]`: mask appended as a fourth channel.
    Rgbm,
}

impl MaskingStrategy {
    pub const ALL: [MaskingStrategy; 4] =
        [MaskingStrategy::Full, MaskingStrategy::Crop, MaskingStrategy::InvCrop, MaskingStrategy::Rgbm];

    /// Channel count of images produced by this strategy.
    pub fn channels(self) -> usize {
        match self {
            MaskingStrategy::Rgbm => 4,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MaskingStrategy::Full => "full",
            MaskingStrategy::Crop => "crop",
            MaskingStrategy::InvCrop => "inv_crop",
            MaskingStrategy::Rgbm => "rgbm",
        }
    }
}

impl fmt::Display for MaskingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MaskingStrategy::Full),
            "crop" => Ok(MaskingStrategy::Crop),
            "inv_crop" | "inv-crop" => Ok(MaskingStrategy::InvCrop),
            "rgbm" | "rgb-m" => Ok(MaskingStrategy::Rgbm),
            other => Err(Error::config(format!("unknown masking strategy `{other}`"))),
        }
    }
}

/// Applies a masking strategy to a 3-channel image.
///
/// `Full` ignores the mask entirely (it may be absent); every other
/// strategy requires a mask of the image's size.
pub fn apply_masking(img: &Image, mask: Option<&BinaryMask>, strategy: MaskingStrategy) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::validation(format!(
            "masking expects an RGB image, got {} channels",
            img.channels()
        )));
    }
    if strategy == MaskingStrategy::Full {
        return Ok(img.clone());
    }
    let mask = mask.ok_or_else(|| Error::validation(format!("strategy {strategy} needs a mask")))?;
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(Error::validation(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height(),
            mask.width(),
            img.height(),
            img.width()
        )));
    }
    let m = mask.values();
    Ok(match strategy {
        MaskingStrategy::Crop => img.map_pixels(|i, p| if m[i] == 1 { p } else { 0.0 }),
        MaskingStrategy::InvCrop => img.map_pixels(|i, p| if m[i] == 1 { 0.0 } else { p }),
        MaskingStrategy::Rgbm => img.with_extra_channel(mask),
        MaskingStrategy::Full => unreachable!(),
    })
}
