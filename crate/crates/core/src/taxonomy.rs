//! The two label tasks and their class names.

use serde::{Deserialize, Serialize};

pub const NUM_ELEMENTS: usize = 6;
pub const NUM_MATERIALS: usize = 7;
pub const NUM_CLASSES: usize = NUM_ELEMENTS + NUM_MATERIALS;

pub const ELEMENT_NAMES: [&str; NUM_ELEMENTS] = [
    "solar_panels",
    "dormer",
    "skylight",
    "roof_window",
    "chimney",
    "external_installations",
];

pub const MATERIAL_NAMES: [&str; NUM_MATERIALS] =
    ["bitumen", "slate", "tiles", "aluminium", "thatch", "corrugated_sheets", "glass"];

/// Material indices averaged by mAP*: everything except thatch and glass.
pub const RELIABLE_MATERIALS: [usize; 5] = [0, 1, 2, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Elements,
    Materials,
}

/// Name of a class in the flat 13-class order (elements first).
pub fn class_name(index: usize) -> &'static str {
    if index < NUM_ELEMENTS {
        ELEMENT_NAMES[index]
    } else {
        MATERIAL_NAMES[index - NUM_ELEMENTS]
    }
}

pub fn class_names() -> impl Iterator<Item = &'static str> {
    ELEMENT_NAMES.iter().chain(MATERIAL_NAMES.iter()).copied()
}

pub fn class_index(name: &str) -> Option<usize> {
    class_names().position(|n| n == name)
}

/// Multi-hot targets for both tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Labels {
    pub elements: [bool; NUM_ELEMENTS],
    pub materials: [bool; NUM_MATERIALS],
}

impl Labels {
    pub fn from_flat(flags: &[bool; NUM_CLASSES]) -> Self {
        let mut l = Labels::default();
        l.elements.copy_from_slice(&flags[..NUM_ELEMENTS]);
        l.materials.copy_from_slice(&flags[NUM_ELEMENTS..]);
        l
    }

    pub fn flat(&self) -> [bool; NUM_CLASSES] {
        let mut out = [false; NUM_CLASSES];
        out[..NUM_ELEMENTS].copy_from_slice(&self.elements);
        out[NUM_ELEMENTS..].copy_from_slice(&self.materials);
        out
    }

    pub fn get(&self, class: usize) -> bool {
        self.flat()[class]
    }

    /// Bit string in class order, e.g. `"010000" + "1000000"`.
    pub fn bits(&self) -> String {
        self.flat().iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bits(bits: &str) -> Option<Self> {
        if bits.len() != NUM_CLASSES {
            return None;
        }
        let mut flags = [false; NUM_CLASSES];
        for (f, c) in flags.iter_mut().zip(bits.chars()) {
            *f = match c {
                '0' => false,
                '1' => true,
                _ => return None,
            };
        }
        Some(Self::from_flat(&flags))
    }
}
