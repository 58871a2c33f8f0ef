//! Architecture dispatch and checkpoint files.

use std::fs;
use std::path::Path;

use crate::baselines::{
    Branch, ConcatConfig, ConcatModel, FvtConfig, FvtModel, PoolMode, UnimodalConfig, UnimodalModel, CONCAT_MAGIC,
    FVT_MAGIC, UNIMODAL_MAGIC,
};
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, Checkpoint, Classifier, Logits, ModelKind};
use crate::params::{Graph, ParamStore};
use crate::perceiver::{PerceiverConfig, PerceiverModel, PERCEIVER_MAGIC};
use crate::sample::PreparedSample;
use crate::scalar::Scalar;

/// Everything needed to build any of the five architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub backbone: BackboneConfig,
    pub pool: PoolMode,
    /// Used when `kind` is `Perceiver`; its backbone is replaced by `backbone`.
    pub perceiver: PerceiverConfig,
    /// Used when `kind` is `Fvt`; its backbone is replaced by `backbone`.
    pub fvt: FvtConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, backbone: BackboneConfig) -> Self {
        Self { kind, backbone, pool: PoolMode::Max, perceiver: PerceiverConfig::default(), fvt: FvtConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub enum AnyModel<T> {
    Unimodal(UnimodalModel<T>),
    Concat(ConcatModel<T>),
    Fvt(FvtModel<T>),
    Perceiver(PerceiverModel<T>),
}

fn words_for(magic: &[u8; 4]) -> Option<usize> {
    match *magic {
        UNIMODAL_MAGIC => Some(UnimodalConfig::WORDS),
        CONCAT_MAGIC => Some(ConcatConfig::WORDS),
        FVT_MAGIC => Some(FvtConfig::WORDS),
        PERCEIVER_MAGIC => Some(PerceiverConfig::WORDS),
        _ => None,
    }
}

impl<T: Scalar> AnyModel<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let backbone = spec.backbone;
        Ok(match spec.kind {
            ModelKind::Satellite | ModelKind::Street => {
                let branch = if spec.kind == ModelKind::Satellite { Branch::Satellite } else { Branch::Street };
                AnyModel::Unimodal(UnimodalModel::new(UnimodalConfig { backbone, branch, pool: spec.pool }, seed)?)
            }
            ModelKind::Concat => AnyModel::Concat(ConcatModel::new(ConcatConfig { backbone, pool: spec.pool }, seed)?),
            ModelKind::Fvt => AnyModel::Fvt(FvtModel::new(FvtConfig { backbone, ..spec.fvt }, seed)?),
            ModelKind::Perceiver => {
                AnyModel::Perceiver(PerceiverModel::new(PerceiverConfig { backbone, ..spec.perceiver }, seed)?)
            }
        })
    }

    fn inner(&self) -> &dyn Classifier<T> {
        match self {
            AnyModel::Unimodal(m) => m,
            AnyModel::Concat(m) => m,
            AnyModel::Fvt(m) => m,
            AnyModel::Perceiver(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier<T> {
        match self {
            AnyModel::Unimodal(m) => m,
            AnyModel::Concat(m) => m,
            AnyModel::Fvt(m) => m,
            AnyModel::Perceiver(m) => m,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::of(self.inner())
    }

    /// Rebuilds the architecture named by the checkpoint header and loads
    /// its parameters.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let w = &ckpt.words;
        let mut model = match ckpt.magic {
            UNIMODAL_MAGIC => AnyModel::Unimodal(UnimodalModel::new(UnimodalConfig::from_words(w)?, 0)?),
            CONCAT_MAGIC => AnyModel::Concat(ConcatModel::new(ConcatConfig::from_words(w)?, 0)?),
            FVT_MAGIC => AnyModel::Fvt(FvtModel::new(FvtConfig::from_words(w)?, 0)?),
            PERCEIVER_MAGIC => AnyModel::Perceiver(PerceiverModel::new(PerceiverConfig::from_words(w)?, 0)?),
            m => return Err(Error::validation(format!("unknown checkpoint magic {:?}", String::from_utf8_lossy(&m)))),
        };
        ckpt.load_into(model.params_mut())?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.checkpoint().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read_from(bytes, words_for)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl<T: Scalar> Classifier<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn params(&self) -> &ParamStore<T> {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        self.inner_mut().params_mut()
    }

    fn forward(&self, g: &mut Graph<'_, T>, x: &PreparedSample<T>) -> Result<Logits> {
        self.inner().forward(g, x)
    }

    fn magic(&self) -> [u8; 4] {
        self.inner().magic()
    }

    fn config_words(&self) -> Vec<u32> {
        self.inner().config_words()
    }

    fn check_input(&self, x: &PreparedSample<T>) -> Result<()> {
        self.inner().check_input(x)
    }
}
