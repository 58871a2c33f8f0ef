//! Flat `key = value` experiment configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Keys accept
//! `-` or `_` as the word separator, so `--lr-heads 1e-3` on the command
//! line and `lr_heads = 1e-3` in a file name the same setting.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use latentfuse::synth::{DatasetConfig, SceneConfig};
use latentfuse::taxonomy::NUM_CLASSES;
use latentfuse::training::TrainConfig;
use latentfuse::{
    BackboneConfig, Error, FvtConfig, MaskingStrategy, ModelKind, ModelSpec, PerceiverConfig, PoolMode, Result,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Street-only and satellite-only attributes.
    Default,
    /// Some attributes only visible as context around the footprint.
    Context,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Variant::Default),
            "context" => Ok(Variant::Context),
            other => Err(Error::Config(format!("unknown dataset variant `{other}`"))),
        }
    }
}

impl Variant {
    fn as_str(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::Context => "context",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub mask_sat: MaskingStrategy,
    pub mask_street: MaskingStrategy,
    pub pool: PoolMode,
    pub seed: u64,

    pub dataset_size: usize,
    pub priors: [f64; NUM_CLASSES],
    pub variant: Variant,
    /// Generate samples without street views and keep them for every model.
    pub zero_views: bool,
    /// Load this dataset instead of generating one.
    pub dataset_dir: Option<PathBuf>,

    pub image_size: usize,
    pub patch_size: usize,
    pub token_dim: usize,

    pub num_latents: usize,
    pub latent_dim: usize,
    pub blocks: usize,
    pub layers: usize,
    pub out_dim: usize,
    pub mlp_ratio: usize,
    pub latent_heads: usize,

    pub fvt_layers: usize,
    pub fvt_heads: usize,

    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_heads: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub t_max: Option<usize>,
    pub augment: bool,

    pub sweep: Option<String>,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let b = BackboneConfig::default();
        let p = PerceiverConfig::default();
        let f = FvtConfig::default();
        let t = TrainConfig::default();
        Self {
            model: ModelKind::Perceiver,
            mask_sat: MaskingStrategy::Full,
            mask_street: MaskingStrategy::Full,
            pool: PoolMode::Max,
            seed: 0,
            dataset_size: 2000,
            priors: [0.3; NUM_CLASSES],
            variant: Variant::Default,
            zero_views: false,
            dataset_dir: None,
            image_size: b.image_size,
            patch_size: b.patch_size,
            token_dim: b.token_dim,
            num_latents: p.num_latents,
            latent_dim: p.latent_dim,
            blocks: p.blocks,
            layers: p.layers,
            out_dim: p.out_dim,
            mlp_ratio: p.mlp_ratio,
            latent_heads: p.latent_heads,
            fvt_layers: f.layers,
            fvt_heads: f.heads,
            epochs: 20,
            patience: t.patience,
            batch_size: t.batch_size,
            lr_backbone: t.lr_backbone,
            lr_heads: t.lr_heads,
            weight_decay: t.weight_decay,
            warmup_iters: t.warmup_iters,
            t_max: t.t_max,
            augment: true,
            sweep: None,
            parallel: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Canonical spelling of a key: lower case with underscores.
pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_").to_ascii_lowercase()
}

impl ExperimentConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let v = value.trim();
        let k = key.as_str();
        match k {
            "model" => self.model = v.parse()?,
            "mask" => {
                self.mask_sat = v.parse()?;
                self.mask_street = self.mask_sat;
            }
            "mask_sat" => self.mask_sat = v.parse()?,
            "mask_street" => self.mask_street = v.parse()?,
            "pool" => self.pool = v.parse()?,
            "seed" => self.seed = parse(k, v)?,
            "dataset_size" => self.dataset_size = parse(k, v)?,
            "prior" => self.priors = [parse(k, v)?; NUM_CLASSES],
            "priors" => {
                let list: Vec<f64> = v.split(',').map(|p| parse(k, p.trim())).collect::<Result<_>>()?;
                self.priors = list.try_into().map_err(|l: Vec<f64>| {
                    Error::Config(format!("`priors` needs {NUM_CLASSES} values, got {}", l.len()))
                })?;
            }
            "variant" => self.variant = v.parse()?,
            "zero_views" | "dataset_with_zero_views" => self.zero_views = parse_bool(k, v)?,
            "dataset_dir" => self.dataset_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "image_size" => self.image_size = parse(k, v)?,
            "patch_size" => self.patch_size = parse(k, v)?,
            "token_dim" => self.token_dim = parse(k, v)?,
            "num_latents" => self.num_latents = parse(k, v)?,
            "latent_dim" => self.latent_dim = parse(k, v)?,
            "blocks" => self.blocks = parse(k, v)?,
            "layers" => self.layers = parse(k, v)?,
            "out_dim" => self.out_dim = parse(k, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(k, v)?,
            "latent_heads" => self.latent_heads = parse(k, v)?,
            "fvt_layers" => self.fvt_layers = parse(k, v)?,
            "fvt_heads" => self.fvt_heads = parse(k, v)?,
            "epochs" => self.epochs = parse(k, v)?,
            "patience" => self.patience = parse(k, v)?,
            "batch_size" => self.batch_size = parse(k, v)?,
            "lr_backbone" => self.lr_backbone = parse(k, v)?,
            "lr_heads" => self.lr_heads = parse(k, v)?,
            "weight_decay" => self.weight_decay = parse(k, v)?,
            "warmup_iters" => self.warmup_iters = parse(k, v)?,
            "t_max" => self.t_max = if v == "auto" { None } else { Some(parse(k, v)?) },
            "augment" => self.augment = parse_bool(k, v)?,
            "sweep" => self.sweep = (!v.is_empty()).then(|| v.to_string()),
            "parallel" => self.parallel = parse_bool(k, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every assignment of a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `--key value` pairs; a key without a value sets a boolean.
    pub fn apply_args(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected `--key value`, found `{}`", args[i])))?;
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else if args.get(i + 1).is_some_and(|v| !v.starts_with("--")) {
                self.set(key, &args[i + 1])?;
                i += 2;
            } else {
                self.set(key, "true")?;
                i += 1;
            }
        }
        Ok(())
    }

    /// Every setting as a config file that reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("model", self.model.to_string());
        line("mask_sat", self.mask_sat.to_string());
        line("mask_street", self.mask_street.to_string());
        line("pool", self.pool.to_string());
        line("seed", self.seed.to_string());
        line("dataset_size", self.dataset_size.to_string());
        line("priors", self.priors.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        line("variant", self.variant.as_str().to_string());
        line("zero_views", self.zero_views.to_string());
        line("dataset_dir", self.dataset_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        line("image_size", self.image_size.to_string());
        line("patch_size", self.patch_size.to_string());
        line("token_dim", self.token_dim.to_string());
        line("num_latents", self.num_latents.to_string());
        line("latent_dim", self.latent_dim.to_string());
        line("blocks", self.blocks.to_string());
        line("layers", self.layers.to_string());
        line("out_dim", self.out_dim.to_string());
        line("mlp_ratio", self.mlp_ratio.to_string());
        line("latent_heads", self.latent_heads.to_string());
        line("fvt_layers", self.fvt_layers.to_string());
        line("fvt_heads", self.fvt_heads.to_string());
        line("epochs", self.epochs.to_string());
        line("patience", self.patience.to_string());
        line("batch_size", self.batch_size.to_string());
        line("lr_backbone", self.lr_backbone.to_string());
        line("lr_heads", self.lr_heads.to_string());
        line("weight_decay", self.weight_decay.to_string());
        line("warmup_iters", self.warmup_iters.to_string());
        line("t_max", self.t_max.map_or("auto".to_string(), |t| t.to_string()));
        line("augment", self.augment.to_string());
        line("sweep", self.sweep.clone().unwrap_or_default());
        line("parallel", self.parallel.to_string());
        s
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            sat_channels: self.mask_sat.channels(),
            street_channels: self.mask_street.channels(),
            token_dim: self.token_dim,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let backbone = self.backbone();
        ModelSpec {
            kind: self.model,
            backbone,
            pool: self.pool,
            perceiver: PerceiverConfig {
                backbone,
                num_latents: self.num_latents,
                latent_dim: self.latent_dim,
                blocks: self.blocks,
                layers: self.layers,
                out_dim: self.out_dim,
                mlp_ratio: self.mlp_ratio,
                latent_heads: self.latent_heads,
            },
            fvt: FvtConfig { backbone, layers: self.fvt_layers, heads: self.fvt_heads, mlp_ratio: self.mlp_ratio },
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        let mut scene = match self.variant {
            Variant::Default => SceneConfig::default(),
            Variant::Context => SceneConfig::context_variant(),
        };
        scene.image_size = self.image_size;
        if self.zero_views {
            scene.max_views = 0;
        }
        DatasetConfig { size: self.dataset_size, seed: self.seed, priors: self.priors, scene }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            lr_backbone: self.lr_backbone,
            lr_heads: self.lr_heads,
            weight_decay: self.weight_decay,
            warmup_iters: self.warmup_iters,
            t_max: self.t_max,
            seed: self.seed,
            augment: self.augment.then(Default::default),
        }
    }

    /// Cross-field checks that do not need any data.
    pub fn validate(&self) -> Result<()> {
        self.backbone().validate()?;
        self.dataset().scene.validate()?;
        if self.dataset_size < 3 && self.dataset_dir.is_none() {
            return Err(Error::Config("dataset_size must allow train, validation and test splits".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if let Some(p) = self.priors.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("class prior {p} outside [0, 1]")));
        }
        Ok(())
    }
}
