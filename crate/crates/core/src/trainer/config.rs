//! Experiment configuration and its flat-text form.

use std::collections::BTreeSet;

use crate::bnd::BndConfig;
use crate::config::FlatConfig;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::sagr::{MaskDirection, RectifyConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_epochs: usize,
    pub inc_epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Interleave stored exemplars with novel samples during incremental tasks.
    pub replay: bool,
    /// Train on a randomly rotated and rescaled copy of every sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_epochs: 10,
            inc_epochs: 20,
            lr_start: 1e-3,
            lr_end: 1e-4,
            weight_decay: 1e-4,
            batch: 16,
            replay: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_epochs == 0 || self.inc_epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return Err(Error::invalid("learning rates must satisfy lr_start >= lr_end > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TamConfig {
    /// Color generator hidden width as a fraction of the feature dim.
    pub hidden_ratio: f64,
    pub temperature: f64,
    /// Include the zero-shot visual term in the logits.
    pub visual: bool,
    /// Apply the alignment loss during incremental tasks as well.
    pub lc_incremental: bool,
}

impl Default for TamConfig {
    fn default() -> Self {
        Self { hidden_ratio: 0.5, temperature: 1.0, visual: true, lc_incremental: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub views: usize,
    pub size: usize,
    pub splat: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { views: 4, size: 64, splat: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub base: Vec<String>,
    /// Class names of every incremental task.
    pub tasks: Vec<Vec<String>>,
    pub per_class: usize,
    pub test_per_class: usize,
    pub shots: usize,
    pub points: usize,
    pub jitter: f64,
    pub scale_jitter: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let names = |l: &[&str]| l.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            base: names(&["sphere", "cube", "cylinder", "cone", "torus", "pyramid", "ellipsoid", "helix"]),
            tasks: vec![names(&["cross", "ring"]), names(&["slab", "rod"])],
            per_class: 100,
            test_per_class: 20,
            shots: 5,
            points: 256,
            jitter: 0.01,
            scale_jitter: 0.1,
        }
    }
}

/// Which learner to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Rectification, texture amplification, routing and replay.
    Full,
    /// Plain fine-tuning of one network on each task, no routing or replay.
    FineTune,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "finetune" => Ok(Mode::FineTune),
            other => Err(Error::invalid(format!("mode must be 'full' or 'finetune', got '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::FineTune => "finetune",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    pub data: DataConfig,
    pub render: RenderConfig,
    pub encoder: EncoderConfig,
    pub sagr: RectifyConfig,
    pub tam: TamConfig,
    pub alpha_mc: f64,
    pub beta_c: f64,
    pub bnd: BndConfig,
    pub train: TrainConfig,
    pub exemplars_per_class: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Full,
            data: DataConfig::default(),
            render: RenderConfig::default(),
            encoder: EncoderConfig::default(),
            sagr: RectifyConfig::default(),
            tam: TamConfig::default(),
            alpha_mc: 0.1,
            beta_c: 0.1,
            bnd: BndConfig::default(),
            train: TrainConfig::default(),
            exemplars_per_class: 1,
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// The single-core desk preset: narrower encoder, 32-pixel views with a
    /// matching 2-pixel splat and a softened zero-shot term. Everything else
    /// keeps its default.
    pub fn desk(seed: u64) -> Self {
        let mut c = Self { seed, ..Self::default() };
        c.encoder.dim = 32;
        c.encoder.tokens = 16;
        c.encoder.ffn_hidden = 64;
        c.render.size = 32;
        c.render.splat = 2;
        c.tam.temperature = 10.0;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sagr.validate(self.encoder.layers)?;
        self.train.validate()?;
        if self.data.base.is_empty() {
            return Err(Error::invalid("the base task has no classes"));
        }
        if self.render.views == 0 {
            return Err(Error::invalid("at least one view is required"));
        }
        if !self.render.size.is_multiple_of(self.encoder.patch) {
            return Err(Error::invalid("image size must be a multiple of the patch size"));
        }
        if !(self.tam.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.bnd.threshold > 0.0 && self.bnd.threshold < 1.0) {
            return Err(Error::invalid("bnd threshold must lie in (0, 1)"));
        }
        if self.exemplars_per_class == 0 {
            return Err(Error::invalid("at least one exemplar per class is required"));
        }
        Ok(())
    }

    /// Every class name, base first.
    pub fn class_order(&self) -> Vec<String> {
        self.data.base.iter().chain(self.data.tasks.iter().flatten()).cloned().collect()
    }

    /// Overrides defaults with the keys present in `cfg`.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let mut tasks = Vec::new();
        while let Some(t) = cfg.get_list::<String>(&format!("data.task.{}", tasks.len() + 1))? {
            tasks.push(t);
        }
        if tasks.is_empty() {
            tasks = d.data.tasks.clone();
        }
        let known: BTreeSet<&str> = KEYS.iter().copied().collect();
        for k in cfg.keys() {
            if !known.contains(k) && !k.starts_with("data.task.") {
                return Err(Error::invalid(format!("unknown config key '{k}'")));
            }
        }
        let c = Self {
            seed: cfg.get_or("seed", d.seed)?,
            mode: cfg.get_or("train.mode", d.mode)?,
            data: DataConfig {
                base: cfg.get_list("data.base")?.unwrap_or(d.data.base),
                tasks,
                per_class: cfg.get_or("data.per_class", d.data.per_class)?,
                test_per_class: cfg.get_or("data.test_per_class", d.data.test_per_class)?,
                shots: cfg.get_or("data.shots", d.data.shots)?,
                points: cfg.get_or("data.points", d.data.points)?,
                jitter: cfg.get_or("data.jitter", d.data.jitter)?,
                scale_jitter: cfg.get_or("data.scale_jitter", d.data.scale_jitter)?,
            },
            render: RenderConfig {
                views: cfg.get_or("render.views", d.render.views)?,
                size: cfg.get_or("render.size", d.render.size)?,
                splat: cfg.get_or("render.splat", d.render.splat)?,
            },
            encoder: EncoderConfig {
                layers: cfg.get_or("encoder.N_l", d.encoder.layers)?,
                dim: cfg.get_or("encoder.d_f", d.encoder.dim)?,
                heads: cfg.get_or("encoder.heads", d.encoder.heads)?,
                tokens: cfg.get_or("encoder.tokens", d.encoder.tokens)?,
                ffn_hidden: cfg.get_or("encoder.ffn_hidden", d.encoder.ffn_hidden)?,
                patch: cfg.get_or("encoder.patch", d.encoder.patch)?,
                seed: cfg.get_or("encoder.seed", d.encoder.seed)?,
            },
            sagr: RectifyConfig {
                layers: cfg.get_list::<usize>("sagr.L_r")?.map(|v| v.into_iter().collect()).unwrap_or(d.sagr.layers),
                mask_ratio: cfg.get_or("sagr.M_R", d.sagr.mask_ratio)?,
                n_sa: cfg.get_or("sagr.N_sa", d.sagr.n_sa)?,
                w_init: cfg.get_or("sagr.w", d.sagr.w_init)?,
                lambda_init: cfg.get_or("sagr.lambda_init", d.sagr.lambda_init)?,
                direction: cfg.get_or::<MaskDirection>("sagr.mask_direction", d.sagr.direction)?,
                masked_branch: cfg.get_or("sagr.masked_branch", d.sagr.masked_branch)?,
            },
            tam: TamConfig {
                hidden_ratio: cfg.get_or("tam.hidden_ratio", d.tam.hidden_ratio)?,
                temperature: cfg.get_or("tam.temperature", d.tam.temperature)?,
                visual: cfg.get_or("tam.visual", d.tam.visual)?,
                lc_incremental: cfg.get_or("tam.lc_incremental", d.tam.lc_incremental)?,
            },
            alpha_mc: cfg.get_or("loss.alpha_mc", d.alpha_mc)?,
            beta_c: cfg.get_or("loss.beta_c", d.beta_c)?,
            bnd: BndConfig {
                threshold: cfg.get_or("bnd.threshold", d.bnd.threshold)?,
                epochs: cfg.get_or("bnd.epochs", d.bnd.epochs)?,
                lr: cfg.get_or("bnd.lr", d.bnd.lr)?,
                batch: cfg.get_or("bnd.batch", d.bnd.batch)?,
                samples_per_side: cfg.get_or("bnd.samples_per_side", d.bnd.samples_per_side)?,
                augment: cfg.get_or("bnd.augment", d.bnd.augment)?,
            },
            train: TrainConfig {
                base_epochs: cfg.get_or("train.base_epochs", d.train.base_epochs)?,
                inc_epochs: cfg.get_or("train.inc_epochs", d.train.inc_epochs)?,
                lr_start: cfg.get_or("train.lr_start", d.train.lr_start)?,
                lr_end: cfg.get_or("train.lr_end", d.train.lr_end)?,
                weight_decay: cfg.get_or("train.weight_decay", d.train.weight_decay)?,
                batch: cfg.get_or("train.batch", d.train.batch)?,
                replay: cfg.get_or("train.replay", d.train.replay)?,
                augment: cfg.get_or("train.augment", d.train.augment)?,
            },
            exemplars_per_class: cfg.get_or("exemplars.per_class", d.exemplars_per_class)?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Recovers the config echoed at the top of a run or checkpoint manifest.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let all = FlatConfig::parse(text)?;
        let mut f = FlatConfig::new();
        for k in all.keys() {
            if !["run.", "checksum.", "acc.", "payload."].iter().any(|p| k.starts_with(p)) {
                f.set(k, all.get_str(k).unwrap_or_default());
            }
        }
        Self::from_flat(&f)
    }

    pub fn to_flat(&self) -> FlatConfig {
        let mut f = FlatConfig::new();
        f.set("seed", self.seed);
        f.set("data.base", join(&self.data.base));
        for (i, t) in self.data.tasks.iter().enumerate() {
            f.set(&format!("data.task.{}", i + 1), join(t));
        }
        f.set("data.per_class", self.data.per_class);
        f.set("data.test_per_class", self.data.test_per_class);
        f.set("data.shots", self.data.shots);
        f.set("data.points", self.data.points);
        f.set("data.jitter", self.data.jitter);
        f.set("data.scale_jitter", self.data.scale_jitter);
        f.set("render.views", self.render.views);
        f.set("render.size", self.render.size);
        f.set("render.splat", self.render.splat);
        f.set("encoder.N_l", self.encoder.layers);
        f.set("encoder.d_f", self.encoder.dim);
        f.set("encoder.heads", self.encoder.heads);
        f.set("encoder.tokens", self.encoder.tokens);
        f.set("encoder.ffn_hidden", self.encoder.ffn_hidden);
        f.set("encoder.patch", self.encoder.patch);
        f.set("encoder.seed", self.encoder.seed);
        f.set("sagr.L_r", format!("{{{}}}", join(&self.sagr.layers.iter().collect::<Vec<_>>())));
        f.set("sagr.M_R", self.sagr.mask_ratio);
        f.set("sagr.N_sa", self.sagr.n_sa);
        f.set("sagr.w", self.sagr.w_init);
        f.set("sagr.lambda_init", self.sagr.lambda_init);
        f.set("sagr.mask_direction", self.sagr.direction);
        f.set("sagr.masked_branch", self.sagr.masked_branch);
        f.set("tam.hidden_ratio", self.tam.hidden_ratio);
        f.set("tam.temperature", self.tam.temperature);
        f.set("tam.visual", self.tam.visual);
        f.set("tam.lc_incremental", self.tam.lc_incremental);
        f.set("loss.alpha_mc", self.alpha_mc);
        f.set("loss.beta_c", self.beta_c);
        f.set("bnd.threshold", self.bnd.threshold);
        f.set("bnd.epochs", self.bnd.epochs);
        f.set("bnd.lr", self.bnd.lr);
        f.set("bnd.batch", self.bnd.batch);
        f.set("bnd.samples_per_side", self.bnd.samples_per_side);
        f.set("bnd.augment", self.bnd.augment);
        f.set("train.mode", self.mode);
        f.set("train.base_epochs", self.train.base_epochs);
        f.set("train.inc_epochs", self.train.inc_epochs);
        f.set("train.lr_start", self.train.lr_start);
        f.set("train.lr_end", self.train.lr_end);
        f.set("train.weight_decay", self.train.weight_decay);
        f.set("train.batch", self.train.batch);
        f.set("train.replay", self.train.replay);
        f.set("train.augment", self.train.augment);
        f.set("exemplars.per_class", self.exemplars_per_class);
        f
    }
}

const KEYS: &[&str] = &[
    "seed",
    "data.base",
    "data.per_class",
    "data.test_per_class",
    "data.shots",
    "data.points",
    "data.jitter",
    "data.scale_jitter",
    "render.views",
    "render.size",
    "render.splat",
    "encoder.N_l",
    "encoder.d_f",
    "encoder.heads",
    "encoder.tokens",
    "encoder.ffn_hidden",
    "encoder.patch",
    "encoder.seed",
    "sagr.L_r",
    "sagr.M_R",
    "sagr.N_sa",
    "sagr.w",
    "sagr.lambda_init",
    "sagr.mask_direction",
    "sagr.masked_branch",
    "tam.hidden_ratio",
    "tam.temperature",
    "tam.visual",
    "tam.lc_incremental",
    "loss.alpha_mc",
    "loss.beta_c",
    "bnd.threshold",
    "bnd.epochs",
    "bnd.lr",
    "bnd.batch",
    "bnd.samples_per_side",
    "bnd.augment",
    "train.mode",
    "train.base_epochs",
    "train.inc_epochs",
    "train.lr_start",
    "train.lr_end",
    "train.weight_decay",
    "train.batch",
    "train.replay",
    "train.augment",
    "exemplars.per_class",
];
