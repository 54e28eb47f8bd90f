//! Run configuration: flat `key = value` files, overridable from the
//! command line. Later sources win: built-in defaults, then the file, then
//! `--set` pairs, then dedicated flags such as `--seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, Split};
use crate::error::{OcrlError, Result};
use crate::model::ModelConfig;
use crate::ocrl::Ablations;
use crate::scenegen::{QaConfig, RenderConfig, SceneConfig, Template};
use crate::tubelets::TrackParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateSet {
    All,
    /// Only templates that need relations between objects or event timing.
    Relational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split: Split,

    pub scenes: usize,
    pub qa_per_category: usize,
    pub templates: TemplateSet,
    pub max_count: usize,
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub p_miss: f64,
    pub jitter: f64,
    pub feature_noise: f64,

    pub d: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub d_a: usize,
    pub d_c: usize,
    pub clips: usize,
    pub clip_len: usize,
    pub objects: usize,
    pub layers: usize,
    pub steps: usize,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Use at most this many training records.
    pub train_limit: Option<usize>,
    /// Evaluate at most this many records.
    pub eval_limit: Option<usize>,

    pub no_gating: bool,
    pub no_temporal_attention: bool,
    pub gcn_layers: Option<usize>,
    pub no_bilstm: bool,
    pub no_context: bool,

    pub variants: Vec<String>,
    pub ablate_seeds: Vec<u64>,
    pub ablate_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            split: Split::Test,
            scenes: 200,
            qa_per_category: 2,
            templates: TemplateSet::All,
            max_count: 6,
            frames: 16,
            min_objects: 2,
            max_objects: 5,
            p_miss: 0.05,
            jitter: 0.5,
            feature_noise: 0.05,
            d: 32,
            d_h: 16,
            d_w: 16,
            d_a: 24,
            d_c: 16,
            clips: 4,
            clip_len: 4,
            objects: 6,
            layers: 2,
            steps: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 16,
            epochs: 30,
            train_limit: None,
            eval_limit: None,
            no_gating: false,
            no_temporal_attention: false,
            gcn_layers: None,
            no_bilstm: false,
            no_context: false,
            variants: Vec::new(),
            ablate_seeds: vec![0, 1, 2],
            ablate_steps: 2,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| OcrlError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(OcrlError::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Settings at the scale of the original experiments, for reference.
    pub fn full_scale() -> Self {
        Self {
            d: 512,
            d_w: 300,
            d_h: 256,
            clips: 10,
            clip_len: 16,
            frames: 160,
            objects: 40,
            layers: 6,
            steps: 12,
            lr: 1e-4,
            batch: 64,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "split" => self.split = Split::parse(v)?,
            "scenes" => self.scenes = parse(key, v)?,
            "qa_per_category" => self.qa_per_category = parse(key, v)?,
            "templates" => {
                self.templates = match v {
                    "all" => TemplateSet::All,
                    "relational" => TemplateSet::Relational,
                    _ => return Err(OcrlError::Config(format!("unknown template set `{v}`"))),
                }
            }
            "max_count" => self.max_count = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "min_objects" => self.min_objects = parse(key, v)?,
            "max_objects" => self.max_objects = parse(key, v)?,
            "p_miss" => self.p_miss = parse(key, v)?,
            "jitter" => self.jitter = parse(key, v)?,
            "feature_noise" => self.feature_noise = parse(key, v)?,
            "d" => self.d = parse(key, v)?,
            "d_h" => self.d_h = parse(key, v)?,
            "d_w" => self.d_w = parse(key, v)?,
            "d_a" => self.d_a = parse(key, v)?,
            "d_c" => self.d_c = parse(key, v)?,
            "clips" | "K" => self.clips = parse(key, v)?,
            "clip_len" | "t" => self.clip_len = parse(key, v)?,
            "objects" | "N" => self.objects = parse(key, v)?,
            "layers" | "L" => self.layers = parse(key, v)?,
            "steps" | "P" => self.steps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "train_limit" => self.train_limit = if v == "none" { None } else { Some(parse(key, v)?) },
            "eval_limit" => self.eval_limit = if v == "none" { None } else { Some(parse(key, v)?) },
            "no_gating" => self.no_gating = parse_bool(key, v)?,
            "no_temporal_attention" => self.no_temporal_attention = parse_bool(key, v)?,
            "gcn_layers" => self.gcn_layers = if v == "none" { None } else { Some(parse(key, v)?) },
            "no_bilstm" => self.no_bilstm = parse_bool(key, v)?,
            "no_context" => self.no_context = parse_bool(key, v)?,
            "variants" => self.variants = parse_list(key, v)?,
            "ablate_seeds" => self.ablate_seeds = parse_list(key, v)?,
            "ablate_steps" => self.ablate_steps = parse(key, v)?,
            other => return Err(OcrlError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| OcrlError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| OcrlError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OcrlError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(OcrlError::Config(format!("lr {} must be finite and nonnegative", self.lr)));
        }
        if self.batch == 0 {
            return Err(OcrlError::Config("batch must be at least 1".into()));
        }
        if self.clips * self.clip_len < self.frames {
            return Err(OcrlError::Config(format!(
                "{} clips of {} frames cannot cover {} frames",
                self.clips, self.clip_len, self.frames
            )));
        }
        self.model(1, 2).validate()
    }

    pub fn ablations(&self) -> Ablations {
        Ablations {
            no_gating: self.no_gating,
            no_temporal_attention: self.no_temporal_attention,
            no_bilstm: self.no_bilstm,
            no_context: self.no_context,
        }
    }

    pub fn model(&self, vocab: usize, answers: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            d_h: self.d_h,
            d_w: self.d_w,
            d_a: self.d_a,
            d_c: self.d_c,
            clips: self.clips,
            clip_len: self.clip_len,
            objects: self.objects,
            layers: self.gcn_layers.unwrap_or(self.layers),
            steps: self.steps,
            vocab,
            answers,
            ablations: self.ablations(),
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            scenes: self.scenes,
            qa: QaConfig {
                per_category: self.qa_per_category,
                max_count: self.max_count,
                templates: match self.templates {
                    TemplateSet::All => Template::ALL.to_vec(),
                    TemplateSet::Relational => Template::RELATIONAL_TEMPORAL.to_vec(),
                },
            },
            scene: SceneConfig {
                min_objects: self.min_objects,
                max_objects: self.max_objects,
                frames: self.frames,
                ..SceneConfig::default()
            },
            render: RenderConfig {
                p_miss: self.p_miss,
                jitter_sigma: self.jitter,
                feature_sigma: self.feature_noise,
                appearance_dim: self.d_a,
                context_dim: self.d_c,
                ..RenderConfig::default()
            },
            track: TrackParams::default(),
            train_fraction: 0.7,
            test_fraction: 0.2,
        }
    }

    /// Applies a named ablation variant on top of this config.
    pub fn with_variant(&self, name: &str) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "default" => {}
            "no_gating" => c.no_gating = true,
            "no_temporal_attention" => c.no_temporal_attention = true,
            "no_bilstm" => c.no_bilstm = true,
            "no_context" => c.no_context = true,
            other => match other.strip_prefix("gcn_layers_").map(str::parse::<usize>) {
                Some(Ok(l)) => c.gcn_layers = Some(l),
                _ => return Err(OcrlError::Config(format!("unknown variant `{other}`"))),
            },
        }
        Ok(c)
    }
}

/// Every ablation variant, default first.
pub const VARIANTS: [&str; 9] = [
    "default",
    "no_gating",
    "no_temporal_attention",
    "gcn_layers_0",
    "gcn_layers_1",
    "gcn_layers_4",
    "gcn_layers_8",
    "no_bilstm",
    "no_context",
];
