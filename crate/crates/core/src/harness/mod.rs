//! End-to-end runs: dataset generation, training with checkpoints,
//! evaluation, gradient checks and ablation sweeps.

pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod train;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use diffcore::{checkpoint, Adam, ParamStore};
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, TemplateSet, VARIANTS};
pub use eval::{evaluate, CategoryMetrics, MetricsReport};
pub use train::{train, TrainOptions};

use crate::data::{examples, generate_dataset, video_inputs, write_atomic, Dataset, Example, Split};
use crate::error::{OcrlError, Result};
use crate::model::{Model, ModelConfig};
use crate::scenegen::Category;
use crate::seeds;
use crate::video::VideoInput;

pub const CHECKPOINT: &str = "checkpoint.bin";

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.data_config(), cfg.seed)?;
    ds.save(out)?;
    Ok(ds)
}

/// A dataset with its tracked videos, ready to feed models.
pub struct Prepared {
    pub dataset: Dataset,
    pub videos: Vec<Arc<VideoInput>>,
}

impl Prepared {
    pub fn new(dataset: Dataset, cfg: &RunConfig) -> Result<Self> {
        let videos = video_inputs(&dataset, cfg.objects, cfg.clips, cfg.clip_len)?;
        Ok(Self { dataset, videos })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Self::new(Dataset::load(&cfg.data)?, cfg)
    }

    /// Model config for `cfg` with feature widths taken from the data.
    pub fn model_config(&self, cfg: &RunConfig) -> ModelConfig {
        let r = &self.dataset.config.render;
        ModelConfig {
            d_a: r.appearance_dim,
            d_c: r.context_dim,
            ..cfg.model(self.dataset.vocab.len(), self.dataset.answers.len())
        }
    }

    pub fn examples(&self, split: Split) -> Result<Vec<Example>> {
        examples(&self.dataset, &self.videos, split)
    }
}

/// Optimiser settings that must match when resuming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainIdentity {
    seed: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    batch: usize,
}

impl TrainIdentity {
    fn of(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.seed,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            batch: cfg.batch,
        }
    }
}

fn checkpoint_meta(model: &ModelConfig, ident: &TrainIdentity, history: &[f64]) -> Result<Vec<(String, String)>> {
    let losses: Vec<String> = history.iter().map(|l| l.to_string()).collect();
    Ok(vec![
        ("model".into(), serde_json::to_string(model)?),
        ("train".into(), serde_json::to_string(ident)?),
        ("losses".into(), losses.join(",")),
    ])
}

fn meta_field<'a>(ck: &'a checkpoint::Checkpoint, key: &str) -> Result<&'a str> {
    ck.meta(key)
        .ok_or_else(|| OcrlError::Data(format!("checkpoint lacks `{key}`")))
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<f64>,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let ck = checkpoint::load(path).map_err(|e| OcrlError::Data(format!("{}: {e}", path.display())))?;
    let config: ModelConfig = serde_json::from_str(meta_field(&ck, "model")?)?;
    let losses = meta_field(&ck, "losses")?;
    let history = losses
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| OcrlError::Data(format!("bad loss `{s}` in checkpoint"))))
        .collect::<Result<Vec<_>>>()?;
    let model = Model::bind(config, &ck.store)?;
    Ok(LoadedCheckpoint {
        model,
        store: ck.store,
        history,
    })
}

pub fn adam(cfg: &RunConfig) -> Adam {
    Adam {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<f64>,
    pub report: MetricsReport,
}

/// Trains on the train split of `prep`, checkpointing into `out` after every
/// epoch when given. With `resume`, continues from an existing checkpoint in
/// `out`. Evaluates on `cfg.split` at the end.
pub fn train_run(cfg: &RunConfig, prep: &Prepared, out: Option<&Path>, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mc = prep.model_config(cfg);
    let ident = TrainIdentity::of(cfg);
    let ck_path = out.map(|o| o.join(CHECKPOINT));
    let resumed = match &ck_path {
        Some(p) if resume && p.exists() => {
            let ck = checkpoint::load(p).map_err(|e| OcrlError::Data(format!("{}: {e}", p.display())))?;
            let stored: TrainIdentity = serde_json::from_str(meta_field(&ck, "train")?)?;
            let stored_model: ModelConfig = serde_json::from_str(meta_field(&ck, "model")?)?;
            if stored != ident || stored_model != mc {
                return Err(OcrlError::Config(format!(
                    "{} was written by a different configuration",
                    p.display()
                )));
            }
            Some(load_checkpoint(p)?)
        }
        _ => None,
    };
    let (model, mut store, mut history) = match resumed {
        Some(l) => (l.model, l.store, l.history),
        None => {
            let (m, s) = Model::init(mc, seeds::derive(cfg.seed, "init"))?;
            (m, s, Vec::new())
        }
    };
    if let Some(o) = out {
        fs::create_dir_all(o)?;
    }
    let mut train_ex = prep.examples(Split::Train)?;
    train_ex.truncate(cfg.train_limit.unwrap_or(usize::MAX));
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch: cfg.batch,
        adam: adam(cfg),
        shuffle_seed: seeds::derive(cfg.seed, "shuffle"),
    };
    train(&model, &mut store, &train_ex, &opts, &mut history, |store, history| {
        if let Some(p) = &ck_path {
            let bytes = checkpoint::encode(store, &checkpoint_meta(&mc, &ident, history)?)?;
            write_atomic(p, &bytes)?;
        }
        Ok(())
    })?;
    let mut eval_ex = prep.examples(cfg.split)?;
    eval_ex.truncate(cfg.eval_limit.unwrap_or(usize::MAX));
    let mut report = evaluate(&model, &store, &eval_ex, cfg.split)?;
    report.loss_curve = history.clone();
    report.wall_seconds = started.elapsed().as_secs_f64();
    if let Some(o) = out {
        write_report(o, &report, "metrics")?;
    }
    Ok(TrainOutcome {
        model,
        store,
        history,
        report,
    })
}

pub fn write_report(dir: &Path, report: &MetricsReport, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(format!("{stem}.jsonl")), report.to_jsonl()?.as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.txt")), report.table().as_bytes())?;
    Ok(())
}

/// Evaluates a saved checkpoint on `cfg.split`.
pub fn eval_run(cfg: &RunConfig, checkpoint: &Path, out: Option<&Path>) -> Result<MetricsReport> {
    let started = Instant::now();
    let loaded = load_checkpoint(checkpoint)?;
    let c = loaded.model.config;
    let cfg = RunConfig {
        clips: c.clips,
        clip_len: c.clip_len,
        objects: c.objects,
        ..cfg.clone()
    };
    let prep = Prepared::load(&cfg)?;
    let expected = prep.model_config(&RunConfig {
        d: c.d,
        d_h: c.d_h,
        d_w: c.d_w,
        layers: c.layers,
        steps: c.steps,
        ..cfg.clone()
    });
    if (expected.vocab, expected.answers, expected.d_a, expected.d_c) != (c.vocab, c.answers, c.d_a, c.d_c) {
        return Err(OcrlError::Config(format!(
            "checkpoint expects vocab {}, {} answers, feature widths {}/{}; dataset has {}, {}, {}/{}",
            c.vocab, c.answers, c.d_a, c.d_c, expected.vocab, expected.answers, expected.d_a, expected.d_c
        )));
    }
    let mut exs = prep.examples(cfg.split)?;
    exs.truncate(cfg.eval_limit.unwrap_or(usize::MAX));
    let mut report = evaluate(&loaded.model, &loaded.store, &exs, cfg.split)?;
    report.loss_curve = loaded.history;
    report.wall_seconds = started.elapsed().as_secs_f64();
    if let Some(o) = out {
        write_report(o, &report, &format!("eval-{}", cfg.split.name()))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Mean accuracy per category over seeds, in `Category::ALL` order.
    pub per_category: Vec<(Category, f64)>,
}

/// Trains and evaluates every variant once per ablation seed. Reasoning
/// depth is `cfg.ablate_steps` for all variants. An empty variant list means
/// the default model alone; `all` expands to [`VARIANTS`].
pub fn ablate(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<AblationRow>> {
    let mut names: Vec<String> = Vec::new();
    for v in &cfg.variants {
        if v == "all" {
            names.extend(VARIANTS.iter().map(|s| s.to_string()));
        } else {
            names.push(v.clone());
        }
    }
    if names.is_empty() {
        names.push("default".into());
    }
    if cfg.ablate_seeds.is_empty() {
        return Err(OcrlError::Config("ablate_seeds is empty".into()));
    }
    let mut rows = Vec::new();
    for name in names {
        let mut accs = Vec::new();
        let mut cats = vec![0.0; Category::ALL.len()];
        for &seed in &cfg.ablate_seeds {
            let mut c = cfg.with_variant(&name)?;
            c.steps = cfg.ablate_steps;
            c.seed = seed;
            c.split = Split::Test;
            let outcome = train_run(&c, prep, None, false)?;
            accs.push(outcome.report.accuracy);
            for (acc, m) in cats.iter_mut().zip(&outcome.report.per_category) {
                *acc += m.accuracy;
            }
        }
        let n = accs.len() as f64;
        rows.push(AblationRow {
            variant: name,
            seeds: cfg.ablate_seeds.clone(),
            mean_accuracy: accs.iter().sum::<f64>() / n,
            accuracies: accs,
            per_category: Category::ALL.iter().copied().zip(cats.into_iter().map(|a| a / n)).collect(),
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    write!(out, "{:<24} {:>9}", "variant", "mean").ok();
    for c in Category::ALL {
        write!(out, " {:>20}", c.name()).ok();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{:<24} {:>8.2}%", r.variant, 100.0 * r.mean_accuracy).ok();
        for (_, a) in &r.per_category {
            write!(out, " {:>19.2}%", 100.0 * a).ok();
        }
        out.push('\n');
    }
    out
}

pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for r in rows {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    write_atomic(&dir.join("ablation.jsonl"), jsonl.as_bytes())?;
    write_atomic(&dir.join("ablation.txt"), ablation_table(rows).as_bytes())?;
    Ok(())
}

/// Default checkpoint location for a run directory.
pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT)
}
