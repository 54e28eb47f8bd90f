//! Finite-difference check of the whole model on a tiny fixture.
//!
//! Many parameters of the model only reach the loss through second-order
//! paths and get gradients between 1e-16 and 1e-8. For an O(1) loss the
//! rounding noise of a central difference with step 1e-5 is about 1e-11,
//! which would dominate those coordinates under the 1e-8 relative-error
//! floor. The checked quantity is therefore the fixture loss times
//! [`LOSS_SCALE`]. On the unscaled loss this requires
//! `|analytic - numeric| <= max(1e-4 |g|, 1e-9)`, about fifty times above
//! the rounding floor.

use diffcore::{gradcheck, DiffError, Fault, GradcheckOptions, GradcheckReport, ParamStore};
use rand::Rng;

use crate::data::{examples, generate_dataset, video_inputs, DataConfig, Example, Split};
use crate::error::{OcrlError, Result};
use crate::model::{Model, ModelConfig};
use crate::scenegen::{QaConfig, RenderConfig, SceneConfig};
use crate::seeds;

pub const LOSS_SCALE: f64 = 1e-3;
pub const FIXTURE_VOCAB: usize = 20;
pub const FIXTURE_ANSWERS: usize = 6;

/// Backward rules that `--corrupt` can break for a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Sigmoid derivative, which every gate goes through.
    Gating,
    Tanh,
    Product,
}

impl Corruption {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gating" | "sigmoid" => Ok(Self::Gating),
            "tanh" => Ok(Self::Tanh),
            "product" | "mul" => Ok(Self::Product),
            other => Err(OcrlError::Config(format!("unknown corruption `{other}` (gating, tanh, product)"))),
        }
    }

    pub fn fault(self) -> Fault {
        match self {
            Self::Gating => Fault::Sigmoid,
            Self::Tanh => Fault::Tanh,
            Self::Product => Fault::MulRhs,
        }
    }
}

pub struct Fixture {
    pub model: Model,
    pub store: ParamStore,
    pub examples: Vec<Example>,
}

/// N=3, K=2, t=4, d=8, L=2, P=2 with synthetic questions over a 20-word
/// vocabulary and 6 answers. Videos come from generated scenes of 7 frames,
/// so the last slot of every tubelet is padding, and the scenes hold at most
/// 2 objects, so at least one tubelet is null whenever tracking is clean.
pub fn fixture(seed: u64) -> Result<Fixture> {
    fixture_with(ModelConfig::tiny(FIXTURE_VOCAB, FIXTURE_ANSWERS), seed)
}

pub fn fixture_with(config: ModelConfig, seed: u64) -> Result<Fixture> {
    let data = DataConfig {
        scenes: 4,
        qa: QaConfig::default(),
        scene: SceneConfig {
            min_objects: 1,
            max_objects: 2,
            frames: 7,
            ..SceneConfig::default()
        },
        render: RenderConfig {
            p_miss: 0.2,
            appearance_dim: config.d_a,
            context_dim: config.d_c,
            ..RenderConfig::default()
        },
        train_fraction: 1.0,
        test_fraction: 0.0,
        ..DataConfig::default()
    };
    let ds = generate_dataset(&data, seeds::derive(seed, "fixture-data"))?;
    let videos = video_inputs(&ds, config.objects, config.clips, config.clip_len)?;
    let mut exs = examples(&ds, &videos, Split::Train)?;
    exs.truncate(2);
    let mut rng = seeds::rng(seeds::derive(seed, "fixture-questions"));
    for ex in &mut exs {
        let len = rng.random_range(3..8);
        ex.tokens = (0..len).map(|_| rng.random_range(0..config.vocab)).collect();
        ex.label = rng.random_range(0..config.answers);
    }
    let (model, store) = Model::init(config, seeds::derive(seed, "fixture-init"))?;
    Ok(Fixture {
        model,
        store,
        examples: exs,
    })
}

pub fn check(fx: &Fixture, corruption: Option<Corruption>) -> Result<GradcheckReport> {
    let opts = GradcheckOptions {
        fault: corruption.map(Corruption::fault),
        ..GradcheckOptions::default()
    };
    let report = gradcheck(
        &fx.store,
        |g, store| {
            let mut total = None;
            for ex in &fx.examples {
                let (l, _) = fx
                    .model
                    .loss(g, store, &ex.tokens, &ex.video, ex.label)
                    .map_err(|e| DiffError::Invalid {
                        op: "model loss",
                        msg: e.to_string(),
                    })?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            let total = total.ok_or_else(|| DiffError::Invalid {
                op: "model loss",
                msg: "fixture has no examples".into(),
            })?;
            Ok(g.scale(total, LOSS_SCALE))
        },
        &opts,
    )?;
    Ok(report)
}
