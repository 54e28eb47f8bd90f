//! The assembled question-answering model.

use diffcore::{Graph, ParamStore, Var};
use serde::{Deserialize, Serialize};

use crate::error::{OcrlError, Result};
use crate::ocrl::{represent_video, Ablations, Ocrl, OcrlDims, VideoRepr};
use crate::qencoder::{encode_question, QEncoder, QuestionEncoding};
use crate::reasoner::{decode_answer, loss, Decoder, MacReasoner, Reasoner, ReasonerInput};
use crate::registry::{Binder, Creator, Registry};
use crate::seeds;
use crate::video::VideoInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub d_a: usize,
    pub d_c: usize,
    /// Clips per tubelet (K).
    pub clips: usize,
    /// Frames per clip (t).
    pub clip_len: usize,
    /// Tubelets per video (N).
    pub objects: usize,
    /// Graph layers (L).
    pub layers: usize,
    /// Reasoning steps (P).
    pub steps: usize,
    pub vocab: usize,
    pub answers: usize,
    pub ablations: Ablations,
}

impl ModelConfig {
    pub fn desk(vocab: usize, answers: usize) -> Self {
        Self {
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
            vocab,
            answers,
            ablations: Ablations::default(),
        }
    }

    pub fn tiny(vocab: usize, answers: usize) -> Self {
        Self {
            d: 8,
            d_h: 4,
            d_w: 4,
            d_a: 6,
            d_c: 6,
            clips: 2,
            clip_len: 4,
            objects: 3,
            layers: 2,
            steps: 2,
            vocab,
            answers,
            ablations: Ablations::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("d", self.d),
            ("d_h", self.d_h),
            ("d_w", self.d_w),
            ("d_a", self.d_a),
            ("d_c", self.d_c),
            ("clips", self.clips),
            ("clip_len", self.clip_len),
            ("objects", self.objects),
            ("steps", self.steps),
            ("vocab", self.vocab),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(OcrlError::Config(format!("{name} must be at least 1")));
        }
        if self.d % 2 != 0 {
            return Err(OcrlError::Config(format!("d={} must be even", self.d)));
        }
        if self.answers < 2 {
            return Err(OcrlError::Config("need at least 2 answer labels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub qenc: QEncoder,
    pub ocrl: Ocrl,
    pub reasoner: MacReasoner,
    pub decoder: Decoder,
}

/// Values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub question: QuestionEncoding,
    pub video: VideoRepr,
    pub memory: Var,
    /// `1 × |A|`
    pub probs: Var,
}

impl Model {
    fn register(config: ModelConfig, reg: &mut impl Registry) -> Result<Self> {
        config.validate()?;
        let c = config;
        Ok(Self {
            config,
            qenc: QEncoder::register(reg, c.vocab, c.d_w, c.d)?,
            ocrl: Ocrl::register(
                reg,
                OcrlDims {
                    d: c.d,
                    d_h: c.d_h,
                    d_a: c.d_a,
                    d_c: c.d_c,
                    layers: c.layers,
                },
            )?,
            reasoner: MacReasoner::register(reg, c.d, 2 * c.d_h, c.steps)?,
            decoder: Decoder::register(reg, c.d, c.d, c.answers)?,
        })
    }

    /// Fresh parameters drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Self::register(
            config,
            &mut Creator {
                store: &mut store,
                rng: seeds::rng(seed),
            },
        )?;
        Ok((model, store))
    }

    /// Binds to parameters loaded from a checkpoint; shapes must agree.
    pub fn bind(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let model = Self::register(config, &mut Binder { store })?;
        if store.len() != count_params(&config)? {
            return Err(OcrlError::Config("checkpoint holds parameters this config does not use".into()));
        }
        Ok(model)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: &[usize], video: &VideoInput) -> Result<Forward> {
        let c = &self.config;
        if video.objects != c.objects || video.clips != c.clips || video.clip_len != c.clip_len {
            return Err(OcrlError::Config(format!(
                "video laid out as {}x{}x{}, model expects {}x{}x{}",
                video.objects, video.clips, video.clip_len, c.objects, c.clips, c.clip_len
            )));
        }
        if video.appearance.cols() != c.d_a || video.context.cols() != c.d_c {
            return Err(OcrlError::Config(format!(
                "feature widths {}/{} differ from configured {}/{}",
                video.appearance.cols(),
                video.context.cols(),
                c.d_a,
                c.d_c
            )));
        }
        let question = encode_question(g, store, &self.qenc, tokens)?;
        let repr = represent_video(g, store, &self.ocrl, video, question.q, &c.ablations)?;
        let input = ReasonerInput {
            resumes: repr.resumes,
            valid: repr.valid.clone(),
            q_g: question.q_g,
            e_s: question.e_s,
        };
        let memory = self.reasoner.reason(g, store, &input)?;
        let probs = decode_answer(g, store, &self.decoder, memory, question.q)?;
        Ok(Forward {
            question,
            video: repr,
            memory,
            probs,
        })
    }

    /// Loss node and forward values for one labelled example.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[usize],
        video: &VideoInput,
        label: usize,
    ) -> Result<(Var, Forward)> {
        let fw = self.forward(g, store, tokens, video)?;
        let l = loss(g, fw.probs, label)?;
        Ok((l, fw))
    }
}

fn count_params(config: &ModelConfig) -> Result<usize> {
    Ok(Model::init(*config, 0)?.1.len())
}
