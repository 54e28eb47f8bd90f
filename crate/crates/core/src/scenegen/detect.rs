//! Detector emulation: per-frame boxes, appearance vectors and confidences
//! derived from scene ground truth, plus a whole-frame context vector.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{Color, SceneSpec, Shape, Size};
use crate::error::{OcrlError, Result};
use crate::seeds;

/// Seed of the fixed attribute-mixing matrices; shared by every scene.
const EMBED_SEED: u64 = 0x0c71_e5ee_d000_0001;

/// One-hot width: shape, color, size, plus one rotation-phase channel.
const ATTR_WIDTH: usize = 3 + 8 + 2 + 1;

/// Context slots that are not a projection of the mean appearance.
const CONTEXT_STATS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [f64; 4],
    pub appearance: Vec<f64>,
    pub confidence: f64,
    /// Ground-truth object id; only used for evaluation.
    pub true_id: usize,
}

/// All detections of one video plus its per-frame context features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVideo {
    pub width: f64,
    pub height: f64,
    pub frames: Vec<Vec<Detection>>,
    pub context: Vec<Vec<f64>>,
}

impl DetectionVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub p_miss: f64,
    pub jitter_sigma: f64,
    pub feature_sigma: f64,
    pub appearance_dim: usize,
    pub context_dim: usize,
    /// Peak of the rotation channel, which alternates sign frame to frame
    /// while an object spins.
    pub rotation_amplitude: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            p_miss: 0.05,
            jitter_sigma: 0.5,
            feature_sigma: 0.05,
            appearance_dim: 24,
            context_dim: 16,
            rotation_amplitude: 1.0,
        }
    }
}

/// Fixed linear maps from attribute one-hots to appearance space and from
/// appearance space to the context projection.
#[derive(Debug, Clone)]
pub struct Embedding {
    mix: Vec<Vec<f64>>,
    context_proj: Vec<Vec<f64>>,
    appearance_dim: usize,
}

impl Embedding {
    pub fn new(appearance_dim: usize, context_dim: usize) -> Result<Self> {
        if context_dim <= CONTEXT_STATS || appearance_dim == 0 {
            return Err(OcrlError::Config(format!(
                "appearance dim {appearance_dim} / context dim {context_dim} too small"
            )));
        }
        let mut rng = seeds::rng(EMBED_SEED ^ ((appearance_dim as u64) << 32) ^ context_dim as u64);
        let scale = 1.0 / (ATTR_WIDTH as f64).sqrt() * 2.0;
        let mix = (0..ATTR_WIDTH)
            .map(|_| {
                (0..appearance_dim)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let pscale = 1.0 / (appearance_dim as f64).sqrt();
        let context_proj = (0..appearance_dim)
            .map(|_| {
                (0..context_dim - CONTEXT_STATS)
                    .map(|_| pscale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        Ok(Self {
            mix,
            context_proj,
            appearance_dim,
        })
    }

    /// Noise-free appearance of an object; `phase` is the signed rotation
    /// channel value (0 when not rotating).
    pub fn appearance(&self, shape: Shape, color: Color, size: Size, phase: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.appearance_dim];
        let hot = [
            (shape.index(), 1.0),
            (3 + color.index(), 1.0),
            (11 + size.index(), 1.0),
            (13, phase),
        ];
        for (row, w) in hot {
            for (o, m) in out.iter_mut().zip(&self.mix[row]) {
                *o += w * m;
            }
        }
        out
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        let k = self.context_proj[0].len();
        let mut out = vec![0.0; k];
        for (i, &vi) in v.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(&self.context_proj[i]) {
                *o += vi * p;
            }
        }
        out
    }
}

/// Signed rotation channel for an object at `frame`.
fn rotation_phase(scene: &SceneSpec, obj: usize, frame: usize, amplitude: f64) -> f64 {
    let o = &scene.objects[obj];
    if !o.trajectory[frame].rotating {
        return 0.0;
    }
    let start = o
        .events
        .iter()
        .filter(|e| e.action == super::scene::Action::StartRotating && e.frame <= frame)
        .map(|e| e.frame)
        .max()
        .unwrap_or(0);
    if (frame - start) % 2 == 0 {
        amplitude
    } else {
        -amplitude
    }
}

pub fn render_detections(scene: &SceneSpec, config: &RenderConfig, seed: u64) -> Result<DetectionVideo> {
    if !(0.0..1.0).contains(&config.p_miss) {
        return Err(OcrlError::Config(format!("p_miss {} outside [0, 1)", config.p_miss)));
    }
    if config.jitter_sigma < 0.0 || config.feature_sigma < 0.0 {
        return Err(OcrlError::Config("noise scales must be nonnegative".into()));
    }
    let embed = Embedding::new(config.appearance_dim, config.context_dim)?;
    let mut rng = seeds::rng(seed);
    let jitter = Normal::new(0.0, config.jitter_sigma).expect("sigma checked");
    let fnoise = Normal::new(0.0, config.feature_sigma).expect("sigma checked");

    let n = scene.objects.len();
    let mut frames = Vec::with_capacity(scene.frames);
    let mut context = Vec::with_capacity(scene.frames);
    for f in 0..scene.frames {
        let mut dets = Vec::new();
        let mut mean_app = vec![0.0; config.appearance_dim];
        let (mut mx, mut my, mut moving) = (0.0, 0.0, 0.0);
        for (i, o) in scene.objects.iter().enumerate() {
            let st = &o.trajectory[f];
            let phase = rotation_phase(scene, i, f, config.rotation_amplitude);
            let clean = embed.appearance(o.shape, o.color, o.size, phase);
            for (m, c) in mean_app.iter_mut().zip(&clean) {
                *m += c / n as f64;
            }
            mx += st.cx / scene.width / n as f64;
            my += st.cy / scene.height / n as f64;
            moving += f64::from(u8::from(st.moving)) / n as f64;

            // draws happen whether or not the detection survives, so the
            // noise of one object does not depend on another's miss
            let missed = rng.random_bool(config.p_miss);
            let j: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
            let appearance: Vec<f64> = clean.iter().map(|c| c + fnoise.sample(&mut rng)).collect();
            if missed {
                continue;
            }
            let b = st.bbox();
            let mut x = [
                (b[0] + j[0]).clamp(0.0, scene.width),
                (b[2] + j[2]).clamp(0.0, scene.width),
            ];
            let mut y = [
                (b[1] + j[1]).clamp(0.0, scene.height),
                (b[3] + j[3]).clamp(0.0, scene.height),
            ];
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            let shift = j.iter().map(|v| v * v).sum::<f64>().sqrt();
            let confidence = (-shift / (2.0 * st.half_w.min(st.half_h))).exp().clamp(0.0, 1.0);
            dets.push(Detection {
                frame: f,
                bbox: [x[0], y[0], x[1], y[1]],
                appearance,
                confidence,
                true_id: o.id,
            });
        }
        dets.shuffle(&mut rng);
        frames.push(dets);

        let mut ctx = if n > 0 {
            embed.project(&mean_app)
        } else {
            vec![0.0; config.context_dim - CONTEXT_STATS]
        };
        ctx.extend_from_slice(&[n as f64 / 10.0, mx, my, moving]);
        context.push(ctx);
    }
    Ok(DetectionVideo {
        width: scene.width,
        height: scene.height,
        frames,
        context,
    })
}
