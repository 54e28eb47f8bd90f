//! Dense model input for one video: selected tubelets laid out as
//! `N` objects × `K` clips × `t` frame slots.

use diffcore::NdArray;

use crate::error::{OcrlError, Result};
use crate::tubelets::{partition, Tubelet};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoInput {
    pub objects: usize,
    pub clips: usize,
    pub clip_len: usize,
    /// `N·K·t × d_a`, row `(o·K + k)·t + i`; zero at masked slots.
    pub appearance: NdArray,
    /// `N·K·t × 7`, same layout.
    pub spatial: NdArray,
    /// `N·K × t`, 1 for slots holding a detection, 0 for null or padding.
    pub mask: NdArray,
    /// `K × d_c`: mean frame context over each clip's real frames.
    pub context: NdArray,
    /// Tubelet ids in row order.
    pub ids: Vec<usize>,
}

impl VideoInput {
    /// Lays out `tubelets` (already selected and padded) against the
    /// per-frame `context` of the video.
    pub fn from_tubelets(
        tubelets: &[Tubelet],
        context: &[Vec<f64>],
        clips: usize,
        clip_len: usize,
        d_a: usize,
        d_c: usize,
    ) -> Result<Self> {
        let n = tubelets.len();
        let frames = context.len();
        let slots = n * clips * clip_len;
        let mut appearance = NdArray::zeros(&[slots, d_a]);
        let mut spatial = NdArray::zeros(&[slots, 7]);
        let mut mask = NdArray::zeros(&[n * clips, clip_len]);
        for (o, tb) in tubelets.iter().enumerate() {
            if tb.slots.len() != frames {
                return Err(OcrlError::Data(format!(
                    "tubelet {} has {} slots, video has {frames} frames",
                    tb.id,
                    tb.slots.len()
                )));
            }
            let cs = partition(tb, clips, clip_len)?;
            for k in 0..clips {
                for i in 0..clip_len {
                    let Some(slot) = cs.frames[k][i].and_then(|f| tb.slots[f].as_ref()) else {
                        continue;
                    };
                    if slot.appearance.len() != d_a {
                        return Err(OcrlError::Data(format!(
                            "appearance width {} differs from configured {d_a}",
                            slot.appearance.len()
                        )));
                    }
                    let row = (o * clips + k) * clip_len + i;
                    for (j, &v) in slot.appearance.iter().enumerate() {
                        appearance.set(row, j, v);
                    }
                    for (j, &v) in slot.spatial.iter().enumerate() {
                        spatial.set(row, j, v);
                    }
                    mask.set(o * clips + k, i, 1.0);
                }
            }
        }
        let mut ctx = NdArray::zeros(&[clips, d_c]);
        for k in 0..clips {
            let real: Vec<&Vec<f64>> = (k * clip_len..((k + 1) * clip_len).min(frames))
                .map(|f| &context[f])
                .collect();
            for c in &real {
                if c.len() != d_c {
                    return Err(OcrlError::Data(format!(
                        "context width {} differs from configured {d_c}",
                        c.len()
                    )));
                }
            }
            for j in 0..d_c {
                if !real.is_empty() {
                    let m = real.iter().map(|c| c[j]).sum::<f64>() / real.len() as f64;
                    ctx.set(k, j, m);
                }
            }
        }
        Ok(Self {
            objects: n,
            clips,
            clip_len,
            appearance,
            spatial,
            mask,
            context: ctx,
            ids: tubelets.iter().map(|t| t.id).collect(),
        })
    }

    /// Whether object `o` has a detection in clip `k`.
    pub fn clip_present(&self, o: usize, k: usize) -> bool {
        self.mask.row_slice(o * self.clips + k).iter().any(|&m| m != 0.0)
    }

    /// Whether object `o` has any detection at all.
    pub fn valid(&self, o: usize) -> bool {
        (0..self.clips).any(|k| self.clip_present(o, k))
    }

    /// The same video with objects reordered so that new object `i` is old
    /// object `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let per_obj_slots = self.clips * self.clip_len;
        let gather = |a: &NdArray, block: usize| {
            let cols = a.cols();
            let mut data = Vec::with_capacity(a.len());
            for &p in perm {
                for r in p * block..(p + 1) * block {
                    data.extend_from_slice(a.row_slice(r));
                }
            }
            NdArray::matrix(perm.len() * block, cols, data).expect("same layout")
        };
        Self {
            objects: perm.len(),
            clips: self.clips,
            clip_len: self.clip_len,
            appearance: gather(&self.appearance, per_obj_slots),
            spatial: gather(&self.spatial, per_obj_slots),
            mask: gather(&self.mask, self.clips),
            context: self.context.clone(),
            ids: perm.iter().map(|&p| self.ids[p]).collect(),
        }
    }
}
