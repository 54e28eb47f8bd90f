//! Greedy tracking of per-frame detections into tubelets, spatial
//! features, temporal partitioning and top-N selection.

use serde::{Deserialize, Serialize};

use crate::error::{OcrlError, Result};
use crate::scenegen::DetectionVideo;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub iou_weight: f64,
    pub app_weight: f64,
    pub match_threshold: f64,
    pub max_age: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            iou_weight: 0.6,
            app_weight: 0.4,
            match_threshold: 0.7,
            max_age: 5,
        }
    }
}

/// One observed frame of a tubelet.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub appearance: Vec<f64>,
    pub bbox: [f64; 4],
    pub spatial: [f64; 7],
    pub confidence: f64,
    pub true_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tubelet {
    pub id: usize,
    /// One entry per video frame; `None` where the object was not seen.
    pub slots: Vec<Option<Slot>>,
}

impl Tubelet {
    pub fn null(id: usize, frames: usize) -> Self {
        Self {
            id,
            slots: vec![None; frames],
        }
    }

    pub fn coverage(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_null(&self) -> bool {
        self.coverage() == 0
    }

    pub fn mean_confidence(&self) -> f64 {
        let n = self.coverage();
        if n == 0 {
            return 0.0;
        }
        self.slots.iter().flatten().map(|s| s.confidence).sum::<f64>() / n as f64
    }

    /// Hidden ids of the detections this tubelet absorbed, in frame order.
    pub fn true_ids(&self) -> Vec<usize> {
        self.slots.iter().flatten().map(|s| s.true_id).collect()
    }
}

/// `[x_min/W, y_min/H, x_max/W, y_max/H, Δx/W, Δy/H, ΔxΔy/(WH)]`
pub fn spatial_feature(bbox: [f64; 4], width: f64, height: f64) -> Result<[f64; 7]> {
    if !(width > 0.0 && height > 0.0) {
        return Err(OcrlError::Input(format!("frame size {width}x{height} must be positive")));
    }
    let [x0, y0, x1, y1] = bbox;
    if bbox.iter().any(|v| !v.is_finite()) {
        return Err(OcrlError::Input(format!("non-finite box {bbox:?}")));
    }
    if x0 > x1 || y0 > y1 {
        return Err(OcrlError::Input(format!("inverted box {bbox:?}")));
    }
    if x0 < 0.0 || y0 < 0.0 || x1 > width || y1 > height {
        return Err(OcrlError::Input(format!("box {bbox:?} outside {width}x{height} frame")));
    }
    let (dx, dy) = (x1 - x0, y1 - y0);
    Ok([
        x0 / width,
        y0 / height,
        x1 / width,
        y1 / height,
        dx / width,
        dy / height,
        (dx * dy) / (width * height),
    ])
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Association cost between a track's last observation and a detection.
pub fn match_cost(params: &TrackParams, last: &Slot, bbox: &[f64; 4], appearance: &[f64]) -> f64 {
    params.iou_weight * (1.0 - iou(&last.bbox, bbox)) + params.app_weight * (1.0 - cosine(&last.appearance, appearance))
}

struct Track {
    tubelet: Tubelet,
    last: Slot,
    missed: usize,
}

/// Links detections frame by frame. Within a frame, candidate pairs under
/// the threshold are taken cheapest first; leftovers open new tubelets.
pub fn track(video: &DetectionVideo, params: &TrackParams) -> Result<Vec<Tubelet>> {
    let frames = video.frame_count();
    let mut tracks: Vec<Track> = Vec::new();
    for (f, dets) in video.frames.iter().enumerate() {
        let slots: Vec<Slot> = dets
            .iter()
            .map(|d| {
                Ok(Slot {
                    appearance: d.appearance.clone(),
                    bbox: d.bbox,
                    spatial: spatial_feature(d.bbox, video.width, video.height)?,
                    confidence: d.confidence,
                    true_id: d.true_id,
                })
            })
            .collect::<Result<_>>()?;

        let mut pairs = Vec::new();
        for (ti, tr) in tracks.iter().enumerate() {
            if tr.missed > params.max_age {
                continue;
            }
            for (di, s) in slots.iter().enumerate() {
                let c = match_cost(params, &tr.last, &s.bbox, &s.appearance);
                if c <= params.match_threshold {
                    pairs.push((c, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; tracks.len()];
        let mut det_owner: Vec<Option<usize>> = vec![None; slots.len()];
        for (_, ti, di) in pairs {
            if !track_used[ti] && det_owner[di].is_none() {
                track_used[ti] = true;
                det_owner[di] = Some(ti);
            }
        }
        for (ti, tr) in tracks.iter_mut().enumerate() {
            if !track_used[ti] {
                tr.missed += 1;
            }
        }
        for (di, slot) in slots.into_iter().enumerate() {
            match det_owner[di] {
                Some(ti) => {
                    let tr = &mut tracks[ti];
                    tr.tubelet.slots[f] = Some(slot.clone());
                    tr.last = slot;
                    tr.missed = 0;
                }
                None => {
                    let mut tubelet = Tubelet::null(tracks.len(), frames);
                    tubelet.slots[f] = Some(slot.clone());
                    tracks.push(Track {
                        tubelet,
                        last: slot,
                        missed: 0,
                    });
                }
            }
        }
    }
    Ok(tracks.into_iter().map(|t| t.tubelet).collect())
}

/// Slots of one tubelet split into `parts` consecutive clips of `len`
/// frames. `frames[k][i]` is the video frame of slot `i` in clip `k`
/// (`None` for padding past the end); `mask[k][i]` is true only for slots
/// holding a detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSet {
    pub parts: usize,
    pub len: usize,
    pub frames: Vec<Vec<Option<usize>>>,
    pub mask: Vec<Vec<bool>>,
}

impl ClipSet {
    /// Whether clip `k` holds at least one detection.
    pub fn present(&self, k: usize) -> bool {
        self.mask[k].iter().any(|&b| b)
    }
}

pub fn partition(tubelet: &Tubelet, parts: usize, len: usize) -> Result<ClipSet> {
    let total = tubelet.slots.len();
    if parts == 0 || len == 0 || parts * len < total {
        return Err(OcrlError::Config(format!(
            "{parts} clips of {len} frames cannot cover {total} frames"
        )));
    }
    let mut frames = Vec::with_capacity(parts);
    let mut mask = Vec::with_capacity(parts);
    for k in 0..parts {
        let fr: Vec<Option<usize>> = (0..len).map(|i| Some(k * len + i).filter(|&f| f < total)).collect();
        mask.push(fr.iter().map(|f| f.is_some_and(|f| tubelet.slots[f].is_some())).collect());
        frames.push(fr);
    }
    Ok(ClipSet {
        parts,
        len,
        frames,
        mask,
    })
}

/// Orders tubelets by coverage then mean confidence (both descending, ties
/// to the lower id), keeps the first `n`, and pads with all-null tubelets
/// to exactly `n`.
pub fn select_tubelets(tubelets: &[Tubelet], n: usize) -> Result<Vec<Tubelet>> {
    if n == 0 {
        return Err(OcrlError::Config("tubelet budget must be at least 1".into()));
    }
    let frames = tubelets.first().map_or(0, |t| t.slots.len());
    let mut ranked: Vec<&Tubelet> = tubelets.iter().collect();
    ranked.sort_by(|a, b| {
        b.coverage()
            .cmp(&a.coverage())
            .then(b.mean_confidence().total_cmp(&a.mean_confidence()))
            .then(a.id.cmp(&b.id))
    });
    let mut out: Vec<Tubelet> = ranked.into_iter().take(n).cloned().collect();
    let next_id = tubelets.iter().map(|t| t.id + 1).max().unwrap_or(0);
    for i in out.len()..n {
        out.push(Tubelet::null(next_id + i, frames));
    }
    Ok(out)
}
