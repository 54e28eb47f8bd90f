//! Exhaustive-search reference for frame-by-frame association.

use ocrl::scenegen::{Detection, DetectionVideo};
use ocrl::tubelets::{track, TrackParams};
use rand::Rng;

pub type Partition = Vec<Vec<(usize, usize)>>;

fn overlap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let i = w * h;
    let u = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n(a) == 0.0 || n(b) == 0.0 {
        0.0
    } else {
        d / (n(a) * n(b))
    }
}

fn cost(p: &TrackParams, a: &Detection, b: &Detection) -> f64 {
    p.iou_weight * (1.0 - overlap(&a.bbox, &b.bbox)) + p.app_weight * (1.0 - cos(&a.appearance, &b.appearance))
}

/// Every partial matching of detections to tracks, as `(objective, map)`.
/// An unmatched detection is charged the gating threshold.
fn enumerate(
    costs: &[Vec<Option<f64>>],
    unmatched: f64,
    det: usize,
    used: &mut Vec<bool>,
    cur: &mut Vec<Option<usize>>,
    out: &mut Vec<(f64, Vec<Option<usize>>)>,
) {
    if det == costs.len() {
        let total = cur
            .iter()
            .enumerate()
            .map(|(d, t)| t.map_or(unmatched, |t| costs[d][t].unwrap()))
            .sum();
        out.push((total, cur.clone()));
        return;
    }
    cur.push(None);
    enumerate(costs, unmatched, det + 1, used, cur, out);
    cur.pop();
    for t in 0..used.len() {
        if !used[t] && costs[det][t].is_some() {
            used[t] = true;
            cur.push(Some(t));
            enumerate(costs, unmatched, det + 1, used, cur, out);
            cur.pop();
            used[t] = false;
        }
    }
}

/// Exhaustive tracker: per frame the assignment of least total cost. `None`
/// when the runner-up is within `gap` of the optimum.
pub fn brute_force(video: &DetectionVideo, p: &TrackParams, gap: f64) -> Option<Partition> {
    struct T {
        last: Detection,
        missed: usize,
        members: Vec<(usize, usize)>,
    }
    let mut tracks: Vec<T> = Vec::new();
    for (f, dets) in video.frames.iter().enumerate() {
        let costs: Vec<Vec<Option<f64>>> = dets
            .iter()
            .map(|d| {
                tracks
                    .iter()
                    .map(|t| {
                        let c = cost(p, &t.last, d);
                        (t.missed <= p.max_age && c <= p.match_threshold).then_some(c)
                    })
                    .collect()
            })
            .collect();
        let mut all = Vec::new();
        enumerate(&costs, p.match_threshold, 0, &mut vec![false; tracks.len()], &mut Vec::new(), &mut all);
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        if all.len() > 1 && all[1].0 - all[0].0 < gap {
            return None;
        }
        let map = all[0].1.clone();
        let mut hit = vec![false; tracks.len()];
        for (d, t) in map.iter().enumerate() {
            if let Some(t) = *t {
                hit[t] = true;
                tracks[t].last = dets[d].clone();
                tracks[t].missed = 0;
                tracks[t].members.push((f, dets[d].true_id));
            }
        }
        for (t, h) in hit.iter().enumerate() {
            if !h {
                tracks[t].missed += 1;
            }
        }
        for (d, t) in map.iter().enumerate() {
            if t.is_none() {
                tracks.push(T {
                    last: dets[d].clone(),
                    missed: 0,
                    members: vec![(f, dets[d].true_id)],
                });
            }
        }
    }
    Some(canonical(tracks.into_iter().map(|t| t.members).collect()))
}

pub fn canonical(mut p: Partition) -> Partition {
    for g in &mut p {
        g.sort_unstable();
    }
    p.retain(|g| !g.is_empty());
    p.sort();
    p
}

/// Objects on a coarse grid with near one-hot appearances, drifting a
/// little each frame and sometimes missing. With `dim` below the object
/// count some objects look alike and compete for the same tracks.
pub fn instance(seed: u64, objects: usize, frames: usize, p_miss: f64, dim: usize) -> DetectionVideo {
    let mut rng = ocrl::seeds::rng(seed);
    let mut cells: Vec<usize> = (0..9).collect();
    let mut objs = Vec::new();
    for id in 0..objects {
        let cell = cells.remove(rng.random_range(0..cells.len()));
        let (cx, cy) = ((cell % 3) as f64 * 40.0 + 20.0, (cell / 3) as f64 * 40.0 + 20.0);
        let mut app = vec![0.0; dim];
        app[id % dim] = 1.0;
        objs.push((cx, cy, app, rng.random_range(0..frames), rng.random_range(0..=frames)));
    }
    let mut out = Vec::new();
    for f in 0..frames {
        let mut dets = Vec::new();
        for (id, (cx, cy, app, start, end)) in objs.iter_mut().enumerate() {
            *cx += rng.random_range(-1.5..1.5);
            *cy += rng.random_range(-1.5..1.5);
            if f < *start || f >= (*end).max(*start + 1) || rng.random_bool(p_miss) {
                continue;
            }
            let appearance = app.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            dets.push(Detection {
                frame: f,
                bbox: [*cx - 10.0, *cy - 10.0, *cx + 10.0, *cy + 10.0],
                appearance,
                confidence: rng.random_range(0.5..1.0),
                true_id: id,
            });
        }
        out.push(dets);
    }
    DetectionVideo {
        width: 120.0,
        height: 120.0,
        frames: out,
        context: vec![vec![0.0; 4]; frames],
    }
}

pub fn implementation(video: &DetectionVideo, p: &TrackParams) -> Partition {
    let tubes = track(video, p).unwrap();
    canonical(
        tubes
            .iter()
            .map(|t| {
                t.slots
                    .iter()
                    .enumerate()
                    .filter_map(|(f, s)| s.as_ref().map(|s| (f, s.true_id)))
                    .collect()
            })
            .collect(),
    )
}

/// Runs `cases` random instances; returns how many were unambiguous and
/// therefore compared.
pub fn agreement(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = ocrl::seeds::rng(seed);
    let mut compared = 0;
    for case in 0..cases {
        let objects = rng.random_range(1..=4);
        let frames = rng.random_range(1..=10);
        let dim = rng.random_range(2..=4);
        let p = TrackParams {
            max_age: rng.random_range(0..4),
            ..TrackParams::default()
        };
        let video = instance(rng.random(), objects, frames, rng.random_range(0.0..0.4), dim);
        if let Some(oracle) = brute_force(&video, &p, 0.05) {
            compared += 1;
            if implementation(&video, &p) != oracle {
                return Err(format!("case {case}: partitions differ"));
            }
        }
    }
    Ok(compared)
}
