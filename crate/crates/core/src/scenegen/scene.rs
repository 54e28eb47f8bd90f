//! Synthetic scenes: colored shapes that start and stop moving or rotating.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OcrlError, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cube,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Purple,
    Cyan,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    StartMoving,
    StopMoving,
    StartRotating,
    StopRotating,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Sphere, Shape::Cylinder];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Cube => "cubes",
            Shape::Sphere => "spheres",
            Shape::Cylinder => "cylinders",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Purple,
        Color::Cyan,
        Color::Yellow,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Gray => "gray",
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Brown => "brown",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Yellow => "yellow",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Big];

    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Big => "big",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Half side length in pixels.
    pub fn half_extent(self) -> f64 {
        match self {
            Size::Small => 5.0,
            Size::Big => 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub action: Action,
    pub frame: usize,
}

/// Per-frame state of one object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
    pub moving: bool,
    pub rotating: bool,
}

impl FrameState {
    /// `[x_min, y_min, x_max, y_max]`
    pub fn bbox(&self) -> [f64; 4] {
        [
            self.cx - self.half_w,
            self.cy - self.half_h,
            self.cx + self.half_w,
            self.cy + self.half_h,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: usize,
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub trajectory: Vec<FrameState>,
    pub events: Vec<Event>,
}

impl SceneObject {
    pub fn event_frame(&self, action: Action) -> Option<usize> {
        self.events.iter().find(|e| e.action == action).map(|e| e.frame)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub frames: usize,
    pub width: f64,
    pub height: f64,
    /// Pixels per frame while moving.
    pub max_speed: f64,
    pub p_move: f64,
    pub p_rotate: f64,
    /// Probability that a scene forces all attribute tuples to be distinct.
    pub p_distinct: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 2,
            max_objects: 5,
            frames: 16,
            width: 120.0,
            height: 90.0,
            max_speed: 3.0,
            p_move: 0.6,
            p_rotate: 0.5,
            p_distinct: 0.8,
        }
    }
}

fn box_extent(shape: Shape, size: Size) -> (f64, f64) {
    let s = size.half_extent();
    match shape {
        Shape::Cylinder => (0.8 * s, 1.25 * s),
        _ => (s, s),
    }
}

/// Picks an interval `[start, stop)` inside `1..frames`; `stop == frames`
/// means the state lasts to the end.
fn interval(rng: &mut impl Rng, frames: usize) -> (usize, usize) {
    let start = rng.random_range(1..frames - 1);
    let stop = rng.random_range(start + 2..=frames + (frames - start) / 2);
    (start, stop.min(frames))
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SceneSpec> {
    if config.min_objects > config.max_objects {
        return Err(OcrlError::Config(format!(
            "object range {}..={} is empty",
            config.min_objects, config.max_objects
        )));
    }
    if config.frames < 3 {
        return Err(OcrlError::Config(format!(
            "need at least 3 frames, got {}",
            config.frames
        )));
    }
    let mut rng = seeds::rng(seed);
    let n = rng.random_range(config.min_objects..=config.max_objects);

    let big = Size::Big.half_extent() * 1.25;
    let slot_area = (2.0 * big + 2.0).powi(2);
    if config.width < 2.0 * big + 2.0
        || config.height < 2.0 * big + 2.0
        || n as f64 * slot_area > 0.6 * config.width * config.height
    {
        return Err(OcrlError::Generation(format!(
            "{n} objects cannot fit a {}x{} frame",
            config.width, config.height
        )));
    }

    // attributes
    let distinct = rng.random_bool(config.p_distinct.clamp(0.0, 1.0));
    let mut attrs: Vec<(Shape, Color, Size)> = Vec::with_capacity(n);
    while attrs.len() < n {
        let a = (
            *Shape::ALL.choose(&mut rng).expect("nonempty"),
            *Color::ALL.choose(&mut rng).expect("nonempty"),
            *Size::ALL.choose(&mut rng).expect("nonempty"),
        );
        if distinct && attrs.contains(&a) {
            continue;
        }
        attrs.push(a);
    }

    // non-overlapping start positions
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &(shape, _, size) in &attrs {
        let (hw, hh) = box_extent(shape, size);
        let mut placed = false;
        for _ in 0..500 {
            let cx = rng.random_range(hw..=config.width - hw);
            let cy = rng.random_range(hh..=config.height - hh);
            let clear = centers.iter().zip(&attrs).all(|(&(ox, oy), &(os, _, oz))| {
                let (ow, oh) = box_extent(os, oz);
                (cx - ox).abs() > hw + ow + 2.0 || (cy - oy).abs() > hh + oh + 2.0
            });
            if clear {
                centers.push((cx, cy));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(OcrlError::Generation(format!(
                "could not place {n} non-overlapping objects"
            )));
        }
    }

    let frames = config.frames;
    let mut objects = Vec::with_capacity(n);
    for (id, (&(shape, color, size), &(cx0, cy0))) in attrs.iter().zip(&centers).enumerate() {
        let (hw, hh) = box_extent(shape, size);
        let mut events = Vec::new();
        let moving = (config.max_speed > 0.0 && rng.random_bool(config.p_move))
            .then(|| interval(&mut rng, frames));
        let rotating = rng
            .random_bool(config.p_rotate)
            .then(|| interval(&mut rng, frames));
        if let Some((a, b)) = moving {
            events.push(Event { action: Action::StartMoving, frame: a });
            if b < frames {
                events.push(Event { action: Action::StopMoving, frame: b });
            }
        }
        if let Some((a, b)) = rotating {
            events.push(Event { action: Action::StartRotating, frame: a });
            if b < frames {
                events.push(Event { action: Action::StopRotating, frame: b });
            }
        }
        events.sort_by_key(|e| (e.frame, e.action));

        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = config.max_speed * rng.random_range(0.5..=1.0);
        let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
        let (mut cx, mut cy) = (cx0, cy0);
        let mut trajectory = Vec::with_capacity(frames);
        for f in 0..frames {
            let is_moving = moving.is_some_and(|(a, b)| f >= a && f < b);
            let is_rotating = rotating.is_some_and(|(a, b)| f >= a && f < b);
            if is_moving {
                cx += vx;
                cy += vy;
                // reflect at the borders
                if cx < hw {
                    cx = 2.0 * hw - cx;
                    vx = -vx;
                }
                if cx > config.width - hw {
                    cx = 2.0 * (config.width - hw) - cx;
                    vx = -vx;
                }
                if cy < hh {
                    cy = 2.0 * hh - cy;
                    vy = -vy;
                }
                if cy > config.height - hh {
                    cy = 2.0 * (config.height - hh) - cy;
                    vy = -vy;
                }
                cx = cx.clamp(hw, config.width - hw);
                cy = cy.clamp(hh, config.height - hh);
            }
            trajectory.push(FrameState {
                cx,
                cy,
                half_w: hw,
                half_h: hh,
                moving: is_moving,
                rotating: is_rotating,
            });
        }
        objects.push(SceneObject {
            id,
            shape,
            color,
            size,
            trajectory,
            events,
        });
    }
    Ok(SceneSpec {
        seed,
        frames,
        width: config.width,
        height: config.height,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let c = SceneConfig::default();
        assert_eq!(generate_scene(11, &c).unwrap(), generate_scene(11, &c).unwrap());
        assert_ne!(generate_scene(11, &c).unwrap(), generate_scene(12, &c).unwrap());
    }

    #[test]
    fn static_single_object() {
        let c = SceneConfig {
            min_objects: 1,
            max_objects: 1,
            max_speed: 0.0,
            ..SceneConfig::default()
        };
        let s = generate_scene(3, &c).unwrap();
        assert_eq!(s.objects.len(), 1);
        let t = &s.objects[0].trajectory;
        assert!(t.iter().all(|f| f.cx == t[0].cx && f.cy == t[0].cy));
        assert!(s.objects[0].event_frame(Action::StartMoving).is_none());
    }

    #[test]
    fn boxes_stay_in_frame_and_events_in_range() {
        let c = SceneConfig {
            max_speed: 8.0,
            p_move: 1.0,
            ..SceneConfig::default()
        };
        for seed in 0..200 {
            let s = generate_scene(seed, &c).unwrap();
            for (i, o) in s.objects.iter().enumerate() {
                assert_eq!(o.id, i);
                assert_eq!(o.trajectory.len(), s.frames);
                for f in &o.trajectory {
                    let [x0, y0, x1, y1] = f.bbox();
                    assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= s.width && y1 <= s.height, "{f:?}");
                }
                for e in &o.events {
                    assert!(e.frame < s.frames);
                }
            }
        }
    }

    #[test]
    fn infeasible_and_empty_ranges_rejected() {
        let tiny = SceneConfig {
            min_objects: 8,
            max_objects: 8,
            width: 40.0,
            height: 40.0,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(0, &tiny), Err(OcrlError::Generation(_))));
        let empty = SceneConfig {
            min_objects: 3,
            max_objects: 2,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(0, &empty), Err(OcrlError::Config(_))));
    }
}
