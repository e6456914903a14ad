//! Forward raycast fan standing in for the camera feature vector.

use super::geometry::{ray_circle, ray_segment, Vec2};
use super::traffic::TrafficAgent;
use serde::{Deserialize, Serialize};

pub const RAY_COUNT: usize = 64;
pub const PERCEPTION_DIM: usize = 2 * RAY_COUNT;
pub const FIELD_OF_VIEW_DEG: f64 = 110.0;

/// Class flag written next to each normalized range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HitClass {
    Nothing,
    Boundary,
    Vehicle(u32),
}

impl HitClass {
    pub fn flag(self) -> f64 {
        match self {
            HitClass::Nothing => 0.0,
            HitClass::Boundary => 0.5,
            HitClass::Vehicle(_) => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Angle relative to the heading, positive to the left.
    pub angle: f64,
    pub distance: f64,
    pub class: HitClass,
}

pub struct SensorScene<'a> {
    pub boundary_segments: &'a [(Vec2, Vec2)],
    pub posts: &'a [(Vec2, f64)],
    pub vehicles: &'a [TrafficAgent],
}

pub fn ray_angle(i: usize) -> f64 {
    let half = 0.5 * FIELD_OF_VIEW_DEG.to_radians();
    -half + FIELD_OF_VIEW_DEG.to_radians() * i as f64 / (RAY_COUNT - 1) as f64
}

/// Casts the fan from `origin` looking along `heading`; misses report `range`.
pub fn cast(origin: Vec2, heading: f64, range: f64, scene: &SensorScene<'_>) -> Vec<RayHit> {
    let near: Vec<&TrafficAgent> = scene
        .vehicles
        .iter()
        .filter(|v| v.state.position.distance(origin) < range + 5.0)
        .collect();
    (0..RAY_COUNT)
        .map(|i| {
            let angle = ray_angle(i);
            let dir = Vec2::from_angle(heading + angle);
            let mut best = range;
            let mut class = HitClass::Nothing;
            for &(a, b) in scene.boundary_segments {
                if let Some(t) = ray_segment(origin, dir, a, b) {
                    if t < best {
                        best = t;
                        class = HitClass::Boundary;
                    }
                }
            }
            for &(c, r) in scene.posts {
                if let Some(t) = ray_circle(origin, dir, c, r) {
                    if t < best {
                        best = t;
                        class = HitClass::Boundary;
                    }
                }
            }
            for v in &near {
                if let Some(t) = v.footprint().ray_hit(origin, dir) {
                    if t < best {
                        best = t;
                        class = HitClass::Vehicle(v.id);
                    }
                }
            }
            RayHit { angle, distance: best, class }
        })
        .collect()
}

/// Interleaved `(normalized range, class flag)` pairs.
pub fn encode(hits: &[RayHit], range: f64) -> Vec<f64> {
    hits.iter()
        .flat_map(|h| [(h.distance / range).clamp(0.0, 1.0), h.class.flag()])
        .collect()
}
