//! Planar geometry helpers shared by the route, sensor and collision code.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counter-clockwise perpendicular (points to the left of the direction).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Closest point on segment `a..b` to `p`, as the clamped segment parameter in [0, 1].
pub fn segment_param(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 <= f64::EPSILON {
        return 0.0;
    }
    ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
}

/// Distance along a ray (origin, unit direction) to segment `a..b`, if hit.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let edge = b - a;
    let denom = dir.cross(edge);
    if denom.abs() < 1e-12 {
        return None;
    }
    let diff = a - origin;
    let t = diff.cross(edge) / denom;
    let u = diff.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Distance along a ray to a circle, if hit. Origins inside the circle report 0.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.dot(oc) - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Oriented rectangle: center, heading and half extents (length along heading, width across).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: Vec2, heading: f64, length: f64, width: f64) -> Self {
        Self {
            center,
            heading,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    fn axes(&self) -> (Vec2, Vec2) {
        let fwd = Vec2::from_angle(self.heading);
        (fwd, fwd.perp())
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let f = f * self.half_length;
        let l = l * self.half_width;
        [
            self.center + f + l,
            self.center + f - l,
            self.center - f - l,
            self.center - f + l,
        ]
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let (a0, a1) = self.axes();
        let (b0, b1) = other.axes();
        let ca = self.corners();
        let cb = other.corners();
        [a0, a1, b0, b1].iter().all(|axis| {
            let (amin, amax) = project(&ca, *axis);
            let (bmin, bmax) = project(&cb, *axis);
            amax >= bmin && bmax >= amin
        })
    }

    pub fn overlaps_circle(&self, center: Vec2, radius: f64) -> bool {
        let (f, l) = self.axes();
        let d = center - self.center;
        let lx = d.dot(f).clamp(-self.half_length, self.half_length);
        let ly = d.dot(l).clamp(-self.half_width, self.half_width);
        let closest = self.center + f * lx + l * ly;
        closest.distance(center) <= radius
    }

    /// Slab-method ray intersection in the box frame.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let (f, l) = self.axes();
        let o = origin - self.center;
        let o_local = [o.dot(f), o.dot(l)];
        let d_local = [dir.dot(f), dir.dot(l)];
        let half = [self.half_length, self.half_width];
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        for k in 0..2 {
            if d_local[k].abs() < 1e-12 {
                if o_local[k].abs() > half[k] {
                    return None;
                }
            } else {
                let t1 = (-half[k] - o_local[k]) / d_local[k];
                let t2 = (half[k] - o_local[k]) / d_local[k];
                t_min = t_min.max(t1.min(t2));
                t_max = t_max.min(t1.max(t2));
            }
        }
        if t_max < t_min || t_max < 0.0 {
            None
        } else {
            Some(t_min.max(0.0))
        }
    }
}

fn project(points: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let v = p.dot(axis);
        (lo.min(v), hi.max(v))
    })
}
