//! Route geometry: procedurally generated towns, fixed evaluation scenarios and
//! projection of poses onto the route polyline.

use super::geometry::{segment_param, wrap_angle, Vec2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WAYPOINT_SPACING: f64 = 5.0;
pub const TRAINING_WAYPOINTS: usize = 500;
pub const SCENARIO_COUNT: u32 = 7;

const DENSE_STEP: f64 = 0.5;
const MAX_ROUTE_ATTEMPTS: usize = 32;
const MIN_SELF_CLEARANCE: f64 = 14.0;

const KMH_25: f64 = 25.0 / 3.6;
const KMH_30: f64 = 30.0 / 3.6;
const KMH_40: f64 = 40.0 / 3.6;
const KMH_50: f64 = 50.0 / 3.6;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("unknown scenario id {0}; valid ids are 1..={SCENARIO_COUNT}")]
    InvalidScenario(u32),
    #[error("no valid route after {0} attempts")]
    GenerationFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Town {
    Grid,
    TJunction,
    Roundabout,
    Highway,
}

impl Town {
    pub const ALL: [Town; 4] = [Town::Grid, Town::TJunction, Town::Roundabout, Town::Highway];
}

/// One piece of road in a tile chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tile {
    Straight { length: f64, limit: f64, junction: bool },
    /// Positive angle turns left.
    Arc { radius: f64, angle_deg: f64, limit: f64, junction: bool },
}

impl Tile {
    fn straight(length: f64, limit: f64) -> Self {
        Tile::Straight { length, limit, junction: false }
    }

    fn curve(radius: f64, angle_deg: f64, limit: f64) -> Self {
        Tile::Arc { radius, angle_deg, limit, junction: false }
    }

    fn right_turn() -> Self {
        Tile::Arc { radius: 7.0, angle_deg: -90.0, limit: KMH_30, junction: true }
    }

    fn left_turn() -> Self {
        Tile::Arc { radius: 12.0, angle_deg: 90.0, limit: KMH_30, junction: true }
    }

    fn through_junction(limit: f64) -> Self {
        Tile::Straight { length: 16.0, limit, junction: true }
    }

    /// Counter-clockwise roundabout; exit 1 is a right turn, 2 straight, 3 left.
    fn roundabout(exit: u8) -> [Tile; 3] {
        let sweep = 90.0 * f64::from(exit) - 60.0;
        [
            Tile::Arc { radius: 10.0, angle_deg: -60.0, limit: KMH_25, junction: true },
            Tile::Arc { radius: 14.0, angle_deg: sweep, limit: KMH_25, junction: true },
            Tile::Arc { radius: 10.0, angle_deg: -60.0, limit: KMH_25, junction: true },
        ]
    }

    fn heading_change(&self) -> f64 {
        match *self {
            Tile::Straight { .. } => 0.0,
            Tile::Arc { angle_deg, .. } => angle_deg.to_radians(),
        }
    }
}

struct DensePath {
    points: Vec<Vec2>,
    limits: Vec<f64>,
    junction: Vec<bool>,
    heading: f64,
    length: f64,
}

impl DensePath {
    fn new(start: Vec2, heading: f64, limit: f64) -> Self {
        Self {
            points: vec![start],
            limits: vec![limit],
            junction: vec![false],
            heading,
            length: 0.0,
        }
    }

    fn push(&mut self, tile: Tile) {
        let last = *self.points.last().expect("dense path is never empty");
        match tile {
            Tile::Straight { length, limit, junction } => {
                let n = (length / DENSE_STEP).ceil().max(1.0) as usize;
                let dir = Vec2::from_angle(self.heading);
                for k in 1..=n {
                    self.points.push(last + dir * (length * k as f64 / n as f64));
                    self.limits.push(limit);
                    self.junction.push(junction);
                }
                self.length += length;
            }
            Tile::Arc { radius, angle_deg, limit, junction } => {
                let angle = angle_deg.to_radians();
                let arc_len = radius * angle.abs();
                let n = (arc_len / DENSE_STEP).ceil().max(1.0) as usize;
                let side = angle.signum();
                let center = last + Vec2::from_angle(self.heading).perp() * (radius * side);
                let start_angle = (last - center).angle();
                for k in 1..=n {
                    let a = start_angle + angle * k as f64 / n as f64;
                    self.points.push(center + Vec2::from_angle(a) * radius);
                    self.limits.push(limit);
                    self.junction.push(junction);
                }
                self.heading = wrap_angle(self.heading + angle);
                self.length += arc_len;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<Vec2>,
    /// Speed limit of segment `i` (between waypoint `i` and `i + 1`), m/s.
    pub speed_limits: Vec<f64>,
    /// Whether each waypoint lies inside a junction.
    pub junction: Vec<bool>,
    /// Cumulative polyline length at each waypoint.
    pub arc: Vec<f64>,
}

/// Projection of a point onto the route polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteProjection {
    /// Arc length of the projected point.
    pub s: f64,
    pub segment: usize,
    /// Signed offset, positive to the left of the travel direction.
    pub lateral: f64,
    pub tangent: f64,
}

impl Route {
    fn from_tiles(tiles: &[Tile], start: Vec2, heading: f64, waypoint_count: Option<usize>) -> Route {
        let first_limit = match tiles.first() {
            Some(Tile::Straight { limit, .. }) | Some(Tile::Arc { limit, .. }) => *limit,
            None => KMH_30,
        };
        let mut dense = DensePath::new(start, heading, first_limit);
        for t in tiles {
            dense.push(*t);
        }
        Self::resample(&dense, waypoint_count)
    }

    fn resample(dense: &DensePath, waypoint_count: Option<usize>) -> Route {
        let mut cum = Vec::with_capacity(dense.points.len());
        cum.push(0.0);
        for w in dense.points.windows(2) {
            cum.push(cum.last().unwrap() + w[0].distance(w[1]));
        }
        let total = *cum.last().unwrap();
        let count = waypoint_count.unwrap_or((total / WAYPOINT_SPACING).floor() as usize + 1);

        let mut waypoints = Vec::with_capacity(count);
        let mut limits = Vec::with_capacity(count);
        let mut junction = Vec::with_capacity(count);
        let mut j = 0;
        for k in 0..count {
            let target = (k as f64 * WAYPOINT_SPACING).min(total);
            while j + 1 < cum.len() - 1 && cum[j + 1] < target {
                j += 1;
            }
            let seg = (cum[j + 1] - cum[j]).max(1e-12);
            let t = ((target - cum[j]) / seg).clamp(0.0, 1.0);
            waypoints.push(dense.points[j] + (dense.points[j + 1] - dense.points[j]) * t);
            limits.push(dense.limits[j + 1]);
            junction.push(dense.junction[j + 1] || dense.junction[j] && t < 0.5);
        }
        limits.pop();

        let mut arc = Vec::with_capacity(count);
        arc.push(0.0);
        for w in waypoints.windows(2) {
            arc.push(arc.last().unwrap() + w[0].distance(w[1]));
        }
        Route {
            waypoints,
            speed_limits: limits,
            junction,
            arc,
        }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }

    pub fn segment_count(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn segment_heading(&self, i: usize) -> f64 {
        let i = i.min(self.segment_count() - 1);
        (self.waypoints[i + 1] - self.waypoints[i]).angle()
    }

    /// Segment index containing arc length `s` (clamped to the route).
    pub fn segment_at(&self, s: f64) -> usize {
        let n = self.segment_count();
        match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    pub fn speed_limit_at(&self, s: f64) -> f64 {
        self.speed_limits[self.segment_at(s)]
    }

    /// Point and tangent heading at arc length `s`.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let i = self.segment_at(s);
        let a = self.waypoints[i];
        let b = self.waypoints[i + 1];
        let seg = (self.arc[i + 1] - self.arc[i]).max(1e-12);
        let t = ((s - self.arc[i]) / seg).clamp(0.0, 1.0);
        (a + (b - a) * t, (b - a).angle())
    }

    /// Projects `p` onto segments near `hint`.
    pub fn project(&self, p: Vec2, hint: usize, back: usize, ahead: usize) -> RouteProjection {
        let n = self.segment_count();
        let lo = hint.saturating_sub(back);
        let hi = (hint + ahead).min(n - 1);
        let mut best: Option<(f64, RouteProjection)> = None;
        for i in lo..=hi {
            let a = self.waypoints[i];
            let b = self.waypoints[i + 1];
            let t = segment_param(p, a, b);
            let q = a + (b - a) * t;
            let d = p.distance(q);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                let dir = b - a;
                let len = dir.norm().max(1e-12);
                let lateral = dir.cross(p - a) / len;
                best = Some((
                    d,
                    RouteProjection {
                        s: self.arc[i] + t * (self.arc[i + 1] - self.arc[i]),
                        segment: i,
                        lateral,
                        tangent: dir.angle(),
                    },
                ));
            }
        }
        best.expect("route has at least one segment").1
    }

    /// Smallest distance between waypoints that are far apart along the route.
    fn self_clearance(&self) -> f64 {
        let gap = (4.0 * MIN_SELF_CLEARANCE / WAYPOINT_SPACING) as usize;
        let mut best = f64::INFINITY;
        for i in 0..self.waypoints.len() {
            for j in (i + gap)..self.waypoints.len() {
                best = best.min(self.waypoints[i].distance(self.waypoints[j]));
            }
        }
        best
    }
}

fn town_tiles<R: Rng>(town: Town, rng: &mut R, min_length: f64) -> Vec<Tile> {
    let mut tiles = Vec::new();
    let mut length = 0.0;
    let mut heading: f64 = 0.0;
    let add = |tiles: &mut Vec<Tile>, t: Tile, length: &mut f64, heading: &mut f64| {
        *length += match t {
            Tile::Straight { length, .. } => length,
            Tile::Arc { radius, angle_deg, .. } => radius * angle_deg.to_radians().abs(),
        };
        *heading += t.heading_change();
        tiles.push(t);
    };
    // Turns that would carry the route back towards its start are swapped for their mirror.
    let turn = |rng: &mut R, heading: f64| -> Option<bool> {
        let left = rng.random_bool(0.5);
        let proposed = heading + if left { 1.0 } else { -1.0 } * std::f64::consts::FRAC_PI_2;
        if proposed.abs() > std::f64::consts::FRAC_PI_2 + 1e-6 {
            Some(!left)
        } else {
            Some(left)
        }
    };

    add(&mut tiles, Tile::straight(rng.random_range(30.0..60.0), KMH_30), &mut length, &mut heading);
    while length < min_length {
        match town {
            Town::Grid => {
                add(&mut tiles, Tile::straight(rng.random_range(60.0..110.0), KMH_30), &mut length, &mut heading);
                if rng.random_bool(0.4) {
                    add(&mut tiles, Tile::through_junction(KMH_30), &mut length, &mut heading);
                } else if let Some(left) = turn(rng, heading) {
                    let t = if left { Tile::left_turn() } else { Tile::right_turn() };
                    add(&mut tiles, t, &mut length, &mut heading);
                }
            }
            Town::TJunction => {
                add(&mut tiles, Tile::straight(rng.random_range(80.0..180.0), KMH_40), &mut length, &mut heading);
                if rng.random_bool(0.5) {
                    let sign = if heading > 0.3 { -1.0 } else if heading < -0.3 { 1.0 } else if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let c = Tile::curve(rng.random_range(40.0..80.0), sign * rng.random_range(20.0..60.0), KMH_40);
                    add(&mut tiles, c, &mut length, &mut heading);
                } else {
                    add(&mut tiles, Tile::straight(30.0, KMH_30), &mut length, &mut heading);
                    if let Some(left) = turn(rng, heading) {
                        let t = if left { Tile::left_turn() } else { Tile::right_turn() };
                        add(&mut tiles, t, &mut length, &mut heading);
                    }
                }
            }
            Town::Roundabout => {
                add(&mut tiles, Tile::straight(rng.random_range(60.0..140.0), KMH_40), &mut length, &mut heading);
                if rng.random_bool(0.6) {
                    let mut exit = rng.random_range(1..=3u8);
                    let net = (f64::from(exit) - 2.0) * std::f64::consts::FRAC_PI_2;
                    if (heading + net).abs() > std::f64::consts::FRAC_PI_2 + 1e-6 {
                        exit = 4 - exit;
                    }
                    add(&mut tiles, Tile::straight(20.0, KMH_30), &mut length, &mut heading);
                    for t in Tile::roundabout(exit) {
                        add(&mut tiles, t, &mut length, &mut heading);
                    }
                } else {
                    let sign = if heading > 0.0 { -1.0 } else { 1.0 };
                    let c = Tile::curve(rng.random_range(30.0..70.0), sign * rng.random_range(20.0..50.0), KMH_40);
                    add(&mut tiles, c, &mut length, &mut heading);
                }
            }
            Town::Highway => {
                add(&mut tiles, Tile::straight(rng.random_range(150.0..350.0), KMH_50), &mut length, &mut heading);
                let sign = if heading > 0.0 { -1.0 } else { 1.0 };
                let c = Tile::curve(rng.random_range(150.0..300.0), sign * rng.random_range(10.0..40.0), KMH_50);
                add(&mut tiles, c, &mut length, &mut heading);
                if rng.random_bool(0.25) {
                    add(&mut tiles, Tile::straight(40.0, KMH_30), &mut length, &mut heading);
                    if let Some(left) = turn(rng, heading) {
                        let t = if left { Tile::left_turn() } else { Tile::right_turn() };
                        add(&mut tiles, t, &mut length, &mut heading);
                    }
                }
            }
        }
    }
    // Tail so that resampling never runs off the dense path.
    add(&mut tiles, Tile::straight(60.0, KMH_40), &mut length, &mut heading);
    tiles
}

/// Random training route: exactly [`TRAINING_WAYPOINTS`] waypoints through one town.
pub fn random_route<R: Rng>(town: Town, rng: &mut R) -> Result<Route, RouteError> {
    let min_length = (TRAINING_WAYPOINTS - 1) as f64 * WAYPOINT_SPACING;
    for _ in 0..MAX_ROUTE_ATTEMPTS {
        let tiles = town_tiles(town, rng, min_length);
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let start = Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
        let route = Route::from_tiles(&tiles, start, heading, Some(TRAINING_WAYPOINTS));
        if route.self_clearance() >= MIN_SELF_CLEARANCE {
            return Ok(route);
        }
    }
    Err(RouteError::GenerationFailed(MAX_ROUTE_ATTEMPTS))
}

/// Static description of one of the fixed evaluation scenarios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub id: u32,
    pub name: &'static str,
    pub town: Town,
    /// Traffic density used when the world config does not override it, vehicles per km per lane.
    pub traffic_density: f64,
    pub elevation_tag: &'static str,
}

pub fn scenario_info(id: u32) -> Result<ScenarioInfo, RouteError> {
    let (name, town, density, elevation) = match id {
        1 => ("t_intersection_right_turn", Town::TJunction, 0.0, "flat"),
        2 => ("grid_block_loop", Town::Grid, 2.0, "flat"),
        3 => ("double_roundabout", Town::Roundabout, 2.0, "flat"),
        4 => ("highway_on_ramp", Town::Highway, 1.5, "overpass"),
        5 => ("winding_tunnel_road", Town::TJunction, 1.0, "tunnel"),
        6 => ("dense_urban_mix", Town::Grid, 4.0, "hill"),
        7 => ("t_intersection_left_turn", Town::TJunction, 2.0, "flat"),
        other => return Err(RouteError::InvalidScenario(other)),
    };
    Ok(ScenarioInfo {
        id,
        name,
        town,
        traffic_density: density,
        elevation_tag: elevation,
    })
}

fn scenario_tiles(id: u32) -> Result<Vec<Tile>, RouteError> {
    let s = Tile::straight;
    let tiles = match id {
        1 => vec![s(140.0, KMH_30), Tile::right_turn(), s(160.0, KMH_30)],
        2 => vec![
            s(100.0, KMH_30),
            Tile::left_turn(),
            s(90.0, KMH_30),
            Tile::right_turn(),
            s(110.0, KMH_30),
            Tile::through_junction(KMH_30),
            s(120.0, KMH_30),
        ],
        3 => {
            let mut t = vec![s(120.0, KMH_40), s(20.0, KMH_30)];
            t.extend(Tile::roundabout(2));
            t.extend([s(150.0, KMH_40), s(20.0, KMH_30)]);
            t.extend(Tile::roundabout(1));
            t.push(s(130.0, KMH_40));
            t
        }
        4 => vec![
            s(80.0, KMH_30),
            Tile::right_turn(),
            s(60.0, KMH_40),
            s(200.0, KMH_50),
            Tile::curve(250.0, 30.0, KMH_50),
            s(100.0, KMH_50),
            s(120.0, KMH_40),
        ],
        5 => vec![
            s(60.0, KMH_40),
            Tile::curve(60.0, 45.0, KMH_40),
            s(40.0, KMH_40),
            Tile::curve(60.0, -90.0, KMH_30),
            s(40.0, KMH_40),
            Tile::curve(80.0, 45.0, KMH_40),
            s(120.0, KMH_40),
        ],
        6 => {
            let mut t = vec![
                s(90.0, KMH_30),
                Tile::through_junction(KMH_30),
                s(80.0, KMH_30),
                Tile::left_turn(),
                s(110.0, KMH_30),
                s(20.0, KMH_30),
            ];
            t.extend(Tile::roundabout(3));
            t.extend([
                s(100.0, KMH_40),
                Tile::curve(50.0, 40.0, KMH_30),
                s(60.0, KMH_30),
                Tile::right_turn(),
                s(150.0, KMH_30),
            ]);
            t
        }
        7 => vec![
            s(150.0, KMH_30),
            Tile::left_turn(),
            s(100.0, KMH_30),
            Tile::curve(70.0, -30.0, KMH_40),
            s(150.0, KMH_40),
        ],
        other => return Err(RouteError::InvalidScenario(other)),
    };
    Ok(tiles)
}

/// Fixed evaluation route for scenario `id` (1..=7).
pub fn scenario_route(id: u32) -> Result<Route, RouteError> {
    let tiles = scenario_tiles(id)?;
    Ok(Route::from_tiles(&tiles, Vec2::new(0.0, 0.0), 0.0, None))
}
