//! Deterministic 2D kinematic driving world.
//!
//! A world owns one route (500 waypoints in random-route mode, or one of the seven
//! fixed evaluation scenarios), the background traffic, the roadside posts and the
//! ego vehicle. [`World::step`] advances everything by one 10 Hz tick and reports the
//! geometric events, the termination decision and the full [`StepContext`] the reward
//! engine needs.

pub mod geometry;
pub mod route;
pub mod sensor;
pub mod traffic;
pub mod vehicle;

use crate::reward::{Situation, StepContext};
use geometry::{wrap_angle, Obb, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use route::{Route, RouteError, RouteProjection, Town};
use sensor::{HitClass, RayHit, SensorScene, PERCEPTION_DIM};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;
use traffic::{EgoLaneInfo, IdmParams, LaneDirection, Traffic, TrafficAgent};
pub use vehicle::{Action, VehicleParams, VehicleState, DT};

pub const ODOMETRY_DIM: usize = 17;
pub const ACTION_HISTORY_LEN: usize = 3;
pub const OBSERVATION_DIM: usize = PERCEPTION_DIM + ODOMETRY_DIM + 2 * ACTION_HISTORY_LEN + 2 + 1;

const POST_SPACING: f64 = 12.0;
const POST_RADIUS: f64 = 0.25;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("step called after the episode terminated ({0:?})")]
    Terminated(TerminationReason),
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Collision,
    RouteDeviation,
    Stagnation,
    Goal,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationRules {
    /// Lateral distance from the route beyond which the episode ends, meters.
    pub max_route_deviation: f64,
    pub stagnation_steps: u32,
    pub max_steps: u32,
    /// Arc-length advance that counts as progress, meters.
    pub progress_epsilon: f64,
}

impl Default for TerminationRules {
    fn default() -> Self {
        Self {
            max_route_deviation: 6.0,
            stagnation_steps: 200,
            max_steps: 1400,
            progress_epsilon: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TerminationInput {
    pub collided: bool,
    pub route_deviation: f64,
    pub steps: u32,
    pub steps_without_progress: u32,
    pub goal_reached: bool,
}

/// Applies the termination rules in priority order
/// collision > route deviation > stagnation > goal > step limit.
pub fn check_termination(input: &TerminationInput, rules: &TerminationRules) -> Option<TerminationReason> {
    if input.collided {
        Some(TerminationReason::Collision)
    } else if input.route_deviation > rules.max_route_deviation {
        Some(TerminationReason::RouteDeviation)
    } else if input.steps_without_progress >= rules.stagnation_steps {
        Some(TerminationReason::Stagnation)
    } else if input.goal_reached {
        Some(TerminationReason::Goal)
    } else if input.steps >= rules.max_steps {
        Some(TerminationReason::StepLimit)
    } else {
        None
    }
}

/// Thresholds behind the situational predicates used by the performance reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SituationThresholds {
    pub clear_path_distance: f64,
    /// Half-angle of the ego-lane part of the ray fan, degrees.
    pub lane_fan_deg: f64,
    /// Braking is rewarded only while time-to-collision is below this, seconds.
    pub hazard_ttc: f64,
    pub idle_speed: f64,
    pub idle_steps: u32,
    pub oscillation_window: usize,
    pub oscillation_reversals: usize,
    pub oscillation_min_delta: f64,
    pub abrupt_steer_delta: f64,
    pub abrupt_longitudinal_delta: f64,
}

impl Default for SituationThresholds {
    fn default() -> Self {
        Self {
            clear_path_distance: 20.0,
            lane_fan_deg: 10.0,
            hazard_ttc: 3.0,
            idle_speed: 0.1,
            idle_steps: 20,
            oscillation_window: 10,
            oscillation_reversals: 3,
            oscillation_min_delta: 0.2,
            abrupt_steer_delta: 0.3,
            abrupt_longitudinal_delta: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Fixed evaluation scenario (1..=7); `None` selects random-route mode.
    pub scenario: Option<u32>,
    /// Restricts random-route mode to one town.
    pub town: Option<Town>,
    /// Mixed into route generation so different maps can share episode seeds.
    pub map_seed: u64,
    /// Vehicles per km and lane; `None` uses the scenario default (1.5 in random mode).
    pub traffic_density: Option<f64>,
    /// Cosmetic metadata only.
    pub weather: String,
    pub lane_width: f64,
    pub shoulder: f64,
    pub sensor_range: f64,
    pub rules: TerminationRules,
    pub situation: SituationThresholds,
    pub vehicle: VehicleParams,
    pub idm: IdmParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            town: None,
            map_seed: 0,
            traffic_density: None,
            weather: "clear_noon".into(),
            lane_width: 3.5,
            shoulder: 1.0,
            sensor_range: 40.0,
            rules: TerminationRules::default(),
            situation: SituationThresholds::default(),
            vehicle: VehicleParams::default(),
            idm: IdmParams::default(),
        }
    }
}

impl WorldConfig {
    pub fn scenario(id: u32) -> Self {
        Self {
            scenario: Some(id),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if let Some(id) = self.scenario {
            route::scenario_info(id)?;
        }
        let positive = [
            ("lane_width", self.lane_width),
            ("sensor_range", self.sensor_range),
            ("vehicle.max_accel", self.vehicle.max_accel),
            ("vehicle.max_brake", self.vehicle.max_brake),
            ("vehicle.top_speed", self.vehicle.top_speed),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(WorldError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(d) = self.traffic_density {
            if !(d.is_finite() && d >= 0.0) {
                return Err(WorldError::InvalidConfig(format!("traffic_density must be >= 0, got {d}")));
            }
        }
        Ok(())
    }
}

/// Geometric events of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct EventSet {
    pub collision_vehicle: bool,
    pub collision_environment: bool,
    pub lane_invasion: bool,
    pub off_road: bool,
    pub waypoint_reached: bool,
    pub junction_traversed: bool,
    pub goal_reached: bool,
}

impl EventSet {
    const NAMES: [&'static str; 7] = [
        "collision_vehicle",
        "collision_environment",
        "lane_invasion",
        "off_road",
        "waypoint_reached",
        "junction_traversed",
        "goal_reached",
    ];

    fn flags(&self) -> [bool; 7] {
        [
            self.collision_vehicle,
            self.collision_environment,
            self.lane_invasion,
            self.off_road,
            self.waypoint_reached,
            self.junction_traversed,
            self.goal_reached,
        ]
    }

    pub fn names(&self) -> Vec<&'static str> {
        Self::NAMES
            .iter()
            .zip(self.flags())
            .filter_map(|(n, f)| f.then_some(*n))
            .collect()
    }

    pub fn collided(&self) -> bool {
        self.collision_vehicle || self.collision_environment
    }
}

impl From<EventSet> for Vec<String> {
    fn from(e: EventSet) -> Self {
        e.names().into_iter().map(String::from).collect()
    }
}

impl From<Vec<String>> for EventSet {
    fn from(names: Vec<String>) -> Self {
        let has = |n: &str| names.iter().any(|x| x == n);
        EventSet {
            collision_vehicle: has("collision_vehicle"),
            collision_environment: has("collision_environment"),
            lane_invasion: has("lane_invasion"),
            off_road: has("off_road"),
            waypoint_reached: has("waypoint_reached"),
            junction_traversed: has("junction_traversed"),
            goal_reached: has("goal_reached"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub events: EventSet,
    /// Impact acceleration of a collision this step, m/s² (0 without collision).
    pub impact_accel: f64,
    pub termination: Option<TerminationReason>,
}

/// Agent-facing observation. Fields hold physical units; [`Observation::to_features`]
/// produces the scaled 154-dimensional network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// 64 rays × (normalized range, class flag), all in [0, 1].
    pub perception: Vec<f64>,
    /// v, v_along, v_across, |a|, a_long, a_lat, yaw_rate, throttle, brake, steer,
    /// sin(heading), cos(heading), lane offset, heading error, route progress,
    /// time since last waypoint, speed / limit.
    pub odometry: [f64; ODOMETRY_DIM],
    /// Previous three actions, most recent first, as (steer, longitudinal) pairs.
    pub action_history: [f64; 2 * ACTION_HISTORY_LEN],
    /// Distance (m) and bearing (rad, [-π, π]) of the next waypoint.
    pub waypoint: [f64; 2],
    pub speed_limit: f64,
}

const ODOMETRY_SCALE: [f64; ODOMETRY_DIM] = [
    10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 1.0,
];

impl Observation {
    pub fn dim(&self) -> usize {
        self.perception.len() + ODOMETRY_DIM + 2 * ACTION_HISTORY_LEN + 2 + 1
    }

    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OBSERVATION_DIM);
        out.extend_from_slice(&self.perception);
        out.extend(self.odometry.iter().zip(ODOMETRY_SCALE).map(|(v, s)| v / s));
        out.extend_from_slice(&self.action_history);
        out.push(self.waypoint[0] / 10.0);
        out.push(self.waypoint[1] / std::f64::consts::PI);
        out.push(self.speed_limit / 15.0);
        out
    }

    pub fn bearing(&self) -> f64 {
        self.waypoint[1]
    }
}

/// Everything [`World::step`] produces.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: VehicleState,
    pub observation: Observation,
    pub outcome: StepOutcome,
    pub context: StepContext,
}

#[derive(Debug, Clone, Copy)]
struct Post {
    s: f64,
    center: Vec2,
}

#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    route: Route,
    traffic: Traffic,
    posts: Vec<Post>,
    edges: Vec<Option<[(Vec2, Vec2); 2]>>,
    ego: VehicleState,
    dynamics: vehicle::EgoDynamics,
    projection: RouteProjection,
    next_waypoint: usize,
    best_progress: f64,
    steps: u32,
    last_progress_step: u32,
    last_waypoint_step: u32,
    idle_steps: u32,
    action_history: VecDeque<Action>,
    steer_deltas: VecDeque<f64>,
    prev_lateral: f64,
    terminated: Option<TerminationReason>,
}

fn normal_at(route: &Route, i: usize) -> Vec2 {
    let n = route.len();
    let prev = route.waypoints[i.saturating_sub(1)];
    let next = route.waypoints[(i + 1).min(n - 1)];
    let d = next - prev;
    let len = d.norm().max(1e-12);
    (d * (1.0 / len)).perp()
}

impl World {
    /// Builds the world for `(config, seed)`. Equal inputs give bit-identical worlds.
    pub fn reset(config: &WorldConfig, seed: u64) -> Result<(World, Observation), WorldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ config.map_seed.rotate_left(32));
        let (route, default_density) = match config.scenario {
            Some(id) => (route::scenario_route(id)?, route::scenario_info(id)?.traffic_density),
            None => {
                let town = config.town.unwrap_or(Town::ALL[rng.random_range(0..Town::ALL.len())]);
                (route::random_route(town, &mut rng)?, 1.5)
            }
        };
        let density = config.traffic_density.unwrap_or(default_density);
        let traffic = spawn_traffic(&route, density, config, &mut rng);

        let w = config.lane_width;
        let right = -(0.5 * w + config.shoulder);
        let left = 1.5 * w;
        let normals: Vec<Vec2> = (0..route.len()).map(|i| normal_at(&route, i)).collect();
        let edges = (0..route.segment_count())
            .map(|i| {
                if route.junction[i] && route.junction[i + 1] {
                    return None;
                }
                let (a, b) = (route.waypoints[i], route.waypoints[i + 1]);
                let (na, nb) = (normals[i], normals[i + 1]);
                Some([(a + na * right, b + nb * right), (a + na * left, b + nb * left)])
            })
            .collect();
        let mut posts = Vec::new();
        let mut s = 0.5 * POST_SPACING;
        while s < route.total_length() {
            let seg = route.segment_at(s);
            if !route.junction[seg] && !route.junction[seg + 1] {
                let (p, t) = route.pose_at(s);
                let n = Vec2::from_angle(t).perp();
                posts.push(Post { s, center: p + n * (right - 1.0) });
                posts.push(Post { s, center: p + n * (left + 0.6) });
            }
            s += POST_SPACING;
        }

        let start_heading = route.segment_heading(0);
        let ego = VehicleState::at(route.waypoints[0], start_heading, 0.0);
        let projection = route.project(ego.position, 0, 0, 2);
        let world = World {
            config: config.clone(),
            dynamics: vehicle::EgoDynamics::new(config.vehicle.clone()),
            route,
            traffic,
            posts,
            edges,
            ego,
            projection,
            next_waypoint: 1,
            best_progress: 0.0,
            steps: 0,
            last_progress_step: 0,
            last_waypoint_step: 0,
            idle_steps: 0,
            action_history: VecDeque::from(vec![Action::default(); ACTION_HISTORY_LEN]),
            steer_deltas: VecDeque::new(),
            prev_lateral: 0.0,
            terminated: None,
        };
        let hits = world.cast_rays();
        let obs = world.observe(&hits);
        Ok((world, obs))
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn traffic(&self) -> &[TrafficAgent] {
        &self.traffic.agents
    }

    pub fn state(&self) -> &VehicleState {
        &self.ego
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn terminated(&self) -> Option<TerminationReason> {
        self.terminated
    }

    /// Arc length travelled along the route.
    pub fn progress(&self) -> f64 {
        self.projection.s
    }

    pub fn route_completion(&self) -> f64 {
        (self.projection.s / self.route.total_length()).clamp(0.0, 1.0)
    }

    pub fn lateral_offset(&self) -> f64 {
        self.projection.lateral
    }

    pub fn speed_limit(&self) -> f64 {
        self.route.speed_limits[self.projection.segment]
    }

    fn lane_of(&self, lateral: f64) -> Option<LaneDirection> {
        let w = self.config.lane_width;
        if lateral > 1.5 * w || lateral < -(0.5 * w + self.config.shoulder) {
            None
        } else if lateral > 0.5 * w {
            Some(LaneDirection::Oncoming)
        } else {
            Some(LaneDirection::WithRoute)
        }
    }

    fn cast_rays(&self) -> Vec<RayHit> {
        let seg = self.projection.segment;
        let lo = seg.saturating_sub(4);
        let hi = (seg + 14).min(self.route.segment_count() - 1);
        let boundary: Vec<(Vec2, Vec2)> = self.edges[lo..=hi].iter().flatten().flat_map(|e| e.iter().copied()).collect();
        let s = self.projection.s;
        let posts: Vec<(Vec2, f64)> = self
            .posts_between(s - 15.0, s + self.config.sensor_range + 10.0)
            .map(|p| (p.center, POST_RADIUS))
            .collect();
        let scene = SensorScene {
            boundary_segments: &boundary,
            posts: &posts,
            vehicles: &self.traffic.agents,
        };
        sensor::cast(self.ego.position, self.ego.heading, self.config.sensor_range, &scene)
    }

    fn posts_between(&self, lo: f64, hi: f64) -> impl Iterator<Item = &Post> {
        let start = self.posts.partition_point(|p| p.s < lo);
        self.posts[start..].iter().take_while(move |p| p.s <= hi)
    }

    /// Builds the observation for the current state from a precomputed ray fan.
    pub fn observe(&self, hits: &[RayHit]) -> Observation {
        let ego = &self.ego;
        let limit = self.speed_limit();
        let heading_error = wrap_angle(ego.heading - self.projection.tangent);
        let n = self.route.len();
        let target = self.route.waypoints[self.next_waypoint.min(n - 1)];
        let delta = target - ego.position;
        let bearing = wrap_angle(delta.angle() - ego.heading);
        let since_wp = f64::from(self.steps - self.last_waypoint_step) / 50.0;
        let odometry = [
            ego.speed,
            ego.speed * heading_error.cos(),
            ego.speed * heading_error.sin(),
            ego.accel_magnitude(),
            ego.a_long,
            ego.a_lat,
            ego.yaw_rate,
            ego.throttle_pos,
            ego.brake_pos,
            ego.steer_pos,
            ego.heading.sin(),
            ego.heading.cos(),
            self.projection.lateral,
            heading_error,
            self.route_completion(),
            since_wp.min(1.0),
            ego.speed / limit,
        ];
        let mut action_history = [0.0; 2 * ACTION_HISTORY_LEN];
        for (k, a) in self.action_history.iter().enumerate() {
            action_history[2 * k] = a.steer;
            action_history[2 * k + 1] = a.longitudinal;
        }
        Observation {
            perception: sensor::encode(hits, self.config.sensor_range),
            odometry,
            action_history,
            waypoint: [delta.norm(), bearing],
            speed_limit: limit,
        }
    }

    fn obstacle_ahead(&self, hits: &[RayHit]) -> Option<(f64, f64)> {
        let fan = self.config.situation.lane_fan_deg.to_radians();
        let ego_dir = Vec2::from_angle(self.ego.heading);
        hits.iter()
            .filter(|h| h.angle.abs() <= fan)
            .filter_map(|h| match h.class {
                HitClass::Vehicle(id) => {
                    let other = self.traffic.agents.iter().find(|a| a.id == id)?;
                    let closing = self.ego.speed - other.state.velocity().dot(ego_dir);
                    Some((h.distance, closing))
                }
                _ => None,
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Advances the world by one tick.
    pub fn step(&mut self, action: Action) -> Result<StepResult, WorldError> {
        if let Some(reason) = self.terminated {
            return Err(WorldError::Terminated(reason));
        }
        let action = action.clipped();
        let prev_state = self.ego;
        let prev_action = *self.action_history.front().expect("history is never empty");
        let prev_projection = self.projection;

        let ego = self.dynamics.step(&prev_state, action);
        let ego_info = EgoLaneInfo {
            s: prev_projection.s,
            speed: prev_state.speed,
            lane: self.lane_of(prev_projection.lateral),
        };
        self.traffic.step(&self.route, ego_info);
        self.ego = ego;
        self.steps += 1;

        let projection = self.route.project(ego.position, prev_projection.segment, 2, 6);
        self.projection = projection;
        let n = self.route.len();

        let mut events = EventSet::default();
        while self.next_waypoint < n && self.route.arc[self.next_waypoint] <= projection.s + 1e-9 {
            events.waypoint_reached = true;
            let k = self.next_waypoint;
            if self.route.junction[k] && (k + 1 == n || !self.route.junction[k + 1]) {
                events.junction_traversed = true;
            }
            self.next_waypoint += 1;
        }
        if events.waypoint_reached {
            self.last_waypoint_step = self.steps;
        }
        let goal_reached = self.next_waypoint >= n;

        if projection.s >= self.best_progress + self.config.rules.progress_epsilon {
            self.best_progress = projection.s;
            self.last_progress_step = self.steps;
        }

        let w = self.config.lane_width;
        let lateral = projection.lateral;
        events.off_road = self.lane_of(lateral).is_none();
        events.lane_invasion = self.prev_lateral <= 0.5 * w && lateral > 0.5 * w;
        self.prev_lateral = lateral;

        let footprint = Obb::new(ego.position, ego.heading, self.config.vehicle.length, self.config.vehicle.width);
        let mut impact: f64 = 0.0;
        for other in &self.traffic.agents {
            if footprint.overlaps(&other.footprint()) {
                events.collision_vehicle = true;
                let rel = ego.velocity() - other.state.velocity();
                impact = impact.max(rel.norm() / DT);
            }
        }
        let s = projection.s;
        if self.posts_between(s - 10.0, s + 10.0).any(|p| footprint.overlaps_circle(p.center, POST_RADIUS)) {
            events.collision_environment = true;
            impact = impact.max(ego.speed / DT);
        }

        let hits = self.cast_rays();
        let th = &self.config.situation;
        let ahead = self.obstacle_ahead(&hits);
        let clear_path = ahead.is_none_or(|(d, _)| d > th.clear_path_distance);
        let hazard_ahead = ahead.is_some_and(|(d, closing)| {
            d <= th.clear_path_distance && closing > 0.0 && d / closing < th.hazard_ttc
        });
        if ego.speed < th.idle_speed && clear_path {
            self.idle_steps += 1;
        } else {
            self.idle_steps = 0;
        }
        let steer_delta = action.steer - prev_action.steer;
        self.steer_deltas.push_back(steer_delta);
        while self.steer_deltas.len() > th.oscillation_window {
            self.steer_deltas.pop_front();
        }
        let situation = Situation {
            clear_path,
            hazard_ahead,
            idle: self.idle_steps >= th.idle_steps,
            oscillating: count_reversals(&self.steer_deltas, th.oscillation_min_delta) >= th.oscillation_reversals,
            abrupt: steer_delta.abs() > th.abrupt_steer_delta
                || (action.longitudinal - prev_action.longitudinal).abs() > th.abrupt_longitudinal_delta,
        };

        let termination = check_termination(
            &TerminationInput {
                collided: events.collided(),
                route_deviation: lateral.abs(),
                steps: self.steps,
                steps_without_progress: self.steps - self.last_progress_step,
                goal_reached,
            },
            &self.config.rules,
        );
        events.goal_reached = termination == Some(TerminationReason::Goal);
        self.terminated = termination;

        self.action_history.push_front(action);
        self.action_history.truncate(ACTION_HISTORY_LEN);

        let outcome = StepOutcome {
            events,
            impact_accel: if events.collided() { impact } else { 0.0 },
            termination,
        };
        let d_lat = lateral.abs();
        let d_center = if lateral > 0.5 * w { (lateral - w).abs() } else { d_lat };
        let context = StepContext {
            state: ego,
            prev_state,
            action,
            prev_action,
            outcome,
            d_center,
            d_lat,
            d_route: (d_lat - 1.0).max(0.0),
            heading_error_deg: wrap_angle(ego.heading - projection.tangent).to_degrees(),
            progress: ((projection.s - prev_projection.s) / route::WAYPOINT_SPACING).clamp(-1.0, 1.0),
            v_target: self.speed_limit(),
            v_max: self.config.vehicle.top_speed,
            a_max: self.config.vehicle.max_accel,
            jerk: [(ego.a_long - prev_state.a_long) / DT, (ego.a_lat - prev_state.a_lat) / DT],
            situation,
        };
        let observation = self.observe(&hits);
        Ok(StepResult {
            state: ego,
            observation,
            outcome,
            context,
        })
    }
}

/// Steering reversals: consecutive significant deltas with opposite signs.
fn count_reversals(deltas: &VecDeque<f64>, min_delta: f64) -> usize {
    let mut last_sign = 0.0;
    let mut count = 0;
    for d in deltas.iter().filter(|d| d.abs() > min_delta) {
        let sign = d.signum();
        if last_sign != 0.0 && sign != last_sign {
            count += 1;
        }
        last_sign = sign;
    }
    count
}

fn spawn_traffic(route: &Route, density: f64, config: &WorldConfig, rng: &mut ChaCha8Rng) -> Traffic {
    let total = route.total_length();
    let per_lane = (density * total / 1000.0).round() as usize;
    let mut agents = Vec::new();
    let mut id = 0;
    for lane in [LaneDirection::WithRoute, LaneDirection::Oncoming] {
        let lo = if lane == LaneDirection::WithRoute { 40.0 } else { 20.0 };
        let hi = total - 20.0;
        if hi <= lo {
            continue;
        }
        let mut placed: Vec<f64> = Vec::new();
        for _ in 0..per_lane {
            // Rejection keeps a minimum spacing; give up on a slot after a few tries.
            for _ in 0..8 {
                let s = rng.random_range(lo..hi);
                if placed.iter().all(|p| (p - s).abs() > 25.0) {
                    placed.push(s);
                    break;
                }
            }
        }
        placed.sort_by(f64::total_cmp);
        for s in placed {
            let factor = rng.random_range(0.7..1.0);
            let speed = factor * route.speed_limit_at(s);
            agents.push(TrafficAgent {
                id,
                lane,
                s,
                target_factor: factor,
                state: VehicleState { speed, ..Default::default() },
            });
            id += 1;
        }
    }
    Traffic::new(agents, config.idm.clone(), route, config.lane_width)
}
