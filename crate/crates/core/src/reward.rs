//! Five-dimensional reward: a static core reward plus four style objectives.
//!
//! Every function here is pure over a [`StepContext`]; the world builds the context and
//! the agent applies preference weights later.

use crate::world::{Action, StepOutcome, TerminationReason, VehicleState, DT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REWARD_DIM: usize = 5;
pub const OBJECTIVE_NAMES: [&str; 4] = ["aggressiveness", "comfort", "speed", "efficiency"];

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("target speed must be positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("reward component {0} is not finite")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub alpha_l: f64,
    pub alpha_yaw: f64,
    pub alpha_l_acc: f64,
    pub beta_steer: f64,
    pub beta_throttle: f64,
    pub beta_v: f64,
    pub beta_long: f64,
    pub beta_jerk: f64,
    pub beta_b: f64,
    pub delta_speed: f64,
    pub c_col: f64,
    pub c_acc: f64,
    pub c_brake: f64,
    /// Collision weight for static obstacles; vehicle collisions use `w_type_vehicle`.
    pub w_type: f64,
    pub w_type_vehicle: f64,
    pub c_spd_high: f64,
    pub c_idle: f64,
    pub c_osc: f64,
    pub c_steer: f64,
    pub c_throttle: f64,
    pub c_off: f64,
    pub c_inv: f64,
    pub w_lane: f64,
    pub c_dev: f64,
    pub c_lat: f64,
    pub c_head: f64,
    pub c_wp: f64,
    pub c_junc: f64,
    pub c_goal: f64,
    pub c_termination: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha_l: 0.10,
            alpha_yaw: 0.30,
            alpha_l_acc: 0.20,
            beta_steer: 0.10,
            beta_throttle: 0.05,
            beta_v: 0.30,
            beta_long: 0.30,
            beta_jerk: 0.03,
            beta_b: 1.20,
            delta_speed: 1.75,
            c_col: 5.0,
            c_acc: 0.1,
            c_brake: 2.75,
            w_type: 1.7,
            w_type_vehicle: 1.0,
            c_spd_high: 0.3,
            c_idle: 3.5,
            c_osc: 0.2,
            c_steer: 0.6,
            c_throttle: 0.4,
            c_off: 1.2,
            c_inv: 1.0,
            w_lane: 2.0,
            c_dev: 0.15,
            c_lat: 1.0 / 3.0,
            c_head: 1.0 / 90.0,
            c_wp: 0.25,
            c_junc: 0.1,
            c_goal: 20.0,
            c_termination: -5.0,
        }
    }
}

/// Situational predicates used by the performance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Situation {
    /// No vehicle inside the ego-lane fan within the clear-path distance.
    pub clear_path: bool,
    /// A closing vehicle ahead with a short time-to-collision.
    pub hazard_ahead: bool,
    pub idle: bool,
    pub oscillating: bool,
    pub abrupt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub state: VehicleState,
    pub prev_state: VehicleState,
    pub action: Action,
    pub prev_action: Action,
    pub outcome: StepOutcome,
    /// Distance to the center of the lane the ego occupies, meters.
    pub d_center: f64,
    /// Lateral distance to the route line, meters.
    pub d_lat: f64,
    /// Route deviation beyond a 1 m tolerance, meters.
    pub d_route: f64,
    pub heading_error_deg: f64,
    /// Arc-length advance this step as a fraction of the waypoint spacing.
    pub progress: f64,
    pub v_target: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// (jerk_long, jerk_lat), m/s³.
    pub jerk: [f64; 2],
    pub situation: Situation,
}

impl StepContext {
    /// A stationary, event-free context on a road with limit `v_target`.
    pub fn at_rest(v_target: f64) -> Self {
        Self {
            state: VehicleState::default(),
            prev_state: VehicleState::default(),
            action: Action::default(),
            prev_action: Action::default(),
            outcome: StepOutcome::default(),
            d_center: 0.0,
            d_lat: 0.0,
            d_route: 0.0,
            heading_error_deg: 0.0,
            progress: 0.0,
            v_target,
            v_max: 20.0,
            a_max: 3.5,
            jerk: [0.0; 2],
            situation: Situation::default(),
        }
    }

    /// Recomputes the jerk from the two states.
    pub fn finite_difference_jerk(&self) -> [f64; 2] {
        [
            (self.state.a_long - self.prev_state.a_long) / DT,
            (self.state.a_lat - self.prev_state.a_lat) / DT,
        ]
    }
}

/// Ordered as (core, aggressiveness, comfort, speed, efficiency).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardVector {
    pub core: f64,
    pub agg: f64,
    pub comfort: f64,
    pub speed: f64,
    pub eff: f64,
}

impl RewardVector {
    pub fn to_array(self) -> [f64; REWARD_DIM] {
        [self.core, self.agg, self.comfort, self.speed, self.eff]
    }

    pub fn from_array(a: [f64; REWARD_DIM]) -> Self {
        Self {
            core: a[0],
            agg: a[1],
            comfort: a[2],
            speed: a[3],
            eff: a[4],
        }
    }
}

pub fn collision_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    let ev = &ctx.outcome.events;
    let mut r = 0.0;
    if ev.collided() {
        let w = if ev.collision_environment { p.w_type } else { p.w_type_vehicle };
        r -= w * (p.c_col + p.c_acc * ctx.outcome.impact_accel);
    }
    if ctx.state.brake_pos > 0.0 && ctx.situation.hazard_ahead {
        r += p.c_brake;
    }
    r
}

pub fn boundary_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    let ev = &ctx.outcome.events;
    let mut r = 0.0;
    if ev.off_road {
        r -= p.c_off;
    }
    if ev.lane_invasion {
        r -= p.w_lane * p.c_inv;
    }
    r
}

pub fn lane_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    -p.c_dev * ctx.d_center
}

pub fn nav_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    let ev = &ctx.outcome.events;
    let mut r = ctx.progress - p.c_lat * ctx.d_lat - p.c_head * ctx.heading_error_deg.abs() - ctx.d_route;
    if ev.waypoint_reached {
        r += p.c_wp;
    }
    if ev.junction_traversed {
        r += p.c_junc;
    }
    r
}

/// First matching case wins: idle, clear path, overspeed, oscillation, abrupt input.
pub fn perf_reward(ctx: &StepContext, p: &RewardParams) -> Result<f64, RewardError> {
    let s = &ctx.situation;
    let v = ctx.state.speed;
    Ok(if s.idle {
        -p.c_idle
    } else if s.clear_path {
        speed_reward(ctx, p)?
    } else if v > ctx.v_target {
        -p.c_spd_high * (v - ctx.v_target).abs()
    } else if s.oscillating {
        -p.c_osc
    } else if s.abrupt {
        -p.c_steer * (ctx.action.steer - ctx.prev_action.steer).abs()
            - p.c_throttle * (ctx.action.longitudinal - ctx.prev_action.longitudinal).abs()
    } else {
        0.0
    })
}

pub fn core_reward(ctx: &StepContext, p: &RewardParams) -> Result<f64, RewardError> {
    let mut r = collision_reward(ctx, p)
        + boundary_reward(ctx, p)
        + lane_reward(ctx, p)
        + nav_reward(ctx, p)
        + perf_reward(ctx, p)?;
    match ctx.outcome.termination {
        Some(TerminationReason::Goal) => r += p.c_goal,
        Some(_) => r += p.c_termination,
        None => {}
    }
    Ok(r)
}

pub fn agg_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    let s = &ctx.state;
    let mut r = p.alpha_l * s.a_long.abs() + p.alpha_l * s.a_lat.abs() + p.alpha_yaw * s.yaw_rate.abs();
    if s.a_long * ctx.prev_state.a_long < 0.0 {
        r -= p.alpha_l_acc * (s.a_long - ctx.prev_state.a_long).abs();
    }
    r
}

pub fn comfort_reward(ctx: &StepContext, p: &RewardParams) -> f64 {
    let d_steer = (ctx.action.steer - ctx.prev_action.steer).abs();
    let d_u = (ctx.action.longitudinal - ctx.prev_action.longitudinal).abs();
    let d_v = (ctx.state.speed - ctx.prev_state.speed).abs();
    let d_a = (ctx.state.a_long - ctx.prev_state.a_long).abs();
    let jerk = ctx.jerk[0].hypot(ctx.jerk[1]);
    -p.beta_steer * d_steer - p.beta_throttle * d_u - p.beta_v * d_v - p.beta_long * d_a - p.beta_jerk * jerk + p.beta_b
}

pub fn speed_reward(ctx: &StepContext, p: &RewardParams) -> Result<f64, RewardError> {
    if !(ctx.v_target > 0.0) {
        return Err(RewardError::NonPositiveTarget(ctx.v_target));
    }
    Ok(-p.delta_speed * (ctx.v_target - ctx.state.speed).abs() / ctx.v_target + p.delta_speed)
}

pub fn eff_reward(ctx: &StepContext, _p: &RewardParams) -> f64 {
    let u = ctx.state.throttle_pos.clamp(0.0, 1.0);
    let v = (ctx.state.speed / ctx.v_max).clamp(0.0, 1.0);
    let a = ctx.state.a_long.abs().clamp(0.0, ctx.a_max) / ctx.a_max;
    (1.0 - u) * v * (1.0 - a)
}

pub fn assemble(ctx: &StepContext, p: &RewardParams) -> Result<RewardVector, RewardError> {
    let r = RewardVector {
        core: core_reward(ctx, p)?,
        agg: agg_reward(ctx, p),
        comfort: comfort_reward(ctx, p),
        speed: speed_reward(ctx, p)?,
        eff: eff_reward(ctx, p),
    };
    for (name, v) in ["core", "agg", "comfort", "speed", "eff"].into_iter().zip(r.to_array()) {
        if !v.is_finite() {
            return Err(RewardError::NonFinite(name));
        }
    }
    Ok(r)
}
