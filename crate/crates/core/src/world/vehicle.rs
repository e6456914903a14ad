//! Ego vehicle state, the action interface and kinematic bicycle integration.

use super::geometry::{wrap_angle, Vec2};
use serde::{Deserialize, Serialize};

/// Control period of the state-action loop (10 Hz).
pub const DT: f64 = 0.1;

/// Largest heading change a full steering command produces in one step, in degrees.
pub const MAX_HEADING_STEP_DEG: f64 = 11.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    /// Radians, wrapped to (-π, π].
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
    pub a_long: f64,
    pub a_lat: f64,
    pub yaw_rate: f64,
    pub throttle_pos: f64,
    pub brake_pos: f64,
    pub steer_pos: f64,
}

impl VehicleState {
    pub fn at(position: Vec2, heading: f64, speed: f64) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
            ..Self::default()
        }
    }

    pub fn accel_magnitude(&self) -> f64 {
        self.a_long.hypot(self.a_lat)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }
}

/// Agent action `(steer, longitudinal)`, both in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub longitudinal: f64,
}

impl Action {
    /// Builds an action with both components clipped to [-1, 1]. NaN maps to 0.
    pub fn new(steer: f64, longitudinal: f64) -> Self {
        let clip = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self {
            steer: clip(steer),
            longitudinal: clip(longitudinal),
        }
    }

    pub fn clipped(self) -> Self {
        Self::new(self.steer, self.longitudinal)
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.steer, self.longitudinal]
    }
}

/// Maps the longitudinal command onto exclusive `(throttle, brake)` positions.
///
/// `u > -0.5` drives the throttle linearly up to 1 at `u = 1`; `u < -0.5` drives the
/// brake up to 1 at `u = -1`; both are zero at exactly `u = -0.5`.
pub fn map_longitudinal(u: f64) -> (f64, f64) {
    let u = u.clamp(-1.0, 1.0);
    if u > -0.5 {
        ((u + 0.5) / 1.5, 0.0)
    } else if u < -0.5 {
        (0.0, (-0.5 - u) / 0.5)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    /// Full-throttle acceleration, m/s².
    pub max_accel: f64,
    /// Full-brake deceleration, m/s².
    pub max_brake: f64,
    /// Time constant of the first-order drive lag, seconds.
    pub drive_lag: f64,
    pub rolling_resistance: f64,
    pub drag_coefficient: f64,
    pub top_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 1.9,
            max_accel: 3.5,
            max_brake: 8.0,
            drive_lag: 0.2,
            rolling_resistance: 0.05,
            drag_coefficient: 0.0008,
            top_speed: 20.0,
        }
    }
}

/// Ego dynamics: lagged longitudinal drive plus heading steps of at most ±11°.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoDynamics {
    pub params: VehicleParams,
    /// Lagged drive acceleration, before the zero-speed clamp.
    drive_accel: f64,
}

impl EgoDynamics {
    pub fn new(params: VehicleParams) -> Self {
        Self {
            params,
            drive_accel: 0.0,
        }
    }

    pub fn step(&mut self, state: &VehicleState, action: Action) -> VehicleState {
        let action = action.clipped();
        let p = &self.params;
        let (throttle, brake) = map_longitudinal(action.longitudinal);

        let resist = if state.speed > 0.0 {
            p.rolling_resistance + p.drag_coefficient * state.speed * state.speed
        } else {
            0.0
        };
        let commanded = throttle * p.max_accel - brake * p.max_brake - resist;
        let alpha = (DT / p.drive_lag.max(DT)).min(1.0);
        self.drive_accel += alpha * (commanded - self.drive_accel);

        let speed = (state.speed + self.drive_accel * DT).clamp(0.0, p.top_speed);
        let a_long = (speed - state.speed) / DT;

        let heading_delta = action.steer * MAX_HEADING_STEP_DEG.to_radians();
        let mid_heading = state.heading + 0.5 * heading_delta;
        let mean_speed = 0.5 * (state.speed + speed);
        let position = state.position + Vec2::from_angle(mid_heading) * (mean_speed * DT);
        let yaw_rate = heading_delta / DT;

        VehicleState {
            position,
            heading: wrap_angle(state.heading + heading_delta),
            speed,
            a_long,
            a_lat: mean_speed * yaw_rate,
            yaw_rate,
            throttle_pos: throttle,
            brake_pos: brake,
            steer_pos: action.steer,
        }
    }
}
