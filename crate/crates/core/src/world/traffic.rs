//! Background traffic: route-following vehicles driven by an intelligent-driver model.

use super::geometry::{wrap_angle, Obb, Vec2};
use super::route::Route;
use super::vehicle::{VehicleState, DT};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDirection {
    /// Same lane and direction as the ego route.
    WithRoute,
    /// Adjacent lane to the left, driving towards the route start.
    Oncoming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub min_gap: f64,
    pub time_headway: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            max_accel: 1.5,
            comfortable_decel: 2.0,
            min_gap: 2.0,
            time_headway: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficAgent {
    pub id: u32,
    pub lane: LaneDirection,
    /// Arc length along the route of the vehicle center.
    pub s: f64,
    /// Fraction of the local speed limit this driver aims for, ≤ 1.
    pub target_factor: f64,
    pub state: VehicleState,
}

/// Where the ego currently sits relative to the traffic lanes.
#[derive(Debug, Clone, Copy)]
pub struct EgoLaneInfo {
    pub s: f64,
    pub speed: f64,
    pub lane: Option<LaneDirection>,
}

pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.9;

impl TrafficAgent {
    pub fn footprint(&self) -> Obb {
        Obb::new(self.state.position, self.state.heading, VEHICLE_LENGTH, VEHICLE_WIDTH)
    }

    fn place(&mut self, route: &Route, lane_width: f64) {
        let (p, tangent) = route.pose_at(self.s);
        let (offset, heading) = match self.lane {
            LaneDirection::WithRoute => (0.0, tangent),
            LaneDirection::Oncoming => (lane_width, tangent + PI),
        };
        self.state.position = p + Vec2::from_angle(tangent).perp() * offset;
        self.state.heading = wrap_angle(heading);
    }

    fn direction(&self) -> f64 {
        match self.lane {
            LaneDirection::WithRoute => 1.0,
            LaneDirection::Oncoming => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub agents: Vec<TrafficAgent>,
    pub idm: IdmParams,
    lane_width: f64,
}

impl Traffic {
    pub fn new(mut agents: Vec<TrafficAgent>, idm: IdmParams, route: &Route, lane_width: f64) -> Self {
        for a in &mut agents {
            let limit = route.speed_limit_at(a.s);
            a.state.speed = a.state.speed.min(limit);
            a.place(route, lane_width);
        }
        Self {
            agents,
            idm,
            lane_width,
        }
    }

    /// Advances every vehicle one tick; vehicles that leave the route are removed.
    pub fn step(&mut self, route: &Route, ego: EgoLaneInfo) {
        let snapshot: Vec<(LaneDirection, f64, f64)> =
            self.agents.iter().map(|a| (a.lane, a.s, a.state.speed)).collect();
        let total = route.total_length();

        for (i, agent) in self.agents.iter_mut().enumerate() {
            let dir = agent.direction();
            // Closest vehicle ahead in the same lane, measured along the route.
            let mut leader: Option<(f64, f64)> = None;
            for (j, &(lane, s, v)) in snapshot.iter().enumerate() {
                if j == i || lane != agent.lane {
                    continue;
                }
                let ahead = (s - agent.s) * dir;
                if ahead > 0.0 && leader.is_none_or(|(d, _)| ahead < d) {
                    leader = Some((ahead, v));
                }
            }
            if ego.lane == Some(agent.lane) {
                let ahead = (ego.s - agent.s) * dir;
                if ahead > 0.0 && leader.is_none_or(|(d, _)| ahead < d) {
                    // An ego in the oncoming lane drives against this vehicle.
                    let closing = match agent.lane {
                        LaneDirection::WithRoute => ego.speed,
                        LaneDirection::Oncoming => -ego.speed,
                    };
                    leader = Some((ahead, closing));
                }
            }

            let limit = route.speed_limit_at(agent.s);
            let desired = (agent.target_factor * limit).max(0.1);
            let v = agent.state.speed;
            let p = &self.idm;
            let mut accel = p.max_accel * (1.0 - (v / desired).powi(4));
            if let Some((dist, lead_speed)) = leader {
                let gap = (dist - VEHICLE_LENGTH).max(0.1);
                let dv = v - lead_speed;
                let s_star = p.min_gap
                    + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt())).max(0.0);
                accel -= p.max_accel * (s_star / gap).powi(2);
            }
            let accel = accel.clamp(-8.0, p.max_accel);
            let mut new_speed = (v + accel * DT).clamp(0.0, limit);
            let old_heading = agent.state.heading;
            agent.s += dir * 0.5 * (v + new_speed) * DT;
            // Entering a slower segment: drivers slow down at the sign.
            new_speed = new_speed.min(route.speed_limit_at(agent.s));
            let a_long = (new_speed - v) / DT;
            agent.state.speed = new_speed;
            agent.state.a_long = a_long;
            agent.place(route, self.lane_width);
            let yaw = wrap_angle(agent.state.heading - old_heading) / DT;
            agent.state.yaw_rate = yaw;
            agent.state.a_lat = new_speed * yaw;
        }
        self.agents.retain(|a| a.s > 2.0 && a.s < total - 2.0);
    }
}
