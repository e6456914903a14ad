//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! The two style-trend checks load trained policies from `artifacts/seed_{0,1,2}/policy.bin`.
//! Set `PREFDRIVE_ACCEPTANCE_FULL=1` to retrain them first (3 × 200k steps, hours of CPU).

use prefdrive::agent::preference::scalarize_weights;
use prefdrive::agent::replay::share;
use prefdrive::agent::{angle_loss, Batch, PreferenceVector, Td3, Td3Config, Transition, PREF_DIM};
use prefdrive::harness::qualitative::{run_qualitative, DEFAULT_SCENARIO};
use prefdrive::harness::sweep::{aggregate, run_sweep, SweepPlan, SweepReport};
use prefdrive::harness::{load_policy, RunConfig, Trainer};
use prefdrive::metrics::{
    self, driving_score, episode_metrics, preference_alignment, preference_score, EpisodeLog, InfractionCounts,
    PenaltyTable, StepRecord, LOG_SCHEMA,
};
use prefdrive::reward::{assemble, RewardParams, RewardVector, Situation, StepContext};
use prefdrive::world::geometry::{wrap_angle, Vec2};
use prefdrive::world::{
    check_termination, Action, EventSet, StepOutcome, TerminationInput, TerminationReason, TerminationRules,
    VehicleState, World, WorldConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    // The flag marks criteria judged on trained policies. Their failures are
    // reported but only fail the process under PREFDRIVE_ACCEPTANCE_STRICT=1,
    // since they describe training outcomes rather than code correctness.
    let checks: [(&str, fn() -> Outcome, bool); 10] = [
        ("reward oracle equivalence", reward_oracle, false),
        ("coefficient audit", coefficient_audit, false),
        ("gradient checks", gradient_checks, false),
        ("scalarization and angle-loss properties", scalarization_properties, false),
        ("simplex sampling", simplex_sampling, false),
        ("termination conformance", termination_conformance, false),
        ("metric unit suite", metric_suite, false),
        ("style trends under the weight sweep", style_trends, true),
        ("one-hot rollouts on the T-intersection", one_hot_rollouts, true),
        ("determinism", determinism, false),
    ];
    let strict = std::env::var("PREFDRIVE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut fatal = 0;
    for (name, check, empirical) in checks {
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                if strict || !empirical {
                    fatal += 1;
                }
                println!("FAIL  {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if fatal > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Reward oracle

fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    let braking = rng.random_bool(0.5);
    VehicleState {
        position: Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)),
        heading: rng.random_range(-3.0..3.0),
        speed: rng.random_range(0.0..20.0),
        a_long: rng.random_range(-8.0..4.0),
        a_lat: rng.random_range(-6.0..6.0),
        yaw_rate: rng.random_range(-1.9..1.9),
        throttle_pos: if braking { 0.0 } else { rng.random_range(0.0..1.0) },
        brake_pos: if braking { rng.random_range(0.0..1.0) } else { 0.0 },
        steer_pos: rng.random_range(-1.0..1.0),
    }
}

fn random_context(rng: &mut ChaCha8Rng) -> StepContext {
    let action = |rng: &mut ChaCha8Rng| Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let termination = match rng.random_range(0..7) {
        0 => Some(TerminationReason::Goal),
        1 => Some(TerminationReason::Collision),
        2 => Some(TerminationReason::StepLimit),
        3 => Some(TerminationReason::Stagnation),
        4 => Some(TerminationReason::RouteDeviation),
        _ => None,
    };
    let collided = rng.random_bool(0.3);
    let events = EventSet {
        collision_vehicle: collided && rng.random_bool(0.5),
        collision_environment: collided && rng.random_bool(0.5),
        lane_invasion: rng.random_bool(0.3),
        off_road: rng.random_bool(0.3),
        waypoint_reached: rng.random_bool(0.5),
        junction_traversed: rng.random_bool(0.2),
        goal_reached: termination == Some(TerminationReason::Goal),
    };
    StepContext {
        state: random_state(rng),
        prev_state: random_state(rng),
        action: action(rng),
        prev_action: action(rng),
        outcome: StepOutcome {
            events,
            impact_accel: if events.collided() { rng.random_range(0.0..150.0) } else { 0.0 },
            termination,
        },
        d_center: rng.random_range(0.0..4.0),
        d_lat: rng.random_range(0.0..6.0),
        d_route: rng.random_range(0.0..5.0),
        heading_error_deg: rng.random_range(-180.0..180.0),
        progress: rng.random_range(-1.0..1.0),
        v_target: rng.random_range(5.0..14.0),
        v_max: 20.0,
        a_max: 3.5,
        jerk: [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)],
        situation: Situation {
            clear_path: rng.random_bool(0.5),
            hazard_ahead: rng.random_bool(0.4),
            idle: rng.random_bool(0.2),
            oscillating: rng.random_bool(0.3),
            abrupt: rng.random_bool(0.3),
        },
    }
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Written directly from the reward tables with literal coefficients.
fn oracle(c: &StepContext) -> [f64; 5] {
    let (s, ps, ev, sit) = (&c.state, &c.prev_state, &c.outcome.events, &c.situation);
    let d_steer = (c.action.steer - c.prev_action.steer).abs();
    let d_u = (c.action.longitudinal - c.prev_action.longitudinal).abs();
    let r_speed = 1.75 - 1.75 * (c.v_target - s.speed).abs() / c.v_target;

    let w = if ev.collision_environment { 1.7 } else { 1.0 };
    let r_col = -w * (5.0 + 0.1 * c.outcome.impact_accel) * ind(ev.collided())
        + 2.75 * ind(s.brake_pos > 0.0 && sit.hazard_ahead);
    let r_bound = -1.2 * ind(ev.off_road) - 2.0 * 1.0 * ind(ev.lane_invasion);
    let r_lane = -0.15 * c.d_center;
    let r_nav = 0.25 * ind(ev.waypoint_reached) + 0.1 * ind(ev.junction_traversed) + c.progress
        - c.d_lat / 3.0
        - c.heading_error_deg.abs() / 90.0
        - c.d_route;
    let r_perf = if sit.idle {
        -3.5
    } else if sit.clear_path {
        r_speed
    } else if s.speed > c.v_target {
        -0.3 * (s.speed - c.v_target)
    } else if sit.oscillating {
        -0.2
    } else if sit.abrupt {
        -0.6 * d_steer - 0.4 * d_u
    } else {
        0.0
    };
    let terminal = match c.outcome.termination {
        Some(TerminationReason::Goal) => 20.0,
        Some(_) => -5.0,
        None => 0.0,
    };
    let core = r_col + r_bound + r_lane + r_nav + r_perf + terminal;

    let reversal = ind(s.a_long * ps.a_long < 0.0);
    let agg = 0.1 * s.a_long.abs() + 0.1 * s.a_lat.abs() + 0.3 * s.yaw_rate.abs()
        - 0.2 * (s.a_long - ps.a_long).abs() * reversal;
    let comfort = 1.2 - 0.1 * d_steer - 0.05 * d_u - 0.3 * (s.speed - ps.speed).abs() - 0.3 * (s.a_long - ps.a_long).abs()
        - 0.03 * (c.jerk[0] * c.jerk[0] + c.jerk[1] * c.jerk[1]).sqrt();
    let throttle = s.throttle_pos.clamp(0.0, 1.0);
    let eff = (1.0 - throttle) * (s.speed / c.v_max).clamp(0.0, 1.0) * (1.0 - s.a_long.abs().min(c.a_max) / c.a_max);
    [core, agg, comfort, r_speed, eff]
}

fn reward_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let p = RewardParams::default();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let c = random_context(&mut rng);
        let got = assemble(&c, &p).map_err(|e| format!("context {i}: {e}"))?.to_array();
        let want = oracle(&c);
        for k in 0..5 {
            let d = (got[k] - want[k]).abs();
            worst = worst.max(d);
            ensure(d < 1e-9, || format!("context {i} component {k}: {} vs oracle {}", got[k], want[k]))?;
        }
    }
    Ok(format!("20 contexts, max |Δ| = {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Coefficient audit

fn coefficient_audit() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_prefdrive"))
        .args(["dump-params", "--format", "json"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let dumped: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let table: [(&str, f64); 29] = [
        ("alpha_l", 0.10),
        ("alpha_yaw", 0.30),
        ("alpha_l_acc", 0.20),
        ("beta_steer", 0.10),
        ("beta_throttle", 0.05),
        ("beta_v", 0.30),
        ("beta_long", 0.30),
        ("beta_jerk", 0.03),
        ("beta_b", 1.20),
        ("delta_speed", 1.75),
        ("c_col", 5.0),
        ("c_acc", 0.1),
        ("c_brake", 2.75),
        ("w_type", 1.7),
        ("c_spd_high", 0.3),
        ("c_idle", 3.5),
        ("c_osc", 0.2),
        ("c_steer", 0.6),
        ("c_throttle", 0.4),
        ("c_off", 1.2),
        ("c_inv", 1.0),
        ("w_lane", 2.0),
        ("c_dev", 0.15),
        ("c_lat", 1.0 / 3.0),
        ("c_head", 1.0 / 90.0),
        ("c_wp", 0.25),
        ("c_junc", 0.1),
        ("c_goal", 20.0),
        ("c_termination", -5.0),
    ];
    for (name, want) in table {
        let got = dumped.get(name).and_then(|v| v.as_f64()).ok_or_else(|| format!("{name} missing"))?;
        ensure(got == want, || format!("{name} = {got}, table says {want}"))?;
    }
    // The vehicle-collision weight is the one field the table does not list.
    let extra: Vec<&String> = dumped
        .keys()
        .filter(|k| k.as_str() != "w_type_vehicle" && !table.iter().any(|(n, _)| n == k))
        .collect();
    ensure(extra.is_empty(), || format!("unexpected fields {extra:?}"))?;
    Ok(format!("{} fields match", table.len()))
}

// ---------------------------------------------------------------------------
// Gradient checks

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1e-6f64.max(a.abs()).max(b.abs())
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, obs_dim: usize) -> Batch {
    let ts: Vec<Transition> = (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s2: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Transition {
                s: share(&s),
                a: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                r: std::array::from_fn(|_| rng.random_range(-2.0..2.0)),
                s_next: share(&s2),
                done: i % 3 == 0,
                lambda: PreferenceVector::sample(rng),
            }
        })
        .collect();
    let refs: Vec<&Transition> = ts.iter().collect();
    Batch::from_transitions(&refs).expect("consistent shapes")
}

/// Largest relative error over parameters whose gradient is not negligible.
fn fd_error(params: &[f64], grads: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Result<f64, String> {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &g) in grads.iter().enumerate() {
        let mut p = params.to_vec();
        p[i] += h;
        let up = loss(&p);
        p[i] -= 2.0 * h;
        let down = loss(&p);
        let fd = (up - down) / (2.0 * h);
        if (g - fd).abs() >= 1e-9 {
            worst = worst.max(rel_err(g, fd));
        }
    }
    Ok(worst)
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let config = Td3Config {
        hidden: vec![6, 5],
        batch_size: 6,
        angle_coef_critic: 0.5,
        ..Td3Config::default()
    };
    let (mut actor_worst, mut critic_worst): (f64, f64) = (0.0, 0.0);
    for instance in 0..10 {
        let mut agent = Td3::new(config.clone(), 5, &mut rng).map_err(|e| e.to_string())?;
        // Default output layers are ±3e-3, which leaves gradients near the FD noise floor.
        for net in [&mut agent.actor, &mut agent.critics[0]] {
            for v in net.layers.last_mut().expect("has layers").w.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        agent.config.angle_coef_actor = if instance % 2 == 0 { 1.0 } else { 0.5 };
        let b = random_batch(&mut rng, 6, 5);

        let (_, g) = agent.actor_loss_grads(&b).map_err(|e| e.to_string())?;
        let base = agent.actor.flatten();
        let mut probe = agent.clone();
        let e = fd_error(&base, &g.flatten(), |p| {
            probe.actor.load_flat(p).expect("same shape");
            probe.actor_loss_grads(&b).expect("valid batch").0
        })?;
        actor_worst = actor_worst.max(e);

        let y = agent.td_targets(&b, &mut rng).map_err(|e| e.to_string())?;
        let (_, g) = agent.critic_loss_grads(0, &b, &y).map_err(|e| e.to_string())?;
        let base = agent.critics[0].flatten();
        let mut probe = agent.clone();
        let e = fd_error(&base, &g.flatten(), |p| {
            probe.critics[0].load_flat(p).expect("same shape");
            probe.critic_loss_grads(0, &b, &y).expect("valid batch").0
        })?;
        critic_worst = critic_worst.max(e);
    }
    let detail = format!("10 instances, max relative error actor {actor_worst:.2e}, critic {critic_worst:.2e}");
    ensure(actor_worst < 1e-4 && critic_worst < 1e-4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Scalarization and angle loss

fn scalarization_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases = 2000;
    let v4 = |rng: &mut ChaCha8Rng| -> [f64; PREF_DIM] { std::array::from_fn(|_| rng.random_range(-5.0..5.0)) };
    for i in 0..cases {
        let q: [f64; 5] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let w1 = PreferenceVector::sample(&mut rng).augmented();
        let w2 = PreferenceVector::sample(&mut rng).augmented();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mix: [f64; 5] = std::array::from_fn(|k| a * w1[k] + b * w2[k]);
        let lhs = scalarize_weights(&mix, &q);
        let rhs = a * scalarize_weights(&w1, &q) + b * scalarize_weights(&w2, &q);
        ensure((lhs - rhs).abs() < 1e-9, || format!("case {i}: linearity {lhs} vs {rhs}"))?;

        let x = v4(&mut rng);
        let y = v4(&mut rng);
        let g = angle_loss(&x, &y).map_err(|e| e.to_string())?;
        ensure((0.0..=std::f64::consts::PI).contains(&g), || format!("case {i}: angle {g} out of [0, π]"))?;
        let c = rng.random_range(1e-3..1e3);
        let scaled = angle_loss(&x, &y.map(|v| v * c)).map_err(|e| e.to_string())?;
        ensure((scaled - g).abs() < 1e-12, || format!("case {i}: scale {c} moved angle {g} to {scaled}"))?;
        // Power-of-two scales are exact, so the pair stays exactly parallel in floating point.
        let exact = 2f64.powi(rng.random_range(-20..20));
        let parallel = angle_loss(&x, &x.map(|v| v * exact)).map_err(|e| e.to_string())?;
        ensure(parallel == 0.0, || format!("case {i}: parallel pair gives {parallel}"))?;
        let nearly = angle_loss(&x, &x.map(|v| v * c)).map_err(|e| e.to_string())?;
        ensure(nearly < 1e-12, || format!("case {i}: rounded parallel pair gives {nearly}"))?;
        // Non-parallel: y was drawn independently, so it is parallel to x with probability zero.
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dot / (nx * ny) < 1.0 - 1e-9 {
            ensure(g > 0.0, || format!("case {i}: non-parallel pair gives zero"))?;
        }
    }
    ensure(angle_loss(&[1.0, 0.0, 0.0, 0.0], &[-2.0, 0.0, 0.0, 0.0]).unwrap() == std::f64::consts::PI, || {
        "antiparallel pair is not π".into()
    })?;
    Ok(format!("{cases} random cases"))
}

// ---------------------------------------------------------------------------
// Simplex sampling

fn simplex_sampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut sum = [0.0; PREF_DIM];
    for i in 0..n {
        let w = PreferenceVector::sample(&mut rng).as_array();
        ensure(w.iter().all(|&x| (0.0..=1.0).contains(&x)), || format!("sample {i} {w:?} out of range"))?;
        let total: f64 = w.iter().sum();
        ensure((total - 1.0).abs() < 1e-12, || format!("sample {i} sums to {total}"))?;
        for k in 0..PREF_DIM {
            sum[k] += w[k];
        }
    }
    let means = sum.map(|s| s / n as f64);
    ensure(means.iter().all(|m| (m - 0.25).abs() <= 0.01), || format!("means {means:?}"))?;
    Ok(format!("means {:.4} {:.4} {:.4} {:.4}", means[0], means[1], means[2], means[3]))
}

// ---------------------------------------------------------------------------
// Termination

/// Runs a per-step input sequence and returns the first step that terminates.
fn first_termination(inputs: impl Iterator<Item = TerminationInput>) -> Option<(u32, TerminationReason)> {
    let rules = TerminationRules::default();
    inputs.enumerate().find_map(|(i, inp)| check_termination(&inp, &rules).map(|r| (i as u32 + 1, r)))
}

fn nominal(step: u32) -> TerminationInput {
    TerminationInput {
        collided: false,
        route_deviation: 0.3,
        steps: step,
        steps_without_progress: 0,
        goal_reached: false,
    }
}

/// Steers toward a point `lookahead` meters ahead on the route, shifted `offset` meters
/// to the left, and holds `speed`.
fn pursuit(world: &World, lookahead: f64, speed: f64, offset: f64) -> Action {
    let (p, tangent) = world.route().pose_at(world.progress() + lookahead);
    let target = p + Vec2::from_angle(tangent).perp() * offset;
    let ego = world.state();
    let bearing = wrap_angle((target - ego.position).angle() - ego.heading);
    let steer = bearing / 11f64.to_radians();
    let u = if ego.speed < speed { 0.2 } else { -0.5 };
    Action::new(steer, u)
}

fn drive(world: &mut World, mut policy: impl FnMut(&World) -> Action) -> Result<(u32, TerminationReason, StepOutcome), String> {
    loop {
        let a = policy(world);
        let r = world.step(a).map_err(|e| e.to_string())?;
        if let Some(reason) = r.outcome.termination {
            return Ok((world.steps(), reason, r.outcome));
        }
    }
}

fn empty_world(scenario: Option<u32>) -> WorldConfig {
    WorldConfig {
        scenario,
        traffic_density: Some(0.0),
        ..WorldConfig::default()
    }
}

fn termination_conformance() -> Outcome {
    use TerminationReason::*;
    // Rule-level trajectories: each input sequence trips exactly one rule at a known step.
    let deviation = first_termination((1..).map(|t| TerminationInput {
        route_deviation: 0.05 * t as f64,
        ..nominal(t)
    }));
    ensure(deviation == Some((121, RouteDeviation)), || format!("deviation ramp gave {deviation:?}"))?;
    let stagnation = first_termination((1..).map(|t| TerminationInput {
        steps_without_progress: t,
        ..nominal(t)
    }));
    ensure(stagnation == Some((200, Stagnation)), || format!("stagnation gave {stagnation:?}"))?;
    let cap = first_termination((1..).map(nominal));
    ensure(cap == Some((1400, StepLimit)), || format!("step cap gave {cap:?}"))?;
    let goal = first_termination((1..).map(|t| TerminationInput {
        goal_reached: t == 321,
        ..nominal(t)
    }));
    ensure(goal == Some((321, Goal)), || format!("goal gave {goal:?}"))?;
    let collision = first_termination((1..).map(|t| TerminationInput {
        collided: t == 57,
        ..nominal(t)
    }));
    ensure(collision == Some((57, Collision)), || format!("collision gave {collision:?}"))?;
    let at_limit = first_termination((1..=1399).map(|t| TerminationInput {
        route_deviation: 6.0,
        steps_without_progress: 199,
        ..nominal(t)
    }));
    ensure(at_limit.is_none(), || format!("boundary values terminated: {at_limit:?}"))?;

    // World-level trajectories in traffic-free worlds.
    let (mut w, _) = World::reset(&empty_world(Some(1)), 0).map_err(|e| e.to_string())?;
    let r = drive(&mut w, |_| Action::new(0.0, -0.5))?;
    ensure(r.0 == 200 && r.1 == Stagnation, || format!("standing still gave {:?} at {}", r.1, r.0))?;

    let (mut w, _) = World::reset(&empty_world(Some(1)), 0).map_err(|e| e.to_string())?;
    let r = drive(&mut w, |w| pursuit(w, 8.0, 8.0, 0.0))?;
    ensure(r.1 == Goal && r.2.events.goal_reached && !r.2.events.collided(), || {
        format!("route following gave {:?} at {}", r.1, r.0)
    })?;

    // Follow a line on the shoulder until the body clips a roadside post.
    let (mut w, _) = World::reset(&empty_world(Some(1)), 0).map_err(|e| e.to_string())?;
    let r = drive(&mut w, |w| pursuit(w, 10.0, 5.0, -3.2))?;
    ensure(r.1 == Collision && r.2.events.collision_environment, || format!("steering off gave {:?}", r.1))?;
    let max_dev = w.lateral_offset().abs();
    ensure(max_dev <= 6.0, || format!("collision run deviated {max_dev} m"))?;

    // Drive straight through the T-junction instead of turning: no posts inside junctions.
    let (mut w, _) = World::reset(&empty_world(Some(1)), 0).map_err(|e| e.to_string())?;
    let r = drive(&mut w, |w| Action::new(0.0, if w.state().speed < 6.0 { 0.2 } else { -0.5 }))?;
    ensure(r.1 == RouteDeviation && w.lateral_offset().abs() > 6.0, || {
        format!("missing the turn gave {:?} at offset {}", r.1, w.lateral_offset())
    })?;

    // Creep along a long random route: progress never stalls and the goal is out of reach.
    let (mut w, _) = World::reset(&empty_world(None), 3).map_err(|e| e.to_string())?;
    let r = drive(&mut w, |w| pursuit(w, 6.0, 1.0, 0.0))?;
    ensure(r.0 == 1400 && r.1 == StepLimit, || format!("creeping gave {:?} at {}", r.1, r.0))?;

    Ok("5 rules fire alone at the expected step, in rule-level and world-level trajectories".into())
}

// ---------------------------------------------------------------------------
// Metrics

fn record(step: u32) -> StepRecord {
    StepRecord {
        step,
        state: VehicleState::default(),
        action: Action::default(),
        reward: RewardVector::default(),
        events: EventSet::default(),
        d_lat: 0.0,
        jerk: [0.0; 2],
        s: 0.0,
        speed_limit: 10.0,
        lambda: PreferenceVector::uniform(),
        q: None,
    }
}

fn log_of(steps: Vec<StepRecord>) -> EpisodeLog {
    EpisodeLog {
        schema: LOG_SCHEMA,
        scenario: None,
        seed: 0,
        lambda: PreferenceVector::uniform(),
        steps,
        termination: Some(TerminationReason::Goal),
        route_completion: 1.0,
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b}"))
}

/// Welch's statistic, the Welch–Satterthwaite dof and a two-sided p obtained by
/// Simpson integration of the Student-t density in `θ = atan(x)`.
fn welch_by_hand(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let mu = m(v);
        v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (a, b) = (var(xs) / xs.len() as f64, var(ys) / ys.len() as f64);
    let t = (m(xs) - m(ys)) / (a + b).sqrt();
    let nu = (a + b).powi(2) / (a * a / (xs.len() - 1) as f64 + b * b / (ys.len() - 1) as f64);
    let f = |th: f64| {
        let x = th.tan();
        let c = th.cos();
        (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0) / (c * c)
    };
    let simpson = |lo: f64, hi: f64| {
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + if hi >= std::f64::consts::FRAC_PI_2 { 0.0 } else { f(hi) };
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    let p = simpson(t.abs().atan(), half) / simpson(0.0, half);
    (t, nu, p)
}

fn metric_suite() -> Outcome {
    let pen = PenaltyTable::default();
    let none = InfractionCounts::default();
    close(driving_score(1.0, &none, &pen), 100.0, 1e-12, "DS clean")?;
    close(driving_score(0.57, &none, &pen), 57.0, 1e-12, "DS partial")?;
    let half = PenaltyTable {
        vehicle_collision: 0.5,
        ..PenaltyTable::default()
    };
    let one = InfractionCounts {
        vehicle_collision: 1,
        ..InfractionCounts::default()
    };
    close(driving_score(1.0, &one, &half), 50.0, 1e-12, "DS one infraction")?;
    let many = InfractionCounts {
        vehicle_collision: 1,
        environment_collision: 2,
        timeout: 1,
        speeding: 3,
        lane_violation: 1,
    };
    close(
        driving_score(0.8, &many, &pen),
        80.0 * 0.60 * 0.65 * 0.65 * 0.70 * 0.90f64.powi(3) * 0.90,
        1e-9,
        "DS product",
    )?;

    let mut steps: Vec<StepRecord> = (0..200).map(record).collect();
    steps[10].events.collision_vehicle = true;
    steps[150].events.collision_vehicle = true;
    steps[60].events.collision_environment = true;
    steps[70].events.lane_invasion = true;
    let log = log_of(steps);
    let (cv, ce) = metrics::collision_rate(&log).map_err(|e| e.to_string())?;
    close(cv, 0.01, 1e-15, "CR vehicle")?;
    close(ce, 0.005, 1e-15, "CR environment")?;
    close(metrics::lane_invasion_rate(&log).map_err(|e| e.to_string())?, 0.005, 1e-15, "LIR")?;
    close(metrics::lane_deviation(&log).map_err(|e| e.to_string())?, 0.0, 0.0, "LD centered")?;
    let offset = log_of(
        (0..50)
            .map(|i| StepRecord {
                d_lat: if i % 2 == 0 { 1.31 } else { -1.31 },
                ..record(i)
            })
            .collect(),
    );
    close(metrics::lane_deviation(&offset).map_err(|e| e.to_string())?, 1.31, 1e-12, "LD offset")?;
    let clean = log_of((0..30).map(record).collect());
    close(metrics::lane_invasion_rate(&clean).map_err(|e| e.to_string())?, 0.0, 0.0, "LIR clean")?;

    let comfort_log = log_of(
        (0..40)
            .map(|i| StepRecord {
                reward: RewardVector::from_array([3.0, 0.0, 1.2, 0.0, 0.0]),
                ..record(i)
            })
            .collect(),
    );
    close(preference_score(&comfort_log, &[0.0; 4]).map_err(|e| e.to_string())?, 0.0, 0.0, "PS zero ω")?;
    close(preference_score(&comfort_log, &[0.0, 1.0, 0.0, 0.0]).map_err(|e| e.to_string())?, 1.2, 1e-12, "PS comfort")?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_log = log_of(
        (0..120)
            .map(|i| StepRecord {
                reward: RewardVector::from_array(std::array::from_fn(|_| rng.random_range(-3.0..3.0))),
                ..record(i)
            })
            .collect(),
    );
    let omega = PreferenceVector::sample(&mut rng).as_array();
    let direct = random_log
        .steps
        .iter()
        .map(|r| {
            let a = r.reward.to_array();
            omega[0] * a[1] + omega[1] * a[2] + omega[2] * a[3] + omega[3] * a[4]
        })
        .sum::<f64>()
        / 120.0;
    close(preference_score(&random_log, &omega).map_err(|e| e.to_string())?, direct, 1e-12, "PS random")?;

    let w = PreferenceVector::new([0.1, 0.2, 0.3, 0.4]).expect("on simplex");
    let e0 = PreferenceVector::one_hot(0);
    let pa = |s: &[(PreferenceVector, [f64; 5])]| preference_alignment(s).map_err(|e| e.to_string());
    close(pa(&[(w, [9.0, 0.2, 0.4, 0.6, 0.8])])?, 0.0, 1e-9, "PA parallel")?;
    close(pa(&[(e0, [0.0, 0.0, 1.0, 0.0, 0.0])])?, 90.0, 1e-9, "PA orthogonal")?;
    close(
        pa(&[(e0, [0.0, 0.0, 1.0, 0.0, 0.0]), (w, [1.0, 1.0, 2.0, 3.0, 4.0]), (e0, [0.0, 1.0, 1.0, 0.0, 0.0])])?,
        (90.0 + 0.0 + 45.0) / 3.0,
        1e-9,
        "PA mixed",
    )?;
    let q = [0.0, 0.3, -0.2, 1.5, 0.7];
    let scaled = [5.0, 0.6, -0.4, 3.0, 1.4];
    close(pa(&[(w, q)])?, pa(&[(w, scaled)])?, 1e-12, "PA scale invariance")?;

    let mut with_q = random_log.clone();
    for r in &mut with_q.steps {
        r.q = Some(q);
    }
    let m = episode_metrics(&with_q, &pen).map_err(|e| e.to_string())?;
    let uniform = pa(&[(PreferenceVector::uniform(), q)])?;
    close(m.preference_alignment.unwrap_or(f64::NAN), uniform, 1e-12, "PA in episode metrics")?;

    // Welch against the hand evaluation and frozen reference values.
    let cases: [(&[f64], &[f64], f64, f64, f64); 3] = [
        (
            &[2.1, 2.5, 2.3, 2.8],
            &[3.9, 4.2, 4.0, 4.4],
            -9.141458584943706,
            5.537039517749501,
            0.00015150581043162604,
        ),
        (
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            &[2.5, 3.1, 9.0],
            -0.3888400703542896,
            2.646847548379336,
            0.7265267592402018,
        ),
        (
            &[0.3, 0.1, 0.4, 0.2, 0.9, 0.5],
            &[0.35, 0.45, 0.2, 0.6, 0.8, 0.7, 0.65, 0.1],
            -0.5594062631501059,
            10.07684196671523,
            0.5881014950488679,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (xs, ys, t_ref, dof_ref, p_ref) in cases {
        let got = metrics::welch_t_test(xs, ys).map_err(|e| e.to_string())?;
        let (t, dof, p) = welch_by_hand(xs, ys);
        for (g, h, r, what) in [(got.t, t, t_ref, "t"), (got.dof, dof, dof_ref, "dof"), (got.p, p, p_ref, "p")] {
            worst = worst.max((g - h).abs());
            close(g, h, 1e-6, &format!("Welch {what} vs hand"))?;
            close(g, r, 1e-6, &format!("Welch {what} vs reference"))?;
        }
    }
    let same = [1.0, 2.0, 3.0, 4.0, 5.0];
    let w = metrics::welch_t_test(&same, &same).map_err(|e| e.to_string())?;
    ensure(w.t == 0.0 && (w.p - 1.0).abs() < 1e-12, || format!("identical samples gave {w:?}"))?;
    let lo = [0.0, 1e-3, -1e-3, 2e-3, -2e-3];
    let hi = lo.map(|v| v + 10.0);
    let w = metrics::welch_t_test(&lo, &hi).map_err(|e| e.to_string())?;
    ensure(w.p < 0.001, || format!("separated samples gave p = {}", w.p))?;
    ensure(metrics::welch_t_test(&[1.0, 1.0], &[1.0, 1.0]).is_err(), || "degenerate samples accepted".into())?;

    for (p, want) in [(0.2, "n.s."), (0.0009, "***"), (0.05, "n.s."), (0.049, "*"), (0.009, "**"), (0.001, "**")] {
        let got = metrics::significance_stars(p);
        ensure(got == want, || format!("stars({p}) = {got}, expected {want}"))?;
    }
    Ok(format!("all examples hold; Welch max |Δ| vs hand evaluation {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Trained-policy criteria

const SEEDS: [u64; 3] = [0, 1, 2];

fn artifact_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../artifacts")
}

fn full_mode() -> bool {
    std::env::var("PREFDRIVE_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

/// Policies for every seed, retraining them first in full mode.
fn trained_policies() -> Result<Vec<(u64, Td3, RunConfig)>, String> {
    static RETRAIN: std::sync::Once = std::sync::Once::new();
    let root = if full_mode() {
        std::env::temp_dir().join("prefdrive_acceptance_full")
    } else {
        artifact_dir()
    };
    if full_mode() {
        RETRAIN.call_once(|| {
            let base = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/train.toml"))
                .expect("configs/train.toml");
            for seed in SEEDS {
                let dir = root.join(format!("seed_{seed}"));
                let _ = std::fs::remove_dir_all(&dir);
                let cfg = RunConfig { seed, ..base.clone() };
                Trainer::create(cfg, &dir).and_then(|mut t| t.run()).expect("training");
            }
        });
    }
    SEEDS
        .iter()
        .map(|&seed| {
            let dir = root.join(format!("seed_{seed}"));
            let agent = load_policy(&dir.join("policy.bin")).map_err(|e| format!("seed {seed}: {e}"))?;
            let cfg = RunConfig::load(&dir.join("config.toml")).map_err(|e| format!("seed {seed}: {e}"))?;
            Ok((seed, agent, cfg))
        })
        .collect()
}

/// `(objective, metric, expected sign of level-1 minus level-0)`.
const TRENDS: [(&str, &str, f64); 5] = [
    ("speed", "mean_velocity", 1.0),
    ("comfort", "mean_velocity", -1.0),
    ("aggressiveness", "mean_acceleration", 1.0),
    ("comfort", "mean_jerk", -1.0),
    ("aggressiveness", "mean_jerk", 1.0),
];

fn trend_failures(report: &SweepReport) -> Vec<String> {
    TRENDS
        .iter()
        .filter_map(|&(obj, metric, sign)| match report.test(obj, metric) {
            Some(t) if t.difference * sign > 0.0 && t.p < 0.05 => None,
            Some(t) => Some(format!("{obj}/{metric} Δ={:+.3} p={:.2e}", t.difference, t.p)),
            None => Some(format!("{obj}/{metric} not computed")),
        })
        .collect()
}

fn style_trends() -> Outcome {
    let mut passing = 0;
    let mut lines = Vec::new();
    for (seed, agent, cfg) in trained_policies()? {
        let plan = SweepPlan {
            world: cfg.world.clone(),
            ..SweepPlan::default()
        };
        let episodes = run_sweep(&agent, &cfg.reward, &plan, |_, _| Ok(())).map_err(|e| e.to_string())?;
        let failures = trend_failures(&aggregate(&episodes));
        if failures.is_empty() {
            passing += 1;
            lines.push(format!("seed {seed}: 5/5"));
        } else {
            lines.push(format!("seed {seed}: {}/5 [{}]", 5 - failures.len(), failures.join("; ")));
        }
    }
    let detail = format!("{passing}/3 seeds meet every trend ({})", lines.join(", "));
    ensure(passing >= 2, || detail.clone())?;
    Ok(detail)
}

fn one_hot_rollouts() -> Outcome {
    let mut passing = 0;
    let mut lines = Vec::new();
    for (seed, agent, cfg) in trained_policies()? {
        let runs = run_qualitative(&agent, &cfg.reward, &cfg.world, DEFAULT_SCENARIO, 0).map_err(|e| e.to_string())?;
        let by = |name: &str| runs.iter().find(|r| r.name == name).expect("one run per objective");
        let (agg, comfort, speed) = (by("aggressiveness"), by("comfort"), by("speed"));
        let v_ok = speed.peak_velocity > comfort.peak_velocity;
        let lat_ok = agg.peak_abs_lateral_acceleration > comfort.peak_abs_lateral_acceleration;
        passing += (v_ok && lat_ok) as usize;
        lines.push(format!(
            "seed {seed}: peak v speed {:.2} vs comfort {:.2}, peak |a_lat| agg {:.2} vs comfort {:.2}",
            speed.peak_velocity,
            comfort.peak_velocity,
            agg.peak_abs_lateral_acceleration,
            comfort.peak_abs_lateral_acceleration
        ));
    }
    let detail = format!("{passing}/3 seeds show both orderings ({})", lines.join("; "));
    ensure(passing >= 2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Determinism

fn small_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(42, 1500);
    cfg.output_dir = dir.to_path_buf();
    cfg.agent.hidden = vec![16, 16];
    cfg.agent.batch_size = 32;
    cfg.agent.replay_capacity = 20_000;
    cfg.train.warmup_steps = 300;
    cfg.train.learning_starts = 300;
    cfg.train.eval_every = 500;
    cfg.train.eval_episodes = 2;
    cfg.train.checkpoint_every = 500;
    cfg.train.log_every = 10;
    cfg
}

const LOGS: [&str; 3] = ["losses.jsonl", "episodes.jsonl", "eval.jsonl"];

fn read_logs(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let mut out: Vec<Vec<u8>> = LOGS
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}")))
        .collect::<Result<_, _>>()?;
    out.push(std::fs::read(dir.join("policy.bin")).map_err(|e| format!("policy.bin: {e}"))?);
    Ok(out)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train = |name: &str| -> Result<Vec<Vec<u8>>, String> {
        let dir = tmp.path().join(name);
        Trainer::create(small_config(&dir), &dir)
            .and_then(|mut t| t.run())
            .map_err(|e| e.to_string())?;
        read_logs(&dir)
    };
    let a = train("a")?;
    let b = train("b")?;
    for (i, name) in LOGS.iter().chain(&["policy.bin"]).enumerate() {
        ensure(a[i] == b[i], || format!("{name} differs between identical runs"))?;
    }
    ensure(!a[2].is_empty() && !a[0].is_empty(), || "runs wrote no losses or evaluations".into())?;

    // Interrupt after the first checkpoint, resume, and compare with the uninterrupted run.
    let dir = tmp.path().join("resumed");
    let mut t = Trainer::create(small_config(&dir), &dir).map_err(|e| e.to_string())?;
    while !t.advance().map_err(|e| e.to_string())? {}
    drop(t);
    Trainer::resume(&dir, None)
        .and_then(|mut t| t.run())
        .map_err(|e| e.to_string())?;
    let c = read_logs(&dir)?;
    for (i, name) in LOGS.iter().chain(&["policy.bin"]).enumerate() {
        ensure(a[i] == c[i], || format!("{name} differs after resume"))?;
    }
    let evals = a[2].iter().filter(|&&b| b == b'\n').count();
    Ok(format!("two runs and a resumed run agree byte-for-byte ({evals} evaluation records)"))
}
