//! Live rollout server: the policy drives while a WebSocket controller steers λ.
//!
//! Clients connect to `ws://host:port/?role=controller` or `?role=viewer`
//! (the default). At most one controller is connected at a time. Every client
//! receives a `welcome` message followed by one `frame` per environment step.
//! Controllers may send
//!
//! ```json
//! {"type": "set_preference", "lambda": [0.1, 0.2, 0.3, 0.4]}
//! {"type": "reset", "scenario": 3}
//! ```
//!
//! which take effect before the next step. Invalid messages get an
//! `{"type": "error", "reason": ...}` reply and change nothing. When the
//! controller disconnects the episode continues under the last λ.

use super::rollout::greedy_step;
use super::HarnessError;
use crate::agent::{PreferenceVector, Td3};
use crate::reward::RewardParams;
use crate::world::{Observation, TerminationReason, World, WorldConfig, DT};
use serde::{Deserialize, Serialize};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::{Message, WebSocket};

/// Stepping rate relative to wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    /// `factor` environment seconds per wall-clock second.
    Scaled(f64),
    /// As fast as possible.
    Max,
}

impl FromStr for Speed {
    type Err = String;

    /// `real`, `max`, or `xN` for N times real time.
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" | "REAL" => Ok(Speed::Scaled(1.0)),
            "max" | "MAX" => Ok(Speed::Max),
            _ => match s.strip_prefix('x').map(str::parse::<f64>) {
                Some(Ok(f)) if f.is_finite() && f > 0.0 => Ok(Speed::Scaled(f)),
                _ => Err(format!("speed must be `real`, `max` or `xN`, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Controller,
    Viewer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    SetPreference { lambda: Vec<f64> },
    Reset { scenario: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        role: Role,
        scenario: u32,
        episode: u64,
        lambda: PreferenceVector,
        route: Vec<[f64; 2]>,
    },
    Frame {
        episode: u64,
        step: u32,
        pose: Pose,
        v: f64,
        a_long: f64,
        a_lat: f64,
        jerk: [f64; 2],
        steer: f64,
        throttle: f64,
        lambda: PreferenceVector,
        reward_vector: [f64; 5],
        events: Vec<String>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        termination: Option<TerminationReason>,
    },
    Error {
        reason: String,
    },
}

impl ServerMessage {
    fn error(reason: impl Into<String>) -> Self {
        Self::Error { reason: reason.into() }
    }

    fn to_message(&self) -> Message {
        Message::text(serde_json::to_string(self).expect("server messages serialize"))
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub scenario: u32,
    pub seed: u64,
    pub speed: Speed,
    pub world: WorldConfig,
    pub reward: RewardParams,
    pub lambda: PreferenceVector,
    /// Stop after this many environment steps; `None` runs until shut down.
    pub max_steps: Option<u64>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            scenario: 1,
            seed: 0,
            speed: Speed::Scaled(1.0),
            world: WorldConfig::default(),
            reward: RewardParams::default(),
            lambda: PreferenceVector::uniform(),
            max_steps: None,
        }
    }
}

/// Validates a client text message; errors are the text sent back to the client.
pub fn parse_client_message(text: &str, role: Role) -> Result<Command, String> {
    let msg: ClientMessage = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    if role != Role::Controller {
        return Err("only the controller may send commands".into());
    }
    match msg {
        ClientMessage::SetPreference { lambda } => {
            let w: [f64; 4] = lambda
                .as_slice()
                .try_into()
                .map_err(|_| format!("lambda needs 4 components, got {}", lambda.len()))?;
            PreferenceVector::new(w).map(Command::SetPreference).map_err(|e| e.to_string())
        }
        ClientMessage::Reset { scenario } => {
            crate::world::route::scenario_info(scenario).map_err(|e| e.to_string())?;
            Ok(Command::Reset(scenario))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    SetPreference(PreferenceVector),
    Reset(u32),
}

struct Client {
    outbox: Sender<Message>,
}

#[derive(Default)]
struct Shared {
    clients: Vec<Client>,
    controller: bool,
}

/// Handle to a running server.
pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    env: Option<thread::JoinHandle<Result<(), HarnessError>>>,
    accept: Option<thread::JoinHandle<()>>,
}

impl Server {
    /// Binds `addr` (port 0 picks a free port) and starts stepping immediately.
    pub fn start(agent: Td3, cfg: ServeConfig, addr: &str) -> Result<Self, HarnessError> {
        let listener = TcpListener::bind(addr).map_err(|source| HarnessError::Io {
            path: addr.to_string(),
            source,
        })?;
        let addr = listener.local_addr().map_err(|source| HarnessError::Io {
            path: "listener".into(),
            source,
        })?;
        listener.set_nonblocking(true).map_err(|source| HarnessError::Io {
            path: "listener".into(),
            source,
        })?;
        let world_cfg = WorldConfig {
            scenario: Some(cfg.scenario),
            ..cfg.world.clone()
        };
        world_cfg.validate()?;

        let shutdown = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Mutex::new(Shared::default()));
        let welcome = Arc::new(Mutex::new((cfg.scenario, 0u64, cfg.lambda, Vec::new())));
        let (cmd_tx, cmd_rx) = mpsc::channel();

        let accept = {
            let (shutdown, shared, welcome) = (shutdown.clone(), shared.clone(), welcome.clone());
            thread::spawn(move || accept_loop(listener, shutdown, shared, welcome, cmd_tx))
        };
        let env = {
            let shutdown = shutdown.clone();
            thread::spawn(move || env_loop(agent, cfg, shutdown, shared, welcome, cmd_rx))
        };
        Ok(Self {
            addr,
            shutdown,
            env: Some(env),
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the environment loop ends (step budget reached or shutdown).
    pub fn wait(mut self) -> Result<(), HarnessError> {
        let r = self.env.take().map(|h| h.join().expect("environment thread panicked"));
        self.stop();
        r.unwrap_or(Ok(()))
    }

    pub fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.env.take() {
            let _ = h.join();
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

type WelcomeState = Arc<Mutex<(u32, u64, PreferenceVector, Vec<[f64; 2]>)>>;

fn accept_loop(
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    welcome: WelcomeState,
    commands: Sender<Command>,
) {
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (shutdown, shared, welcome, commands) = (shutdown.clone(), shared.clone(), welcome.clone(), commands.clone());
                thread::spawn(move || {
                    let _ = client_session(stream, shutdown, shared, welcome, commands);
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn requested_role(req: &Request) -> Role {
    let query = req.uri().query().unwrap_or("");
    if query.split('&').any(|kv| kv == "role=controller") {
        Role::Controller
    } else {
        Role::Viewer
    }
}

fn client_session(
    stream: TcpStream,
    shutdown: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    welcome: WelcomeState,
    commands: Sender<Command>,
) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    let mut role = Role::Viewer;
    let mut ws = tungstenite::accept_hdr(stream, |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        role = requested_role(req);
        Ok(resp)
    })
    .map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;

    let (tx, rx) = mpsc::channel();
    {
        let mut s = shared.lock().expect("server state lock");
        if role == Role::Controller {
            if s.controller {
                drop(s);
                ws.send(ServerMessage::error("a controller is already connected").to_message())?;
                let _ = ws.close(None);
                return Ok(());
            }
            s.controller = true;
        }
        let (scenario, episode, lambda, route) = welcome.lock().expect("welcome lock").clone();
        ws.send(
            ServerMessage::Welcome {
                role,
                scenario,
                episode,
                lambda,
                route,
            }
            .to_message(),
        )?;
        s.clients.push(Client { outbox: tx });
    }
    let result = pump(&mut ws, &rx, role, &shutdown, &commands);
    if role == Role::Controller {
        shared.lock().expect("server state lock").controller = false;
    }
    let _ = ws.close(None);
    result
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    rx: &Receiver<Message>,
    role: Role,
    shutdown: &AtomicBool,
    commands: &Sender<Command>,
) -> tungstenite::Result<()> {
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        loop {
            match rx.try_recv() {
                Ok(m) => ws.send(m)?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) => match parse_client_message(t.as_str(), role) {
                Ok(cmd) => {
                    if commands.send(cmd).is_err() {
                        return Ok(());
                    }
                }
                Err(reason) => ws.send(ServerMessage::error(reason).to_message())?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(Message::Binary(_)) => ws.send(ServerMessage::error("binary messages are not supported").to_message())?,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

fn env_loop(
    agent: Td3,
    cfg: ServeConfig,
    shutdown: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    welcome: WelcomeState,
    commands: Receiver<Command>,
) -> Result<(), HarnessError> {
    let mut scenario = cfg.scenario;
    let mut lambda = cfg.lambda;
    let mut episode = 0u64;
    let reset = |scenario: u32, episode: u64| -> Result<(World, Observation), HarnessError> {
        let wc = WorldConfig {
            scenario: Some(scenario),
            ..cfg.world.clone()
        };
        Ok(World::reset(&wc, cfg.seed.wrapping_add(episode))?)
    };
    let (mut world, mut obs) = reset(scenario, episode)?;
    let publish_welcome = |world: &World, scenario: u32, episode: u64, lambda: PreferenceVector| {
        let route = world.route().waypoints.iter().map(|p| [p.x, p.y]).collect();
        *welcome.lock().expect("welcome lock") = (scenario, episode, lambda, route);
    };
    publish_welcome(&world, scenario, episode, lambda);
    let start = Instant::now();
    let mut steps = 0u64;
    while !shutdown.load(Ordering::SeqCst) && cfg.max_steps.is_none_or(|m| steps < m) {
        loop {
            match commands.try_recv() {
                Ok(Command::SetPreference(l)) => lambda = l,
                Ok(Command::Reset(s)) => {
                    scenario = s;
                    episode += 1;
                    (world, obs) = reset(scenario, episode)?;
                }
                Err(_) => break,
            }
        }
        publish_welcome(&world, scenario, episode, lambda);
        let (result, record) = greedy_step(&agent, &mut world, &obs, &cfg.reward, lambda, false)?;
        obs = result.observation;
        let frame = ServerMessage::Frame {
            episode,
            step: record.step,
            pose: Pose {
                x: record.state.position.x,
                y: record.state.position.y,
                heading: record.state.heading,
            },
            v: record.state.speed,
            a_long: record.state.a_long,
            a_lat: record.state.a_lat,
            jerk: record.jerk,
            steer: record.state.steer_pos,
            throttle: record.state.throttle_pos,
            lambda,
            reward_vector: record.reward.to_array(),
            events: record.events.names().into_iter().map(String::from).collect(),
            termination: result.outcome.termination,
        }
        .to_message();
        shared
            .lock()
            .expect("server state lock")
            .clients
            .retain(|c| c.outbox.send(frame.clone()).is_ok());
        if result.outcome.termination.is_some() {
            episode += 1;
            (world, obs) = reset(scenario, episode)?;
        }
        steps += 1;
        if let Speed::Scaled(f) = cfg.speed {
            let due = start + Duration::from_secs_f64(steps as f64 * DT / f);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
    }
    Ok(())
}
