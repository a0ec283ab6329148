//! Live typing sessions over newline-delimited JSON.
//!
//! [`Session`] is the whole protocol with no clock attached: messages go in,
//! events come out, and [`Session::tick`] advances one simulator step. The TCP
//! server only decides when to call it. `GET /schema` and `GET /health` are
//! answered on the same port.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use premover_core::numerics::ParamSet;
use premover_core::simworld::{episode_scene, BackboneEmulation, EpisodeRunner, Protocol, Status, SuiteKind, VIEWS};
use premover_core::streaming::split_words;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report::EPISODE_SCHEMA;
use crate::AppError;

/// The published wire schema.
pub const SCHEMA: &str = include_str!("../schema/gateway.schema.json");

/// Shared, read-only state for every session.
pub struct Gateway {
    pub cfg: RunConfig,
    pub emu: BackboneEmulation,
    pub params: Option<ParamSet>,
    next_id: AtomicU64,
}

impl Gateway {
    pub fn new(cfg: RunConfig, params: Option<ParamSet>) -> Result<Self, AppError> {
        cfg.validate()?;
        let emu = BackboneEmulation::new(cfg.benchmark_seed, cfg.emulator)?;
        Ok(Self {
            cfg,
            emu,
            params,
            next_id: AtomicU64::new(0),
        })
    }

    pub fn session(&self) -> Session<'_> {
        Session {
            gw: self,
            id: self.next_id.fetch_add(1, Ordering::Relaxed),
            live: None,
            paused: false,
            ticks_per_second: self.cfg.rollout.schedule.control_hz,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetMsg {
    suite: SuiteKind,
    episode_seed: usize,
    #[serde(default)]
    task: usize,
    protocol: Protocol,
    alpha: Option<f64>,
    tau: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyMsg {
    char: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeedMsg {
    ticks_per_second: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Bare {}

struct Live<'a> {
    runner: EpisodeRunner<'a>,
    typed: String,
    submitted: bool,
    scene_ref: String,
}

impl Live<'_> {
    /// Finished words only; the trailing word counts once submitted.
    fn prefix(&self) -> Vec<String> {
        let mut words = split_words(&self.typed);
        let open = !self.typed.is_empty() && !self.typed.ends_with(char::is_whitespace);
        if open && !self.submitted {
            words.pop();
        }
        words
    }
}

fn error(code: &str, message: impl Into<String>) -> Value {
    json!({ "type": "error", "code": code, "message": message.into() })
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// One connection's episode.
pub struct Session<'a> {
    gw: &'a Gateway,
    id: u64,
    live: Option<Live<'a>>,
    paused: bool,
    ticks_per_second: f64,
}

impl<'a> Session<'a> {
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Time between ticks while the episode runs, `None` when idle.
    pub fn tick_period(&self) -> Option<Duration> {
        let running = self.live.as_ref().is_some_and(|l| l.runner.status() == Status::Running);
        (running && !self.paused).then(|| Duration::from_secs_f64(1.0 / self.ticks_per_second))
    }

    /// Handle one client line; never fails, errors become events.
    pub fn handle(&mut self, line: &str) -> Vec<Value> {
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return vec![error("malformed", format!("not JSON: {e}"))],
        };
        let Some(kind) = v.get("type").and_then(Value::as_str).map(str::to_owned) else {
            return vec![error("malformed", "message has no string 'type'")];
        };
        let mut body = v;
        if let Some(m) = body.as_object_mut() {
            m.remove("type");
        }
        fn parse<T: for<'de> Deserialize<'de>>(body: Value) -> Result<T, Value> {
            serde_json::from_value(body).map_err(|e| error("invalid_message", e.to_string()))
        }
        let out = match kind.as_str() {
            "reset" => parse::<ResetMsg>(body).and_then(|m| self.reset(m)),
            "key" => parse::<KeyMsg>(body).and_then(|m| self.key(&m.char)),
            "pause" | "resume" => parse::<Bare>(body).map(|_| {
                self.paused = kind == "pause";
                Some(json!({ "type": "ack", "of": kind }))
            }),
            "set_speed" => parse::<SpeedMsg>(body).and_then(|m| {
                if !(m.ticks_per_second > 0.0 && m.ticks_per_second.is_finite()) {
                    return Err(error("invalid_message", "ticks_per_second must be positive"));
                }
                self.ticks_per_second = m.ticks_per_second;
                Ok(Some(
                    json!({ "type": "ack", "of": "set_speed", "ticks_per_second": m.ticks_per_second }),
                ))
            }),
            "revise" => Err(error(
                "unsupported",
                "prefix revision is reserved; typing is linear in v1",
            )),
            other => Err(error("unknown_type", format!("unknown message type '{other}'"))),
        };
        match out {
            Ok(Some(e)) => vec![e],
            Ok(None) => Vec::new(),
            Err(e) => vec![e],
        }
    }

    fn reset(&mut self, m: ResetMsg) -> Result<Option<Value>, Value> {
        let cfg = &self.gw.cfg;
        if m.task >= cfg.tasks_per_suite {
            return Err(error(
                "invalid_message",
                format!("task must be below {}", cfg.tasks_per_suite),
            ));
        }
        let alpha = m.alpha.unwrap_or(cfg.alpha.unwrap_or(cfg.rollout.focus.floor_scale));
        if !(0.0..=1.0).contains(&alpha) {
            return Err(error("invalid_message", "alpha must lie in [0, 1]"));
        }
        if m.protocol == Protocol::Premover && self.gw.params.is_none() {
            return Err(error(
                "no_checkpoint",
                "the premover protocol needs a loaded checkpoint",
            ));
        }
        let scene = episode_scene(cfg.benchmark_seed, m.suite, m.task, m.episode_seed, cfg.grid)
            .map_err(|e| error("runtime", e.to_string()))?;
        let mut rc = cfg.rollout;
        if m.tau.is_some() {
            rc.tau_override = m.tau;
        }
        let runner = EpisodeRunner::new(scene, &self.gw.emu, self.gw.params.as_ref(), m.protocol, alpha, rc)
            .map_err(|e| error("invalid_message", e.to_string()))?
            .with_display_maps();
        let scene_ref = format!("s{}:{}:{}:{}", self.id, m.suite.name(), m.task, m.episode_seed);
        let tau = runner.readiness().tau;
        let scene_json = serde_json::to_value(runner.scene()).map_err(|e| error("runtime", e.to_string()))?;
        let event = json!({
            "type": "scene",
            "schema": EPISODE_SCHEMA,
            "session": self.id,
            "objects_static_ref": scene_ref,
            "protocol": m.protocol,
            "alpha": alpha,
            "tau": finite(tau),
            "views": VIEWS,
            "patches_per_view": runner.scene().patches_per_view(),
            "grid": runner.scene().grid,
            "ticks_per_second": self.ticks_per_second,
            "scene": scene_json,
        });
        self.live = Some(Live {
            runner,
            typed: String::new(),
            submitted: false,
            scene_ref,
        });
        self.paused = false;
        Ok(Some(event))
    }

    fn key(&mut self, c: &str) -> Result<Option<Value>, Value> {
        let Some(live) = self.live.as_mut() else {
            return Err(error("no_session", "send reset first"));
        };
        let mut chars = c.chars();
        let (Some(ch), None) = (chars.next(), chars.next()) else {
            return Err(error("invalid_message", "key carries exactly one character"));
        };
        match ch {
            '\u{8}' | '\u{7f}' => Err(error("unsupported", "backspace is not supported; typing is linear")),
            '\n' | '\r' => {
                live.submitted = true;
                Ok(None)
            }
            _ if live.submitted => Err(error("invalid_message", "instruction already submitted")),
            _ => {
                live.typed.push(ch);
                Ok(None)
            }
        }
    }

    /// One simulator step; `None` while idle, paused or finished.
    pub fn tick(&mut self) -> Option<Value> {
        if self.paused {
            return None;
        }
        let cap = self.gw.cfg.session_max_ticks;
        let live = self.live.as_mut()?;
        if live.runner.status() != Status::Running {
            return None;
        }
        let prefix = live.prefix();
        let info = match live.runner.step(&prefix, live.submitted) {
            Ok(i) => i,
            Err(e) => return Some(error("runtime", e.to_string())),
        };
        if info.status == Status::Running && info.step + 1 >= cap {
            live.runner.time_out();
        }
        let n = VIEWS * live.runner.scene().patches_per_view();
        let focus_map: Vec<f64> = match &info.focus {
            Some(m) => m.p.iter().map(|&p| round4(p)).collect(),
            None => vec![0.0; n],
        };
        let status = match live.runner.status() {
            Status::Running => "running",
            Status::Success => "success",
            Status::Timeout => "timeout",
        };
        Some(json!({
            "type": "tick",
            "step": info.step,
            "prefix": prefix.join(" "),
            "prefix_len": info.prefix_len,
            "focus_map": focus_map,
            "r": info.readiness.r.map(round4),
            "tau": finite(info.readiness.tau),
            "committed": info.readiness.committed,
            "commit_step": info.readiness.commit_step,
            "effector": [info.effector.0, info.effector.1],
            "objects_static_ref": live.scene_ref,
            "status": status,
        }))
    }
}

/// Keystrokes scheduled before given ticks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    /// `(tick index, characters typed just before that tick)`.
    pub keys: Vec<(usize, String)>,
}

impl Transcript {
    /// Type `text` at a fixed cadence of one character every `every` ticks.
    pub fn typed(text: &str, start: usize, every: usize) -> Self {
        Self {
            keys: text
                .chars()
                .enumerate()
                .map(|(i, c)| (start + i * every, c.to_string()))
                .collect(),
        }
    }
}

/// Replay a transcript against a fresh session without any clock.
pub fn replay(gw: &Gateway, reset: &Value, transcript: &Transcript, ticks: usize) -> Vec<Value> {
    let mut s = gw.session();
    let mut out = s.handle(&reset.to_string());
    for t in 0..ticks {
        for (_, chars) in transcript.keys.iter().filter(|(at, _)| *at == t) {
            for c in chars.chars() {
                out.extend(s.handle(&json!({ "type": "key", "char": c.to_string() }).to_string()));
            }
        }
        match s.tick() {
            Some(e) => out.push(e),
            None => break,
        }
    }
    out
}

pub struct Server {
    listener: TcpListener,
    gw: Arc<Gateway>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, gw: Arc<Gateway>) -> Result<Self, AppError> {
        let listener = TcpListener::bind(addr).map_err(|e| AppError::Runtime(format!("cannot listen: {e}")))?;
        Ok(Self { listener, gw })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, AppError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accept forever; one thread per connection.
    pub fn run(self) -> Result<(), AppError> {
        for stream in self.listener.incoming() {
            let Ok(stream) = stream else { continue };
            let gw = Arc::clone(&self.gw);
            std::thread::spawn(move || {
                let _ = connection(&gw, stream);
            });
        }
        Ok(())
    }
}

fn http(mut stream: TcpStream, reader: &mut BufReader<TcpStream>, request_line: &str) -> std::io::Result<()> {
    let mut line = String::new();
    while reader.read_line(&mut line)? > 0 && line.trim_end() != "" {
        line.clear();
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/");
    let (status, body) = match path {
        "/schema" => ("200 OK", SCHEMA.to_string()),
        "/health" => ("200 OK", json!({ "status": "ok" }).to_string()),
        _ => ("404 Not Found", json!({ "error": "not found" }).to_string()),
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

fn send(stream: &mut TcpStream, events: impl IntoIterator<Item = Value>) -> std::io::Result<()> {
    for e in events {
        let mut line = e.to_string();
        line.push('\n');
        stream.write_all(line.as_bytes())?;
    }
    stream.flush()
}

fn connection(gw: &Gateway, stream: TcpStream) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut first = String::new();
    if reader.read_line(&mut first)? == 0 {
        return Ok(());
    }
    if first.starts_with("GET ") || first.starts_with("HEAD ") {
        return http(stream, &mut reader, &first);
    }

    let (tx, rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut out = stream;
    let mut session = gw.session();
    let mut next_tick: Option<Instant> = None;
    let mut pending = Some(first);
    loop {
        let msg = if let Some(m) = pending.take() {
            Ok(m)
        } else {
            match (session.tick_period(), next_tick) {
                (Some(_), Some(at)) => rx.recv_timeout(at.saturating_duration_since(Instant::now())),
                _ => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
            }
        };
        match msg {
            Ok(line) => {
                if line.trim().is_empty() {
                    continue;
                }
                send(&mut out, session.handle(line.trim_end()))?;
            }
            Err(RecvTimeoutError::Timeout) => {
                if let Some(e) = session.tick() {
                    send(&mut out, [e])?;
                }
                next_tick = session
                    .tick_period()
                    .map(|p| next_tick.unwrap_or_else(Instant::now) + p);
                continue;
            }
            Err(RecvTimeoutError::Disconnected) => return Ok(()),
        }
        next_tick = match (session.tick_period(), next_tick) {
            (Some(_), Some(at)) => Some(at),
            (Some(p), None) => Some(Instant::now() + p),
            (None, _) => None,
        };
    }
}
