//! Newline-delimited JSON control protocol, one session per connection.
//!
//! Requests carry a `cmd` of `reset`, `step`, `render`, `memory` or `close`.
//! Every request gets exactly one response line; errors never close the connection.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::curriculum::SequenceId;
use crate::env::{Env, EnvConfig, Info};
use crate::observation::ObservationStack;
use crate::shaping::{DetectorFlags, RewardConfig};
use crate::world::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionField {
    Index(u64),
    Name(String),
}

impl ActionField {
    pub fn resolve(&self) -> Option<Action> {
        match self {
            ActionField::Index(i) => usize::try_from(*i).ok().and_then(Action::from_index),
            ActionField::Name(s) => Action::parse(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Reset {
        sequence: u8,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward: Option<RewardConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detectors: Option<DetectorFlags>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        visited_mask: Option<bool>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_limit: Option<u64>,
    },
    Step {
        action: ActionField,
    },
    Render,
    Memory,
    Close,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Base64 of the channels-first observation bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<Info>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<BTreeMap<String, u8>>,
}

impl Response {
    pub fn error(msg: impl Into<String>) -> Self {
        Self { ok: false, error: Some(msg.into()), ..Default::default() }
    }

    fn with_obs(mut self, obs: &ObservationStack) -> Self {
        let (c, h, w) = obs.shape();
        self.obs = Some(BASE64.encode(obs.as_bytes()));
        self.shape = Some([c, h, w]);
        self
    }

    /// Decodes the observation payload, if present and well-formed.
    pub fn decode_obs(&self) -> Option<ObservationStack> {
        let bytes = BASE64.decode(self.obs.as_ref()?).ok()?;
        ObservationStack::from_bytes(bytes)
    }
}

/// Per-connection state.
#[derive(Default)]
pub struct Session {
    env: Option<Env>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handles one request line. The flag is true when the client asked to close.
    pub fn handle_line(&mut self, line: &str) -> (Response, bool) {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => {
                let close = req == Request::Close;
                (self.handle(req), close)
            }
            Err(e) => (Response::error(format!("bad request: {e}")), false),
        }
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Reset { sequence, seed, reward, detectors, visited_mask, step_limit } => {
                let sequence = match SequenceId::try_from(sequence) {
                    Ok(s) => s,
                    Err(e) => return Response::error(e),
                };
                let mut config = EnvConfig::new(sequence, seed);
                if let Some(r) = reward {
                    config.reward = r;
                }
                if let Some(d) = detectors {
                    config.detectors = d;
                }
                if let Some(m) = visited_mask {
                    config.visited_mask = m;
                }
                config.step_limit = step_limit;
                match Env::new(config) {
                    Ok(env) => {
                        let obs = env.observation();
                        let info = Some(env_info(&env));
                        self.env = Some(env);
                        Response { ok: true, info, ..Default::default() }.with_obs(&obs)
                    }
                    Err(e) => Response::error(e.to_string()),
                }
            }
            Request::Step { action } => {
                let Some(env) = self.env.as_mut() else {
                    return Response::error("no episode; send reset first");
                };
                let Some(action) = action.resolve() else {
                    return Response::error(format!("unknown action {action:?}"));
                };
                match env.step(action) {
                    Ok(r) => {
                        let obs = r.observation.unwrap_or_else(|| env.observation());
                        Response {
                            ok: true,
                            reward: Some(r.reward),
                            breakdown: Some(r.breakdown.to_map()),
                            terminated: Some(r.terminated),
                            truncated: Some(r.truncated),
                            info: Some(r.info),
                            ..Default::default()
                        }
                        .with_obs(&obs)
                    }
                    Err(e) => Response::error(e.to_string()),
                }
            }
            Request::Render => match &self.env {
                Some(env) => Response { ok: true, ..Default::default() }.with_obs(&env.observation()),
                None => Response::error("no episode; send reset first"),
            },
            Request::Memory => match &self.env {
                Some(env) => Response { ok: true, memory: Some(env.memory()), ..Default::default() },
                None => Response::error("no episode; send reset first"),
            },
            Request::Close => Response { ok: true, ..Default::default() },
        }
    }
}

fn env_info(env: &Env) -> Info {
    let s = env.state();
    Info {
        step: env.steps(),
        map_id: s.map_id,
        x: s.pos.x,
        y: s.pos.y,
        in_battle: s.in_battle,
        memory: env.memory(),
        outcome: env.outcome(),
        events: String::new(),
        pattern_hits: env.shaping().pattern_hits,
        loop_hits: env.shaping().loop_hits,
    }
}

/// Serves one session until EOF or `close`.
pub fn serve_connection<R: BufRead, W: Write>(reader: R, mut writer: W) -> io::Result<()> {
    let mut session = Session::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, close) = session.handle_line(&line);
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

fn serve_stream(stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_connection(reader, BufWriter::new(stream))
}

/// Accepts connections forever, one thread per connection.
pub fn serve_listener(listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_stream(stream) {
                eprintln!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

pub fn serve_tcp(addr: impl ToSocketAddrs) -> io::Result<()> {
    serve_listener(TcpListener::bind(addr)?)
}
