//! Per-step episode log and its line-oriented text format.
//!
//! ```text
//! config {"sequence":1,"seed":0,...}
//! start map=38 x=6 y=2
//! step=0 action=down map=38 x=6 y=3 facing=down pattern=0 loop=0 outcome=running events={...} reward={...}
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::EpisodeOutcome;
use crate::env::EnvConfig;
use crate::shaping::{Location, RewardBreakdown};
use crate::tilemap::{MapId, Pos};
use crate::world::{Action, Direction, EventSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub action: Action,
    pub map_id: MapId,
    pub pos: Pos,
    pub facing: Direction,
    pub breakdown: RewardBreakdown,
    /// Pattern detections added by this step.
    pub pattern_hits_delta: u32,
    /// Position-loop detections added by this step.
    pub loop_hits_delta: u32,
    pub events: EventSet,
    pub outcome: EpisodeOutcome,
}

impl StepRecord {
    pub fn location(&self) -> Location {
        (self.map_id, self.pos)
    }

    pub fn reward(&self) -> f64 {
        self.breakdown.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub start: Location,
    pub records: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn new(start: Location) -> Self {
        Self { start, records: Vec::new() }
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        self.records.last().map_or(EpisodeOutcome::Running, |r| r.outcome)
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(StepRecord::reward).sum()
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.records.iter().map(|r| r.action)
    }
}

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("missing config line")]
    MissingConfig,
    #[error("missing start line")]
    MissingStart,
}

fn line_err(line: usize, reason: impl Into<String>) -> LogParseError {
    LogParseError::Line { line, reason: reason.into() }
}

/// Serializes a log together with the config that produced it.
pub fn write_log(config: &EnvConfig, log: &EpisodeLog) -> String {
    let mut out = String::new();
    let cfg = serde_json::to_string(config).expect("config serializes");
    let _ = writeln!(out, "config {cfg}");
    let (map, pos) = log.start;
    let _ = writeln!(out, "start map={map} x={} y={}", pos.x, pos.y);
    for r in &log.records {
        let events = serde_json::to_string(&r.events).expect("events serialize");
        let reward = serde_json::to_string(&r.breakdown).expect("breakdown serializes");
        let _ = writeln!(
            out,
            "step={} action={} map={} x={} y={} facing={} pattern={} loop={} outcome={} events={} reward={}",
            r.step,
            r.action.name(),
            r.map_id,
            r.pos.x,
            r.pos.y,
            r.facing.name(),
            r.pattern_hits_delta,
            r.loop_hits_delta,
            r.outcome.name(),
            events,
            reward,
        );
    }
    out
}

fn fields(line: &str, lineno: usize) -> Result<BTreeMap<&str, &str>, LogParseError> {
    line.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| line_err(lineno, format!("expected key=value, got {kv:?}")))
        })
        .collect()
}

fn field<'a>(f: &BTreeMap<&str, &'a str>, key: &str, lineno: usize) -> Result<&'a str, LogParseError> {
    f.get(key).copied().ok_or_else(|| line_err(lineno, format!("missing {key}")))
}

fn num<T: std::str::FromStr>(f: &BTreeMap<&str, &str>, key: &str, lineno: usize) -> Result<T, LogParseError> {
    field(f, key, lineno)?
        .parse()
        .map_err(|_| line_err(lineno, format!("bad {key}")))
}

pub fn parse_log(text: &str) -> Result<(EnvConfig, EpisodeLog), LogParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (n, first) = lines.next().ok_or(LogParseError::MissingConfig)?;
    let cfg_json = first.strip_prefix("config ").ok_or(LogParseError::MissingConfig)?;
    let config: EnvConfig = serde_json::from_str(cfg_json).map_err(|e| line_err(n + 1, e.to_string()))?;

    let (n, second) = lines.next().ok_or(LogParseError::MissingStart)?;
    let start_fields = second.strip_prefix("start ").ok_or(LogParseError::MissingStart)?;
    let f = fields(start_fields, n + 1)?;
    let start = (num(&f, "map", n + 1)?, Pos::new(num(&f, "x", n + 1)?, num(&f, "y", n + 1)?));

    let mut log = EpisodeLog::new(start);
    for (n, line) in lines {
        let ln = n + 1;
        let f = fields(line, ln)?;
        let action = Action::parse(field(&f, "action", ln)?).ok_or_else(|| line_err(ln, "bad action"))?;
        let facing = Direction::parse(field(&f, "facing", ln)?).ok_or_else(|| line_err(ln, "bad facing"))?;
        let outcome = EpisodeOutcome::parse(field(&f, "outcome", ln)?).ok_or_else(|| line_err(ln, "bad outcome"))?;
        let events: EventSet =
            serde_json::from_str(field(&f, "events", ln)?).map_err(|e| line_err(ln, e.to_string()))?;
        let breakdown: RewardBreakdown =
            serde_json::from_str(field(&f, "reward", ln)?).map_err(|e| line_err(ln, e.to_string()))?;
        log.records.push(StepRecord {
            step: num(&f, "step", ln)?,
            action,
            map_id: num(&f, "map", ln)?,
            pos: Pos::new(num(&f, "x", ln)?, num(&f, "y", ln)?),
            facing,
            breakdown,
            pattern_hits_delta: num(&f, "pattern", ln)?,
            loop_hits_delta: num(&f, "loop", ln)?,
            events,
            outcome,
        });
    }
    Ok((config, log))
}
