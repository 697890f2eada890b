//! Episode driver: world step, visited mask, reward, observation, termination, log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{Curriculum, EpisodeOutcome, SequenceId, SequenceSpec};
use crate::log::{EpisodeLog, StepRecord};
use crate::observation::{render_frame, Frame, FrameHistory, ObservationStack, VisitedMaskStore};
use crate::shaping::{DetectorFlags, RewardBreakdown, RewardConfig, RewardEngine, ShapingState};
use crate::world::{memory, Action, EventSet, World, WorldState};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sequence: SequenceId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub detectors: DetectorFlags,
    #[serde(default = "yes")]
    pub visited_mask: bool,
    /// Overrides the sequence's own step limit.
    #[serde(default)]
    pub step_limit: Option<u64>,
    /// When false, steps skip rendering and return no observation.
    #[serde(default = "yes")]
    pub render: bool,
}

impl EnvConfig {
    pub fn new(sequence: SequenceId, seed: u64) -> Self {
        Self {
            sequence,
            seed,
            reward: RewardConfig::default(),
            detectors: DetectorFlags::default(),
            visited_mask: true,
            step_limit: None,
            render: true,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.reward.validate().map_err(EnvError::Config)?;
        if self.step_limit == Some(0) {
            return Err(EnvError::Config("step_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("episode already ended ({0}); call reset")]
    SteppedTerminalEpisode(&'static str),
}

/// Side information returned with every reset and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub step: u64,
    pub map_id: u8,
    pub x: u8,
    pub y: u8,
    pub in_battle: bool,
    /// Keys are hex addresses such as `0xD361`.
    pub memory: BTreeMap<String, u8>,
    pub outcome: EpisodeOutcome,
    pub events: String,
    pub pattern_hits: u32,
    pub loop_hits: u32,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Option<ObservationStack>,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    /// Success or loss.
    pub terminated: bool,
    /// Step limit reached.
    pub truncated: bool,
    pub events: EventSet,
    pub info: Info,
}

pub fn memory_hex(state: &WorldState) -> BTreeMap<String, u8> {
    memory::memory_view(state)
        .into_iter()
        .map(|(k, v)| (format!("0x{k:04X}"), v))
        .collect()
}

pub struct Env {
    config: EnvConfig,
    spec: SequenceSpec,
    world: &'static World,
    engine: RewardEngine,
    state: WorldState,
    shaping: ShapingState,
    masks: VisitedMaskStore,
    frames: FrameHistory,
    outcome: EpisodeOutcome,
    log: EpisodeLog,
    steps: u64,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let spec = Self::spec_for(&config);
        let state = spec.initial_state(config.seed);
        let mut env = Self {
            engine: RewardEngine::new(config.reward.clone(), config.detectors),
            shaping: ShapingState::new(&state),
            log: EpisodeLog::new(state.location()),
            world: World::canonical(),
            masks: VisitedMaskStore::new(),
            frames: FrameHistory::default(),
            outcome: EpisodeOutcome::Running,
            steps: 0,
            spec,
            state,
            config,
        };
        env.begin();
        Ok(env)
    }

    fn spec_for(config: &EnvConfig) -> SequenceSpec {
        let mut spec = Curriculum::canonical().spec(config.sequence).clone();
        if let Some(limit) = config.step_limit {
            spec.step_limit = limit;
        }
        spec
    }

    fn begin(&mut self) {
        if self.config.visited_mask {
            self.masks.update(&self.state);
        }
        if self.config.render {
            self.push_frame();
        }
    }

    /// Starts a fresh episode under `config`.
    pub fn reset(&mut self, config: EnvConfig) -> Result<(Option<ObservationStack>, Info), EnvError> {
        *self = Env::new(config)?;
        let obs = self.config.render.then(|| self.frames.stack());
        Ok((obs, self.info(&EventSet::default())))
    }

    fn mask_frame(&self) -> Frame {
        if self.config.visited_mask {
            self.masks.rasterize(&self.state)
        } else {
            Frame::filled(0)
        }
    }

    fn push_frame(&mut self) {
        let gray = render_frame(&self.state, self.world);
        let mask = self.mask_frame();
        self.frames.push(gray, mask);
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        if self.outcome.is_terminal() {
            return Err(EnvError::SteppedTerminalEpisode(self.outcome.name()));
        }
        let prev = self.state.clone();
        let (next, events) = self.world.step(&prev, action);
        self.state = next;
        self.steps += 1;

        if self.config.visited_mask {
            self.masks.update(&self.state);
        }

        let (pattern_before, loop_before) = (self.shaping.pattern_hits, self.shaping.loop_hits);
        let breakdown = self.engine.compute(&prev, &self.state, action, &events, &mut self.shaping);

        let observation = if self.config.render {
            self.push_frame();
            Some(self.frames.stack())
        } else {
            None
        };

        self.outcome = self.spec.check_termination(&self.state, &events, self.steps);

        self.log.records.push(StepRecord {
            step: self.steps - 1,
            action,
            map_id: self.state.map_id,
            pos: self.state.pos,
            facing: self.state.facing,
            breakdown: breakdown.clone(),
            pattern_hits_delta: self.shaping.pattern_hits - pattern_before,
            loop_hits_delta: self.shaping.loop_hits - loop_before,
            events: events.clone(),
            outcome: self.outcome,
        });

        Ok(StepResult {
            observation,
            reward: breakdown.total(),
            terminated: matches!(self.outcome, EpisodeOutcome::Success | EpisodeOutcome::Loss),
            truncated: self.outcome == EpisodeOutcome::Timeout,
            info: self.info(&events),
            breakdown,
            events,
        })
    }

    fn info(&self, events: &EventSet) -> Info {
        Info {
            step: self.steps,
            map_id: self.state.map_id,
            x: self.state.pos.x,
            y: self.state.pos.y,
            in_battle: self.state.in_battle,
            memory: memory_hex(&self.state),
            outcome: self.outcome,
            events: events.summary(),
            pattern_hits: self.shaping.pattern_hits,
            loop_hits: self.shaping.loop_hits,
        }
    }

    /// Current observation stack. Without rendering enabled, the current frame pair is
    /// replicated.
    pub fn observation(&self) -> ObservationStack {
        if self.config.render {
            self.frames.stack()
        } else {
            let mut h = FrameHistory::default();
            h.push(render_frame(&self.state, self.world), self.mask_frame());
            h.stack()
        }
    }

    /// Current grayscale and visited-mask frames.
    pub fn frames(&self) -> (Frame, Frame) {
        (render_frame(&self.state, self.world), self.mask_frame())
    }

    pub fn memory(&self) -> BTreeMap<String, u8> {
        memory_hex(&self.state)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn shaping(&self) -> &ShapingState {
        &self.shaping
    }

    pub fn masks(&self) -> &VisitedMaskStore {
        &self.masks
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        self.outcome
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn spec(&self) -> &SequenceSpec {
        &self.spec
    }

    pub fn world(&self) -> &'static World {
        self.world
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::BEDROOM;

    #[test]
    fn reset_matches_sequence_anchor() {
        let mut env = Env::new(EnvConfig::new(SequenceId::HouseExit, 0)).unwrap();
        let (obs, info) = env.reset(EnvConfig::new(SequenceId::HouseExit, 3)).unwrap();
        assert_eq!(obs.unwrap().shape(), (8, 72, 80));
        assert_eq!(info.map_id, BEDROOM);
        assert_eq!(info.memory["0xD35E"], BEDROOM);
        assert_eq!(info.outcome, EpisodeOutcome::Running);
    }

    #[test]
    fn terminal_episode_rejects_steps() {
        let mut cfg = EnvConfig::new(SequenceId::HouseExit, 0);
        cfg.step_limit = Some(2);
        let mut env = Env::new(cfg).unwrap();
        assert!(!env.step(Action::NoOp).unwrap().truncated);
        assert!(env.step(Action::NoOp).unwrap().truncated);
        assert_eq!(env.step(Action::NoOp).unwrap_err(), EnvError::SteppedTerminalEpisode("timeout"));
    }

    #[test]
    fn disabled_mask_is_zero() {
        let mut cfg = EnvConfig::new(SequenceId::HouseExit, 0);
        cfg.visited_mask = false;
        let mut env = Env::new(cfg).unwrap();
        let r = env.step(Action::Down).unwrap();
        let obs = r.observation.unwrap();
        for c in [1, 3, 5, 7] {
            assert!(obs.channel(c).iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn no_render_returns_no_observation() {
        let mut cfg = EnvConfig::new(SequenceId::HouseExit, 0);
        cfg.render = false;
        let mut env = Env::new(cfg).unwrap();
        assert!(env.step(Action::Down).unwrap().observation.is_none());
        assert_eq!(env.observation().shape(), (8, 72, 80));
    }

    #[test]
    fn bad_config_is_rejected() {
        let mut cfg = EnvConfig::new(SequenceId::HouseExit, 0);
        cfg.step_limit = Some(0);
        assert!(matches!(Env::new(cfg), Err(EnvError::Config(_))));
    }
}
