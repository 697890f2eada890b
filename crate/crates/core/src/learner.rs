//! Tabular Q-learning baseline.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battle::Phase;
use crate::curriculum::SequenceId;
use crate::env::{Env, EnvConfig, EnvError};
use crate::metrics::{classify_loop_episode, shannon_entropy, ActionCounts, BatchSummary, EpisodeSummary};
use crate::world::{Action, WorldState, ACTION_COUNT};

const MAGIC: &[u8; 4] = b"PKQT";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub map: u8,
    pub x: u8,
    pub y: u8,
    pub facing: u8,
    /// 0 overworld, 1 choosing a move, 2 reading battle text.
    pub phase: u8,
    pub cursor: u8,
}

impl StateKey {
    pub fn of(state: &WorldState) -> Self {
        let (phase, cursor) = match state.battle.as_ref().filter(|_| state.in_battle) {
            None => (0, 0),
            Some(b) => (if b.phase == Phase::ChooseMove { 1 } else { 2 }, b.cursor),
        };
        Self {
            map: state.map_id,
            x: state.pos.x,
            y: state.pos.y,
            facing: state.facing.index(),
            phase,
            cursor,
        }
    }

    fn to_bytes(self) -> [u8; 6] {
        [self.map, self.x, self.y, self.facing, self.phase, self.cursor]
    }

    fn from_bytes(b: [u8; 6]) -> Self {
        Self { map: b[0], x: b[1], y: b[2], facing: b[3], phase: b[4], cursor: b[5] }
    }
}

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("q-table was trained on sequence {table}, asked to evaluate sequence {requested}")]
    SequenceMismatch { table: u8, requested: u8 },
    #[error("not a q-table file")]
    BadMagic,
    #[error("unsupported q-table format version {0}")]
    UnsupportedVersion(u16),
    #[error("q-table names unknown sequence {0}")]
    BadSequence(u8),
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub sequence: SequenceId,
    values: HashMap<StateKey, Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    q: [f64; ACTION_COUNT],
    visits: u32,
}

impl QTable {
    pub fn new(sequence: SequenceId) -> Self {
        Self { sequence, values: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn q(&self, key: &StateKey) -> [f64; ACTION_COUNT] {
        self.values.get(key).map_or([0.0; ACTION_COUNT], |e| e.q)
    }

    /// Number of updates applied to `key`.
    pub fn visits(&self, key: &StateKey) -> u32 {
        self.values.get(key).map_or(0, |e| e.visits)
    }

    pub fn max_q(&self, key: &StateKey) -> f64 {
        self.q(key).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, key: &StateKey) -> Action {
        let q = self.q(key);
        let mut best = 0;
        for i in 1..ACTION_COUNT {
            if q[i] > q[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    /// One-step Q-learning update. `next = None` marks a terminal transition.
    pub fn update(&mut self, key: StateKey, action: Action, reward: f64, next: Option<&StateKey>, alpha: f64, gamma: f64) {
        let bootstrap = next.map_or(0.0, |n| self.max_q(n));
        let entry = self.values.entry(key).or_insert(Entry { q: [0.0; ACTION_COUNT], visits: 0 });
        entry.visits = entry.visits.saturating_add(1);
        let q = &mut entry.q[action.index()];
        *q += alpha * (reward + gamma * bootstrap - *q);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), LearnerError> {
        let mut keys: Vec<&StateKey> = self.values.keys().collect();
        keys.sort();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.sequence.number()])?;
        w.write_all(&(keys.len() as u32).to_le_bytes())?;
        for k in keys {
            let e = &self.values[k];
            w.write_all(&k.to_bytes())?;
            w.write_all(&e.visits.to_le_bytes())?;
            for v in e.q {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, LearnerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(LearnerError::BadMagic);
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(LearnerError::UnsupportedVersion(version));
        }
        let mut s = [0u8; 1];
        r.read_exact(&mut s)?;
        let sequence = SequenceId::try_from(s[0]).map_err(|_| LearnerError::BadSequence(s[0]))?;
        let mut n = [0u8; 4];
        r.read_exact(&mut n)?;
        let count = u32::from_le_bytes(n);
        let mut values = HashMap::with_capacity(count as usize);
        for _ in 0..count {
            let mut kb = [0u8; 6];
            r.read_exact(&mut kb)?;
            let mut vb = [0u8; 4];
            r.read_exact(&mut vb)?;
            let mut q = [0.0; ACTION_COUNT];
            for slot in &mut q {
                let mut fb = [0u8; 8];
                r.read_exact(&mut fb)?;
                *slot = f64::from_le_bytes(fb);
            }
            values.insert(StateKey::from_bytes(kb), Entry { q, visits: u32::from_le_bytes(vb) });
        }
        Ok(Self { sequence, values })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub episodes: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub decay_fraction: f64,
    /// Seeds exploration; episode `i` uses environment seed `env.seed + i`.
    pub seed: u64,
    pub window: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            alpha: 0.1,
            gamma: 0.999,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            decay_fraction: 0.6,
            seed: 0,
            window: 100,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LearnerError::Config("alpha must be in (0, 1]".into()));
        }
        if !unit(self.gamma) || !unit(self.epsilon_start) || !unit(self.epsilon_end) || !unit(self.decay_fraction) {
            return Err(LearnerError::Config("gamma, epsilon and decay_fraction must be in [0, 1]".into()));
        }
        if self.window == 0 {
            return Err(LearnerError::Config("window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: u64) -> f64 {
        let decay_episodes = self.decay_fraction * self.episodes as f64;
        if decay_episodes <= 0.0 || episode as f64 >= decay_episodes {
            return self.epsilon_end;
        }
        let t = episode as f64 / decay_episodes;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBrief {
    pub success: bool,
    pub loop_episode: bool,
    pub entropy_bits: Option<f64>,
    pub total_reward: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    /// Exclusive end of the window.
    pub end_episode: u64,
    pub success_rate: f64,
    pub mean_entropy_bits: f64,
    pub loop_episode_fraction: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub sequence: u8,
    pub learner: LearnerConfig,
    pub env: EnvConfig,
    pub states: usize,
    pub windows: Vec<WindowStats>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeBrief>,
}

impl TrainingReport {
    fn window_stats(end: u64, slice: &[EpisodeBrief]) -> WindowStats {
        let n = slice.len().max(1) as f64;
        let hs: Vec<f64> = slice.iter().filter_map(|e| e.entropy_bits).collect();
        WindowStats {
            end_episode: end,
            success_rate: slice.iter().filter(|e| e.success).count() as f64 / n,
            mean_entropy_bits: if hs.is_empty() { 0.0 } else { hs.iter().sum::<f64>() / hs.len() as f64 },
            loop_episode_fraction: slice.iter().filter(|e| e.loop_episode).count() as f64 / n,
            mean_return: slice.iter().map(|e| e.total_reward).sum::<f64>() / n,
        }
    }

    /// Stats over the last `n` training episodes.
    pub fn tail(&self, n: usize) -> WindowStats {
        let start = self.episodes.len().saturating_sub(n);
        Self::window_stats(self.episodes.len() as u64, &self.episodes[start..])
    }
}

/// Trains a fresh table with epsilon-greedy Q-learning.
pub fn train(learner: &LearnerConfig, env_config: &EnvConfig) -> Result<(QTable, TrainingReport), LearnerError> {
    learner.validate()?;
    env_config.validate()?;
    let mut table = QTable::new(env_config.sequence);
    let mut rng = ChaCha8Rng::seed_from_u64(learner.seed);
    let mut episodes = Vec::with_capacity(learner.episodes as usize);

    for ep in 0..learner.episodes {
        let mut cfg = env_config.clone();
        cfg.seed = env_config.seed.wrapping_add(ep);
        cfg.render = false;
        let mut env = Env::new(cfg)?;
        let eps = learner.epsilon(ep);
        let mut counts = ActionCounts::default();
        let mut total = 0.0;
        while !env.outcome().is_terminal() {
            let key = StateKey::of(env.state());
            let action = if rng.gen::<f64>() < eps {
                Action::ALL[rng.gen_range(0..ACTION_COUNT)]
            } else {
                table.greedy(&key)
            };
            let r = env.step(action)?;
            counts.record(action);
            total += r.reward;
            // Time-limit truncation still bootstraps; only true terminals do not.
            let next = StateKey::of(env.state());
            let next = (!r.terminated).then_some(&next);
            table.update(key, action, r.reward, next, learner.alpha, learner.gamma);
        }
        episodes.push(EpisodeBrief {
            success: env.outcome() == crate::curriculum::EpisodeOutcome::Success,
            loop_episode: classify_loop_episode(env.log()),
            entropy_bits: shannon_entropy(&counts).ok(),
            total_reward: total,
            steps: env.steps(),
        });
    }

    let windows = episodes
        .chunks(learner.window as usize)
        .enumerate()
        .map(|(i, chunk)| {
            let end = (i as u64) * learner.window + chunk.len() as u64;
            TrainingReport::window_stats(end, chunk)
        })
        .collect();
    let report = TrainingReport {
        sequence: env_config.sequence.number(),
        learner: learner.clone(),
        env: env_config.clone(),
        states: table.len(),
        windows,
        episodes,
    };
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EpisodeSummary>,
    pub summary: BatchSummary,
}

/// Greedy evaluation (epsilon 0) over seeds `env_config.seed ..`.
pub fn evaluate(table: &QTable, env_config: &EnvConfig, episodes: u64) -> Result<EvalReport, LearnerError> {
    if table.sequence != env_config.sequence {
        return Err(LearnerError::SequenceMismatch {
            table: table.sequence.number(),
            requested: env_config.sequence.number(),
        });
    }
    env_config.validate()?;
    let mut rows = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let mut cfg = env_config.clone();
        cfg.seed = env_config.seed.wrapping_add(i);
        cfg.render = false;
        let mut env = Env::new(cfg.clone())?;
        while !env.outcome().is_terminal() {
            env.step(table.greedy(&StateKey::of(env.state())))?;
        }
        rows.push(EpisodeSummary::from_log(i, cfg.sequence.number(), cfg.seed, env.log(), env.world()));
    }
    let summary = BatchSummary::from_rows(&rows);
    Ok(EvalReport { rows, summary })
}
