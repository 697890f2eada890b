//! Behaviour metrics: action entropy, loop-episode classification and exploration
//! coverage.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::EpisodeLog;
use crate::shaping::Location;
use crate::tilemap::{MapId, Pos, TileKind};
use crate::world::{Action, Direction, World, ACTION_COUNT};

/// A tile visited more often than this marks a loop episode.
pub const LOOP_VISIT_THRESHOLD: u32 = 10;
/// More pattern detections than this marks a loop episode.
pub const LOOP_PATTERN_THRESHOLD: u32 = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("action counts are all zero")]
    EmptyCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts(pub [u64; ACTION_COUNT]);

impl ActionCounts {
    pub fn record(&mut self, a: Action) {
        self.0[a.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn merge(&mut self, other: &ActionCounts) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }

    pub fn get(&self, a: Action) -> u64 {
        self.0[a.index()]
    }
}

impl FromIterator<Action> for ActionCounts {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut c = ActionCounts::default();
        for a in iter {
            c.record(a);
        }
        c
    }
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn shannon_entropy(counts: &ActionCounts) -> Result<f64, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let n = total as f64;
    let h = counts
        .0
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>();
    // Clamp tiny negative rounding on degenerate counts.
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub fractions: [f64; ACTION_COUNT],
    pub movement: f64,
    pub a_b: f64,
    pub noop: f64,
}

pub fn action_distribution(counts: &ActionCounts) -> Result<ActionDistribution, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let n = total as f64;
    let fractions = counts.0.map(|c| c as f64 / n);
    let sum_of = |acts: &[Action]| acts.iter().map(|a| counts.get(*a)).sum::<u64>() as f64 / n;
    Ok(ActionDistribution {
        fractions,
        movement: sum_of(&[Action::Up, Action::Down, Action::Left, Action::Right]),
        a_b: sum_of(&[Action::A, Action::B]),
        noop: sum_of(&[Action::NoOp]),
    })
}

/// Arrival counts per tile: the start tile once, plus every step that changed location.
pub fn visit_counts(log: &EpisodeLog) -> HashMap<Location, u32> {
    let mut visits = HashMap::new();
    let mut prev = log.start;
    visits.insert(prev, 1);
    for r in &log.records {
        let loc = r.location();
        if loc != prev {
            *visits.entry(loc).or_insert(0) += 1;
        }
        prev = loc;
    }
    visits
}

pub fn total_pattern_hits(log: &EpisodeLog) -> u32 {
    log.records.iter().map(|r| r.pattern_hits_delta).sum()
}

/// A loop episode has a tile visited more than 10 times or more than 20 pattern
/// detections. Empty episodes are never loops.
pub fn classify_loop_episode(log: &EpisodeLog) -> bool {
    if log.records.is_empty() {
        return false;
    }
    let max_visits = visit_counts(log).values().copied().max().unwrap_or(0);
    max_visits > LOOP_VISIT_THRESHOLD || total_pattern_hits(log) > LOOP_PATTERN_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStats {
    pub unique_positions: usize,
    pub revisit_ratio: f64,
    pub exploration_ratio: f64,
    pub primary_map: MapId,
}

/// Every standable location reachable from `start` by walking, following warps.
pub fn reachable_locations(world: &World, start: Location) -> BTreeSet<Location> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some((map_id, pos)) = queue.pop_front() {
        let Some(map) = world.map(map_id) else { continue };
        for dir in Direction::ALL {
            let (dx, dy) = dir.delta();
            let (x, y) = (i32::from(pos.x) + dx, i32::from(pos.y) + dy);
            let next = match map.tile_at(x, y) {
                Some(TileKind::Warp(t)) => (t.map, t.pos),
                Some(t) if t.is_walkable() => (map_id, Pos::new(x as u8, y as u8)),
                _ => continue,
            };
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen
}

/// Unique positions are counted over post-step positions, so a self-avoiding walk has
/// a revisit ratio of exactly 1. Coverage also counts the start tile.
pub fn exploration_stats(log: &EpisodeLog, world: &World) -> ExplorationStats {
    let positions: BTreeSet<Location> = log.records.iter().map(|r| r.location()).collect();
    let steps = log.records.len();
    let revisit_ratio = if positions.is_empty() {
        1.0
    } else {
        steps as f64 / positions.len() as f64
    };

    let mut steps_per_map: BTreeMap<MapId, usize> = BTreeMap::new();
    for r in &log.records {
        *steps_per_map.entry(r.map_id).or_insert(0) += 1;
    }
    // Most steps wins; ties go to the lower map id.
    let primary_map = steps_per_map
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map_or(log.start.0, |(m, _)| *m);

    let reachable = reachable_locations(world, log.start);
    let reachable_on_map = reachable.iter().filter(|(m, _)| *m == primary_map).count();
    let covered = positions
        .iter()
        .chain(std::iter::once(&log.start))
        .filter(|loc| loc.0 == primary_map && reachable.contains(loc))
        .collect::<BTreeSet<_>>()
        .len();
    let exploration_ratio = if reachable_on_map == 0 {
        0.0
    } else {
        covered as f64 / reachable_on_map as f64
    };
    ExplorationStats {
        unique_positions: positions.len(),
        revisit_ratio,
        exploration_ratio,
        primary_map,
    }
}

/// One row of the per-episode metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: u64,
    pub sequence: u8,
    pub seed: u64,
    pub outcome: String,
    pub total_reward: f64,
    pub steps: u64,
    pub entropy_bits: Option<f64>,
    pub loop_episode: bool,
    pub unique_positions: usize,
    pub revisit_ratio: f64,
    pub exploration_ratio: f64,
    pub counts: ActionCounts,
}

impl EpisodeSummary {
    pub fn from_log(episode_id: u64, sequence: u8, seed: u64, log: &EpisodeLog, world: &World) -> Self {
        let counts: ActionCounts = log.records.iter().map(|r| r.action).collect();
        let stats = exploration_stats(log, world);
        Self {
            episode_id,
            sequence,
            seed,
            outcome: log.outcome().name().to_string(),
            total_reward: log.total_reward(),
            steps: log.records.len() as u64,
            entropy_bits: shannon_entropy(&counts).ok(),
            loop_episode: classify_loop_episode(log),
            unique_positions: stats.unique_positions,
            revisit_ratio: stats.revisit_ratio,
            exploration_ratio: stats.exploration_ratio,
            counts,
        }
    }

    pub fn success(&self) -> bool {
        self.outcome == "success"
    }
}

pub const CSV_HEADER: &str = "episode_id,sequence,seed,outcome,total_reward,steps,H_bits,loop_episode,unique_positions,revisit_ratio,exploration_ratio,count_up,count_down,count_left,count_right,count_a,count_b,count_noop";

pub fn csv_row(s: &EpisodeSummary) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        s.episode_id,
        s.sequence,
        s.seed,
        s.outcome,
        s.total_reward,
        s.steps,
        s.entropy_bits.map(|h| h.to_string()).unwrap_or_default(),
        u8::from(s.loop_episode),
        s.unique_positions,
        s.revisit_ratio,
        s.exploration_ratio,
    );
    for c in s.counts.0 {
        let _ = write!(row, ",{c}");
    }
    row
}

pub fn csv_document(rows: &[EpisodeSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

/// Aggregates over a batch of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub episodes: usize,
    pub mean_entropy_bits: f64,
    pub pooled_entropy_bits: f64,
    pub loop_episode_fraction: f64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    pub counts: ActionCounts,
}

impl BatchSummary {
    pub fn from_rows(rows: &[EpisodeSummary]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut counts = ActionCounts::default();
        for r in rows {
            counts.merge(&r.counts);
        }
        let hs: Vec<f64> = rows.iter().filter_map(|r| r.entropy_bits).collect();
        Self {
            episodes: rows.len(),
            mean_entropy_bits: if hs.is_empty() { 0.0 } else { hs.iter().sum::<f64>() / hs.len() as f64 },
            pooled_entropy_bits: shannon_entropy(&counts).unwrap_or(0.0),
            loop_episode_fraction: rows.iter().filter(|r| r.loop_episode).count() as f64 / n,
            success_rate: rows.iter().filter(|r| r.success()).count() as f64 / n,
            mean_return: rows.iter().map(|r| r.total_reward).sum::<f64>() / n,
            mean_steps: rows.iter().map(|r| r.steps as f64).sum::<f64>() / n,
            counts,
        }
    }

    /// Flat `key=value` text report.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "episodes={}", self.episodes);
        let _ = writeln!(out, "mean_entropy_bits={}", self.mean_entropy_bits);
        let _ = writeln!(out, "pooled_entropy_bits={}", self.pooled_entropy_bits);
        let _ = writeln!(out, "loop_episode_fraction={}", self.loop_episode_fraction);
        let _ = writeln!(out, "success_rate={}", self.success_rate);
        let _ = writeln!(out, "mean_return={}", self.mean_return);
        let _ = writeln!(out, "mean_steps={}", self.mean_steps);
        if let Ok(d) = action_distribution(&self.counts) {
            for a in Action::ALL {
                let _ = writeln!(out, "fraction_{}={}", a.name(), d.fractions[a.index()]);
            }
            let _ = writeln!(out, "fraction_movement={}", d.movement);
            let _ = writeln!(out, "fraction_a_b={}", d.a_b);
            let _ = writeln!(out, "fraction_noop={}", d.noop);
        }
        out
    }
}
