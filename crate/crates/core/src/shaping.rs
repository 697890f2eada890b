//! Per-step reward: hierarchical progress rewards plus anti-loop and anti-spam
//! penalties, reported component by component.
//!
//! Progress rewards come in three tiers. Micro rewards pay for movement and new
//! tiles, meso rewards for map transitions and coverage milestones, macro rewards for
//! grass, battles and victories. Penalties stay within 0.02..=0.2 in magnitude so
//! that they shape behaviour without swamping progress.
//!
//! The anti-loop system has three layers: per-tile visit counts, periodic action
//! pattern detection over the last 20 actions, and radius-1 position returns over the
//! last 30 positions. The anti-spam system tracks A/B/stay streaks and pays a small
//! bonus for action diversity. Detectors always run and keep their counters; the
//! [`DetectorFlags`] only decide whether they contribute reward.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tilemap::{MapId, Pos};
use crate::world::{Action, EventSet, WorldState};

pub const ACTION_WINDOW: usize = 20;
pub const POSITION_HISTORY: usize = 30;
/// Only the oldest part of the position history counts as a "return".
pub const LOOP_LOOKBACK: usize = 20;
pub const LOOP_MIN_RETURNS: usize = 3;
pub const DIVERSITY_WINDOW: usize = 8;
pub const DIVERSITY_MIN_DISTINCT: usize = 4;
pub const VISIT_SOFT_AFTER: u32 = 3;
pub const VISIT_HARD_AFTER: u32 = 5;
pub const SPAM_SOFT_FROM: u32 = 3;
pub const SPAM_HARD_AFTER: u32 = 5;
pub const STAY_FROM: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub new_tile: f64,
    pub distance_coeff: f64,
    pub first_visit: f64,
    pub map_transition: f64,
    pub first_map_entry: f64,
    pub exploration_bonus: f64,
    pub exploration_bonus_quantum: u32,
    pub grass: f64,
    pub battle_start: f64,
    pub victory: f64,
    /// Kept for completeness; catching is not simulated.
    pub catch: f64,
    pub visit_soft_penalty: f64,
    pub visit_hard_penalty: f64,
    pub pattern_penalty: f64,
    pub pattern_break_bonus: f64,
    pub loop_radius_penalty: f64,
    pub stay_penalty: f64,
    pub spam_soft_penalty: f64,
    pub spam_hard_penalty: f64,
    pub diversity_bonus: f64,
    pub damage_dealt_coeff: f64,
    pub damage_taken_coeff: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            new_tile: 1.0,
            distance_coeff: 0.2,
            first_visit: 0.5,
            map_transition: 10.0,
            first_map_entry: 5.0,
            exploration_bonus: 2.0,
            exploration_bonus_quantum: 25,
            grass: 20.0,
            battle_start: 10.0,
            victory: 50.0,
            catch: 50.0,
            visit_soft_penalty: -0.05,
            visit_hard_penalty: -0.2,
            pattern_penalty: -0.1,
            pattern_break_bonus: 0.05,
            loop_radius_penalty: -0.2,
            stay_penalty: -0.02,
            spam_soft_penalty: -0.1,
            spam_hard_penalty: -0.2,
            diversity_bonus: 0.02,
            damage_dealt_coeff: 0.2,
            damage_taken_coeff: -0.1,
        }
    }
}

impl RewardConfig {
    pub fn penalties(&self) -> [(&'static str, f64); 7] {
        [
            ("visit_soft_penalty", self.visit_soft_penalty),
            ("visit_hard_penalty", self.visit_hard_penalty),
            ("pattern_penalty", self.pattern_penalty),
            ("loop_radius_penalty", self.loop_radius_penalty),
            ("stay_penalty", self.stay_penalty),
            ("spam_soft_penalty", self.spam_soft_penalty),
            ("spam_hard_penalty", self.spam_hard_penalty),
        ]
    }

    pub fn micro(&self) -> [f64; 3] {
        [self.new_tile, self.distance_coeff, self.first_visit]
    }

    pub fn meso(&self) -> [f64; 3] {
        [self.map_transition, self.first_map_entry, self.exploration_bonus]
    }

    pub fn macro_rewards(&self) -> [f64; 3] {
        [self.grass, self.battle_start, self.victory]
    }

    /// Checks the penalty band and the macro >= meso >= micro ordering.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in self.penalties() {
            if !(v <= -0.02 && v >= -0.2) {
                return Err(format!("{name} = {v} is outside -0.2..=-0.02"));
            }
        }
        if self.exploration_bonus_quantum == 0 {
            return Err("exploration_bonus_quantum must be positive".into());
        }
        let max = |xs: [f64; 3]| xs.into_iter().fold(f64::NEG_INFINITY, f64::max);
        let min = |xs: [f64; 3]| xs.into_iter().fold(f64::INFINITY, f64::min);
        if min(self.macro_rewards()) < max(self.meso()) || min(self.meso()) < max(self.micro()) {
            return Err("reward tiers must satisfy macro >= meso >= micro".into());
        }
        Ok(())
    }
}

/// Which detector families pay out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorFlags {
    pub anti_loop: bool,
    pub anti_spam: bool,
}

impl Default for DetectorFlags {
    fn default() -> Self {
        Self {
            anti_loop: true,
            anti_spam: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    NewTile,
    Distance,
    FirstVisit,
    MapTransition,
    FirstMapEntry,
    ExplorationBonus,
    Grass,
    BattleStart,
    Victory,
    DamageDealt,
    DamageTaken,
    VisitSoft,
    VisitHard,
    Pattern,
    PatternBreak,
    LoopRadius,
    Stay,
    SpamSoft,
    SpamHard,
    Diversity,
}

pub const COMPONENT_COUNT: usize = 20;

impl Component {
    pub const ALL: [Component; COMPONENT_COUNT] = [
        Component::NewTile,
        Component::Distance,
        Component::FirstVisit,
        Component::MapTransition,
        Component::FirstMapEntry,
        Component::ExplorationBonus,
        Component::Grass,
        Component::BattleStart,
        Component::Victory,
        Component::DamageDealt,
        Component::DamageTaken,
        Component::VisitSoft,
        Component::VisitHard,
        Component::Pattern,
        Component::PatternBreak,
        Component::LoopRadius,
        Component::Stay,
        Component::SpamSoft,
        Component::SpamHard,
        Component::Diversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::NewTile => "new_tile",
            Component::Distance => "distance",
            Component::FirstVisit => "first_visit",
            Component::MapTransition => "map_transition",
            Component::FirstMapEntry => "first_map_entry",
            Component::ExplorationBonus => "exploration_bonus",
            Component::Grass => "grass",
            Component::BattleStart => "battle_start",
            Component::Victory => "victory",
            Component::DamageDealt => "damage_dealt",
            Component::DamageTaken => "damage_taken",
            Component::VisitSoft => "visit_soft",
            Component::VisitHard => "visit_hard",
            Component::Pattern => "pattern",
            Component::PatternBreak => "pattern_break",
            Component::LoopRadius => "loop_radius",
            Component::Stay => "stay",
            Component::SpamSoft => "spam_soft",
            Component::SpamHard => "spam_hard",
            Component::Diversity => "diversity",
        }
    }

    pub fn from_name(s: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| c.name() == s)
    }

    pub fn is_penalty_detector(self) -> bool {
        matches!(
            self,
            Component::VisitSoft
                | Component::VisitHard
                | Component::Pattern
                | Component::PatternBreak
                | Component::LoopRadius
                | Component::Stay
                | Component::SpamSoft
                | Component::SpamHard
                | Component::Diversity
        )
    }

    pub fn is_anti_loop(self) -> bool {
        matches!(
            self,
            Component::VisitSoft | Component::VisitHard | Component::Pattern | Component::PatternBreak | Component::LoopRadius
        )
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The reward of one step, by component. Components that did not fire are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardBreakdown {
    values: [Option<f64>; COMPONENT_COUNT],
}

impl RewardBreakdown {
    pub fn add(&mut self, c: Component, v: f64) {
        let slot = &mut self.values[c as usize];
        *slot = Some(slot.unwrap_or(0.0) + v);
    }

    pub fn get(&self, c: Component) -> Option<f64> {
        self.values[c as usize]
    }

    pub fn fired(&self) -> impl Iterator<Item = (Component, f64)> + '_ {
        Component::ALL
            .into_iter()
            .filter_map(|c| self.values[c as usize].map(|v| (c, v)))
    }

    /// Sum of every fired component, accumulated in component order.
    pub fn total(&self) -> f64 {
        self.fired().fold(0.0, |acc, (_, v)| acc + v)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.fired().map(|(c, v)| (c.name().to_string(), v)).collect()
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self, String> {
        let mut b = RewardBreakdown::default();
        for (k, &v) in map {
            let c = Component::from_name(k).ok_or_else(|| format!("unknown reward component {k:?}"))?;
            b.values[c as usize] = Some(v);
        }
        Ok(b)
    }
}

impl Serialize for RewardBreakdown {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RewardBreakdown {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(d)?;
        RewardBreakdown::from_map(&map).map_err(serde::de::Error::custom)
    }
}

pub type Location = (MapId, Pos);

/// Per-episode memory of the shaping system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapingState {
    pub position_visits: HashMap<Location, u32>,
    pub action_window: VecDeque<Action>,
    pub position_history: VecDeque<Location>,
    pub streak_a: u32,
    pub streak_b: u32,
    pub streak_stay: u32,
    pub pattern_hits: u32,
    pub loop_hits: u32,
    /// The previous step was a pattern detection.
    pub in_pattern: bool,
    pub maps_entered: BTreeSet<MapId>,
    pub unique_tiles_per_map: BTreeMap<MapId, u32>,
    pub last_bonus_quantum: BTreeMap<MapId, u32>,
    pub grass_rewarded: bool,
}

impl ShapingState {
    /// Fresh memory for an episode starting at `initial`; the start tile counts as
    /// visited and its map as entered.
    pub fn new(initial: &WorldState) -> Self {
        let start = initial.location();
        let mut s = Self {
            position_visits: HashMap::from([(start, 1)]),
            action_window: VecDeque::with_capacity(ACTION_WINDOW),
            position_history: VecDeque::with_capacity(POSITION_HISTORY),
            streak_a: 0,
            streak_b: 0,
            streak_stay: 0,
            pattern_hits: 0,
            loop_hits: 0,
            in_pattern: false,
            maps_entered: BTreeSet::from([start.0]),
            unique_tiles_per_map: BTreeMap::from([(start.0, 1)]),
            last_bonus_quantum: BTreeMap::new(),
            grass_rewarded: false,
        };
        s.position_history.push_back(start);
        s
    }

    pub fn visits(&self, loc: Location) -> u32 {
        self.position_visits.get(&loc).copied().unwrap_or(0)
    }

    pub fn max_visits(&self) -> u32 {
        self.position_visits.values().copied().max().unwrap_or(0)
    }
}

/// Visit penalty for a tile whose visit count (after this arrival) is `count`.
pub fn visit_penalty(cfg: &RewardConfig, count: u32) -> Option<(Component, f64)> {
    if count > VISIT_HARD_AFTER {
        Some((Component::VisitHard, cfg.visit_hard_penalty))
    } else if count > VISIT_SOFT_AFTER {
        Some((Component::VisitSoft, cfg.visit_soft_penalty))
    } else {
        None
    }
}

/// Smallest period `p` in 1..=4 such that the last `4p` actions repeat with period `p`.
///
/// Runs of a single repeated action are left to the spam streaks, except that a
/// repeated movement action is reported as period 1.
pub fn detect_action_pattern(window: &[Action]) -> Option<u8> {
    for p in 1..=4usize {
        let n = 4 * p;
        if window.len() < n {
            break;
        }
        let tail = &window[window.len() - n..];
        if !(p..n).all(|i| tail[i] == tail[i - p]) {
            continue;
        }
        let block = &tail[..p];
        let single = block.iter().all(|&a| a == block[0]);
        if single {
            if p == 1 && block[0].is_movement() {
                return Some(1);
            }
            continue;
        }
        return Some(p as u8);
    }
    None
}

/// Pattern penalty and break-out bonus; updates the hit counter.
pub fn pattern_reward(cfg: &RewardConfig, ss: &mut ShapingState, detection: Option<u8>) -> Option<(Component, f64)> {
    if detection.is_some() {
        ss.pattern_hits += 1;
        ss.in_pattern = true;
        Some((Component::Pattern, cfg.pattern_penalty))
    } else if ss.in_pattern {
        ss.in_pattern = false;
        Some((Component::PatternBreak, cfg.pattern_break_bonus))
    } else {
        None
    }
}

fn chebyshev(a: Pos, b: Pos) -> u8 {
    a.x.abs_diff(b.x).max(a.y.abs_diff(b.y))
}

/// True when the agent moved and at least three of the oldest 20 history entries lie
/// on the same map within Chebyshev radius 1 of `current`.
pub fn detect_position_loop<'a>(
    history: impl IntoIterator<Item = &'a Location>,
    current: Location,
    moved: bool,
) -> bool {
    moved
        && history
            .into_iter()
            .take(LOOP_LOOKBACK)
            .filter(|(m, p)| *m == current.0 && chebyshev(*p, current.1) <= 1)
            .count()
            >= LOOP_MIN_RETURNS
}

/// Updates the A/B/stay streaks and returns the spam terms for this step. The action
/// window must already contain `action`.
pub fn spam_penalty(
    cfg: &RewardConfig,
    ss: &mut ShapingState,
    action: Action,
    stayed: bool,
) -> Vec<(Component, f64)> {
    ss.streak_a = if action == Action::A { ss.streak_a + 1 } else { 0 };
    ss.streak_b = if action == Action::B { ss.streak_b + 1 } else { 0 };
    ss.streak_stay = if stayed { ss.streak_stay + 1 } else { 0 };

    let mut out = Vec::new();
    let streak = ss.streak_a.max(ss.streak_b);
    if streak >= SPAM_SOFT_FROM {
        out.push((Component::SpamSoft, cfg.spam_soft_penalty));
    }
    if streak > SPAM_HARD_AFTER {
        out.push((Component::SpamHard, cfg.spam_hard_penalty));
    }
    let recent: BTreeSet<Action> = ss
        .action_window
        .iter()
        .rev()
        .take(DIVERSITY_WINDOW)
        .copied()
        .collect();
    if recent.len() >= DIVERSITY_MIN_DISTINCT {
        out.push((Component::Diversity, cfg.diversity_bonus));
    }
    if ss.streak_stay >= STAY_FROM {
        out.push((Component::Stay, cfg.stay_penalty));
    }
    out
}

/// Computes step rewards and owns nothing but configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardEngine {
    pub config: RewardConfig,
    pub flags: DetectorFlags,
}

impl RewardEngine {
    pub fn new(config: RewardConfig, flags: DetectorFlags) -> Self {
        Self { config, flags }
    }

    /// Reward for the transition `prev --action--> next`. Updates `ss` exactly once.
    pub fn compute(
        &self,
        prev: &WorldState,
        next: &WorldState,
        action: Action,
        events: &EventSet,
        ss: &mut ShapingState,
    ) -> RewardBreakdown {
        let cfg = &self.config;
        let mut out = RewardBreakdown::default();
        let loc = next.location();
        let same_map_move = events.new_tile;

        // Micro.
        if events.new_tile {
            out.add(Component::NewTile, cfg.new_tile);
        }
        if events.distance_moved > 0.0 && events.entered_map.is_none() {
            out.add(Component::Distance, cfg.distance_coeff * events.distance_moved);
        }

        // Visit bookkeeping happens on arrival only; standing still is not a visit.
        let mut arrival_count = None;
        if events.moved {
            let before = ss.visits(loc);
            ss.position_visits.insert(loc, before + 1);
            arrival_count = Some(before + 1);
            if before == 0 {
                if same_map_move {
                    out.add(Component::FirstVisit, cfg.first_visit);
                }
                let unique = ss.unique_tiles_per_map.entry(loc.0).or_insert(0);
                *unique += 1;
                let quantum = *unique / cfg.exploration_bonus_quantum;
                let last = ss.last_bonus_quantum.entry(loc.0).or_insert(0);
                if quantum > *last {
                    *last = quantum;
                    out.add(Component::ExplorationBonus, cfg.exploration_bonus);
                }
            }
        }

        // Meso.
        if let Some(map) = events.entered_map {
            out.add(Component::MapTransition, cfg.map_transition);
            if ss.maps_entered.insert(map) {
                out.add(Component::FirstMapEntry, cfg.first_map_entry);
            }
        }

        // Macro.
        if events.entered_grass && !ss.grass_rewarded {
            ss.grass_rewarded = true;
            out.add(Component::Grass, cfg.grass);
        }
        if events.battle_started {
            out.add(Component::BattleStart, cfg.battle_start);
        }
        if events.battle_won {
            out.add(Component::Victory, cfg.victory);
        }

        // Battle damage shaping.
        if let (Some(before), Some(after)) = (&prev.battle, &next.battle) {
            let dealt = before.enemy_hp - after.enemy_hp;
            let taken = before.player_hp - after.player_hp;
            if dealt > 0 {
                out.add(Component::DamageDealt, cfg.damage_dealt_coeff * f64::from(dealt));
            }
            if taken > 0 {
                out.add(Component::DamageTaken, cfg.damage_taken_coeff * f64::from(taken));
            }
        }

        // Anti-loop layers.
        let mut anti_loop = Vec::new();
        if let Some(count) = arrival_count {
            anti_loop.extend(visit_penalty(cfg, count));
        }
        if ss.action_window.len() == ACTION_WINDOW {
            ss.action_window.pop_front();
        }
        ss.action_window.push_back(action);
        let detection = detect_action_pattern(ss.action_window.make_contiguous());
        anti_loop.extend(pattern_reward(cfg, ss, detection));
        if detect_position_loop(&ss.position_history, loc, events.moved) {
            ss.loop_hits += 1;
            anti_loop.push((Component::LoopRadius, cfg.loop_radius_penalty));
        }
        if ss.position_history.len() == POSITION_HISTORY {
            ss.position_history.pop_front();
        }
        ss.position_history.push_back(loc);

        // Anti-spam.
        let spam = spam_penalty(cfg, ss, action, prev.location() == loc);

        if self.flags.anti_loop {
            for (c, v) in anti_loop {
                out.add(c, v);
            }
        }
        if self.flags.anti_spam {
            for (c, v) in spam {
                out.add(c, v);
            }
        }
        out
    }
}
