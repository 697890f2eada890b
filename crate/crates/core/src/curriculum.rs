//! The three training sequences: where they start, when they end.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::battle::BattleState;
use crate::rng::SplitMix64;
use crate::tilemap::{EventId, MapId, Pos};
use crate::world::{Direction, EventSet, World, WorldState};

const CANONICAL_SEQUENCES: &str = include_str!("../data/sequences.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SequenceId {
    HouseExit = 1,
    ExploreToGrass = 2,
    RivalBattle = 3,
}

impl SequenceId {
    pub const ALL: [SequenceId; 3] = [SequenceId::HouseExit, SequenceId::ExploreToGrass, SequenceId::RivalBattle];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for SequenceId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(SequenceId::HouseExit),
            2 => Ok(SequenceId::ExploreToGrass),
            3 => Ok(SequenceId::RivalBattle),
            other => Err(format!("unknown sequence {other}")),
        }
    }
}

impl From<SequenceId> for u8 {
    fn from(id: SequenceId) -> u8 {
        id.number()
    }
}

impl fmt::Display for SequenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessPredicate {
    /// The player stands on the given map.
    ReachMap { map: MapId },
    /// Grass was entered or the given scripted event fired.
    GrassOrEvent { event: EventId },
    WinBattle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub id: SequenceId,
    pub name: String,
    pub map: MapId,
    pub x: u8,
    pub y: u8,
    pub facing: Direction,
    pub party_count: u8,
    pub battle: bool,
    pub step_limit: u64,
    pub success: SuccessPredicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeOutcome {
    Running,
    Success,
    Timeout,
    Loss,
}

impl EpisodeOutcome {
    pub fn is_terminal(self) -> bool {
        self != EpisodeOutcome::Running
    }

    pub fn name(self) -> &'static str {
        match self {
            EpisodeOutcome::Running => "running",
            EpisodeOutcome::Success => "success",
            EpisodeOutcome::Timeout => "timeout",
            EpisodeOutcome::Loss => "loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Running, Self::Success, Self::Timeout, Self::Loss]
            .into_iter()
            .find(|o| o.name() == s)
    }
}

impl SequenceSpec {
    pub fn start(&self) -> (MapId, Pos) {
        (self.map, Pos::new(self.x, self.y))
    }

    /// Checks that the anchor is a walkable tile of an existing map.
    pub fn validate(&self, world: &World) -> Result<(), String> {
        if self.step_limit == 0 {
            return Err(format!("sequence {}: step_limit must be at least 1", self.id));
        }
        let map = world
            .map(self.map)
            .ok_or_else(|| format!("sequence {}: unknown map {}", self.id, self.map))?;
        match map.tile_at(i32::from(self.x), i32::from(self.y)) {
            Some(t) if t.is_walkable() => Ok(()),
            _ => Err(format!("sequence {}: start ({}, {}) is not walkable", self.id, self.x, self.y)),
        }
    }

    pub fn initial_state(&self, seed: u64) -> WorldState {
        let battle = self.battle.then(BattleState::rival);
        WorldState {
            map_id: self.map,
            pos: Pos::new(self.x, self.y),
            facing: self.facing,
            party_count: self.party_count,
            in_battle: battle.is_some(),
            battle,
            rng: SplitMix64::seeded(seed, u64::from(self.id.number())),
            step_count: 0,
            flags: BTreeSet::new(),
        }
    }

    /// Success is checked before the step limit, so a run that succeeds on its last
    /// allowed step counts as a success.
    pub fn check_termination(&self, state: &WorldState, events: &EventSet, step_count: u64) -> EpisodeOutcome {
        let success = match self.success {
            SuccessPredicate::ReachMap { map } => state.map_id == map,
            SuccessPredicate::GrassOrEvent { event } => {
                events.entered_grass || events.scripted_event == Some(event)
            }
            SuccessPredicate::WinBattle => events.battle_won,
        };
        if success {
            EpisodeOutcome::Success
        } else if events.battle_lost && self.success == SuccessPredicate::WinBattle {
            EpisodeOutcome::Loss
        } else if step_count >= self.step_limit {
            EpisodeOutcome::Timeout
        } else {
            EpisodeOutcome::Running
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Curriculum {
    #[serde(rename = "sequence")]
    sequences: Vec<SequenceSpec>,
}

impl Curriculum {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let c: Curriculum = toml::from_str(text).map_err(|e| e.to_string())?;
        for id in SequenceId::ALL {
            let n = c.sequences.iter().filter(|s| s.id == id).count();
            if n != 1 {
                return Err(format!("sequence {id} defined {n} times"));
            }
        }
        Ok(c)
    }

    pub fn canonical() -> &'static Curriculum {
        static CURRICULUM: OnceLock<Curriculum> = OnceLock::new();
        CURRICULUM.get_or_init(|| {
            let c = Curriculum::from_toml(CANONICAL_SEQUENCES).expect("shipped sequence data is valid");
            for s in &c.sequences {
                s.validate(World::canonical()).expect("shipped sequence anchors are valid");
            }
            c
        })
    }

    pub fn spec(&self, id: SequenceId) -> &SequenceSpec {
        self.sequences
            .iter()
            .find(|s| s.id == id)
            .expect("every sequence id is present")
    }
}
