//! Overworld simulation: maps, movement, warps, grass and scripted events.
//!
//! Every function here is a pure function of its inputs. A [`WorldState`] is a plain
//! value; stepping returns a new one together with the [`EventSet`] describing what
//! happened, which is what the reward engine consumes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battle::{self, BattleState};
use crate::curriculum::{self, SequenceId};
use crate::rng::SplitMix64;
use crate::tilemap::{load_tilemap, EventId, MapError, MapId, Pos, TileKind, TileMap, ValidationError};

pub const PALLET_TOWN: MapId = 0;
pub const ROUTE_1: MapId = 12;
pub const HOUSE_GF: MapId = 37;
pub const BEDROOM: MapId = 38;
pub const OAKS_LAB: MapId = 40;

/// Scripted event fired by talking to the professor.
pub const OAK_EVENT: EventId = 1;

const CANONICAL_MAPS: [&str; 5] = [
    include_str!("../data/bedroom.map"),
    include_str!("../data/house_gf.map"),
    include_str!("../data/pallet_town.map"),
    include_str!("../data/route_1.map"),
    include_str!("../data/oaks_lab.map"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Direction> {
        Direction::ALL.get(usize::from(i)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// The seven agent actions. The discriminant is the wire encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    A = 4,
    B = 5,
    NoOp = 6,
}

pub const ACTION_COUNT: usize = 7;

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::A,
        Action::B,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::Up => Some(Direction::Up),
            Action::Down => Some(Direction::Down),
            Action::Left => Some(Direction::Left),
            Action::Right => Some(Direction::Right),
            _ => None,
        }
    }

    pub fn is_movement(self) -> bool {
        self.direction().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::A => "a",
            Action::B => "b",
            Action::NoOp => "noop",
        }
    }

    /// Accepts either the lowercase name or the integer index.
    pub fn parse(s: &str) -> Option<Action> {
        if let Ok(i) = s.parse::<usize>() {
            return Action::from_index(i);
        }
        let lower = s.to_ascii_lowercase();
        Action::ALL.into_iter().find(|a| a.name() == lower)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub map_id: MapId,
    pub pos: Pos,
    pub facing: Direction,
    pub party_count: u8,
    pub in_battle: bool,
    pub battle: Option<BattleState>,
    pub rng: SplitMix64,
    pub step_count: u64,
    pub flags: BTreeSet<EventId>,
}

impl WorldState {
    pub fn location(&self) -> (MapId, Pos) {
        (self.map_id, self.pos)
    }
}

/// What a single transition did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub moved: bool,
    /// Position changed within the same map.
    pub new_tile: bool,
    pub entered_map: Option<MapId>,
    pub first_map_entry: bool,
    pub entered_grass: bool,
    pub battle_started: bool,
    pub battle_won: bool,
    pub battle_lost: bool,
    pub scripted_event: Option<EventId>,
    /// Euclidean tiles moved; 0 across map transitions.
    pub distance_moved: f64,
}

impl EventSet {
    /// Short comma-separated list of the flags that fired.
    pub fn summary(&self) -> String {
        let mut out = Vec::new();
        if self.moved {
            out.push("moved".to_string());
        }
        if self.new_tile {
            out.push("new_tile".to_string());
        }
        if let Some(m) = self.entered_map {
            out.push(format!("entered_map:{m}"));
        }
        if self.first_map_entry {
            out.push("first_map_entry".to_string());
        }
        if self.entered_grass {
            out.push("entered_grass".to_string());
        }
        if self.battle_started {
            out.push("battle_started".to_string());
        }
        if self.battle_won {
            out.push("battle_won".to_string());
        }
        if self.battle_lost {
            out.push("battle_lost".to_string());
        }
        if let Some(e) = self.scripted_event {
            out.push(format!("scripted_event:{e}"));
        }
        out.join(",")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("unknown sequence {0}; expected 1, 2 or 3")]
    UnknownSequence(u8),
    #[error("battle_step called outside of a battle")]
    NotInBattle,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// The static set of maps an episode plays on.
#[derive(Debug, Clone)]
pub struct World {
    maps: BTreeMap<MapId, TileMap>,
}

impl World {
    /// Builds a world, checking every warp target against the other maps.
    pub fn new(maps: impl IntoIterator<Item = TileMap>) -> Result<Self, MapError> {
        let mut by_id = BTreeMap::new();
        for map in maps {
            let id = map.id;
            if by_id.insert(id, map).is_some() {
                return Err(ValidationError::DuplicateMap(id).into());
            }
        }
        for map in by_id.values() {
            for (at, target) in map.warps() {
                let dest = by_id.get(&target.map).ok_or(ValidationError::MissingTargetMap {
                    map: map.id,
                    x: at.x,
                    y: at.y,
                    target: target.map,
                })?;
                let ok = dest
                    .tile_at(i32::from(target.pos.x), i32::from(target.pos.y))
                    .is_some_and(|t| t != TileKind::Wall);
                if !ok {
                    return Err(ValidationError::BadWarpTarget {
                        map: map.id,
                        x: at.x,
                        y: at.y,
                    }
                    .into());
                }
            }
        }
        Ok(Self { maps: by_id })
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self, MapError> {
        let maps = texts.into_iter().map(load_tilemap).collect::<Result<Vec<_>, _>>()?;
        Self::new(maps)
    }

    /// The shipped maps, parsed once.
    pub fn canonical() -> &'static World {
        static WORLD: OnceLock<World> = OnceLock::new();
        WORLD.get_or_init(|| {
            World::from_texts(CANONICAL_MAPS).expect("shipped map data is valid")
        })
    }

    pub fn map(&self, id: MapId) -> Option<&TileMap> {
        self.maps.get(&id)
    }

    pub fn maps(&self) -> impl Iterator<Item = &TileMap> {
        self.maps.values()
    }

    fn tile(&self, map: MapId, x: i32, y: i32) -> Option<TileKind> {
        self.maps.get(&map)?.tile_at(x, y)
    }

    /// Advances the world by one agent action. Movement is an atomic turn-and-step.
    pub fn step(&self, state: &WorldState, action: Action) -> (WorldState, EventSet) {
        if state.in_battle {
            return self
                .battle_step(state, action)
                .expect("in_battle state always carries a battle");
        }
        let mut next = state.clone();
        next.step_count += 1;
        let mut events = EventSet::default();

        match action {
            Action::Up | Action::Down | Action::Left | Action::Right => {
                let dir = action.direction().expect("movement action");
                next.facing = dir;
                let (dx, dy) = dir.delta();
                let (tx, ty) = (i32::from(state.pos.x) + dx, i32::from(state.pos.y) + dy);
                let Some(tile) = self.tile(state.map_id, tx, ty) else {
                    return (next, events);
                };
                if !tile.is_walkable() {
                    return (next, events);
                }
                events.moved = true;
                match tile {
                    TileKind::Warp(target) => {
                        next.map_id = target.map;
                        next.pos = target.pos;
                        events.entered_map = Some(target.map);
                    }
                    _ => {
                        next.pos = Pos::new(tx as u8, ty as u8);
                        events.new_tile = true;
                        events.distance_moved = f64::from(dx * dx + dy * dy).sqrt();
                    }
                }
                if self.tile(next.map_id, i32::from(next.pos.x), i32::from(next.pos.y)) == Some(TileKind::Grass) {
                    events.entered_grass = true;
                    events.battle_started = true;
                    next.in_battle = true;
                    next.battle = Some(BattleState::wild());
                }
            }
            Action::A => {
                let (dx, dy) = state.facing.delta();
                let (fx, fy) = (i32::from(state.pos.x) + dx, i32::from(state.pos.y) + dy);
                if let Some(TileKind::EventTile(id)) = self.tile(state.map_id, fx, fy) {
                    events.scripted_event = Some(id);
                    next.flags.insert(id);
                }
            }
            Action::B | Action::NoOp => {}
        }
        (next, events)
    }

    /// Advances an in-progress battle.
    pub fn battle_step(&self, state: &WorldState, action: Action) -> Result<(WorldState, EventSet), WorldError> {
        let battle = state.battle.as_ref().filter(|_| state.in_battle).ok_or(WorldError::NotInBattle)?;
        let mut next = state.clone();
        next.step_count += 1;
        let mut rng = state.rng;
        let (after, finished) = battle::advance(battle, action, &mut rng);
        next.rng = rng;
        let mut events = EventSet::default();
        match finished {
            Some(battle::Outcome::Won) => {
                next.in_battle = false;
                next.battle = None;
                events.battle_won = true;
            }
            Some(battle::Outcome::Lost) => {
                next.in_battle = false;
                next.battle = None;
                events.battle_lost = true;
            }
            _ => next.battle = Some(after),
        }
        Ok((next, events))
    }
}

/// Canonical initial state for a curriculum sequence.
pub fn reset_world(sequence: u8, seed: u64) -> Result<WorldState, WorldError> {
    let id = SequenceId::try_from(sequence).map_err(|_| WorldError::UnknownSequence(sequence))?;
    Ok(curriculum::Curriculum::canonical().spec(id).initial_state(seed))
}

pub mod memory {
    //! RAM-style view of the state at the addresses the original game uses.

    use std::collections::BTreeMap;

    use super::WorldState;

    pub const PLAYER_Y: u16 = 0xD361;
    pub const PLAYER_X: u16 = 0xD362;
    pub const MAP_ID: u16 = 0xD35E;
    pub const PARTY_COUNT: u16 = 0xD163;
    pub const BATTLE_STATE: u16 = 0xD057;
    pub const PARTY_HP: u16 = 0xD16C;

    pub const ADDRESSES: [u16; 6] = [PLAYER_Y, PLAYER_X, MAP_ID, PARTY_COUNT, BATTLE_STATE, PARTY_HP];

    pub fn memory_view(state: &WorldState) -> BTreeMap<u16, u8> {
        let hp = state
            .battle
            .as_ref()
            .map_or(0, |b| b.player_hp.clamp(0, 255) as u8);
        BTreeMap::from([
            (PLAYER_Y, state.pos.y),
            (PLAYER_X, state.pos.x),
            (MAP_ID, state.map_id),
            (PARTY_COUNT, state.party_count),
            (BATTLE_STATE, u8::from(state.in_battle)),
            (PARTY_HP, hp),
        ])
    }
}
