//! Scripted reference policies.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::battle::{Phase, MOVE_STRIKE};
use crate::curriculum::{SequenceSpec, SuccessPredicate};
use crate::shaping::Location;
use crate::tilemap::{Pos, TileKind};
use crate::world::{Action, Direction, World, WorldState};

pub trait Policy {
    fn act(&mut self, step: u64, state: &WorldState) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    SpamA,
    SpamNoop,
    Pacer,
    DiverseRandom,
    Solver,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::SpamA,
        PolicyKind::SpamNoop,
        PolicyKind::Pacer,
        PolicyKind::DiverseRandom,
        PolicyKind::Solver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::SpamA => "spam_a",
            PolicyKind::SpamNoop => "spam_noop",
            PolicyKind::Pacer => "pacer",
            PolicyKind::DiverseRandom => "diverse_random",
            PolicyKind::Solver => "solver",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Builds a policy for one episode of `spec`.
pub fn make_policy(kind: PolicyKind, seed: u64, spec: &SequenceSpec, world: &'static World) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
        PolicyKind::SpamA => Box::new(Constant(Action::A)),
        PolicyKind::SpamNoop => Box::new(Constant(Action::NoOp)),
        PolicyKind::Pacer => Box::new(Pacer::new(world)),
        PolicyKind::DiverseRandom => Box::new(DiverseRandom::new(seed)),
        PolicyKind::Solver => Box::new(Solver::new(world, spec.success)),
    }
}

pub struct Constant(pub Action);

impl Policy for Constant {
    fn act(&mut self, _: u64, _: &WorldState) -> Action {
        self.0
    }
}

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _: u64, _: &WorldState) -> Action {
        Action::ALL[self.rng.gen_range(0..Action::ALL.len())]
    }
}

/// Plays shuffled permutations of all seven actions back to back.
pub struct DiverseRandom {
    rng: ChaCha8Rng,
    queue: Vec<Action>,
}

impl DiverseRandom {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), queue: Vec::new() }
    }
}

impl Policy for DiverseRandom {
    fn act(&mut self, _: u64, _: &WorldState) -> Action {
        if self.queue.is_empty() {
            self.queue = Action::ALL.to_vec();
            self.queue.shuffle(&mut self.rng);
        }
        self.queue.pop().expect("refilled above")
    }
}

fn step_target(world: &World, loc: Location, dir: Direction) -> Option<(Location, bool)> {
    let (dx, dy) = dir.delta();
    let (x, y) = (i32::from(loc.1.x) + dx, i32::from(loc.1.y) + dy);
    match world.map(loc.0)?.tile_at(x, y)? {
        TileKind::Warp(t) => Some(((t.map, t.pos), true)),
        t if t.is_walkable() => Some(((loc.0, Pos::new(x as u8, y as u8)), false)),
        _ => None,
    }
}

/// Steps back and forth between the start tile and its first open, non-warp neighbour.
pub struct Pacer {
    world: &'static World,
    dir: Option<Direction>,
}

impl Pacer {
    pub fn new(world: &'static World) -> Self {
        Self { world, dir: None }
    }
}

impl Policy for Pacer {
    fn act(&mut self, step: u64, state: &WorldState) -> Action {
        let world = self.world;
        let dir = *self.dir.get_or_insert_with(|| {
            Direction::ALL
                .into_iter()
                .find(|&d| matches!(step_target(world, state.location(), d), Some((_, false))))
                .unwrap_or(Direction::Up)
        });
        let d = if step % 2 == 0 { dir } else { dir.opposite() };
        movement(d)
    }
}

fn movement(d: Direction) -> Action {
    match d {
        Direction::Up => Action::Up,
        Direction::Down => Action::Down,
        Direction::Left => Action::Left,
        Direction::Right => Action::Right,
    }
}

/// Battle play that always picks Strike and clears text with A.
pub fn strike_action(state: &WorldState) -> Action {
    match &state.battle {
        Some(b) if b.phase == Phase::ChooseMove && b.cursor != MOVE_STRIKE => Action::Up,
        _ => Action::A,
    }
}

/// Shortest walk to the sequence goal; Strike in battle.
pub struct Solver {
    world: &'static World,
    goal: SuccessPredicate,
}

impl Solver {
    pub fn new(world: &'static World, goal: SuccessPredicate) -> Self {
        Self { world, goal }
    }

    fn is_goal(&self, loc: Location) -> bool {
        match self.goal {
            SuccessPredicate::ReachMap { map } => loc.0 == map,
            SuccessPredicate::GrassOrEvent { .. } => self
                .world
                .map(loc.0)
                .and_then(|m| m.tile_at(i32::from(loc.1.x), i32::from(loc.1.y)))
                == Some(TileKind::Grass),
            SuccessPredicate::WinBattle => false,
        }
    }

    /// First move of a shortest path from `start` to a goal location, if any.
    pub fn first_move(&self, start: Location) -> Option<Direction> {
        let mut parent: HashMap<Location, (Location, Direction)> = HashMap::new();
        let mut queue = VecDeque::from([start]);
        while let Some(loc) = queue.pop_front() {
            if loc != start && self.is_goal(loc) {
                let mut cur = loc;
                loop {
                    let (prev, dir) = parent[&cur];
                    if prev == start {
                        return Some(dir);
                    }
                    cur = prev;
                }
            }
            for d in Direction::ALL {
                if let Some((next, _)) = step_target(self.world, loc, d) {
                    if next != start && !parent.contains_key(&next) {
                        parent.insert(next, (loc, d));
                        queue.push_back(next);
                    }
                }
            }
        }
        None
    }
}

impl Policy for Solver {
    fn act(&mut self, _: u64, state: &WorldState) -> Action {
        if state.in_battle {
            return strike_action(state);
        }
        self.first_move(state.location()).map_or(Action::NoOp, movement)
    }
}
