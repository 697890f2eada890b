//! Turn-based battle state machine.
//!
//! Two moves are available: Strike (damage) and Growl (no damage, weakens every
//! later enemy hit by one point, floored at 1). Confirming a move resolves the
//! player's attack, then the enemy's counterattack if it is still standing, then
//! queues two text boxes that must be dismissed with A.

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::world::Action;

pub const PLAYER_HP_MAX: i32 = 20;
pub const ENEMY_HP_MAX: i32 = 19;
pub const STRIKE_BASE_DAMAGE: i32 = 4;
pub const ENEMY_BASE_DAMAGE: i32 = 3;
pub const MIN_ENEMY_DAMAGE: i32 = 1;
pub const TEXT_BOXES_PER_TURN: u8 = 2;

pub const MOVE_STRIKE: u8 = 0;
pub const MOVE_GROWL: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    ChooseMove,
    ResolveText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Ongoing,
    Won,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BattleState {
    pub phase: Phase,
    pub cursor: u8,
    pub player_hp: i32,
    pub player_hp_max: i32,
    pub enemy_hp: i32,
    pub enemy_hp_max: i32,
    pub pending_text: u8,
    pub outcome: Outcome,
    /// Number of Growls landed; each lowers enemy damage by one.
    pub growls: u8,
}

impl BattleState {
    pub fn fresh() -> Self {
        Self {
            phase: Phase::ChooseMove,
            cursor: MOVE_STRIKE,
            player_hp: PLAYER_HP_MAX,
            player_hp_max: PLAYER_HP_MAX,
            enemy_hp: ENEMY_HP_MAX,
            enemy_hp_max: ENEMY_HP_MAX,
            pending_text: 0,
            outcome: Outcome::Ongoing,
            growls: 0,
        }
    }

    /// The scripted rival fight.
    pub fn rival() -> Self {
        Self::fresh()
    }

    /// A tall-grass encounter; same numbers as the rival fight.
    pub fn wild() -> Self {
        Self::fresh()
    }
}

pub fn strike_damage(delta: i32) -> i32 {
    STRIKE_BASE_DAMAGE + delta
}

pub fn enemy_damage(delta: i32, growls: u8) -> i32 {
    (ENEMY_BASE_DAMAGE + delta - i32::from(growls)).max(MIN_ENEMY_DAMAGE)
}

/// Resolves one confirmed move in place. Player first, then the enemy if alive.
fn resolve_turn(b: &mut BattleState, rng: &mut SplitMix64) {
    match b.cursor {
        MOVE_STRIKE => {
            let dmg = strike_damage(rng.next_delta());
            b.enemy_hp = (b.enemy_hp - dmg).max(0);
        }
        _ => b.growls = b.growls.saturating_add(1),
    }
    if b.enemy_hp > 0 {
        let dmg = enemy_damage(rng.next_delta(), b.growls);
        b.player_hp = (b.player_hp - dmg).max(0);
    }
    // Lost wins the tie if both ever reach zero in one turn.
    b.outcome = if b.player_hp == 0 {
        Outcome::Lost
    } else if b.enemy_hp == 0 {
        Outcome::Won
    } else {
        Outcome::Ongoing
    };
    b.phase = Phase::ResolveText;
    b.pending_text = TEXT_BOXES_PER_TURN;
}

/// Applies one action. Returns the next battle state and, when the last text box of
/// a decided battle is dismissed, the final outcome.
pub fn advance(b: &BattleState, action: Action, rng: &mut SplitMix64) -> (BattleState, Option<Outcome>) {
    let mut next = b.clone();
    match next.phase {
        Phase::ChooseMove => match action {
            Action::Up => next.cursor = MOVE_STRIKE,
            Action::Down => next.cursor = MOVE_GROWL,
            Action::A => resolve_turn(&mut next, rng),
            _ => {}
        },
        Phase::ResolveText => {
            if action == Action::A {
                next.pending_text = next.pending_text.saturating_sub(1);
                if next.pending_text == 0 {
                    if next.outcome == Outcome::Ongoing {
                        next.phase = Phase::ChooseMove;
                    } else {
                        return (next.clone(), Some(next.outcome));
                    }
                }
            }
        }
    }
    (next, None)
}
