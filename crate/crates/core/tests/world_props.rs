use proptest::prelude::*;

use redsim::battle::{Outcome, Phase, ENEMY_HP_MAX, PLAYER_HP_MAX};
use redsim::curriculum::{Curriculum, SequenceId};
use redsim::tilemap::TileKind;
use redsim::world::{Action, World};
use redsim::{Env, EnvConfig};

fn action() -> impl Strategy<Value = Action> {
    (0usize..7).prop_map(|i| Action::ALL[i])
}

fn sequence() -> impl Strategy<Value = SequenceId> {
    prop_oneof![Just(SequenceId::HouseExit), Just(SequenceId::ExploreToGrass), Just(SequenceId::RivalBattle)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn player_always_stands_on_a_walkable_non_warp_tile(seq in sequence(), seed in any::<u64>(), actions in prop::collection::vec(action(), 1..400)) {
        let world = World::canonical();
        let mut s = Curriculum::canonical().spec(seq).initial_state(seed);
        for a in actions {
            let (next, ev) = world.step(&s, a);
            prop_assert_eq!(next.step_count, s.step_count + 1);
            let tile = world.map(next.map_id).unwrap().tile(next.pos);
            prop_assert!(tile.is_walkable() && !matches!(tile, TileKind::Warp(_)), "{:?} at {:?}", tile, next.location());
            if !s.in_battle && !a.is_movement() {
                prop_assert_eq!(next.location(), s.location());
            }
            if ev.moved && ev.entered_map.is_none() {
                prop_assert_eq!(next.pos.x.abs_diff(s.pos.x) + next.pos.y.abs_diff(s.pos.y), 1);
            }
            s = next;
        }
    }

    #[test]
    fn step_is_a_pure_function(seq in sequence(), seed in any::<u64>(), actions in prop::collection::vec(action(), 1..200)) {
        let world = World::canonical();
        let mut s = Curriculum::canonical().spec(seq).initial_state(seed);
        for a in actions {
            let before = s.clone();
            let first = world.step(&s, a);
            let second = world.step(&s, a);
            prop_assert_eq!(&s, &before);
            prop_assert_eq!(&first, &second);
            s = first.0;
        }
    }

    #[test]
    fn battle_hp_stays_in_range(seed in any::<u64>(), actions in prop::collection::vec(action(), 1..300)) {
        let world = World::canonical();
        let mut s = Curriculum::canonical().spec(SequenceId::RivalBattle).initial_state(seed);
        for a in actions {
            let (next, ev) = world.step(&s, a);
            prop_assert_eq!(next.in_battle, next.battle.is_some());
            if let Some(b) = &next.battle {
                prop_assert!((0..=PLAYER_HP_MAX).contains(&b.player_hp));
                prop_assert!((0..=ENEMY_HP_MAX).contains(&b.enemy_hp));
                // A fainted side stays on screen only until the closing text is dismissed.
                if b.player_hp == 0 || b.enemy_hp == 0 {
                    prop_assert!(b.outcome != Outcome::Ongoing && b.phase == Phase::ResolveText);
                }
            }
            prop_assert!(!(ev.battle_won && ev.battle_lost));
            s = next;
        }
    }

    #[test]
    fn same_seed_and_actions_give_identical_episodes(seq in sequence(), seed in any::<u64>(), actions in prop::collection::vec(action(), 1..120)) {
        let mut a_env = Env::new(EnvConfig::new(seq, seed)).unwrap();
        let mut b_env = Env::new(EnvConfig::new(seq, seed)).unwrap();
        for a in actions {
            if a_env.outcome().is_terminal() { break; }
            let ra = a_env.step(a).unwrap();
            let rb = b_env.step(a).unwrap();
            prop_assert_eq!(ra.reward.to_bits(), rb.reward.to_bits());
            prop_assert_eq!(ra.info, rb.info);
            let (oa, ob) = (ra.observation.unwrap(), rb.observation.unwrap());
            prop_assert_eq!(oa.as_bytes(), ob.as_bytes());
        }
        prop_assert_eq!(a_env.log(), b_env.log());
    }

    #[test]
    fn rendering_does_not_change_dynamics(seq in sequence(), seed in any::<u64>(), actions in prop::collection::vec(action(), 1..150)) {
        let mut on = Env::new(EnvConfig::new(seq, seed)).unwrap();
        let mut off = Env::new({ let mut c = EnvConfig::new(seq, seed); c.render = false; c }).unwrap();
        for a in actions {
            if on.outcome().is_terminal() { break; }
            let r_on = on.step(a).unwrap();
            let r_off = off.step(a).unwrap();
            prop_assert!(r_off.observation.is_none());
            prop_assert_eq!(r_on.reward.to_bits(), r_off.reward.to_bits());
        }
        prop_assert_eq!(on.state(), off.state());
        prop_assert_eq!(on.frames(), off.frames());
        let (latest, _) = on.frames();
        let stacked = off.observation();
        prop_assert_eq!(stacked.channel(6), latest.as_bytes());
    }
}

#[test]
fn stepping_a_finished_episode_is_an_error() {
    let mut cfg = EnvConfig::new(SequenceId::HouseExit, 0);
    cfg.step_limit = Some(3);
    let mut env = Env::new(cfg).unwrap();
    let mut last = None;
    for _ in 0..3 {
        last = Some(env.step(Action::NoOp).unwrap());
    }
    let last = last.unwrap();
    assert!(last.truncated && !last.terminated);
    assert!(env.step(Action::NoOp).is_err());
}

#[test]
fn reset_restores_the_initial_state() {
    let cfg = EnvConfig::new(SequenceId::ExploreToGrass, 9);
    let mut env = Env::new(cfg.clone()).unwrap();
    let fresh = env.observation();
    for a in [Action::Down, Action::Down, Action::Left, Action::A] {
        env.step(a).unwrap();
    }
    let (obs, info) = env.reset(cfg).unwrap();
    assert_eq!(obs.unwrap().as_bytes(), fresh.as_bytes());
    assert_eq!(info.step, 0);
    assert!(env.log().records.is_empty());
}
