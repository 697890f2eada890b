//! Batch evaluation of scripted policies.

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, EnvError};
use crate::log::EpisodeLog;
use crate::metrics::{BatchSummary, EpisodeSummary};
use crate::policy::{make_policy, Policy, PolicyKind};
use crate::world::Action;

/// Runs one episode to termination and returns its log.
pub fn run_episode(config: EnvConfig, policy: &mut dyn Policy) -> Result<EpisodeLog, EnvError> {
    let mut env = Env::new(config)?;
    while !env.outcome().is_terminal() {
        let action = policy.act(env.steps(), env.state());
        env.step(action)?;
    }
    Ok(env.log().clone())
}

/// Re-runs a fixed action sequence, stopping early if the episode ends.
pub fn replay(config: EnvConfig, actions: impl IntoIterator<Item = Action>) -> Result<EpisodeLog, EnvError> {
    let mut env = Env::new(config)?;
    for a in actions {
        if env.outcome().is_terminal() {
            break;
        }
        env.step(a)?;
    }
    Ok(env.log().clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub policy: PolicyKind,
    pub sequence: u8,
    pub rows: Vec<EpisodeSummary>,
    pub summary: BatchSummary,
}

/// Runs `episodes` episodes with seeds `base.seed .. base.seed + episodes`.
/// Rendering is skipped; it does not affect dynamics.
pub fn rollout(kind: PolicyKind, base: &EnvConfig, episodes: u64) -> Result<RolloutReport, EnvError> {
    rollout_each(kind, base, episodes, |_, _, _| {})
}

/// Like [`rollout`], handing every finished episode's config and log to `on_episode`.
pub fn rollout_each(
    kind: PolicyKind,
    base: &EnvConfig,
    episodes: u64,
    mut on_episode: impl FnMut(u64, &EnvConfig, &EpisodeLog),
) -> Result<RolloutReport, EnvError> {
    base.validate()?;
    let mut rows = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let mut config = base.clone();
        config.seed = base.seed.wrapping_add(i);
        config.render = false;
        let env = Env::new(config.clone())?;
        let mut policy = make_policy(kind, config.seed, env.spec(), env.world());
        let log = run_episode(config.clone(), policy.as_mut())?;
        rows.push(EpisodeSummary::from_log(i, config.sequence.number(), config.seed, &log, env.world()));
        on_episode(i, &config, &log);
    }
    let summary = BatchSummary::from_rows(&rows);
    Ok(RolloutReport { policy: kind, sequence: base.sequence.number(), rows, summary })
}
