//! The actor/learner loop: parallel snippet collection into replay,
//! interleaved learner iterations, periodic target syncs, and evaluation
//! rows for the learning curve.
//!
//! Actors hold an immutable borrow of the agent while collecting and only
//! the learner mutates it between rounds, so runs are reproducible for any
//! thread count; `threads = 1` executes the identical schedule inline.

use super::agents::{build_agent, Agent};
use super::learner::{learner_step, LearnerMetrics};
use super::replay::{ReplayBuffer, Snippet, Transition};
use super::RlConfig;
use crate::datasets::OnlineViews;
use crate::simenv::{
    staged_reward_at, task_spec, ObjectProfile, RewardMode, SimEnv, Task, EPISODE_LEN,
};
use crate::skillmodel::{GaussianPolicy, SkillModel};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// One learning-curve row
/// (`env_steps,learner_steps,mean_return,staged_return,kl_cat,kl_z,eta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub env_steps: u64,
    pub learner_steps: u64,
    pub mean_return: f64,
    pub staged_return: f64,
    pub kl_cat: f64,
    pub kl_z: f64,
    pub eta: f64,
}

pub struct RlOutcome {
    pub curve: Vec<CurveRow>,
    pub agent: Agent,
}

struct ActorState {
    env: SimEnv,
    views: OnlineViews,
    rng: ChaCha8Rng,
    pending: Snippet,
    episode: u64,
    base_seed: u64,
}

impl ActorState {
    fn new(profile: &ObjectProfile, spec: crate::simenv::RewardSpec, base_seed: u64) -> ActorState {
        let mut env = SimEnv::new(profile.clone(), spec);
        let obs = env.reset(base_seed);
        ActorState {
            views: OnlineViews::new(crate::datasets::ViewConfig::default(), &obs),
            env,
            rng: ChaCha8Rng::seed_from_u64(base_seed ^ 0x5eed_5eed),
            pending: Vec::new(),
            episode: 0,
            base_seed,
        }
    }

    /// Run `steps` environment steps under the current agent, cutting
    /// snippets at `snippet_len` boundaries and episode ends.
    fn collect(&mut self, agent: &Agent, steps: usize, snippet_len: usize) -> Vec<Snippet> {
        let mut out = Vec::new();
        for _ in 0..steps {
            let x_ml = self.views.x_ml();
            let x_ll = self.views.x_ll();
            let (action, latent) = agent.act(&self.views, &mut self.rng);
            let step = self.env.step(&action);
            self.views.push(&step.obs);
            self.pending.push(Transition {
                x_ml,
                x_ll,
                latent,
                reward: step.reward,
                x_ml_next: self.views.x_ml(),
                terminal: step.done,
            });
            if self.pending.len() >= snippet_len || step.done {
                out.push(std::mem::take(&mut self.pending));
            }
            if step.done {
                self.episode += 1;
                let seed = self.base_seed.wrapping_add(self.episode.wrapping_mul(7919));
                let obs = self.env.reset(seed);
                self.views.reset(&obs);
            }
        }
        out
    }
}

/// Evaluate the agent for `episodes` full episodes; returns mean return
/// under the active reward mode and under the staged-sparse yardstick.
pub fn evaluate(
    agent: &Agent,
    profile: &ObjectProfile,
    task: Task,
    mode: RewardMode,
    episodes: usize,
    seed: u64,
) -> (f64, f64) {
    let spec = task_spec(task, mode);
    let staged = task_spec(task, RewardMode::StagedSparse);
    let mut env = SimEnv::new(profile.clone(), spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut total_staged = 0.0;
    for ep in 0..episodes {
        let obs = env.reset(seed.wrapping_add(1_000_000).wrapping_add(ep as u64));
        let mut views = OnlineViews::new(crate::datasets::ViewConfig::default(), &obs);
        for _ in 0..EPISODE_LEN {
            let (a, _) = agent.act(&views, &mut rng);
            let out = env.step(&a);
            total += out.reward;
            total_staged += staged_reward_at(&staged, &env.state, &env.profile);
            views.push(&out.obs);
            if out.done {
                break;
            }
        }
    }
    (total / episodes as f64, total_staged / episodes as f64)
}

/// Run the full off-policy loop for one agent kind.
///
/// `skills` must be provided for the skill-based kinds; `bc_init` warm-starts
/// the scratch actor. `threads > 1` spreads actors across OS threads;
/// results are identical to the single-threaded schedule.
pub fn rl_loop(
    cfg: &RlConfig,
    skills: Option<Arc<SkillModel>>,
    bc_init: Option<&GaussianPolicy>,
    profile: &ObjectProfile,
    task: Task,
    mode: RewardMode,
    threads: usize,
) -> Result<RlOutcome> {
    let views = crate::datasets::ViewConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agent = build_agent(
        cfg.kind,
        views.x_ml_dim(),
        crate::simenv::ACTION_DIM,
        &cfg.hidden,
        &cfg.critic_hidden,
        skills,
        bc_init,
        &mut rng,
    )?;

    let spec = task_spec(task, mode);
    let mut actors: Vec<ActorState> = (0..cfg.actors.max(1))
        .map(|i| {
            ActorState::new(
                profile,
                spec.clone(),
                cfg.seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(i as u64 * 10_007),
            )
        })
        .collect();

    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut learner_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC0FFEE);
    let mut curve = Vec::new();
    let mut env_steps: u64 = 0;
    let mut learner_steps: u64 = 0;
    let mut last_metrics = LearnerMetrics::default();
    let mut round = 0usize;

    let steps_per_actor = (cfg.steps_per_round / actors.len()).max(1);

    while env_steps < cfg.env_steps {
        // Collection phase: actors see a frozen agent.
        let snippets: Vec<Vec<Snippet>> = if threads <= 1 || actors.len() == 1 {
            actors
                .iter_mut()
                .map(|a| a.collect(&agent, steps_per_actor, cfg.snippet_len))
                .collect()
        } else {
            let agent_ref = &agent;
            let chunk = actors.len().div_ceil(threads);
            std::thread::scope(|scope| {
                let handles: Vec<_> = actors
                    .chunks_mut(chunk)
                    .map(|group| {
                        scope.spawn(move || {
                            group
                                .iter_mut()
                                .map(|a| a.collect(agent_ref, steps_per_actor, cfg.snippet_len))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("actor thread panicked"))
                    .collect()
            })
        };
        for group in snippets {
            for s in group {
                replay.push(s);
            }
        }
        env_steps += (steps_per_actor * actors.len()) as u64;

        // Learning phase.
        if replay.len_transitions() >= cfg.warmup_transitions.max(cfg.batch) {
            for _ in 0..cfg.learner_steps_per_round {
                last_metrics = learner_step(&mut agent, &replay, cfg, &mut learner_rng)?;
                learner_steps += 1;
                if learner_steps % cfg.target_period as u64 == 0 {
                    agent.sync_targets();
                }
            }
        }

        round += 1;
        if round % cfg.eval_every_rounds == 0 || env_steps >= cfg.env_steps {
            let (mean_return, staged_return) = evaluate(
                &agent,
                profile,
                task,
                mode,
                cfg.eval_episodes,
                cfg.seed ^ 0x9999,
            );
            curve.push(CurveRow {
                env_steps,
                learner_steps,
                mean_return,
                staged_return,
                kl_cat: last_metrics.kl_cat,
                kl_z: last_metrics.kl_mu + last_metrics.kl_sigma,
                eta: last_metrics.eta,
            });
        }
    }

    Ok(RlOutcome { curve, agent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::AgentKind;

    #[test]
    fn zero_learner_steps_is_pure_collection() {
        let mut cfg = RlConfig::defaults(AgentKind::Scratch);
        cfg.actors = 1;
        cfg.env_steps = 400;
        cfg.steps_per_round = 200;
        cfg.learner_steps_per_round = 0;
        cfg.hidden = vec![8];
        cfg.critic_hidden = vec![8];
        cfg.eval_every_rounds = 1;
        cfg.eval_episodes = 1;
        let p = ObjectProfile::easy();
        let out = rl_loop(
            &cfg,
            None,
            None,
            &p,
            Task::StackRedOnBlue,
            RewardMode::Dense,
            1,
        )
        .unwrap();
        // Policy untouched: identical to a freshly built agent.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = build_agent(
            AgentKind::Scratch,
            crate::datasets::ViewConfig::default().x_ml_dim(),
            4,
            &cfg.hidden,
            &cfg.critic_hidden,
            None,
            None,
            &mut rng,
        )
        .unwrap();
        for (a, b) in out.agent.comps[0]
            .params
            .groups[0]
            .entries
            .iter()
            .zip(&fresh.comps[0].params.groups[0].entries)
        {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(out.curve.len(), 2);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = RlConfig::defaults(AgentKind::Scratch);
        cfg.actors = 4;
        cfg.env_steps = 800;
        cfg.steps_per_round = 400;
        cfg.learner_steps_per_round = 2;
        cfg.warmup_transitions = 100;
        cfg.batch = 16;
        cfg.action_samples = 4;
        cfg.hidden = vec![8];
        cfg.critic_hidden = vec![8];
        cfg.eval_every_rounds = 1;
        cfg.eval_episodes = 1;
        let p = ObjectProfile::easy();
        let a = rl_loop(&cfg, None, None, &p, Task::StackRedOnBlue, RewardMode::Dense, 1).unwrap();
        let b = rl_loop(&cfg, None, None, &p, Task::StackRedOnBlue, RewardMode::Dense, 2).unwrap();
        assert_eq!(a.curve, b.curve);
    }
}
