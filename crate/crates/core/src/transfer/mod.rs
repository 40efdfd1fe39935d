//! Online reinforcement learning on top of the frozen skill hierarchy.
//!
//! Two skill-reusing agents (a categorical controller over skills, and a
//! latent mixture anchored to the offline skills) plus two flat baselines
//! share one off-policy loop: actors collect snippets into replay, the
//! learner alternates a TD(0) critic update, a closed-form critic-weighted
//! reweighting of sampled latents under a KL bound, and a trust-region
//! parametric fit with dual-updated Lagrange multipliers.

mod agents;
mod explore;
mod learner;
mod mpo;
mod replay;
mod run;

pub use agents::{build_agent, mid_head_as_policy, Agent, AgentKind, CatActor, CatHyper, Critic, CriticHyper, Duals};
pub use explore::{exploration_report, CoverageRow, ZeroShotPolicy};
pub use learner::{critic_loss_probe, critic_targets, fit_categorical_policy, fit_latent_policy, learner_step, measure_divergences, AnchorKind, FitOutcome, LearnerMetrics};
pub use mpo::{nonparametric_weights, solve_nonparametric, NonparametricStep, ETA_MAX, ETA_MIN};
pub use replay::{Latent, ReplayBuffer, Snippet, Transition};
pub use run::{rl_loop, CurveRow, RlOutcome};

/// Knobs for the off-policy loop. Field defaults follow the online-learning
/// defaults used throughout; tests and the CLI override freely.
#[derive(Debug, Clone)]
pub struct RlConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    /// KL bound of the nonparametric reweighting step.
    pub eps_e: f64,
    /// Trust region for the categorical agent's single constraint.
    pub eps_m: f64,
    /// Decoupled trust regions for mixture policies.
    pub eps_cat: f64,
    pub eps_mu: f64,
    pub eps_sigma: f64,
    /// Uniform-prior KL regularizer on the high-level categorical.
    pub eta_y: f64,
    /// Per-component KL regularizer toward the offline skills (mix) or the
    /// standard-normal prior (npmp).
    pub eta_z: f64,
    pub action_samples: usize,
    pub batch: usize,
    pub lr: f64,
    pub dual_lr: f64,
    pub actors: usize,
    pub target_period: usize,
    pub snippet_len: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub warmup_transitions: usize,
    pub env_steps: u64,
    pub steps_per_round: usize,
    pub learner_steps_per_round: usize,
    pub eval_every_rounds: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl RlConfig {
    pub fn defaults(kind: AgentKind) -> RlConfig {
        RlConfig {
            kind,
            gamma: 0.99,
            eps_e: 0.1,
            eps_m: 1.0,
            eps_cat: 1.0,
            eps_mu: 5e-3,
            eps_sigma: 1e-4,
            eta_y: 0.01,
            eta_z: 0.01,
            action_samples: 20,
            batch: 512,
            lr: 2e-4,
            dual_lr: 0.01,
            actors: 8,
            target_period: 100,
            snippet_len: 10,
            replay_capacity: 100_000,
            hidden: vec![256, 256],
            critic_hidden: vec![256, 256, 256],
            warmup_transitions: 2_000,
            env_steps: 100_000,
            steps_per_round: 1_000,
            learner_steps_per_round: 50,
            eval_every_rounds: 5,
            eval_episodes: 5,
            seed: 0,
        }
    }
}
