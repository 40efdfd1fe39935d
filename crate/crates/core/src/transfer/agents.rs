//! Actor and critic networks for the transfer agents, target copies, dual
//! variables, and the per-step acting paths.

use super::replay::Latent;
use crate::datasets::OnlineViews;
use crate::numerics::{
    mlp_apply, mlp_init, mlp_tape_apply, Activation, CategoricalDist, MlpDef, NodeRef, ParamSet,
    Tape, Tensor,
};
use crate::skillmodel::{GaussianPolicy, PolicyHyper, SkillModel};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// Categorical high level over frozen mid+low skills.
    Cat,
    /// Latent mixture over the frozen low level, components anchored to the
    /// offline skills.
    Mix,
    /// Flat Gaussian policy in raw action space, learned from scratch.
    Scratch,
    /// Single latent Gaussian over the frozen low level with an `N(0, I)`
    /// KL anchor.
    Npmp,
}

impl AgentKind {
    pub fn parse(s: &str) -> Result<AgentKind> {
        match s {
            "cat" => Ok(AgentKind::Cat),
            "mix" => Ok(AgentKind::Mix),
            "scratch" => Ok(AgentKind::Scratch),
            "npmp" => Ok(AgentKind::Npmp),
            other => Err(Error::Config(format!(
                "unknown agent kind '{other}' (expected cat|mix|scratch|npmp)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Cat => "cat",
            AgentKind::Mix => "mix",
            AgentKind::Scratch => "scratch",
            AgentKind::Npmp => "npmp",
        }
    }

    pub fn needs_skills(&self) -> bool {
        matches!(self, AgentKind::Cat | AgentKind::Mix | AgentKind::Npmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatHyper {
    pub in_dim: usize,
    pub k: usize,
    pub hidden: Vec<usize>,
}

/// Categorical actor: MLP to `K` logits.
#[derive(Debug, Clone)]
pub struct CatActor {
    pub hyper: CatHyper,
    pub params: ParamSet,
}

impl CatActor {
    fn def(h: &CatHyper) -> MlpDef {
        let mut sizes = vec![h.in_dim];
        sizes.extend_from_slice(&h.hidden);
        sizes.push(h.k);
        MlpDef::new(sizes)
    }

    pub fn init(hyper: CatHyper, rng: &mut impl Rng) -> CatActor {
        let mut params = ParamSet::new();
        let g = params.add_group("actor");
        for (name, t) in mlp_init(&Self::def(&hyper), rng) {
            params.push_entry(g, name, t);
        }
        CatActor { hyper, params }
    }

    pub fn dist(&self, x: &[f64]) -> CategoricalDist {
        let logits = crate::numerics::mlp_infer(&self.params.groups[0], x, Activation::Elu);
        CategoricalDist::from_logits(&logits)
    }

    /// Batched probabilities, one row per state.
    pub fn probs_batch(&self, xs: &Tensor) -> Tensor {
        let logits = mlp_apply(&self.params.groups[0], xs, Activation::Elu)
            .expect("actor input width fixed by construction");
        let mut out = logits.clone();
        for r in 0..out.rows() {
            let row = logits.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&l| (l - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            for (c, e) in exps.iter().enumerate() {
                out.set(r, c, e / s);
            }
        }
        out
    }

    /// Log-softmax logits node for a batch input.
    pub fn log_probs_nodes(&self, tape: &Tape, x: NodeRef) -> NodeRef {
        let nodes: Vec<NodeRef> = (0..self.params.groups[0].entries.len())
            .map(|e| tape.param(&self.params, 0, e))
            .collect();
        tape.log_softmax_rows(mlp_tape_apply(tape, &nodes, x, Activation::Elu))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticHyper {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
}

/// State(-latent) value network.
#[derive(Debug, Clone)]
pub struct Critic {
    pub hyper: CriticHyper,
    pub params: ParamSet,
}

impl Critic {
    fn def(h: &CriticHyper) -> MlpDef {
        let mut sizes = vec![h.in_dim];
        sizes.extend_from_slice(&h.hidden);
        sizes.push(h.out_dim);
        MlpDef::new(sizes)
    }

    pub fn init(hyper: CriticHyper, rng: &mut impl Rng) -> Critic {
        let mut params = ParamSet::new();
        let g = params.add_group("critic");
        for (name, t) in mlp_init(&Self::def(&hyper), rng) {
            params.push_entry(g, name, t);
        }
        Critic { hyper, params }
    }

    pub fn values_batch(&self, xs: &Tensor) -> Tensor {
        mlp_apply(&self.params.groups[0], xs, Activation::Elu)
            .expect("critic input width fixed by construction")
    }

    pub fn value_nodes(&self, tape: &Tape, x: NodeRef) -> NodeRef {
        let nodes: Vec<NodeRef> = (0..self.params.groups[0].entries.len())
            .map(|e| tape.param(&self.params, 0, e))
            .collect();
        mlp_tape_apply(tape, &nodes, x, Activation::Elu)
    }
}

/// Temperature and Lagrange multipliers for the trust-region machinery.
#[derive(Debug, Clone)]
pub struct Duals {
    pub eta: f64,
    pub alpha_m: f64,
    pub alpha_cat: f64,
    pub alpha_mu: f64,
    pub alpha_sigma: f64,
}

impl Default for Duals {
    fn default() -> Self {
        Duals {
            eta: 1.0,
            alpha_m: 1.0,
            alpha_cat: 1.0,
            alpha_mu: 1.0,
            alpha_sigma: 1.0,
        }
    }
}

/// A live agent: actor(s), critic, lagging target copies, duals, and the
/// frozen offline skills where the kind requires them.
#[derive(Debug, Clone)]
pub struct Agent {
    pub kind: AgentKind,
    pub cat: Option<CatActor>,
    pub cat_target: Option<CatActor>,
    /// Mixture components (mix) or the single Gaussian head (scratch/npmp).
    pub comps: Vec<GaussianPolicy>,
    pub comps_target: Vec<GaussianPolicy>,
    /// Frozen copies of the offline skills used as mixture KL anchors.
    pub comps_anchor: Vec<GaussianPolicy>,
    pub critic: Critic,
    pub critic_target: Critic,
    pub duals: Duals,
    pub skills: Option<std::sync::Arc<SkillModel>>,
}

impl Agent {
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            AgentKind::Cat => 1,
            _ => self.comps[0].hyper.out_dim,
        }
    }

    pub fn out_k(&self) -> usize {
        self.cat.as_ref().map(|c| c.hyper.k).unwrap_or(1)
    }

    pub fn sync_targets(&mut self) {
        self.cat_target = self.cat.clone();
        self.comps_target = self.comps.clone();
        self.critic_target = self.critic.clone();
    }

    /// Draw one environment action. Returns the executed normalized action
    /// and the latent to store in replay.
    pub fn act(&self, views: &OnlineViews, rng: &mut impl Rng) -> (Vec<f64>, Latent) {
        let x_ml = views.x_ml();
        match self.kind {
            AgentKind::Cat => {
                let skills = self.skills.as_ref().expect("cat agent holds skills");
                let y = self.cat.as_ref().unwrap().dist(&x_ml).sample(rng);
                let z = skills
                    .encode_mid(y, &x_ml)
                    .expect("skill index within K")
                    .sample(rng);
                let a = skills.decode_action(&z, &views.x_ll()).sample(rng);
                (a, Latent::Skill(y))
            }
            AgentKind::Mix => {
                let skills = self.skills.as_ref().expect("mix agent holds skills");
                let y = self.cat.as_ref().unwrap().dist(&x_ml).sample(rng);
                let z = self.comps[y].dist(&x_ml).sample(rng);
                let a = skills.decode_action(&z, &views.x_ll()).sample(rng);
                (a, Latent::Z(z))
            }
            AgentKind::Scratch => {
                let a = self.comps[0].dist(&x_ml).sample(rng);
                let clipped: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                (clipped, Latent::Action(a))
            }
            AgentKind::Npmp => {
                let skills = self.skills.as_ref().expect("npmp agent holds skills");
                let z = self.comps[0].dist(&x_ml).sample(rng);
                let a = skills.decode_action(&z, &views.x_ll()).sample(rng);
                (a, Latent::Z(z))
            }
        }
    }

    /// Sample one latent from the target policy for a single state.
    pub fn sample_target_latent(&self, x_ml: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match self.kind {
            AgentKind::Cat => unreachable!("categorical expectation is exact"),
            AgentKind::Mix => {
                let y = self.cat_target.as_ref().unwrap().dist(x_ml).sample(rng);
                self.comps_target[y].dist(x_ml).sample(rng)
            }
            AgentKind::Scratch | AgentKind::Npmp => self.comps_target[0].dist(x_ml).sample(rng),
        }
    }
}

/// Build a fresh agent. `skills` is required for skill-based kinds;
/// `bc_init` seeds the scratch actor from a cloned policy.
pub fn build_agent(
    kind: AgentKind,
    x_ml_dim: usize,
    action_dim: usize,
    hidden: &[usize],
    critic_hidden: &[usize],
    skills: Option<std::sync::Arc<SkillModel>>,
    bc_init: Option<&GaussianPolicy>,
    rng: &mut impl Rng,
) -> Result<Agent> {
    if kind.needs_skills() && skills.is_none() {
        return Err(Error::Config(format!(
            "agent kind '{}' requires a trained skill checkpoint",
            kind.name()
        )));
    }
    let (k, n_z) = match &skills {
        Some(s) => (s.hyper.k, s.hyper.n_z),
        None => (0, 0),
    };

    let (cat, comps, critic_in, critic_out) = match kind {
        AgentKind::Cat => {
            let cat = CatActor::init(
                CatHyper {
                    in_dim: x_ml_dim,
                    k,
                    hidden: hidden.to_vec(),
                },
                rng,
            );
            (Some(cat), Vec::new(), x_ml_dim, k)
        }
        AgentKind::Mix => {
            let skills_ref = skills.as_ref().unwrap();
            let cat = CatActor::init(
                CatHyper {
                    in_dim: x_ml_dim,
                    k,
                    hidden: hidden.to_vec(),
                },
                rng,
            );
            // Components start as copies of the offline skills.
            let comps: Vec<GaussianPolicy> = (0..k)
                .map(|c| mid_head_as_policy(skills_ref, c))
                .collect();
            (Some(cat), comps, x_ml_dim + n_z, 1)
        }
        AgentKind::Scratch => {
            let actor = match bc_init {
                Some(p) => p.clone(),
                None => GaussianPolicy::init(
                    PolicyHyper {
                        in_dim: x_ml_dim,
                        out_dim: action_dim,
                        hidden: hidden.to_vec(),
                        tanh_mean: true,
                        sigma_min: 0.01,
                        sigma_max: 1.0,
                    },
                    rng,
                ),
            };
            (None, vec![actor], x_ml_dim + action_dim, 1)
        }
        AgentKind::Npmp => {
            let actor = GaussianPolicy::init(
                PolicyHyper {
                    in_dim: x_ml_dim,
                    out_dim: n_z,
                    hidden: hidden.to_vec(),
                    tanh_mean: false,
                    sigma_min: 0.01,
                    sigma_max: 1.0,
                },
                rng,
            );
            (None, vec![actor], x_ml_dim + n_z, 1)
        }
    };

    let critic = Critic::init(
        CriticHyper {
            in_dim: critic_in,
            out_dim: critic_out,
            hidden: critic_hidden.to_vec(),
        },
        rng,
    );
    let comps_anchor = comps.clone();
    let mut agent = Agent {
        kind,
        cat_target: None,
        cat,
        comps_target: Vec::new(),
        comps,
        comps_anchor,
        critic_target: critic.clone(),
        critic,
        duals: Duals::default(),
        skills,
    };
    agent.sync_targets();
    Ok(agent)
}

/// View one offline mid-level head as a standalone Gaussian policy (weights
/// copied).
pub fn mid_head_as_policy(skills: &SkillModel, component: usize) -> GaussianPolicy {
    let hyper = PolicyHyper {
        in_dim: skills.hyper.x_ml_dim(),
        out_dim: skills.hyper.n_z,
        hidden: skills.hyper.hidden.clone(),
        tanh_mean: false,
        sigma_min: skills.hyper.sigma_min,
        sigma_max: skills.hyper.sigma_max,
    };
    let mut params = ParamSet::new();
    let g = params.add_group("actor");
    let src = &skills.params.groups[crate::skillmodel::GROUP_MID];
    for e in skills.mid_entries(component) {
        let entry = &src.entries[e];
        let name = entry
            .name
            .split_once('_')
            .map(|(_, rest)| rest.to_string())
            .unwrap_or_else(|| entry.name.clone());
        params.push_entry(g, name, entry.value.clone());
    }
    GaussianPolicy { hyper, params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skillmodel::ModelHyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mix_components_match_offline_skills_at_init() {
        let mut h = ModelHyper::defaults(3);
        h.hidden = vec![10, 10];
        h.n_z = 4;
        let skills = SkillModel::init(h, &mut ChaCha8Rng::seed_from_u64(2));
        let x = vec![0.17; skills.hyper.x_ml_dim()];
        for c in 0..3 {
            let p = mid_head_as_policy(&skills, c);
            let a = p.dist(&x);
            let b = skills.encode_mid(c, &x).unwrap();
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.stddev, b.stddev);
        }
    }

    #[test]
    fn skillless_kinds_reject_missing_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_agent(AgentKind::Cat, 10, 4, &[8], &[8], None, None, &mut rng);
        assert!(err.is_err());
    }
}
