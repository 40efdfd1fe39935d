//! The three-level hierarchical latent mixture model.
//!
//! A high-level gated network selects among `K` discrete skills conditioned
//! on the previous skill and a lookahead view; per-skill mid-level networks
//! emit a continuous latent; a shared low-level controller decodes latents
//! into actions from proprioception alone. The discrete skill is never
//! sampled during training: the evidence bound marginalizes it exactly with
//! a forward recursion over the skill posterior.

mod analyze;
mod elbo;
mod policy;
mod train;

pub use analyze::{
    mutual_information_skill_phase, rollout_fixed_skill, transition_diag_mean, usage_histogram,
};
pub use elbo::{elbo_graph, elbo_window, ElboBreakdown, ElboNodes, ModelBinding, WindowBatch, ZNoise};
pub use policy::{GaussianPolicy, PolicyHyper};
pub use train::{bc_train, train_skills, BcConfig, MetricRow, TrainConfig, TrainOutcome};

use crate::datasets::ViewConfig;
use crate::numerics::{
    load_checkpoint, mlp_infer, mlp_init, save_checkpoint, Activation, CategoricalDist,
    DiagGaussian, MlpDef, ParamSet, Tensor,
};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const GROUP_HIGH: usize = 0;
pub const GROUP_MID: usize = 1;
pub const GROUP_LOW: usize = 2;
pub const GROUP_TRANS: usize = 3;

/// Architecture and objective constants for one skill model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub k: usize,
    pub n_z: usize,
    pub beta_y: f64,
    pub beta_z: f64,
    pub hidden: Vec<usize>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub action_sigma: f64,
    /// Clamp mid-level stddev to its floor and drop the latent noise,
    /// leaving only the discrete structure.
    pub discrete_only: bool,
    pub frame_stack: usize,
    pub lookahead: usize,
    pub proprio_dim: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl ModelHyper {
    pub fn defaults(k: usize) -> ModelHyper {
        ModelHyper {
            k,
            n_z: 8,
            beta_y: 1.0,
            beta_z: 0.1,
            hidden: vec![256, 256],
            sigma_min: 0.01,
            sigma_max: 1.0,
            action_sigma: 0.1,
            discrete_only: false,
            frame_stack: 3,
            lookahead: 5,
            proprio_dim: crate::simenv::PROPRIO_DIM,
            state_dim: crate::simenv::STATE_DIM,
            action_dim: crate::simenv::ACTION_DIM,
        }
    }

    pub fn views(&self) -> ViewConfig {
        ViewConfig {
            frame_stack: self.frame_stack,
            lookahead: self.lookahead,
            proprio_dim: self.proprio_dim,
            state_dim: self.state_dim,
        }
    }

    pub fn x_ll_dim(&self) -> usize {
        self.frame_stack * self.proprio_dim
    }

    pub fn x_ml_dim(&self) -> usize {
        self.frame_stack * self.state_dim
    }

    pub fn x_hl_dim(&self) -> usize {
        self.lookahead * self.state_dim
    }

    fn trunk_def(&self) -> MlpDef {
        let mut sizes = vec![self.x_hl_dim()];
        sizes.extend_from_slice(&self.hidden);
        MlpDef::new(sizes)
    }

    fn mid_def(&self) -> MlpDef {
        let mut sizes = vec![self.x_ml_dim()];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(2 * self.n_z);
        MlpDef::new(sizes)
    }

    fn low_def(&self) -> MlpDef {
        let mut sizes = vec![self.n_z + self.x_ll_dim()];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.action_dim);
        MlpDef::new(sizes)
    }
}

/// Running skill posterior `q(y_t | x_{1:t})`, updated by the forward
/// recursion and reset to the uniform initial prior at window starts.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub probs: Vec<f64>,
}

impl PosteriorState {
    pub fn uniform(k: usize) -> PosteriorState {
        PosteriorState {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// All trainable parameter groups of the hierarchy plus their layout.
#[derive(Debug, Clone)]
pub struct SkillModel {
    pub hyper: ModelHyper,
    pub params: ParamSet,
}

impl SkillModel {
    pub fn init(hyper: ModelHyper, rng: &mut impl Rng) -> SkillModel {
        let mut params = ParamSet::new();
        let gh = params.add_group("high_level");
        for (name, t) in mlp_init(&hyper.trunk_def(), rng) {
            params.push_entry(gh, format!("trunk_{name}"), t);
        }
        let h_last = *hyper.hidden.last().unwrap();
        for j in 0..hyper.k {
            // Small head weights keep the initial skill posterior close to
            // uniform so no component starves before specializing.
            let bound = 0.05 * (6.0 / (h_last + hyper.k) as f64).sqrt();
            let w: Vec<f64> = (0..h_last * hyper.k)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.push_entry(
                gh,
                format!("head{j}_w"),
                Tensor::matrix(h_last, hyper.k, w).unwrap(),
            );
            params.push_entry(gh, format!("head{j}_b"), Tensor::row(vec![0.0; hyper.k]));
        }

        let gm = params.add_group("mid_level");
        let mid_layers = hyper.mid_def().layer_count();
        for c in 0..hyper.k {
            for (name, mut t) in mlp_init(&hyper.mid_def(), rng) {
                // Symmetry breaking on the output layer: spread the latent
                // means across components and start stddevs near the floor
                // so early reconstruction differences are informative.
                if name == format!("b{}", mid_layers - 1) {
                    let data = t.data_mut();
                    for i in 0..hyper.n_z {
                        data[i] = rng.gen_range(-1.5..1.5);
                        data[hyper.n_z + i] = -2.0;
                    }
                }
                params.push_entry(gm, format!("c{c}_{name}"), t);
            }
        }

        let gl = params.add_group("low_level");
        for (name, t) in mlp_init(&hyper.low_def(), rng) {
            params.push_entry(gl, name, t);
        }

        let gt = params.add_group("transition_prior");
        params.push_entry(gt, "logits", Tensor::zeros(vec![hyper.k, hyper.k]));

        SkillModel { hyper, params }
    }

    /// Entry count of one mid/low MLP (two tensors per layer).
    fn mid_stride(&self) -> usize {
        2 * self.hyper.mid_def().layer_count()
    }

    fn trunk_entry_count(&self) -> usize {
        2 * self.hyper.trunk_def().layer_count()
    }

    pub(crate) fn hl_head_entries(&self, j: usize) -> (usize, usize) {
        let base = self.trunk_entry_count() + 2 * j;
        (base, base + 1)
    }

    pub(crate) fn mid_entries(&self, component: usize) -> std::ops::Range<usize> {
        let s = self.mid_stride();
        component * s..(component + 1) * s
    }

    fn trunk_forward(&self, x_hl: &[f64]) -> Vec<f64> {
        let group = &self.params.groups[GROUP_HIGH];
        // The trunk entries form a bare MLP; the final layer feeds the gated
        // heads, so its output is activated here.
        let sub = crate::numerics::ParamGroup {
            name: "trunk".into(),
            entries: group.entries[..self.trunk_entry_count()].to_vec(),
            step: 0,
        };
        let mut h = mlp_infer(&sub, x_hl, Activation::Elu);
        for v in &mut h {
            *v = elu(*v);
        }
        h
    }

    /// `q(y_t | y_{t-1}, x_t)` from the gated head selected by `prev`.
    /// `None` marks the initial step and returns the uniform skill prior.
    pub fn encode_high(&self, prev: Option<usize>, x_hl: &[f64]) -> Result<CategoricalDist> {
        match prev {
            None => Ok(CategoricalDist::uniform(self.hyper.k)),
            Some(j) => {
                if j >= self.hyper.k {
                    return Err(Error::Contract(format!(
                        "previous skill {j} out of range for K={}",
                        self.hyper.k
                    )));
                }
                let h = self.trunk_forward(x_hl);
                Ok(self.head_dist(j, &h))
            }
        }
    }

    fn head_dist(&self, j: usize, trunk_out: &[f64]) -> CategoricalDist {
        let (wi, bi) = self.hl_head_entries(j);
        let g = &self.params.groups[GROUP_HIGH];
        let w = &g.entries[wi].value;
        let b = &g.entries[bi].value;
        let mut logits = b.data().to_vec();
        for (i, &hv) in trunk_out.iter().enumerate() {
            let row = w.row_slice(i);
            for (c, &wv) in row.iter().enumerate() {
                logits[c] += hv * wv;
            }
        }
        CategoricalDist::from_logits(&logits)
    }

    /// All `K` gated-head distributions for one lookahead view, sharing one
    /// trunk pass.
    pub fn encode_high_all(&self, x_hl: &[f64]) -> Vec<CategoricalDist> {
        let h = self.trunk_forward(x_hl);
        (0..self.hyper.k).map(|j| self.head_dist(j, &h)).collect()
    }

    /// `q(z_t | y_t = skill, x_t)` with the stddev squashed into the clamp
    /// range.
    pub fn encode_mid(&self, skill: usize, x_ml: &[f64]) -> Result<DiagGaussian> {
        if skill >= self.hyper.k {
            return Err(Error::Contract(format!(
                "skill {skill} out of range for K={}",
                self.hyper.k
            )));
        }
        let range = self.mid_entries(skill);
        let g = &self.params.groups[GROUP_MID];
        let sub = crate::numerics::ParamGroup {
            name: "mid".into(),
            entries: g.entries[range].to_vec(),
            step: 0,
        };
        let out = mlp_infer(&sub, x_ml, Activation::Elu);
        let n_z = self.hyper.n_z;
        let mean = out[..n_z].to_vec();
        let stddev = if self.hyper.discrete_only {
            vec![self.hyper.sigma_min; n_z]
        } else {
            out[n_z..]
                .iter()
                .map(|&p| crate::numerics::squash_to_range(p, self.hyper.sigma_min, self.hyper.sigma_max))
                .collect()
        };
        DiagGaussian::new(mean, stddev)
    }

    /// Low-level action distribution `p(a_t | z_t, x_t)`: tanh mean, fixed
    /// stddev.
    pub fn decode_action(&self, z: &[f64], x_ll: &[f64]) -> DiagGaussian {
        debug_assert_eq!(z.len(), self.hyper.n_z);
        let mut input = Vec::with_capacity(z.len() + x_ll.len());
        input.extend_from_slice(z);
        input.extend_from_slice(x_ll);
        let out = mlp_infer(&self.params.groups[GROUP_LOW], &input, Activation::Elu);
        let mean: Vec<f64> = out.iter().map(|v| v.tanh()).collect();
        let stddev = vec![self.hyper.action_sigma; mean.len()];
        DiagGaussian::new(mean, stddev).expect("fixed positive stddev")
    }

    /// `p(y_t | y_{t-1})` from the learned linear-softmax transition prior.
    pub fn transition_prior(&self, prev: usize) -> CategoricalDist {
        debug_assert!(prev < self.hyper.k);
        let logits = &self.params.groups[GROUP_TRANS].entries[0].value;
        CategoricalDist::from_logits(logits.row_slice(prev))
    }

    /// Full `K x K` transition matrix, row = previous skill.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.hyper.k)
            .map(|j| self.transition_prior(j).probs)
            .collect()
    }

    /// One forward-recursion update:
    /// `q(y_t | x_{1:t}) = sum_j q(y_t | y_{t-1}=j, x_t) q(y_{t-1}=j | ...)`.
    pub fn posterior_step(&self, prev: &PosteriorState, x_hl: &[f64]) -> PosteriorState {
        let heads = self.encode_high_all(x_hl);
        let k = self.hyper.k;
        let mut probs = vec![0.0; k];
        for (j, head) in heads.iter().enumerate() {
            let w = prev.probs[j];
            for (c, p) in head.probs.iter().enumerate() {
                probs[c] += w * p;
            }
        }
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        PosteriorState { probs }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.hyper)?;
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<SkillModel> {
        let (meta, params) = load_checkpoint(path)?;
        let hyper: ModelHyper = serde_json::from_str(&meta)
            .map_err(|e| Error::Data(format!("checkpoint metadata is not a skill model: {e}")))?;
        let model = SkillModel { hyper, params };
        model.check_layout()?;
        Ok(model)
    }

    fn check_layout(&self) -> Result<()> {
        let expect_high = self.trunk_entry_count() + 2 * self.hyper.k;
        let expect_mid = self.hyper.k * self.mid_stride();
        let groups = &self.params.groups;
        if groups.len() != 4
            || groups[GROUP_HIGH].entries.len() != expect_high
            || groups[GROUP_MID].entries.len() != expect_mid
            || groups[GROUP_TRANS].entries[0].value.shape() != [self.hyper.k, self.hyper.k]
        {
            return Err(Error::Data(
                "checkpoint layout does not match its recorded hyperparameters".into(),
            ));
        }
        Ok(())
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(k: usize) -> SkillModel {
        let mut h = ModelHyper::defaults(k);
        h.hidden = vec![16, 16];
        h.n_z = 4;
        SkillModel::init(h, &mut ChaCha8Rng::seed_from_u64(5))
    }

    #[test]
    fn initial_marker_gives_uniform() {
        let m = small_model(4);
        let x = vec![0.3; m.hyper.x_hl_dim()];
        let d = m.encode_high(None, &x).unwrap();
        for p in d.probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_heads_give_uniform_for_every_prev() {
        let mut m = small_model(3);
        for j in 0..3 {
            let (wi, bi) = m.hl_head_entries(j);
            m.params.groups[GROUP_HIGH].entries[wi].value.fill(0.0);
            m.params.groups[GROUP_HIGH].entries[bi].value.fill(0.0);
        }
        let x = vec![0.7; m.hyper.x_hl_dim()];
        for j in 0..3 {
            let d = m.encode_high(Some(j), &x).unwrap();
            for p in d.probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_high_matches_hand_computed_softmax() {
        let m = small_model(3);
        let x: Vec<f64> = (0..m.hyper.x_hl_dim()).map(|i| (i as f64 * 0.01).sin()).collect();
        let d = m.encode_high(Some(1), &x).unwrap();
        // Independent route: trunk by explicit loops, head by explicit dot.
        let g = &m.params.groups[GROUP_HIGH];
        let mut h = x.clone();
        for l in 0..2 {
            let w = &g.entries[2 * l].value;
            let b = &g.entries[2 * l + 1].value;
            let mut y = b.data().to_vec();
            for (i, &xi) in h.iter().enumerate() {
                for c in 0..y.len() {
                    y[c] += xi * w.at(i, c);
                }
            }
            for v in &mut y {
                *v = if *v > 0.0 { *v } else { v.exp_m1() };
            }
            h = y;
        }
        let (wi, bi) = m.hl_head_entries(1);
        let w = &g.entries[wi].value;
        let mut logits = g.entries[bi].value.data().to_vec();
        for (i, &hv) in h.iter().enumerate() {
            for c in 0..3 {
                logits[c] += hv * w.at(i, c);
            }
        }
        let expect = CategoricalDist::from_logits(&logits);
        for (a, b) in d.probs.iter().zip(&expect.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_skill_is_contract_violation() {
        let m = small_model(3);
        let x = vec![0.0; m.hyper.x_hl_dim()];
        assert!(m.encode_high(Some(3), &x).is_err());
        assert!(m.encode_mid(7, &vec![0.0; m.hyper.x_ml_dim()]).is_err());
    }

    #[test]
    fn mid_heads_differ_between_skills() {
        let m = small_model(3);
        let x = vec![0.2; m.hyper.x_ml_dim()];
        let a = m.encode_mid(0, &x).unwrap();
        let b = m.encode_mid(1, &x).unwrap();
        assert_ne!(a.mean, b.mean);
    }

    #[test]
    fn stddev_squash_hits_clamp_limits() {
        let h = ModelHyper::defaults(2);
        assert!((crate::numerics::squash_to_range(-1e9, h.sigma_min, h.sigma_max) - 0.01).abs() < 1e-12);
        assert!((crate::numerics::squash_to_range(1e9, h.sigma_min, h.sigma_max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_action_mean_strictly_inside_unit_box_and_zero_at_zero() {
        let mut m = small_model(2);
        let z = vec![0.3; m.hyper.n_z];
        let x = vec![-0.4; m.hyper.x_ll_dim()];
        let d = m.decode_action(&z, &x);
        for v in &d.mean {
            assert!(v.abs() < 1.0);
        }
        for s in &d.stddev {
            assert_eq!(*s, 0.1);
        }
        // Zero network output means zero mean through the tanh.
        for e in &mut m.params.groups[GROUP_LOW].entries {
            e.value.fill(0.0);
        }
        let d = m.decode_action(&z, &x);
        assert!(d.mean.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn action_log_prob_at_mean_matches_density() {
        let m = small_model(2);
        let z = vec![0.0; m.hyper.n_z];
        let x = vec![0.1; m.hyper.x_ll_dim()];
        let d = m.decode_action(&z, &x);
        let lp = d.log_prob(&d.mean.clone());
        let expect = 4.0 * (1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn transition_prior_zero_logits_is_uniform_and_diag_formula_holds() {
        let mut m = small_model(5);
        m.params.groups[GROUP_TRANS].entries[0].value.fill(0.0);
        let d = m.transition_prior(2);
        for p in &d.probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
        // Diagonal logits 5, off-diagonal 0.
        let t = &mut m.params.groups[GROUP_TRANS].entries[0].value;
        for i in 0..5 {
            t.set(i, i, 5.0);
        }
        let expect = 5f64.exp() / (5f64.exp() + 4.0);
        for i in 0..5 {
            let d = m.transition_prior(i);
            assert!((d.probs[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_recursion_k1_is_fixed() {
        let m = small_model(1);
        let mut q = PosteriorState::uniform(1);
        let x = vec![0.5; m.hyper.x_hl_dim()];
        for _ in 0..10 {
            q = m.posterior_step(&q, &x);
            assert!((q.probs[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_recursion_identity_heads_fix_point() {
        let mut m = small_model(3);
        // Make each head a point mass on its own index: zero trunk weights,
        // bias j strongly favoring j.
        for j in 0..3 {
            let (wi, bi) = m.hl_head_entries(j);
            m.params.groups[GROUP_HIGH].entries[wi].value.fill(0.0);
            let b = &mut m.params.groups[GROUP_HIGH].entries[bi].value;
            b.fill(-200.0);
            b.set(0, j, 200.0);
        }
        let x = vec![0.1; m.hyper.x_hl_dim()];
        let start = PosteriorState {
            probs: vec![0.6, 0.3, 0.1],
        };
        let next = m.posterior_step(&start, &x);
        for (a, b) in next.probs.iter().zip(&start.probs) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_behavior() {
        let m = small_model(3);
        let dir = std::env::temp_dir().join(format!("skill_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        m.save(&path).unwrap();
        let back = SkillModel::load(&path).unwrap();
        let x_hl = vec![0.3; m.hyper.x_hl_dim()];
        let x_ml = vec![0.3; m.hyper.x_ml_dim()];
        assert_eq!(
            m.encode_high(Some(1), &x_hl).unwrap().probs,
            back.encode_high(Some(1), &x_hl).unwrap().probs
        );
        assert_eq!(
            m.encode_mid(2, &x_ml).unwrap().mean,
            back.encode_mid(2, &x_ml).unwrap().mean
        );
        std::fs::remove_dir_all(&dir).ok();
    }
}
