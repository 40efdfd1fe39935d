//! Monolithic diagonal-Gaussian policy: the behavior-cloning artifact and
//! the actor shape shared by the flat RL baselines.

use crate::numerics::{
    load_checkpoint, mlp_infer, mlp_init, mlp_tape_apply, save_checkpoint, squash_to_range,
    Activation, DiagGaussian, MlpDef, NodeRef, ParamSet, Tape,
};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    /// Squash the mean through tanh (bounded action spaces).
    pub tanh_mean: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// MLP emitting `[mean, stddev pre-activation]`; the stddev is squashed onto
/// the clamp range.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub hyper: PolicyHyper,
    pub params: ParamSet,
}

impl GaussianPolicy {
    pub fn def(hyper: &PolicyHyper) -> MlpDef {
        let mut sizes = vec![hyper.in_dim];
        sizes.extend_from_slice(&hyper.hidden);
        sizes.push(2 * hyper.out_dim);
        MlpDef::new(sizes)
    }

    pub fn init(hyper: PolicyHyper, rng: &mut impl Rng) -> GaussianPolicy {
        let mut params = ParamSet::new();
        let g = params.add_group("actor");
        for (name, t) in mlp_init(&Self::def(&hyper), rng) {
            params.push_entry(g, name, t);
        }
        GaussianPolicy { hyper, params }
    }

    pub fn dist(&self, x: &[f64]) -> DiagGaussian {
        let out = mlp_infer(&self.params.groups[0], x, Activation::Elu);
        let d = self.hyper.out_dim;
        let mean: Vec<f64> = out[..d]
            .iter()
            .map(|&v| if self.hyper.tanh_mean { v.tanh() } else { v })
            .collect();
        let stddev: Vec<f64> = out[d..]
            .iter()
            .map(|&p| squash_to_range(p, self.hyper.sigma_min, self.hyper.sigma_max))
            .collect();
        DiagGaussian::new(mean, stddev).expect("squashed stddev is positive")
    }

    /// Batched `(mean, stddev)` matrices for a `[batch, in_dim]` input.
    pub fn dist_batch(&self, xs: &crate::numerics::Tensor) -> (crate::numerics::Tensor, crate::numerics::Tensor) {
        let out = crate::numerics::mlp_apply(&self.params.groups[0], xs, Activation::Elu)
            .expect("policy input width fixed by construction");
        let d = self.hyper.out_dim;
        let b = out.rows();
        let mut mean = crate::numerics::Tensor::zeros(vec![b, d]);
        let mut std = crate::numerics::Tensor::zeros(vec![b, d]);
        for r in 0..b {
            for c in 0..d {
                let m = out.at(r, c);
                mean.set(r, c, if self.hyper.tanh_mean { m.tanh() } else { m });
                std.set(
                    r,
                    c,
                    squash_to_range(out.at(r, d + c), self.hyper.sigma_min, self.hyper.sigma_max),
                );
            }
        }
        (mean, std)
    }

    /// Bind actor parameters and produce `(mean, stddev)` nodes for a batch
    /// of inputs.
    pub fn dist_nodes(&self, tape: &Tape, x: NodeRef) -> (NodeRef, NodeRef) {
        self.dist_nodes_in(tape, 0, x)
    }

    /// As `dist_nodes`, binding the parameters under a set index.
    pub fn dist_nodes_in(&self, tape: &Tape, set: usize, x: NodeRef) -> (NodeRef, NodeRef) {
        let nodes: Vec<NodeRef> = (0..self.params.groups[0].entries.len())
            .map(|e| tape.param_in(set, &self.params, 0, e))
            .collect();
        let out = mlp_tape_apply(tape, &nodes, x, Activation::Elu);
        let d = self.hyper.out_dim;
        let mean_raw = tape.slice_cols(out, 0, d);
        let mean = if self.hyper.tanh_mean {
            tape.tanh(mean_raw)
        } else {
            mean_raw
        };
        let pre = tape.slice_cols(out, d, 2 * d);
        let std = tape.add_const(
            tape.scale(tape.sigmoid(pre), self.hyper.sigma_max - self.hyper.sigma_min),
            self.hyper.sigma_min,
        );
        (mean, std)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_string(&self.hyper)?;
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<GaussianPolicy> {
        let (meta, params) = load_checkpoint(path)?;
        let hyper: PolicyHyper = serde_json::from_str(&meta)
            .map_err(|e| Error::Data(format!("checkpoint metadata is not a policy: {e}")))?;
        Ok(GaussianPolicy { hyper, params })
    }
}
