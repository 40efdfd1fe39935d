//! Exactly-marginalized evidence bound over trajectory windows.
//!
//! Per timestep and per skill component, the graph computes a reparameterized
//! latent sample, the action log density under the low-level controller, and
//! the closed-form Gaussian KL to the fixed `N(0, I)` skill prior; everything
//! is weighted by the running skill posterior from the forward recursion, so
//! the discrete variable is never sampled and gradients flow through every
//! parameter group.

use super::{ModelHyper, SkillModel, GROUP_HIGH, GROUP_LOW, GROUP_MID, GROUP_TRANS};
use crate::datasets::TrajectoryWindow;
use crate::numerics::{
    gauss_kl_to_std_normal, gauss_log_prob_rows, mlp_tape_apply, Activation, NodeRef, Tape, Tensor,
};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// ELBO terms as plain numbers, averaged over the batch. `total` equals
/// `recon - beta_z * kl_z - beta_y * kl_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_y: f64,
}

/// Tape nodes for the same quantities, for gradient passes.
#[derive(Debug, Clone, Copy)]
pub struct ElboNodes {
    pub total: NodeRef,
    pub recon: NodeRef,
    pub kl_z: NodeRef,
    pub kl_y: NodeRef,
}

impl ElboNodes {
    pub fn breakdown(&self, tape: &Tape) -> ElboBreakdown {
        ElboBreakdown {
            total: tape.value_scalar(self.total),
            recon: tape.value_scalar(self.recon),
            kl_z: tape.value_scalar(self.kl_z),
            kl_y: tape.value_scalar(self.kl_y),
        }
    }
}

/// A batch of equal-length windows, transposed into per-timestep matrices
/// (`[batch, dim]`).
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub t_len: usize,
    pub batch: usize,
    pub x_ll: Vec<Tensor>,
    pub x_ml: Vec<Tensor>,
    pub x_hl: Vec<Tensor>,
    pub actions: Vec<Tensor>,
}

impl WindowBatch {
    pub fn from_windows(windows: &[TrajectoryWindow]) -> Result<WindowBatch> {
        let batch = windows.len();
        if batch == 0 {
            return Err(Error::Contract("empty window batch".into()));
        }
        let t_len = windows[0].len();
        if t_len == 0 {
            return Err(Error::Contract("windows must hold at least one step".into()));
        }
        if windows.iter().any(|w| w.len() != t_len) {
            return Err(Error::Contract("windows in a batch must share a length".into()));
        }
        fn stack<'a>(
            t_len: usize,
            batch: usize,
            get: impl Fn(usize, usize) -> &'a [f64],
        ) -> Vec<Tensor> {
            (0..t_len)
                .map(|t| {
                    let width = get(0, t).len();
                    let mut data = Vec::with_capacity(batch * width);
                    for b in 0..batch {
                        data.extend_from_slice(get(b, t));
                    }
                    Tensor::matrix(batch, width, data).unwrap()
                })
                .collect()
        }
        Ok(WindowBatch {
            t_len,
            batch,
            x_ll: stack(t_len, batch, |b, t| &windows[b].steps[t].views.x_ll[..]),
            x_ml: stack(t_len, batch, |b, t| &windows[b].steps[t].views.x_ml[..]),
            x_hl: stack(t_len, batch, |b, t| &windows[b].steps[t].views.x_hl[..]),
            actions: stack(t_len, batch, |b, t| &windows[b].steps[t].action[..]),
        })
    }
}

/// Reparameterization noise, one `[batch, n_z]` draw per (timestep,
/// component). The same draws are shared with the enumeration oracle.
#[derive(Debug, Clone)]
pub struct ZNoise {
    pub eps: Vec<Vec<Tensor>>,
}

impl ZNoise {
    pub fn draw(t_len: usize, k: usize, batch: usize, n_z: usize, rng: &mut impl Rng) -> ZNoise {
        let eps = (0..t_len)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let data: Vec<f64> =
                            (0..batch * n_z).map(|_| rng.sample(StandardNormal)).collect();
                        Tensor::matrix(batch, n_z, data).unwrap()
                    })
                    .collect()
            })
            .collect();
        ZNoise { eps }
    }

    pub fn zeros(t_len: usize, k: usize, batch: usize, n_z: usize) -> ZNoise {
        let eps = (0..t_len)
            .map(|_| (0..k).map(|_| Tensor::zeros(vec![batch, n_z])).collect())
            .collect();
        ZNoise { eps }
    }
}

/// Parameter nodes for one model bound into a tape.
pub struct ModelBinding {
    pub trunk: Vec<NodeRef>,
    pub heads: Vec<(NodeRef, NodeRef)>,
    pub mid: Vec<Vec<NodeRef>>,
    pub low: Vec<NodeRef>,
    pub trans: NodeRef,
    k: usize,
}

impl ModelBinding {
    pub fn bind(tape: &Tape, model: &SkillModel) -> ModelBinding {
        let k = model.hyper.k;
        let trunk_n = 2 * model.hyper.trunk_def().layer_count();
        let trunk = (0..trunk_n)
            .map(|e| tape.param(&model.params, GROUP_HIGH, e))
            .collect();
        let heads = (0..k)
            .map(|j| {
                let (wi, bi) = model.hl_head_entries(j);
                (
                    tape.param(&model.params, GROUP_HIGH, wi),
                    tape.param(&model.params, GROUP_HIGH, bi),
                )
            })
            .collect();
        let mid = (0..k)
            .map(|c| {
                model
                    .mid_entries(c)
                    .map(|e| tape.param(&model.params, GROUP_MID, e))
                    .collect()
            })
            .collect();
        let low = (0..model.params.groups[GROUP_LOW].entries.len())
            .map(|e| tape.param(&model.params, GROUP_LOW, e))
            .collect();
        let trans = tape.param(&model.params, GROUP_TRANS, 0);
        ModelBinding {
            trunk,
            heads,
            mid,
            low,
            trans,
            k,
        }
    }

    /// Activated trunk output for one lookahead batch.
    pub fn trunk_out(&self, tape: &Tape, x_hl: NodeRef) -> NodeRef {
        tape.elu(mlp_tape_apply(tape, &self.trunk, x_hl, Activation::Elu))
    }

    /// Per-previous-skill categorical log-probs `[batch, K]`.
    pub fn head_log_probs(&self, tape: &Tape, trunk_out: NodeRef, j: usize) -> NodeRef {
        let (w, b) = self.heads[j];
        tape.log_softmax_rows(tape.add_row(tape.matmul(trunk_out, w), b))
    }

    /// Mid-level mean and stddev nodes for component `c` on `x_ml`.
    pub fn mid_dist(
        &self,
        tape: &Tape,
        hyper: &ModelHyper,
        c: usize,
        x_ml: NodeRef,
        batch: usize,
    ) -> (NodeRef, NodeRef) {
        let out = mlp_tape_apply(tape, &self.mid[c], x_ml, Activation::Elu);
        let mean = tape.slice_cols(out, 0, hyper.n_z);
        let std = if hyper.discrete_only {
            let mut t = Tensor::zeros(vec![batch, hyper.n_z]);
            t.fill(hyper.sigma_min);
            tape.constant(t)
        } else {
            let pre = tape.slice_cols(out, hyper.n_z, 2 * hyper.n_z);
            tape.add_const(
                tape.scale(tape.sigmoid(pre), hyper.sigma_max - hyper.sigma_min),
                hyper.sigma_min,
            )
        };
        (mean, std)
    }

    /// Low-level tanh action mean for latent batch `z` and view `x_ll`.
    pub fn action_mean(&self, tape: &Tape, z: NodeRef, x_ll: NodeRef) -> NodeRef {
        let input = tape.concat_cols(&[z, x_ll]);
        tape.tanh(mlp_tape_apply(tape, &self.low, input, Activation::Elu))
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Build the full evidence-bound graph for a window batch.
pub fn elbo_graph(
    tape: &Tape,
    model: &SkillModel,
    batch: &WindowBatch,
    noise: &ZNoise,
) -> ElboNodes {
    let binding = ModelBinding::bind(tape, model);
    elbo_graph_bound(tape, &binding, &model.hyper, batch, noise)
}

pub fn elbo_graph_bound(
    tape: &Tape,
    binding: &ModelBinding,
    hyper: &ModelHyper,
    batch: &WindowBatch,
    noise: &ZNoise,
) -> ElboNodes {
    let k = hyper.k;
    let b = batch.batch;

    // log p(y_t | y_{t-1}) rows from the transition logits.
    let log_trans = tape.log_softmax_rows(binding.trans);

    // Uniform initial posterior q(y_0).
    let mut q_prev = {
        let mut t = Tensor::zeros(vec![b, k]);
        t.fill(1.0 / k as f64);
        tape.constant(t)
    };

    let mut recon_sum: Option<NodeRef> = None;
    let mut klz_sum: Option<NodeRef> = None;
    let mut kly_sum: Option<NodeRef> = None;
    let add_to = |acc: &mut Option<NodeRef>, v: NodeRef| {
        *acc = Some(match *acc {
            None => v,
            Some(a) => tape.add(a, v),
        });
    };

    let action_std = {
        let mut t = Tensor::zeros(vec![b, hyper.action_dim]);
        t.fill(hyper.action_sigma);
        tape.constant(t)
    };

    for t in 0..batch.t_len {
        let x_hl = tape.constant(batch.x_hl[t].clone());
        let x_ml = tape.constant(batch.x_ml[t].clone());
        let x_ll = tape.constant(batch.x_ll[t].clone());
        let action = tape.constant(batch.actions[t].clone());

        // Gated heads conditioned on each possible previous skill.
        let trunk_out = binding.trunk_out(tape, x_hl);
        let mut q_next: Option<NodeRef> = None;
        let mut kly_t: Option<NodeRef> = None;
        for j in 0..k {
            let logq_j = binding.head_log_probs(tape, trunk_out, j);
            let p_j = tape.exp(logq_j);
            let w_j = tape.col(q_prev, j);

            // Posterior recursion: q_t += q_{t-1}[j] * q(y_t | j, x_t).
            let contrib = tape.mul_col(p_j, w_j);
            q_next = Some(match q_next {
                None => contrib,
                Some(q) => tape.add(q, contrib),
            });

            // Categorical regularizer weighted by the pre-update posterior.
            let logp_j = tape.row(log_trans, j);
            let diff = tape.add_row(logq_j, tape.neg(logp_j));
            let kl_j = tape.row_sum(tape.mul(p_j, diff));
            let weighted = tape.mul(w_j, kl_j);
            kly_t = Some(match kly_t {
                None => weighted,
                Some(a) => tape.add(a, weighted),
            });
        }
        let q_t = q_next.expect("k >= 1");
        add_to(&mut kly_sum, kly_t.expect("k >= 1"));

        // Per-component reconstruction and latent KL, weighted by q_t.
        for c in 0..k {
            let (mean, std) = binding.mid_dist(tape, hyper, c, x_ml, b);
            let eps = tape.constant(noise.eps[t][c].clone());
            let z = if hyper.discrete_only {
                mean
            } else {
                tape.add(mean, tape.mul(std, eps))
            };
            let a_mean = binding.action_mean(tape, z, x_ll);
            let logp_a = gauss_log_prob_rows(tape, a_mean, action_std, action);
            let klz = gauss_kl_to_std_normal(tape, mean, std);
            let w_c = tape.col(q_t, c);
            add_to(&mut recon_sum, tape.mul(w_c, logp_a));
            add_to(&mut klz_sum, tape.mul(w_c, klz));
        }

        q_prev = q_t;
    }

    let recon = tape.mean_all(recon_sum.expect("t_len >= 1"));
    let kl_z = tape.mean_all(klz_sum.expect("t_len >= 1"));
    let kl_y = tape.mean_all(kly_sum.expect("t_len >= 1"));
    let total = tape.sub(
        recon,
        tape.add(tape.scale(kl_z, hyper.beta_z), tape.scale(kl_y, hyper.beta_y)),
    );
    ElboNodes {
        total,
        recon,
        kl_z,
        kl_y,
    }
}

/// Evidence bound of a single window under the given noise draws.
pub fn elbo_window(
    model: &SkillModel,
    window: &TrajectoryWindow,
    noise: &ZNoise,
) -> Result<ElboBreakdown> {
    if window.is_empty() {
        return Err(Error::Contract("empty window".into()));
    }
    let batch = WindowBatch::from_windows(std::slice::from_ref(window))?;
    let tape = Tape::new();
    let nodes = elbo_graph(&tape, model, &batch, noise);
    Ok(nodes.breakdown(&tape))
}
