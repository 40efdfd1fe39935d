//! Offline gradient-ascent training of the skill hierarchy, plus the
//! behavior-cloning baseline.

use super::elbo::{elbo_graph, WindowBatch, ZNoise};
use super::policy::{GaussianPolicy, PolicyHyper};
use super::SkillModel;
use crate::datasets::Dataset;
use crate::numerics::{adam_update, gauss_log_prob_rows, Tape, Tensor};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub window_len: usize,
    pub stride: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 128,
            window_len: 25,
            stride: 25,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// One metrics-log row (written out as `step,total,recon,kl_z,kl_y`).
#[derive(Debug, Clone, Copy)]
pub struct MetricRow {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_y: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricRow>,
    /// Step at which a non-finite loss forced a rollback, if any.
    pub aborted_at: Option<usize>,
}

/// Maximize the mean window ELBO by gradient ascent. On a non-finite loss
/// the parameters are rolled back to the last verified-finite state and
/// training stops.
pub fn train_skills(
    dataset: &Dataset,
    model: &mut SkillModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.episodes.is_empty() {
        return Err(Error::Config("dataset has no episodes".into()));
    }
    let views = model.hyper.views();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.steps);
    let mut last_good = model.params.clone();

    for step in 0..cfg.steps {
        let windows = dataset.sample_windows(cfg.batch, cfg.window_len, cfg.stride, &views, &mut rng);
        let batch = WindowBatch::from_windows(&windows)?;
        let noise = ZNoise::draw(
            batch.t_len,
            model.hyper.k,
            batch.batch,
            model.hyper.n_z,
            &mut rng,
        );
        let tape = Tape::new();
        let nodes = elbo_graph(&tape, model, &batch, &noise);
        let e = nodes.breakdown(&tape);
        if !(e.total.is_finite() && e.recon.is_finite() && e.kl_z.is_finite() && e.kl_y.is_finite())
        {
            model.params = last_good;
            return Ok(TrainOutcome {
                metrics,
                aborted_at: Some(step),
            });
        }
        last_good = model.params.clone();

        // Ascent on the bound == descent on its negation.
        let loss = tape.neg(nodes.total);
        tape.backward(loss)?;
        model.params.clear_grads();
        tape.write_grads(&mut model.params);
        if cfg.lr > 0.0 {
            for g in &mut model.params.groups {
                let next = g.step + 1;
                adam_update(g, cfg.lr, next);
            }
        } else {
            model.params.clear_grads();
        }

        metrics.push(MetricRow {
            step,
            total: e.total,
            recon: e.recon,
            kl_z: e.kl_z,
            kl_y: e.kl_y,
        });
    }
    Ok(TrainOutcome {
        metrics,
        aborted_at: None,
    })
}

#[derive(Debug, Clone)]
pub struct BcConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            steps: 2000,
            batch: 128,
            lr: 1e-4,
            seed: 0,
            hidden: vec![256, 256],
        }
    }
}

/// Behavior cloning: maximize the Gaussian log-likelihood of dataset actions
/// given the object-inclusive stacked view. The result doubles as an actor
/// initialization for the flat RL baseline.
pub fn bc_train(dataset: &Dataset, cfg: &BcConfig) -> Result<(GaussianPolicy, Vec<(usize, f64)>)> {
    if dataset.episodes.is_empty() {
        return Err(Error::Config("dataset has no episodes".into()));
    }
    let views = crate::datasets::ViewConfig::default();
    let action_dim = dataset.manifest.action_ranges.dim();
    let hyper = PolicyHyper {
        in_dim: views.x_ml_dim(),
        out_dim: action_dim,
        hidden: cfg.hidden.clone(),
        tanh_mean: true,
        sigma_min: 0.01,
        sigma_max: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = GaussianPolicy::init(hyper, &mut rng);
    let mut log = Vec::new();

    for step in 0..cfg.steps {
        let mut xs = Vec::with_capacity(cfg.batch * policy.hyper.in_dim);
        let mut acts = Vec::with_capacity(cfg.batch * action_dim);
        let mut clipped = 0;
        for _ in 0..cfg.batch {
            let e = rng.gen_range(0..dataset.episodes.len());
            let ep = &dataset.episodes[e];
            let t = rng.gen_range(0..ep.len());
            let v = crate::datasets::build_views(ep, t, &views);
            xs.extend_from_slice(&v.x_ml);
            acts.extend_from_slice(
                &dataset
                    .manifest
                    .action_ranges
                    .normalize(&ep.actions[t], &mut clipped),
            );
        }
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(cfg.batch, policy.hyper.in_dim, xs)?);
        let a = tape.constant(Tensor::matrix(cfg.batch, action_dim, acts)?);
        let (mean, std) = policy.dist_nodes(&tape, x);
        let loglik = tape.mean_all(gauss_log_prob_rows(&tape, mean, std, a));
        let ll = tape.value_scalar(loglik);
        if !ll.is_finite() {
            return Err(Error::Runtime(format!(
                "behavior cloning diverged at step {step}"
            )));
        }
        let loss = tape.neg(loglik);
        tape.backward(loss)?;
        policy.params.clear_grads();
        tape.write_grads(&mut policy.params);
        if cfg.lr > 0.0 {
            let g = &mut policy.params.groups[0];
            let next = g.step + 1;
            adam_update(g, cfg.lr, next);
        } else {
            policy.params.clear_grads();
        }
        log.push((step, ll));
    }
    Ok((policy, log))
}
