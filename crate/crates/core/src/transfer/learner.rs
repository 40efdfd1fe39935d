//! One learner iteration: TD(0) critic regression, the nonparametric
//! reweighting, and the Lagrangian trust-region fit of the parametric actor.
//!
//! "Old" distributions for the trust regions are the lagging target copies;
//! KL regularizers to fixed priors enter the fit as additional loss terms.

use super::agents::{Agent, AgentKind};
use super::mpo::solve_nonparametric;
use super::replay::{Latent, Transition};
use super::RlConfig;
use crate::numerics::{adam_update, gauss_kl_rows, gauss_log_prob_rows, NodeRef, Tape, Tensor};
use crate::skillmodel::GaussianPolicy;
use crate::Result;
use rand::Rng;

/// Diagnostics from one learner step.
#[derive(Debug, Clone, Copy, Default)]
pub struct LearnerMetrics {
    pub critic_loss: f64,
    pub eta: f64,
    pub kl_cat: f64,
    pub kl_mu: f64,
    pub kl_sigma: f64,
}

fn batch_matrix(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Tensor {
    let mut data = Vec::new();
    let mut count = 0;
    for r in rows {
        debug_assert_eq!(r.len(), width);
        data.extend_from_slice(&r);
        count += 1;
    }
    Tensor::matrix(count, width, data).unwrap()
}

fn concat_state_latent(x: &[f64], z: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + z.len());
    v.extend_from_slice(x);
    v.extend_from_slice(z);
    v
}

/// TD(0) regression targets `r + gamma * E[Q'(x', latent')]` using the
/// target actor and target critic. The expectation is the exact sum over
/// skills for the categorical agent and a sample mean otherwise.
pub fn critic_targets(
    agent: &Agent,
    batch: &[&Transition],
    gamma: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    match agent.kind {
        AgentKind::Cat => {
            let xs_next = batch_matrix(
                batch.iter().map(|t| t.x_ml_next.clone()),
                batch[0].x_ml_next.len(),
            );
            let qn = agent.critic_target.values_batch(&xs_next);
            let pn = agent.cat_target.as_ref().unwrap().probs_batch(&xs_next);
            batch
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if t.terminal {
                        return t.reward;
                    }
                    let mut ev = 0.0;
                    for k in 0..agent.out_k() {
                        ev += pn.at(i, k) * qn.at(i, k);
                    }
                    t.reward + gamma * ev
                })
                .collect()
        }
        _ => {
            // Stack B*S next-state/latent pairs and evaluate in one pass.
            let d = agent.critic_target.hyper.in_dim;
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(batch.len() * samples);
            for t in batch {
                for _ in 0..samples {
                    let z = agent.sample_target_latent(&t.x_ml_next, rng);
                    rows.push(concat_state_latent(&t.x_ml_next, &z));
                }
            }
            let qn = agent.critic_target.values_batch(&batch_matrix(rows.into_iter(), d));
            batch
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if t.terminal {
                        return t.reward;
                    }
                    let mut ev = 0.0;
                    for s in 0..samples {
                        ev += qn.at(i * samples + s, 0);
                    }
                    t.reward + gamma * ev / samples as f64
                })
                .collect()
        }
    }
}

/// TD(0) loss value at the current critic, without moving any parameters.
pub fn critic_loss_probe(
    agent: &mut Agent,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<f64> {
    critic_update(agent, batch, targets, 0.0)
}

fn critic_update(agent: &mut Agent, batch: &[&Transition], targets: &[f64], lr: f64) -> Result<f64> {
    let tape = Tape::new();
    let pred = match agent.kind {
        AgentKind::Cat => {
            let xs = batch_matrix(batch.iter().map(|t| t.x_ml.clone()), batch[0].x_ml.len());
            let x = tape.constant(xs);
            let q_all = agent.critic.value_nodes(&tape, x);
            let idx: Vec<usize> = batch
                .iter()
                .map(|t| match &t.latent {
                    Latent::Skill(y) => *y,
                    _ => unreachable!("categorical replay holds skill indices"),
                })
                .collect();
            tape.gather_cols(q_all, &idx)
        }
        _ => {
            let d = agent.critic.hyper.in_dim;
            let rows = batch.iter().map(|t| {
                let z = match &t.latent {
                    Latent::Z(z) => z.as_slice(),
                    Latent::Action(a) => a.as_slice(),
                    Latent::Skill(_) => unreachable!("continuous replay holds vectors"),
                };
                concat_state_latent(&t.x_ml, z)
            });
            let x = tape.constant(batch_matrix(rows, d));
            agent.critic.value_nodes(&tape, x)
        }
    };
    let target = tape.constant(Tensor::matrix(batch.len(), 1, targets.to_vec())?);
    let loss = tape.mean_all(tape.square(tape.sub(pred, target)));
    let value = tape.value_scalar(loss);
    tape.backward(loss)?;
    agent.critic.params.clear_grads();
    tape.write_grads(&mut agent.critic.params);
    if lr > 0.0 {
        let g = &mut agent.critic.params.groups[0];
        let next = g.step + 1;
        adam_update(g, lr, next);
    } else {
        agent.critic.params.clear_grads();
    }
    Ok(value)
}

/// Outcome of a parametric fit: loss value and measured post-step KLs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOutcome {
    pub loss: f64,
    pub kl_cat: f64,
    pub kl_mu: f64,
    pub kl_sigma: f64,
}

/// Cross-entropy fit of the categorical actor to the reweighted skill
/// distribution, with a uniform-prior regularizer and a Lagrangian trust
/// region against the target ("old") actor.
pub fn fit_categorical_policy(
    actor: &mut super::agents::CatActor,
    old: &super::agents::CatActor,
    xs: &Tensor,
    weights: &[Vec<f64>],
    eps_m: f64,
    eta_y: f64,
    alpha_m: &mut f64,
    lr: f64,
    dual_lr: f64,
) -> Result<FitOutcome> {
    let b = xs.rows();
    let k = actor.hyper.k;
    let tape = Tape::new();
    let x = tape.constant(xs.clone());
    let log_pi = actor.log_probs_nodes(&tape, x);
    let p = tape.exp(log_pi);

    let w = tape.constant(batch_matrix(weights.iter().cloned(), k));
    let ce = tape.neg(tape.mean_all(tape.row_sum(tape.mul(w, log_pi))));

    // KL(pi || uniform) = sum p log p + log K.
    let kl_unif = tape.add_const(tape.mean_all(tape.row_sum(tape.mul(p, log_pi))), (k as f64).ln());

    let old_logp = {
        let probs = old.probs_batch(xs);
        let mut lp = probs.clone();
        for v in lp.data_mut() {
            *v = v.ln();
        }
        tape.constant(lp)
    };
    let kl_old = tape.mean_all(tape.row_sum(tape.mul(p, tape.sub(log_pi, old_logp))));

    let mut loss = ce;
    if eta_y != 0.0 {
        loss = tape.add(loss, tape.scale(kl_unif, eta_y));
    }
    loss = tape.add(loss, tape.scale(kl_old, *alpha_m));
    let loss_value = tape.value_scalar(loss);
    tape.backward(loss)?;
    actor.params.clear_grads();
    tape.write_grads(&mut actor.params);
    if lr > 0.0 {
        let g = &mut actor.params.groups[0];
        let next = g.step + 1;
        adam_update(g, lr, next);
    }

    // Measure the post-step divergence from the old actor and adapt the
    // multiplier toward the constraint boundary.
    let new_p = actor.probs_batch(xs);
    let old_p = old.probs_batch(xs);
    let mut kl = 0.0;
    for r in 0..b {
        for c in 0..k {
            let pn = new_p.at(r, c);
            if pn > 0.0 {
                kl += pn * (pn.ln() - old_p.at(r, c).ln());
            }
        }
    }
    kl /= b as f64;
    *alpha_m = (*alpha_m + dual_lr * (kl - eps_m)).clamp(0.0, 1e6);
    Ok(FitOutcome {
        loss: loss_value,
        kl_cat: kl,
        kl_mu: 0.0,
        kl_sigma: 0.0,
    })
}

/// What each mixture component is regularized toward during the fit.
pub enum AnchorKind<'a> {
    None,
    StdNormal,
    Policies(&'a [GaussianPolicy]),
}

/// Weighted log-likelihood fit of a latent (mixture) policy to reweighted
/// samples, with decoupled trust regions on the categorical, component
/// means, and component stddevs, plus optional KL anchors.
///
/// With one component, no categorical head, and zero regularizers this is
/// exactly the flat Gaussian policy fit used by the scratch baseline.
#[allow(clippy::too_many_arguments)]
pub fn fit_latent_policy(
    cat: Option<&mut super::agents::CatActor>,
    comps: &mut [GaussianPolicy],
    cat_old: Option<&super::agents::CatActor>,
    comps_old: &[GaussianPolicy],
    anchors: AnchorKind<'_>,
    xs: &Tensor,
    z_samples: &[Vec<Vec<f64>>],
    weights: &[Vec<f64>],
    cfg: &RlConfig,
    duals: &mut super::agents::Duals,
) -> Result<FitOutcome> {
    let b = xs.rows();
    let k = comps.len();
    let n_z = comps[0].hyper.out_dim;
    let s_count = z_samples[0].len();
    let tape = Tape::new();
    let x = tape.constant(xs.clone());

    // Bind: set 0 = categorical head (when present), sets 1.. = components.
    let log_cat = cat.as_ref().map(|c| c.log_probs_nodes(&tape, x));
    let comp_nodes: Vec<(NodeRef, NodeRef)> = comps
        .iter()
        .enumerate()
        .map(|(c, p)| p.dist_nodes_in(&tape, 1 + c, x))
        .collect();

    // Old (target) distributions as constants.
    let old_cat_logp = cat_old.map(|oc| {
        let probs = oc.probs_batch(xs);
        let mut lp = probs.clone();
        for v in lp.data_mut() {
            *v = v.ln();
        }
        tape.constant(lp)
    });
    let old_comp: Vec<(NodeRef, NodeRef)> = comps_old
        .iter()
        .map(|p| {
            let (m, s) = p.dist_batch(xs);
            (tape.constant(m), tape.constant(s))
        })
        .collect();

    // Weighted negative log-likelihood of the sampled latents.
    let mut nll_acc: Option<NodeRef> = None;
    for s in 0..s_count {
        let z = tape.constant(batch_matrix(
            (0..b).map(|i| z_samples[i][s].clone()),
            n_z,
        ));
        let mut lps: Vec<NodeRef> = Vec::with_capacity(k);
        for (c, &(mean, std)) in comp_nodes.iter().enumerate() {
            let mut lp = gauss_log_prob_rows(&tape, mean, std, z);
            if let Some(lc) = log_cat {
                lp = tape.add(lp, tape.col(lc, c));
            }
            lps.push(lp);
        }
        let log_mix = if lps.len() == 1 {
            lps[0]
        } else {
            tape.logsumexp_rows(tape.concat_cols(&lps))
        };
        let w_col = tape.constant(Tensor::matrix(
            b,
            1,
            (0..b).map(|i| weights[i][s]).collect(),
        )?);
        let term = tape.mul(w_col, log_mix);
        nll_acc = Some(match nll_acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    let mut loss = tape.neg(tape.mean_all(nll_acc.expect("at least one sample")));

    // Uniform-prior regularizer on the categorical head.
    if let (Some(lc), true) = (log_cat, cfg.eta_y != 0.0) {
        let p = tape.exp(lc);
        let kl_unif = tape.add_const(
            tape.mean_all(tape.row_sum(tape.mul(p, lc))),
            (k as f64).ln(),
        );
        loss = tape.add(loss, tape.scale(kl_unif, cfg.eta_y));
    }

    // Component anchors.
    if cfg.eta_z != 0.0 {
        let anchor_nodes: Option<Vec<(NodeRef, NodeRef)>> = match &anchors {
            AnchorKind::None => None,
            AnchorKind::StdNormal => {
                let zeros = Tensor::zeros(vec![b, n_z]);
                let mut ones = Tensor::zeros(vec![b, n_z]);
                ones.fill(1.0);
                let m = tape.constant(zeros);
                let s = tape.constant(ones);
                Some(vec![(m, s); k])
            }
            AnchorKind::Policies(ps) => Some(
                ps.iter()
                    .map(|p| {
                        let (m, s) = p.dist_batch(xs);
                        (tape.constant(m), tape.constant(s))
                    })
                    .collect(),
            ),
        };
        if let Some(anchor_nodes) = anchor_nodes {
            let mut acc: Option<NodeRef> = None;
            for (&(mean, std), &(am, astd)) in comp_nodes.iter().zip(&anchor_nodes) {
                let kl = tape.mean_all(gauss_kl_rows(&tape, mean, std, am, astd));
                acc = Some(match acc {
                    None => kl,
                    Some(a) => tape.add(a, kl),
                });
            }
            loss = tape.add(loss, tape.scale(acc.unwrap(), cfg.eta_z));
        }
    }

    // Decoupled trust regions against the old policy.
    if let (Some(lc), Some(olc)) = (log_cat, old_cat_logp) {
        let p = tape.exp(lc);
        let kl_cat = tape.mean_all(tape.row_sum(tape.mul(p, tape.sub(lc, olc))));
        loss = tape.add(loss, tape.scale(kl_cat, duals.alpha_cat));
    }
    {
        // Mean constraint: KL with stddev pinned to the old value.
        let mut acc_mu: Option<NodeRef> = None;
        let mut acc_sigma: Option<NodeRef> = None;
        for (&(mean, std), &(om, os)) in comp_nodes.iter().zip(&old_comp) {
            let dz = tape.div(tape.sub(mean, om), os);
            let kl_mu = tape.scale(tape.mean_all(tape.row_sum(tape.square(dz))), 0.5);
            acc_mu = Some(match acc_mu {
                None => kl_mu,
                Some(a) => tape.add(a, kl_mu),
            });
            // Stddev constraint: KL with mean pinned to the old value.
            let ratio = tape.div(std, os);
            let per_dim = tape.add_const(
                tape.sub(tape.scale(tape.square(ratio), 0.5), tape.ln(ratio)),
                -0.5,
            );
            let kl_sigma = tape.mean_all(tape.row_sum(per_dim));
            acc_sigma = Some(match acc_sigma {
                None => kl_sigma,
                Some(a) => tape.add(a, kl_sigma),
            });
        }
        let scale = 1.0 / k as f64;
        loss = tape.add(loss, tape.scale(acc_mu.unwrap(), duals.alpha_mu * scale));
        loss = tape.add(loss, tape.scale(acc_sigma.unwrap(), duals.alpha_sigma * scale));
    }

    let loss_value = tape.value_scalar(loss);
    tape.backward(loss)?;

    // Route gradients: set 0 is the categorical head (or a discarded dummy
    // when the policy has no head), sets 1.. are the components.
    let mut dummy = crate::numerics::ParamSet::new();
    {
        for p in comps.iter_mut() {
            p.params.clear_grads();
        }
        let mut refs: Vec<&mut crate::numerics::ParamSet> = Vec::with_capacity(1 + k);
        match cat {
            Some(c) => {
                c.params.clear_grads();
                refs.push(&mut c.params);
            }
            None => refs.push(&mut dummy),
        }
        refs.extend(comps.iter_mut().map(|p| &mut p.params));
        tape.write_grads_multi(&mut refs);
    }

    Ok(FitOutcome {
        loss: loss_value,
        ..Default::default()
    })
}

/// One full learner iteration.
pub fn learner_step(
    agent: &mut Agent,
    replay: &super::ReplayBuffer,
    cfg: &RlConfig,
    rng: &mut impl Rng,
) -> Result<LearnerMetrics> {
    let batch = replay.sample(cfg.batch, rng);
    let targets = critic_targets(agent, &batch, cfg.gamma, cfg.action_samples, rng);
    let critic_loss = critic_update(agent, &batch, &targets, cfg.lr)?;

    let metrics = match agent.kind {
        AgentKind::Cat => {
            let xs = batch_matrix(batch.iter().map(|t| t.x_ml.clone()), batch[0].x_ml.len());
            let q = agent.critic.values_batch(&xs);
            let p = agent.cat.as_ref().unwrap().probs_batch(&xs);
            let q_rows: Vec<Vec<f64>> = (0..xs.rows()).map(|r| q.row_slice(r).to_vec()).collect();
            let p_rows: Vec<Vec<f64>> = (0..xs.rows()).map(|r| p.row_slice(r).to_vec()).collect();
            let sol = solve_nonparametric(&q_rows, &p_rows, cfg.eps_e);
            agent.duals.eta = sol.eta;
            let old = agent.cat_target.clone().unwrap();
            let mut alpha = agent.duals.alpha_m;
            let out = fit_categorical_policy(
                agent.cat.as_mut().unwrap(),
                &old,
                &xs,
                &sol.weights,
                cfg.eps_m,
                cfg.eta_y,
                &mut alpha,
                cfg.lr,
                cfg.dual_lr,
            )?;
            agent.duals.alpha_m = alpha;
            LearnerMetrics {
                critic_loss,
                eta: sol.eta,
                kl_cat: out.kl_cat,
                kl_mu: 0.0,
                kl_sigma: 0.0,
            }
        }
        _ => continuous_improvement(agent, &batch, cfg, critic_loss, rng)?,
    };
    Ok(metrics)
}

fn continuous_improvement(
    agent: &mut Agent,
    batch: &[&Transition],
    cfg: &RlConfig,
    critic_loss: f64,
    rng: &mut impl Rng,
) -> Result<LearnerMetrics> {
    let b = batch.len();
    let s_count = cfg.action_samples;
    let xs = batch_matrix(batch.iter().map(|t| t.x_ml.clone()), batch[0].x_ml.len());

    // Sample candidate latents from the target policy and score them with
    // the freshly updated critic.
    let mut z_samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(b);
    for t in batch {
        let zs: Vec<Vec<f64>> = (0..s_count)
            .map(|_| agent.sample_target_latent(&t.x_ml, rng))
            .collect();
        z_samples.push(zs);
    }
    let d = agent.critic.hyper.in_dim;
    let q_in = batch_matrix(
        batch.iter().enumerate().flat_map(|(i, t)| {
            z_samples[i]
                .iter()
                .map(move |z| concat_state_latent(&t.x_ml, z))
        }),
        d,
    );
    let q_flat = agent.critic.values_batch(&q_in);
    let q_rows: Vec<Vec<f64>> = (0..b)
        .map(|i| (0..s_count).map(|s| q_flat.at(i * s_count + s, 0)).collect())
        .collect();
    let priors = vec![vec![1.0 / s_count as f64; s_count]; b];
    let sol = solve_nonparametric(&q_rows, &priors, cfg.eps_e);
    agent.duals.eta = sol.eta;

    let cat_old = agent.cat_target.clone();
    let comps_old = agent.comps_target.clone();
    let anchors_owned = agent.comps_anchor.clone();
    let anchors = match agent.kind {
        AgentKind::Mix => AnchorKind::Policies(&anchors_owned),
        AgentKind::Npmp => AnchorKind::StdNormal,
        _ => AnchorKind::None,
    };
    let mut duals = agent.duals.clone();
    fit_latent_policy(
        agent.cat.as_mut(),
        &mut agent.comps,
        cat_old.as_ref(),
        &comps_old,
        anchors,
        &xs,
        &z_samples,
        &sol.weights,
        cfg,
        &mut duals,
    )?;

    // Adam on every bound actor set.
    if let Some(c) = agent.cat.as_mut() {
        let g = &mut c.params.groups[0];
        let next = g.step + 1;
        adam_update(g, cfg.lr, next);
    }
    for p in agent.comps.iter_mut() {
        let g = &mut p.params.groups[0];
        let next = g.step + 1;
        adam_update(g, cfg.lr, next);
    }

    // Post-step divergences from the old policy drive the dual ascent.
    let (kl_cat, kl_mu, kl_sigma) =
        measure_divergences(agent, &cat_old, &comps_old, &xs);
    duals.alpha_cat = (duals.alpha_cat + cfg.dual_lr * (kl_cat - cfg.eps_cat)).clamp(0.0, 1e6);
    duals.alpha_mu = (duals.alpha_mu + cfg.dual_lr * (kl_mu - cfg.eps_mu)).clamp(0.0, 1e6);
    duals.alpha_sigma =
        (duals.alpha_sigma + cfg.dual_lr * (kl_sigma - cfg.eps_sigma)).clamp(0.0, 1e6);
    agent.duals = duals;

    Ok(LearnerMetrics {
        critic_loss,
        eta: sol.eta,
        kl_cat,
        kl_mu,
        kl_sigma,
    })
}

/// Batch-mean decoupled divergences between the live actor and an old copy.
pub fn measure_divergences(
    agent: &Agent,
    cat_old: &Option<super::agents::CatActor>,
    comps_old: &[GaussianPolicy],
    xs: &Tensor,
) -> (f64, f64, f64) {
    let b = xs.rows();
    let mut kl_cat = 0.0;
    if let (Some(c), Some(oc)) = (&agent.cat, cat_old) {
        let pn = c.probs_batch(xs);
        let po = oc.probs_batch(xs);
        for r in 0..b {
            for k in 0..c.hyper.k {
                let p = pn.at(r, k);
                if p > 0.0 {
                    kl_cat += p * (p.ln() - po.at(r, k).ln());
                }
            }
        }
        kl_cat /= b as f64;
    }
    let mut kl_mu = 0.0;
    let mut kl_sigma = 0.0;
    for (p, po) in agent.comps.iter().zip(comps_old) {
        let (mn, sn) = p.dist_batch(xs);
        let (mo, so) = po.dist_batch(xs);
        for i in 0..mn.numel() {
            let dm = (mn.data()[i] - mo.data()[i]) / so.data()[i];
            kl_mu += 0.5 * dm * dm;
            let r = sn.data()[i] / so.data()[i];
            kl_sigma += 0.5 * r * r - r.ln() - 0.5;
        }
    }
    let denom = (b * agent.comps.len()) as f64;
    (kl_cat, kl_mu / denom, kl_sigma / denom)
}
