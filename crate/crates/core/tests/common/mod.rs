//! Shared test oracles, independent of the implementation paths they check.

use skillmix::datasets::TrajectoryWindow;
use skillmix::skillmodel::{SkillModel, ZNoise};

/// Relative error with an absolute floor for near-zero references.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Brute-force evidence bound by explicit enumeration of every discrete
/// path, marginalizing the initial skill inside the path weight.
///
/// For each path `(y_0, ..., y_T)` the integrand is
/// `sum_t [ log p(a_t | z~_{t, y_t}) - beta_z KL_z(t, y_t)
///          - beta_y (log q(y_t|y_{t-1}, x_t) - log p(y_t|y_{t-1})) ]`
/// weighted by `p(y_0) prod_t q(y_t | y_{t-1}, x_t)`. The latent samples
/// `z~` are the same reparameterized draws the recursion uses, so the two
/// routes agree exactly in expectation.
pub fn elbo_enumeration(model: &SkillModel, window: &TrajectoryWindow, noise: &ZNoise) -> f64 {
    let k = model.hyper.k;
    let t_len = window.len();
    let beta_y = model.hyper.beta_y;
    let beta_z = model.hyper.beta_z;

    // Per-step tables from the model's single-sample inference ops.
    let mut heads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(t_len); // [t][prev][next]
    let mut logp_a: Vec<Vec<f64>> = Vec::with_capacity(t_len); // [t][component]
    let mut klz: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    for (t, step) in window.steps.iter().enumerate() {
        heads.push(
            model
                .encode_high_all(&step.views.x_hl)
                .into_iter()
                .map(|d| d.probs)
                .collect(),
        );
        let mut lp_row = Vec::with_capacity(k);
        let mut kl_row = Vec::with_capacity(k);
        for c in 0..k {
            let mid = model.encode_mid(c, &step.views.x_ml).unwrap();
            let eps = noise.eps[t][c].row_slice(0);
            let z = if model.hyper.discrete_only {
                mid.mean.clone()
            } else {
                mid.rsample(eps)
            };
            let act = model.decode_action(&z, &step.views.x_ll);
            lp_row.push(act.log_prob(&step.action));
            kl_row.push(mid.kl_to(&skillmix::numerics::DiagGaussian::standard(mid.dim())));
        }
        logp_a.push(lp_row);
        klz.push(kl_row);
    }
    let log_trans: Vec<Vec<f64>> = (0..k)
        .map(|j| model.transition_prior(j).log_probs())
        .collect();

    // Depth-first walk over all K^(T+1) paths.
    fn walk(
        t: usize,
        prev: usize,
        weight: f64,
        partial: f64,
        t_len: usize,
        k: usize,
        heads: &[Vec<Vec<f64>>],
        logp_a: &[Vec<f64>],
        klz: &[Vec<f64>],
        log_trans: &[Vec<f64>],
        beta_y: f64,
        beta_z: f64,
    ) -> f64 {
        if t == t_len {
            return weight * partial;
        }
        let mut acc = 0.0;
        for y in 0..k {
            let q = heads[t][prev][y];
            if q == 0.0 {
                continue;
            }
            let term = logp_a[t][y] - beta_z * klz[t][y] - beta_y * (q.ln() - log_trans[prev][y]);
            acc += walk(
                t + 1,
                y,
                weight * q,
                partial + term,
                t_len,
                k,
                heads,
                logp_a,
                klz,
                log_trans,
                beta_y,
                beta_z,
            );
        }
        acc
    }

    let mut total = 0.0;
    for y0 in 0..k {
        total += walk(
            0,
            y0,
            1.0 / k as f64,
            0.0,
            t_len,
            k,
            &heads,
            &logp_a,
            &klz,
            &log_trans,
            beta_y,
            beta_z,
        );
    }
    total
}

/// Independent solver for the regularized categorical fit: plain gradient
/// descent on logits of `CE(w, pi) + eta_y KL(pi || uniform)`.
pub fn categorical_fit_oracle(weights: &[f64], eta_y: f64, iters: usize, lr: f64) -> Vec<f64> {
    let k = weights.len();
    let mut logits = vec![0.0; k];
    for _ in 0..iters {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        let p: Vec<f64> = exps.iter().map(|e| e / s).collect();
        // d/dlogits CE = p - w; d/dlogits KL(p || u) = p * (log p + log K - sum_j p_j (log p_j + log K)).
        let klg: Vec<f64> = {
            let inner: Vec<f64> = p
                .iter()
                .map(|&pi| pi.ln() + (k as f64).ln())
                .collect();
            let mean: f64 = p.iter().zip(&inner).map(|(&pi, &ii)| pi * ii).sum();
            p.iter()
                .zip(&inner)
                .map(|(&pi, &ii)| pi * (ii - mean))
                .collect()
        };
        for i in 0..k {
            logits[i] -= lr * ((p[i] - weights[i]) + eta_y * klg[i]);
        }
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Total variation distance between two categorical distributions.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
