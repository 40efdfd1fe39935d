//! The nonparametric policy-improvement step: critic-weighted reweighting of
//! sampled latents under a KL trust region, with the temperature found by a
//! bisection solve of the convex dual.

pub const ETA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 1e6;
const ETA_REL_TOL: f64 = 1e-8;

/// `q_i ∝ prior_i * exp(q_values_i / eta)`, normalized.
pub fn nonparametric_weights(q_values: &[f64], prior: &[f64], eta: f64) -> Vec<f64> {
    debug_assert_eq!(q_values.len(), prior.len());
    let m = q_values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = q_values
        .iter()
        .zip(prior)
        .map(|(&q, &p)| p * ((q - m) / eta).exp())
        .collect();
    let s: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|u| u / s).collect()
}

/// `KL(q_eta || prior)` for one state's samples.
fn kl_at(q_values: &[f64], prior: &[f64], eta: f64) -> f64 {
    let w = nonparametric_weights(q_values, prior, eta);
    w.iter()
        .zip(prior)
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(&wi, &pi)| wi * (wi / pi).ln())
        .sum()
}

/// Result of the nonparametric step over a batch of states.
#[derive(Debug, Clone)]
pub struct NonparametricStep {
    /// Per-state normalized weights over that state's sampled latents.
    pub weights: Vec<Vec<f64>>,
    pub eta: f64,
    /// Mean `KL(q || prior)` at the solved temperature.
    pub kl: f64,
}

/// Solve for the temperature so that the batch-mean `KL(q || prior)` meets
/// `eps_e`, then return the reweighted sample distributions.
///
/// The mean KL decreases monotonically in the temperature, so the dual
/// stationarity condition `mean KL = eps_e` is solved by bisection on
/// `[ETA_MIN, ETA_MAX]`. Constant Q-values leave the prior untouched for any
/// temperature; that degenerate case returns the prior with the temperature
/// parked at the upper bound.
pub fn solve_nonparametric(
    q_values: &[Vec<f64>],
    priors: &[Vec<f64>],
    eps_e: f64,
) -> NonparametricStep {
    assert_eq!(q_values.len(), priors.len());
    assert!(!q_values.is_empty());
    assert!(eps_e > 0.0, "eps_e must be positive");
    for (q, p) in q_values.iter().zip(priors) {
        assert!(q.len() >= 2, "need at least two sampled latents");
        assert_eq!(q.len(), p.len());
    }

    let mean_kl = |eta: f64| -> f64 {
        q_values
            .iter()
            .zip(priors)
            .map(|(q, p)| kl_at(q, p, eta))
            .sum::<f64>()
            / q_values.len() as f64
    };

    let spread = q_values
        .iter()
        .map(|q| {
            let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
        .fold(0.0, f64::max);
    if spread <= 1e-300 {
        let weights = priors.to_vec();
        return NonparametricStep {
            weights,
            eta: ETA_MAX,
            kl: 0.0,
        };
    }

    // KL is largest at the smallest temperature. If even that cannot reach
    // eps_e the constraint is slack everywhere; the dual then pushes the
    // temperature to its lower bound (maximal greediness).
    let (mut lo, mut hi) = (ETA_MIN, ETA_MAX);
    let kl_lo = mean_kl(lo);
    let eta = if kl_lo <= eps_e {
        lo
    } else if mean_kl(hi) >= eps_e {
        hi
    } else {
        // Invariant: kl(lo) > eps_e > kl(hi).
        while (hi - lo) / hi > ETA_REL_TOL {
            let mid = (lo * hi).sqrt();
            if mean_kl(mid) > eps_e {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    };

    let weights = q_values
        .iter()
        .zip(priors)
        .map(|(q, p)| nonparametric_weights(q, p, eta))
        .collect();
    NonparametricStep {
        weights,
        eta,
        kl: mean_kl(eta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_q_returns_prior_with_eta_at_upper_bound() {
        let q = vec![vec![0.7, 0.7, 0.7]];
        let p = vec![vec![0.5, 0.3, 0.2]];
        let s = solve_nonparametric(&q, &p, 0.1);
        assert_eq!(s.eta, ETA_MAX);
        for (w, pi) in s.weights[0].iter().zip(&p[0]) {
            assert!((w - pi).abs() < 1e-10);
        }
    }

    #[test]
    fn worked_two_sample_example_at_fixed_unit_temperature() {
        // q ∝ exp(Q) with uniform prior: (e/(e+1), 1/(e+1)).
        let w = nonparametric_weights(&[1.0, 0.0], &[0.5, 0.5], 1.0);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-6);
        assert!((w[1] - 1.0 / (e + 1.0)).abs() < 1e-6);
        assert!((w[0] - 0.731).abs() < 1e-3);
        assert!((w[1] - 0.269).abs() < 1e-3);
    }

    #[test]
    fn huge_eps_makes_the_step_greedy() {
        let q = vec![vec![1.0, 0.0]];
        let p = vec![vec![0.5, 0.5]];
        let s = solve_nonparametric(&q, &p, 50.0);
        assert!(s.eta < 1e-3, "eta = {}", s.eta);
        assert!(s.weights[0][0] > 0.999);
    }

    #[test]
    fn constraint_binds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(4..20);
            let states = rng.gen_range(1..6);
            let q: Vec<Vec<f64>> = (0..states)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let priors: Vec<Vec<f64>> = (0..states)
                .map(|_| {
                    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / s).collect()
                })
                .collect();
            let eps = rng.gen_range(0.02..0.2);
            let sol = solve_nonparametric(&q, &priors, eps);
            assert!(
                sol.kl <= eps + 1e-6 && sol.kl >= 0.9 * eps,
                "kl {} vs eps {eps}",
                sol.kl
            );
            for w in &sol.weights {
                let s: f64 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weights_monotone_in_q_under_equal_prior() {
        let q = vec![vec![0.3, -0.2, 0.9, 0.1]];
        let p = vec![vec![0.25; 4]];
        let s = solve_nonparametric(&q, &p, 0.05);
        let w = &s.weights[0];
        let mut pairs: Vec<(f64, f64)> = q[0].iter().cloned().zip(w.iter().cloned()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for win in pairs.windows(2) {
            assert!(win[0].1 <= win[1].1 + 1e-12);
        }
    }
}
