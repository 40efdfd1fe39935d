use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian with strictly positive per-dimension stddev.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::Contract(format!(
                "gaussian dims differ: mean {} vs stddev {}",
                mean.len(),
                stddev.len()
            )));
        }
        if stddev.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Contract(
                "gaussian stddev must be strictly positive".into(),
            ));
        }
        Ok(DiagGaussian { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Exact log density at `x`.
    pub fn log_prob(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut lp = -0.5 * self.dim() as f64 * LN_2PI;
        for i in 0..self.dim() {
            let z = (x[i] - self.mean[i]) / self.stddev[i];
            lp -= 0.5 * z * z + self.stddev[i].ln();
        }
        lp
    }

    /// Closed-form `KL(self || other)` for diagonal Gaussians.
    pub fn kl_to(&self, other: &DiagGaussian) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let mut kl = 0.0;
        for i in 0..self.dim() {
            let r = self.stddev[i] / other.stddev[i];
            let d = (self.mean[i] - other.mean[i]) / other.stddev[i];
            kl += 0.5 * (r * r + d * d) - r.ln() - 0.5;
        }
        kl
    }

    /// Reparameterized sample `mean + stddev * noise`.
    pub fn rsample(&self, noise: &[f64]) -> Vec<f64> {
        debug_assert_eq!(noise.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.stddev)
            .zip(noise)
            .map(|((m, s), n)| m + s * n)
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.rsample(&noise)
    }
}

/// Distribution over `K` outcomes. Probabilities are kept normalized to 1
/// within 1e-10.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    pub probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Contract("categorical probs must be finite and nonnegative".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "categorical probs sum to {s}, expected 1"
            )));
        }
        Ok(CategoricalDist { probs })
    }

    pub fn uniform(k: usize) -> Self {
        CategoricalDist {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        CategoricalDist {
            probs: exps.into_iter().map(|e| e / s).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    /// `sum_i p_i (log p_i - log q_i)` with the `0 log 0 = 0` convention.
    /// A zero in `q` where `p` is positive yields `+inf` as a diagnostic
    /// value rather than an error.
    pub fn kl_to(&self, other: &CategoricalDist) -> f64 {
        debug_assert_eq!(self.k(), other.k());
        let mut kl = 0.0;
        for (p, q) in self.probs.iter().zip(&other.probs) {
            if *p == 0.0 {
                continue;
            }
            if *q == 0.0 {
                return f64::INFINITY;
            }
            kl += p * (p.ln() - q.ln());
        }
        kl
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }

    pub fn argmax(&self) -> usize {
        // First index wins on exact ties.
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut cdf = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cdf += p;
            if u < cdf {
                return i;
            }
        }
        self.k() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let g = DiagGaussian::new(vec![0.4, -2.0], vec![0.3, 1.7]).unwrap();
        assert!(g.kl_to(&g).abs() < 1e-15);
    }

    #[test]
    fn kl_unit_shift_closed_form_and_monte_carlo() {
        let p = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let q = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let kl = p.kl_to(&q);
        assert!((kl - 0.5).abs() < 1e-14);

        // Monte-Carlo cross-check: E_p[log p - log q] over 1e6 samples.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = p.sample(&mut rng);
            let d = p.log_prob(&x) - q.log_prob(&x);
            sum += d;
            sum_sq += d * d;
        }
        let est = sum / n as f64;
        let var = (sum_sq / n as f64 - est * est).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (est - 0.5).abs() < 3.0 * se,
            "mc estimate {est} outside 3 standard errors ({se}) of 0.5"
        );
    }

    #[test]
    fn log_prob_at_mean_matches_density_formula() {
        let g = DiagGaussian::new(vec![0.7], vec![0.1]).unwrap();
        let expect = (1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).ln();
        assert!((g.log_prob(&[0.7]) - expect).abs() < 1e-14);
    }

    #[test]
    fn rsample_zero_noise_returns_mean() {
        let g = DiagGaussian::new(vec![0.2, -0.9, 4.0], vec![0.5, 0.01, 2.0]).unwrap();
        assert_eq!(g.rsample(&[0.0, 0.0, 0.0]), g.mean);
    }

    #[test]
    fn nonpositive_stddev_rejected() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn categorical_kl_cases() {
        let u = CategoricalDist::uniform(4);
        assert_eq!(u.kl_to(&u), 0.0);

        let p = CategoricalDist::new(vec![1.0, 0.0]).unwrap();
        let q = CategoricalDist::new(vec![0.5, 0.5]).unwrap();
        assert!((p.kl_to(&q) - 2f64.ln()).abs() < 1e-14);

        // Zero in q where p is positive: +inf diagnostic, not an error.
        let q0 = CategoricalDist::new(vec![0.0, 1.0]).unwrap();
        assert!(p.kl_to(&q0).is_infinite());
    }

    #[test]
    fn entropy_of_uniform_is_log_k() {
        let u = CategoricalDist::uniform(5);
        assert!((u.entropy() - 5f64.ln()).abs() < 1e-14);
    }
}
