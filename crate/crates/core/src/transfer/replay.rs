//! Fixed-capacity ring of short trajectory snippets with uniform sampling.

use rand::Rng;

/// The latent the agent chose at a step: a discrete skill, a continuous
/// latent, or a raw action for the flat baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Skill(usize),
    Z(Vec<f64>),
    Action(Vec<f64>),
}

/// One environment step as seen by the learner. Views are those available
/// online (no lookahead exists at RL time).
#[derive(Debug, Clone)]
pub struct Transition {
    pub x_ml: Vec<f64>,
    pub x_ll: Vec<f64>,
    pub latent: Latent,
    pub reward: f64,
    pub x_ml_next: Vec<f64>,
    pub terminal: bool,
}

pub type Snippet = Vec<Transition>;

#[derive(Debug, Default)]
pub struct ReplayBuffer {
    snippets: std::collections::VecDeque<Snippet>,
    capacity: usize,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            snippets: std::collections::VecDeque::new(),
            capacity,
            transitions: 0,
        }
    }

    pub fn push(&mut self, snippet: Snippet) {
        if snippet.is_empty() {
            return;
        }
        self.transitions += snippet.len();
        self.snippets.push_back(snippet);
        while self.snippets.len() > self.capacity {
            if let Some(old) = self.snippets.pop_front() {
                self.transitions -= old.len();
            }
        }
    }

    pub fn len_snippets(&self) -> usize {
        self.snippets.len()
    }

    pub fn len_transitions(&self) -> usize {
        self.transitions
    }

    /// Uniform over stored transitions: pick a snippet weighted by length,
    /// then an offset.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut impl Rng) -> Vec<&'a Transition> {
        assert!(self.transitions > 0, "sampling from an empty replay buffer");
        (0..batch)
            .map(|_| {
                let mut idx = rng.gen_range(0..self.transitions);
                for s in &self.snippets {
                    if idx < s.len() {
                        return &s[idx];
                    }
                    idx -= s.len();
                }
                unreachable!("transition count out of sync")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn snippet(n: usize, tag: f64) -> Snippet {
        (0..n)
            .map(|i| Transition {
                x_ml: vec![tag, i as f64],
                x_ll: vec![tag],
                latent: Latent::Skill(0),
                reward: tag,
                x_ml_next: vec![tag],
                terminal: false,
            })
            .collect()
    }

    #[test]
    fn capacity_bound_respected() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..10 {
            buf.push(snippet(10, i as f64));
        }
        assert_eq!(buf.len_snippets(), 3);
        assert_eq!(buf.len_transitions(), 30);
        // The oldest snippets were evicted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in buf.sample(64, &mut rng) {
            assert!(t.reward >= 7.0);
        }
    }

    #[test]
    fn empty_snippets_ignored() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(vec![]);
        assert_eq!(buf.len_snippets(), 0);
    }
}
