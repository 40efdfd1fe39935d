//! Post-training inspection: skill usage, transition structure, alignment
//! with expert phases, and fixed-skill rollouts.

use super::{PosteriorState, SkillModel};
use crate::datasets::{build_views, Dataset, EpisodeMeta, OnlineViews, TrajectoryRecord};
use crate::simenv::{SimEnv, ACTION_RANGES};
use rand::Rng;

/// Argmax skill-assignment counts over dataset steps, via the forward
/// recursion restarted at every window. First index wins exact ties.
pub fn usage_histogram(
    model: &SkillModel,
    dataset: &Dataset,
    window_len: usize,
    max_windows: usize,
) -> Vec<u64> {
    let mut counts = vec![0u64; model.hyper.k];
    for_each_window_assignment(model, dataset, window_len, max_windows, |skill, _| {
        counts[skill] += 1;
    });
    counts
}

/// Mean diagonal mass of the learned transition prior.
pub fn transition_diag_mean(model: &SkillModel) -> f64 {
    let m = model.transition_matrix();
    let k = model.hyper.k;
    (0..k).map(|i| m[i][i]).sum::<f64>() / k as f64
}

/// Mutual information (nats) between the argmax skill assignment and the
/// scripted-expert phase label, over the dataset.
pub fn mutual_information_skill_phase(
    model: &SkillModel,
    dataset: &Dataset,
    window_len: usize,
    max_windows: usize,
) -> f64 {
    let mut phases: Vec<String> = Vec::new();
    let mut joint: std::collections::HashMap<(usize, usize), u64> = std::collections::HashMap::new();
    let mut total = 0u64;
    for_each_window_assignment(model, dataset, window_len, max_windows, |skill, step_phase| {
        let Some(label) = step_phase else { return };
        let pi = match phases.iter().position(|p| p == label) {
            Some(i) => i,
            None => {
                phases.push(label.to_string());
                phases.len() - 1
            }
        };
        *joint.entry((skill, pi)).or_insert(0) += 1;
        total += 1;
    });
    if total == 0 {
        return 0.0;
    }
    let k = model.hyper.k;
    let np = phases.len();
    let mut p_skill = vec![0.0; k];
    let mut p_phase = vec![0.0; np];
    for (&(s, p), &c) in &joint {
        p_skill[s] += c as f64 / total as f64;
        p_phase[p] += c as f64 / total as f64;
    }
    let mut mi = 0.0;
    for (&(s, p), &c) in &joint {
        let pj = c as f64 / total as f64;
        mi += pj * (pj / (p_skill[s] * p_phase[p])).ln();
    }
    mi
}

fn for_each_window_assignment(
    model: &SkillModel,
    dataset: &Dataset,
    window_len: usize,
    max_windows: usize,
    mut visit: impl FnMut(usize, Option<&str>),
) {
    let views = model.hyper.views();
    let mut seen = 0usize;
    'outer: for ep in &dataset.episodes {
        let mut start = 0;
        while start + window_len <= ep.len() {
            let mut q = PosteriorState::uniform(model.hyper.k);
            for t in start..start + window_len {
                let v = build_views(ep, t, &views);
                q = model.posterior_step(&q, &v.x_hl);
                let phase = ep.phases.as_ref().map(|p| p[t].as_str());
                visit(q.argmax(), phase);
            }
            seen += 1;
            if seen >= max_windows {
                break 'outer;
            }
            start += window_len;
        }
    }
}

/// Execute the mid and low levels with the high-level skill held constant.
/// Returns the recorded trajectory (raw actions, env rewards, no phases).
pub fn rollout_fixed_skill(
    env: &mut SimEnv,
    model: &SkillModel,
    skill: usize,
    horizon: usize,
    seed: u64,
    rng: &mut impl Rng,
) -> TrajectoryRecord {
    let obs = env.reset(seed);
    let mut online = OnlineViews::new(model.hyper.views(), &obs);
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut current = obs;
    for _ in 0..horizon {
        let mid = model
            .encode_mid(skill, &online.x_ml())
            .expect("skill index validated by caller");
        let z = mid.sample(rng);
        let act_dist = model.decode_action(&z, &online.x_ll());
        let a = act_dist.sample(rng);
        states.push(current.clone());
        let raw: Vec<f64> = a
            .iter()
            .zip(ACTION_RANGES.iter())
            .map(|(&n, &(lo, hi))| lo + (n.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
            .collect();
        actions.push(raw);
        let out = env.step(&a);
        rewards.push(out.reward);
        online.push(&out.obs);
        current = out.obs;
        if out.done {
            break;
        }
    }
    TrajectoryRecord {
        states,
        actions,
        rewards,
        phases: None,
        meta: EpisodeMeta {
            profile: env.profile.name.clone(),
            seed,
            task: format!("fixed_skill_{skill}"),
            pair: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::{task_spec, ObjectProfile, RewardMode, Task};
    use crate::skillmodel::ModelHyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(k: usize) -> SkillModel {
        let mut h = ModelHyper::defaults(k);
        h.hidden = vec![12, 12];
        h.n_z = 3;
        SkillModel::init(h, &mut ChaCha8Rng::seed_from_u64(11))
    }

    fn env() -> SimEnv {
        SimEnv::new(
            ObjectProfile::easy(),
            task_spec(Task::StackRedOnBlue, RewardMode::Dense),
        )
    }

    #[test]
    fn zero_horizon_gives_empty_trajectory() {
        let m = tiny_model(3);
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout_fixed_skill(&mut e, &m, 0, 0, 0, &mut rng);
        assert!(t.is_empty());
    }

    #[test]
    fn horizon_respected_exactly() {
        let m = tiny_model(3);
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout_fixed_skill(&mut e, &m, 1, 40, 3, &mut rng);
        assert_eq!(t.len(), 40);
    }

    #[test]
    fn different_skills_diverge_from_same_start() {
        let m = tiny_model(3);
        let mut rng_a = ChaCha8Rng::seed_from_u64(9);
        let mut rng_b = ChaCha8Rng::seed_from_u64(9);
        let mut ea = env();
        let mut eb = env();
        let ta = rollout_fixed_skill(&mut ea, &m, 0, 30, 7, &mut rng_a);
        let tb = rollout_fixed_skill(&mut eb, &m, 2, 30, 7, &mut rng_b);
        let msd: f64 = ta
            .actions
            .iter()
            .zip(&tb.actions)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum();
        assert!(msd > 0.0, "distinct skills should act differently");
    }
}
