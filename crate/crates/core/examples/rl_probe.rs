//! Calibration probe: offline training quality and transfer learning curves
//! at small scale. Not part of the test suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillmix::datasets::{ActionRanges, Dataset, EpisodeMeta, Manifest, TrajectoryRecord};
use skillmix::simenv::*;
use skillmix::skillmodel::*;
use skillmix::transfer::*;
use std::sync::Arc;
use std::time::Instant;

fn gen_dataset(episodes: usize, noise: f64, seed: u64, profile: &ObjectProfile) -> Dataset {
    let spec = task_spec(Task::StackRedOnBlue, RewardMode::StagedSparse);
    let ranges = ActionRanges(ACTION_RANGES.to_vec());
    let mut eps = Vec::new();
    for i in 0..episodes {
        let ep_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut env = SimEnv::new(profile.clone(), spec.clone());
        let mut obs = env.reset(ep_seed);
        let mut expert = ScriptedExpert::new(RED, BLUE, noise, ep_seed ^ 0xE0);
        let (mut states, mut actions, mut rewards, mut phases) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..EPISODE_LEN {
            let (a, ph) = expert.act(&env.state, profile);
            let clipped: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            states.push(obs.clone());
            actions.push(ranges.denormalize(&clipped));
            phases.push(ph.to_string());
            let out = env.step(&clipped);
            rewards.push(out.reward);
            obs = out.obs;
        }
        eps.push(TrajectoryRecord {
            states,
            actions,
            rewards,
            phases: Some(phases),
            meta: EpisodeMeta {
                profile: profile.name.clone(),
                seed: ep_seed,
                task: "stack_red_on_blue".into(),
                pair: None,
            },
        });
    }
    Dataset {
        manifest: Manifest {
            action_ranges: ranges,
            profile: profile.name.clone(),
            task: "stack_red_on_blue".into(),
            episodes: vec![],
            checksum: String::new(),
        },
        episodes: eps,
        root: std::path::PathBuf::new(),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("offline");
    let profile = ObjectProfile::easy();

    let t0 = Instant::now();
    let dataset = gen_dataset(600, 0.1, 7, &profile);
    println!("dataset: 600 episodes in {:.1?}", t0.elapsed());

    let t0 = Instant::now();
    let mut hyper = ModelHyper::defaults(5);
    hyper.hidden = vec![48, 48];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = SkillModel::init(hyper, &mut rng);
    let steps: usize = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(2400);
    let lr: f64 = std::env::args().nth(3).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    for chunk in 0..(steps / 400) {
        let cfg = TrainConfig {
            steps: 400,
            batch: 48,
            window_len: 25,
            stride: 25,
            lr,
            seed: 2 + chunk as u64,
        };
        let out = train_skills(&dataset, &mut model, &cfg).unwrap();
        let last = &out.metrics[out.metrics.len() - 1];
        let usage = usage_histogram(&model, &dataset, 25, 600);
        let diag = transition_diag_mean(&model);
        let mi = mutual_information_skill_phase(&model, &dataset, 25, 600);
        println!(
            "step {:>5} ({:>5.1?}): total {:>8.2} recon {:>8.2} kl_z {:>7.2} kl_y {:>6.3} diag {diag:.3} mi {mi:.3} usage {usage:?}",
            (chunk + 1) * 400,
            t0.elapsed(),
            last.total,
            last.recon,
            last.kl_z,
            last.kl_y
        );
    }

    if mode == "offline" {
        return;
    }

    let kind = AgentKind::parse(mode).unwrap_or(AgentKind::Cat);
    let mut rl = RlConfig::defaults(kind);
    rl.hidden = vec![48, 48];
    rl.critic_hidden = vec![64, 64];
    rl.batch = 96;
    rl.lr = 5e-4;
    rl.actors = 8;
    rl.env_steps = 40_000;
    rl.steps_per_round = 800;
    rl.learner_steps_per_round = 40;
    rl.warmup_transitions = 2_000;
    rl.eval_every_rounds = 5;
    rl.eval_episodes = 4;
    rl.target_period = 50;
    rl.seed = 3;
    let t0 = Instant::now();
    let outcome = rl_loop(
        &rl,
        Some(Arc::new(model)),
        None,
        &profile,
        Task::StackRedOnBlue,
        RewardMode::StagedSparse,
        2,
    )
    .unwrap();
    println!("rl {} in {:.1?}:", mode, t0.elapsed());
    for r in &outcome.curve {
        println!(
            "  env {:>6} learner {:>5} return {:>7.2} staged {:>7.2} klcat {:.4} eta {:.3}",
            r.env_steps, r.learner_steps, r.mean_return, r.staged_return, r.kl_cat, r.eta
        );
    }
}
