//! The six pipeline commands.

use super::config::ConfigMap;
use super::report::{fmt, heatmap_svg, line_chart_svg, rollout_svg, write_csv};
use crate::datasets::{ActionRanges, Dataset, EpisodeMeta, TrajectoryRecord};
use crate::simenv::{
    task_spec, ObjectProfile, RewardMode, ScriptedExpert, SimEnv, Task, ACTION_RANGES,
    EPISODE_LEN, OBJECT_NAMES,
};
use crate::skillmodel::{
    bc_train, elbo_window, mutual_information_skill_phase, rollout_fixed_skill, train_skills,
    transition_diag_mean, usage_histogram, BcConfig, GaussianPolicy, ModelHyper, SkillModel,
    TrainConfig, ZNoise,
};
use crate::transfer::{exploration_report, rl_loop, AgentKind, CurveRow, RlConfig, ZeroShotPolicy};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::sync::Arc;

fn out_dir(cfg: &ConfigMap, command: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.get_str("out", &format!("runs/{command}")));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    Ok(dir)
}

fn action_ranges() -> ActionRanges {
    ActionRanges(ACTION_RANGES.to_vec())
}

/// All six ordered (top, bottom) stacking pairs.
fn all_pairs() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                out.push((a, b));
            }
        }
    }
    out
}

const ALL_PAIR_PROFILES: [&str; 4] = ["set4-analog", "set5-analog", "set1-analog", "set3-analog"];

pub fn gen_data(cfg: &ConfigMap) -> Result<()> {
    let episodes: usize = cfg.get("episodes", 2000)?;
    let task = cfg.get_str("task", "stack_red_on_blue");
    let profile_name = cfg.get_str("profile", "set4-analog");
    let noise: f64 = cfg.get("noise", 0.1)?;
    let seed: u64 = cfg.get("seed", 0)?;
    let out = out_dir(cfg, "gen-data")?;
    cfg.reject_unknown()?;

    let all_pairs_mode = task == "all_pairs";
    if !all_pairs_mode && task != "stack_red_on_blue" {
        return Err(Error::Config(format!(
            "unknown data task '{task}' (expected stack_red_on_blue|all_pairs)"
        )));
    }
    let pairs = all_pairs();
    let ranges = action_ranges();
    let mut records = Vec::with_capacity(episodes);
    let mut names = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (top, base, profile) = if all_pairs_mode {
            let (t, b) = pairs[i % pairs.len()];
            let p = ALL_PAIR_PROFILES[(i / pairs.len()) % ALL_PAIR_PROFILES.len()];
            (t, b, ObjectProfile::by_name(p)?)
        } else {
            (
                crate::simenv::RED,
                crate::simenv::BLUE,
                ObjectProfile::by_name(&profile_name)?,
            )
        };
        let ep_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let rec = run_expert_episode(&profile, top, base, noise, ep_seed);
        names.push(if all_pairs_mode {
            format!(
                "ep{i:05}_{}_{}_{}.jsonl",
                OBJECT_NAMES[top], OBJECT_NAMES[base], profile.name
            )
        } else {
            format!("ep{i:05}.jsonl")
        });
        records.push(rec);
    }

    save_named(&out, &records, &names, &ranges, &profile_name, &task)?;
    println!(
        "wrote {} episodes to {} (task {task}, profile {profile_name}, noise {noise})",
        records.len(),
        out.display()
    );
    Ok(())
}

fn run_expert_episode(
    profile: &ObjectProfile,
    top: usize,
    base: usize,
    noise: f64,
    seed: u64,
) -> TrajectoryRecord {
    let spec = task_spec(Task::StackPair(top, base), RewardMode::StagedSparse);
    let mut env = SimEnv::new(profile.clone(), spec);
    let obs0 = env.reset(seed);
    let mut expert = ScriptedExpert::new(top, base, noise, seed ^ 0x00E0_1234);
    let ranges = action_ranges();
    let mut states = Vec::with_capacity(EPISODE_LEN);
    let mut actions = Vec::with_capacity(EPISODE_LEN);
    let mut rewards = Vec::with_capacity(EPISODE_LEN);
    let mut phases = Vec::with_capacity(EPISODE_LEN);
    let mut obs = obs0;
    for _ in 0..EPISODE_LEN {
        let (a, phase) = expert.act(&env.state, profile);
        let clipped: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        states.push(obs.clone());
        actions.push(ranges.denormalize(&clipped));
        phases.push(phase.to_string());
        let step = env.step(&clipped);
        rewards.push(step.reward);
        obs = step.obs;
        if step.done {
            break;
        }
    }
    TrajectoryRecord {
        states,
        actions,
        rewards,
        phases: Some(phases),
        meta: EpisodeMeta {
            profile: profile.name.clone(),
            seed,
            task: format!("stack_{}_{}", OBJECT_NAMES[top], OBJECT_NAMES[base]),
            pair: Some((
                OBJECT_NAMES[top].to_string(),
                OBJECT_NAMES[base].to_string(),
            )),
        },
    }
}

fn save_named(
    root: &Path,
    episodes: &[TrajectoryRecord],
    names: &[String],
    ranges: &ActionRanges,
    profile: &str,
    task: &str,
) -> Result<()> {
    use sha2::{Digest, Sha256};
    std::fs::create_dir_all(root)?;
    let mut hasher = Sha256::new();
    for (ep, name) in episodes.iter().zip(names) {
        ep.validate()?;
        let path = root.join(name);
        crate::simenv::write_episode_jsonl(&path, &ep.to_trace())?;
        hasher.update(std::fs::read(&path)?);
    }
    let manifest = crate::datasets::Manifest {
        action_ranges: ranges.clone(),
        profile: profile.to_string(),
        task: task.to_string(),
        episodes: names.to_vec(),
        checksum: format!("{:x}", hasher.finalize()),
    };
    let mf = std::fs::File::create(root.join(crate::datasets::MANIFEST_NAME))?;
    serde_json::to_writer_pretty(mf, &manifest)?;
    Ok(())
}

fn model_hyper_from(cfg: &ConfigMap) -> Result<ModelHyper> {
    let k: usize = cfg.get("k", 5)?;
    let mut h = ModelHyper::defaults(k);
    h.n_z = cfg.get("n_z", h.n_z)?;
    h.beta_y = cfg.get("beta_y", h.beta_y)?;
    h.beta_z = cfg.get("beta_z", h.beta_z)?;
    h.hidden = cfg.get_list("hidden", &h.hidden)?;
    h.discrete_only = cfg.get_bool("discrete_only", false)?;
    Ok(h)
}

pub fn train_skills_cmd(cfg: &ConfigMap) -> Result<()> {
    let data = PathBuf::from(cfg.require("data")?);
    let hyper = model_hyper_from(cfg)?;
    let train_cfg = TrainConfig {
        steps: cfg.get("steps", 2000)?,
        batch: cfg.get("batch", 128)?,
        window_len: cfg.get("window", 25)?,
        stride: cfg.get("stride", 25)?,
        lr: cfg.get("lr", 1e-4)?,
        seed: cfg.get("seed", 0)?,
    };
    let out = out_dir(cfg, "train-skills")?;
    cfg.reject_unknown()?;

    let dataset = Dataset::load(&data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = SkillModel::init(hyper, &mut rng);
    let outcome = train_skills(&dataset, &mut model, &train_cfg)?;

    let rows: Vec<Vec<String>> = outcome
        .metrics
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                fmt(r.total),
                fmt(r.recon),
                fmt(r.kl_z),
                fmt(r.kl_y),
            ]
        })
        .collect();
    write_csv(&out.join("metrics.csv"), "step,total,recon,kl_z,kl_y", &rows)?;

    let usage = usage_histogram(&model, &dataset, train_cfg.window_len, 2000);
    let total: u64 = usage.iter().sum();
    let usage_rows: Vec<Vec<String>> = usage
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            vec![
                k.to_string(),
                c.to_string(),
                fmt(c as f64 / total.max(1) as f64),
            ]
        })
        .collect();
    write_csv(&out.join("usage.csv"), "skill,steps,fraction", &usage_rows)?;

    model.save(&out.join("model.bin"))?;
    if let Some(step) = outcome.aborted_at {
        return Err(Error::Runtime(format!(
            "training aborted at step {step} on a non-finite loss; last-good checkpoint saved to {}",
            out.join("model.bin").display()
        )));
    }
    println!(
        "trained K={} model for {} steps; checkpoint at {}",
        model.hyper.k,
        outcome.metrics.len(),
        out.join("model.bin").display()
    );
    Ok(())
}

pub fn inspect(cfg: &ConfigMap) -> Result<()> {
    let ckpt = PathBuf::from(cfg.require("checkpoint")?);
    let data = PathBuf::from(cfg.require("data")?);
    let expect_k: Option<usize> = cfg.get_opt("k").map(|v| v.parse().ok()).flatten();
    let rollout_horizon: usize = cfg.get("horizon", EPISODE_LEN)?;
    let window: usize = cfg.get("window", 25)?;
    let seed: u64 = cfg.get("seed", 0)?;
    let out = out_dir(cfg, "inspect")?;
    cfg.reject_unknown()?;

    let model = SkillModel::load(&ckpt)?;
    if let Some(k) = expect_k {
        if k != model.hyper.k {
            return Err(Error::Config(format!(
                "checkpoint has K={} but config expects K={k}",
                model.hyper.k
            )));
        }
    }
    let dataset = Dataset::load(&data)?;

    let matrix = model.transition_matrix();
    let rows: Vec<Vec<String>> = matrix
        .iter()
        .map(|r| r.iter().map(|&v| fmt(v)).collect())
        .collect();
    let header: Vec<String> = (0..model.hyper.k).map(|k| format!("to_{k}")).collect();
    write_csv(&out.join("transition_matrix.csv"), &header.join(","), &rows)?;
    heatmap_svg(
        &out.join("transition_matrix.svg"),
        &matrix,
        "skill transition prior",
    )?;

    let usage = usage_histogram(&model, &dataset, window, 2000);
    let total: u64 = usage.iter().sum();
    let usage_rows: Vec<Vec<String>> = usage
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            vec![
                k.to_string(),
                c.to_string(),
                fmt(c as f64 / total.max(1) as f64),
            ]
        })
        .collect();
    write_csv(&out.join("usage_histogram.csv"), "skill,steps,fraction", &usage_rows)?;

    let diag = transition_diag_mean(&model);
    let mi = mutual_information_skill_phase(&model, &dataset, window, 2000);
    write_csv(
        &out.join("summary.csv"),
        "diag_mean,mutual_info_nats",
        &[vec![fmt(diag), fmt(mi)]],
    )?;

    let profile = ObjectProfile::by_name(&dataset.manifest.profile).unwrap_or_else(|_| ObjectProfile::easy());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15E);
    for k in 0..model.hyper.k {
        let mut env = SimEnv::new(
            profile.clone(),
            task_spec(Task::StackRedOnBlue, RewardMode::Dense),
        );
        let rec = rollout_fixed_skill(&mut env, &model, k, rollout_horizon, seed, &mut rng);
        crate::simenv::write_episode_jsonl(&out.join(format!("rollout_skill{k}.jsonl")), &rec.to_trace())?;
        rollout_svg(
            &out.join(format!("rollout_skill{k}.svg")),
            &rec.states,
            &format!("fixed skill {k}"),
        )?;
    }
    println!(
        "inspect: diag_mean {:.3}, mutual information {:.3} nats, artifacts in {}",
        diag,
        mi,
        out.display()
    );
    Ok(())
}

pub struct TransferSpec {
    pub agent: String,
    pub rl: RlConfig,
    pub task: Task,
    pub mode: RewardMode,
    pub profile: ObjectProfile,
    pub seeds: usize,
    pub bc_steps: usize,
}

pub fn transfer_spec_from(cfg: &ConfigMap) -> Result<TransferSpec> {
    let agent = cfg.get_str("agent", "cat");
    let kind = match agent.as_str() {
        "bc-init" => AgentKind::Scratch,
        other => AgentKind::parse(other)?,
    };
    let mut rl = RlConfig::defaults(kind);
    rl.gamma = cfg.get("gamma", rl.gamma)?;
    rl.eps_e = cfg.get("eps_e", rl.eps_e)?;
    rl.eps_m = cfg.get("eps_m", rl.eps_m)?;
    rl.eps_cat = cfg.get("eps_cat", rl.eps_cat)?;
    rl.eps_mu = cfg.get("eps_mu", rl.eps_mu)?;
    rl.eps_sigma = cfg.get("eps_sigma", rl.eps_sigma)?;
    rl.eta_y = cfg.get("eta_y", rl.eta_y)?;
    rl.eta_z = cfg.get("eta_z", rl.eta_z)?;
    rl.action_samples = cfg.get("action_samples", rl.action_samples)?;
    rl.batch = cfg.get("batch", rl.batch)?;
    rl.lr = cfg.get("lr", rl.lr)?;
    rl.dual_lr = cfg.get("dual_lr", rl.dual_lr)?;
    rl.actors = cfg.get("actors", rl.actors)?;
    rl.target_period = cfg.get("target_period", rl.target_period)?;
    rl.snippet_len = cfg.get("snippet_len", rl.snippet_len)?;
    rl.replay_capacity = cfg.get("replay_capacity", rl.replay_capacity)?;
    rl.hidden = cfg.get_list("hidden", &rl.hidden)?;
    rl.critic_hidden = cfg.get_list("critic_hidden", &rl.critic_hidden)?;
    rl.warmup_transitions = cfg.get("warmup", rl.warmup_transitions)?;
    rl.env_steps = cfg.get("env_steps", rl.env_steps)?;
    rl.steps_per_round = cfg.get("steps_per_round", rl.steps_per_round)?;
    rl.learner_steps_per_round =
        cfg.get("learner_steps_per_round", rl.learner_steps_per_round)?;
    rl.eval_every_rounds = cfg.get("eval_every_rounds", rl.eval_every_rounds)?;
    rl.eval_episodes = cfg.get("eval_episodes", rl.eval_episodes)?;
    rl.seed = cfg.get("seed", 0)?;

    let task = match cfg.get_str("task", "stack").as_str() {
        "stack" | "stack_red_on_blue" => Task::StackRedOnBlue,
        "pyramid" => Task::Pyramid,
        other => {
            return Err(Error::Config(format!(
                "unknown transfer task '{other}' (expected stack|pyramid)"
            )))
        }
    };
    let mode = RewardMode::parse(&cfg.get_str("mode", "staged_sparse"))?;
    let profile = ObjectProfile::by_name(&cfg.get_str("profile", "set4-analog"))?;
    Ok(TransferSpec {
        agent,
        rl,
        task,
        mode,
        profile,
        seeds: cfg.get("seeds", 3)?,
        bc_steps: cfg.get("bc_steps", 2000)?,
    })
}

pub fn curve_rows(curve: &[CurveRow]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|r| {
            vec![
                r.env_steps.to_string(),
                r.learner_steps.to_string(),
                fmt(r.mean_return),
                fmt(r.staged_return),
                fmt(r.kl_cat),
                fmt(r.kl_z),
                fmt(r.eta),
            ]
        })
        .collect()
}

pub const CURVE_HEADER: &str = "env_steps,learner_steps,mean_return,staged_return,kl_cat,kl_z,eta";

pub fn transfer(cfg: &ConfigMap, threads: usize) -> Result<()> {
    let ckpt = cfg.get_opt("checkpoint");
    let data = cfg.get_opt("data");
    let spec = transfer_spec_from(cfg)?;
    let out = out_dir(cfg, "transfer")?;
    cfg.reject_unknown()?;

    let skills = load_skills_if_needed(&spec, ckpt.as_deref())?;
    let bc = if spec.agent == "bc-init" {
        let data = data.ok_or_else(|| {
            Error::Config("agent bc-init requires data=<dataset dir> for cloning".into())
        })?;
        let dataset = Dataset::load(Path::new(&data))?;
        let (policy, _) = bc_train(
            &dataset,
            &BcConfig {
                steps: spec.bc_steps,
                batch: 128,
                lr: 1e-4,
                seed: spec.rl.seed,
                hidden: spec.rl.hidden.clone(),
            },
        )?;
        Some(policy)
    } else {
        None
    };

    let mut all_curves = Vec::new();
    for s in 0..spec.seeds {
        let mut rl = spec.rl.clone();
        rl.seed = spec.rl.seed + s as u64;
        let outcome = rl_loop(
            &rl,
            skills.clone(),
            bc.as_ref(),
            &spec.profile,
            spec.task,
            spec.mode,
            threads,
        )?;
        write_csv(
            &out.join(format!("curve_seed{s}.csv")),
            CURVE_HEADER,
            &curve_rows(&outcome.curve),
        )?;
        all_curves.push(outcome.curve);
    }

    // Aggregate: mean over seeds at each shared eval point.
    let points = all_curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let agg: Vec<Vec<String>> = (0..points)
        .map(|i| {
            let env = all_curves[0][i].env_steps;
            let m = all_curves.iter().map(|c| c[i].mean_return).sum::<f64>()
                / all_curves.len() as f64;
            let st = all_curves.iter().map(|c| c[i].staged_return).sum::<f64>()
                / all_curves.len() as f64;
            vec![env.to_string(), fmt(m), fmt(st)]
        })
        .collect();
    write_csv(
        &out.join("aggregate.csv"),
        "env_steps,mean_return,staged_return",
        &agg,
    )?;

    let series: Vec<(String, Vec<(f64, f64)>)> = all_curves
        .iter()
        .enumerate()
        .map(|(s, c)| {
            (
                format!("{} seed {s}", spec.agent),
                c.iter()
                    .map(|r| (r.env_steps as f64, r.staged_return))
                    .collect(),
            )
        })
        .collect();
    line_chart_svg(
        &out.join("curves.svg"),
        &series,
        &format!("{} on {:?} ({:?})", spec.agent, spec.task, spec.mode),
        "env steps",
        "staged return",
    )?;
    println!(
        "transfer: {} seeds of agent {} written to {}",
        spec.seeds,
        spec.agent,
        out.display()
    );
    Ok(())
}

fn load_skills_if_needed(
    spec: &TransferSpec,
    ckpt: Option<&str>,
) -> Result<Option<Arc<SkillModel>>> {
    if spec.rl.kind.needs_skills() {
        let path = ckpt.ok_or_else(|| {
            Error::Config(format!(
                "agent '{}' requires checkpoint=<skill model>",
                spec.agent
            ))
        })?;
        Ok(Some(Arc::new(SkillModel::load(Path::new(path))?)))
    } else {
        Ok(None)
    }
}

pub fn ablate(cfg: &ConfigMap, threads: usize) -> Result<()> {
    let data = PathBuf::from(cfg.require("data")?);
    let grid = cfg.get_str("grid", "structure");
    let betas: Vec<f64> = cfg.get_list("betas", &[0.0, 0.01, 0.1])?;
    let etas: Vec<f64> = cfg.get_list("etas", &[0.01, 0.1, 1.0, 10.0, 100.0])?;
    let structures: Vec<String> = cfg.get_list(
        "structures",
        &[
            "full".to_string(),
            "discrete".to_string(),
            "continuous".to_string(),
        ],
    )?;
    let k: usize = cfg.get("k", 5)?;
    let n_z: usize = cfg.get("n_z", 8)?;
    let hidden: Vec<usize> = cfg.get_list("hidden", &[256, 256])?;
    let offline_steps: usize = cfg.get("offline_steps", 1500)?;
    let offline_batch: usize = cfg.get("offline_batch", 128)?;
    let offline_lr: f64 = cfg.get("offline_lr", 1e-4)?;
    let seeds: usize = cfg.get("seeds", 3)?;
    let seed: u64 = cfg.get("seed", 0)?;
    let profile = ObjectProfile::by_name(&cfg.get_str("profile", "set3-analog"))?;
    let mode = RewardMode::parse(&cfg.get_str("mode", "staged_sparse"))?;

    // RL knobs shared across cells.
    let mut rl = RlConfig::defaults(AgentKind::Cat);
    rl.env_steps = cfg.get("env_steps", 40_000)?;
    rl.steps_per_round = cfg.get("steps_per_round", rl.steps_per_round)?;
    rl.learner_steps_per_round = cfg.get("learner_steps_per_round", rl.learner_steps_per_round)?;
    rl.batch = cfg.get("batch", 128)?;
    rl.actors = cfg.get("actors", 4)?;
    rl.hidden = cfg.get_list("rl_hidden", &[64, 64])?;
    rl.critic_hidden = cfg.get_list("critic_hidden", &[64, 64])?;
    rl.warmup_transitions = cfg.get("warmup", 1_000)?;
    rl.eval_every_rounds = cfg.get("eval_every_rounds", rl.eval_every_rounds)?;
    rl.eval_episodes = cfg.get("eval_episodes", rl.eval_episodes)?;
    let out = out_dir(cfg, "ablate")?;
    cfg.reject_unknown()?;

    let dataset = Dataset::load(&data)?;
    let mut report: Vec<Vec<String>> = Vec::new();
    let mut panel: Vec<(String, Vec<(f64, f64)>)> = Vec::new();

    // Cells: (label, offline hyper adjustments, agent kind, eta_z).
    struct Cell {
        label: String,
        beta_z: f64,
        discrete_only: bool,
        k: usize,
        kind: AgentKind,
        eta_z: f64,
    }
    let cells: Vec<Cell> = match grid.as_str() {
        "structure" => structures
            .iter()
            .map(|s| {
                Ok(match s.as_str() {
                    "full" => Cell {
                        label: "full".into(),
                        beta_z: cfg_beta_default(&betas),
                        discrete_only: false,
                        k,
                        kind: AgentKind::Cat,
                        eta_z: 0.01,
                    },
                    "discrete" => Cell {
                        label: "discrete_only".into(),
                        beta_z: cfg_beta_default(&betas),
                        discrete_only: true,
                        k,
                        kind: AgentKind::Cat,
                        eta_z: 0.01,
                    },
                    "continuous" => Cell {
                        label: "continuous_only".into(),
                        beta_z: cfg_beta_default(&betas),
                        discrete_only: false,
                        k: 1,
                        kind: AgentKind::Npmp,
                        eta_z: 0.01,
                    },
                    other => {
                        return Err(Error::Config(format!(
                            "unknown structure cell '{other}'"
                        )))
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?,
        "kl" => {
            let mut cells = Vec::new();
            for &b in &betas {
                for &e in &etas {
                    cells.push(Cell {
                        label: format!("beta{b}_eta{e}"),
                        beta_z: b,
                        discrete_only: false,
                        k,
                        kind: AgentKind::Mix,
                        eta_z: e,
                    });
                }
            }
            cells
        }
        other => {
            return Err(Error::Config(format!(
                "unknown grid '{other}' (expected structure|kl)"
            )))
        }
    };

    println!("ablate: launching {} cells x {seeds} seeds", cells.len());
    for cell in &cells {
        // Offline models are shared across seeds within a cell only through
        // their own seed, so each RL seed gets its own offline model.
        let mut finals = Vec::new();
        for s in 0..seeds {
            let mut hyper = ModelHyper::defaults(cell.k);
            hyper.n_z = n_z;
            hyper.hidden = hidden.clone();
            hyper.beta_z = cell.beta_z;
            hyper.discrete_only = cell.discrete_only;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + s as u64);
            let mut model = SkillModel::init(hyper, &mut rng);
            let t_cfg = TrainConfig {
                steps: offline_steps,
                batch: offline_batch,
                window_len: 25,
                stride: 25,
                lr: offline_lr,
                seed: seed + s as u64,
            };
            train_skills(&dataset, &mut model, &t_cfg)?;

            let mut cell_rl = rl.clone();
            cell_rl.kind = cell.kind;
            cell_rl.eta_z = cell.eta_z;
            cell_rl.seed = seed + s as u64;
            let outcome = rl_loop(
                &cell_rl,
                Some(Arc::new(model)),
                None,
                &profile,
                Task::StackRedOnBlue,
                mode,
                threads,
            )?;
            write_csv(
                &out.join(format!("cell_{}_seed{s}.csv", cell.label)),
                CURVE_HEADER,
                &curve_rows(&outcome.curve),
            )?;
            let fin = outcome.curve.last().map(|r| r.staged_return).unwrap_or(0.0);
            finals.push(fin);
            if s == 0 {
                panel.push((
                    cell.label.clone(),
                    outcome
                        .curve
                        .iter()
                        .map(|r| (r.env_steps as f64, r.staged_return))
                        .collect(),
                ));
            }
        }
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / finals.len().max(1) as f64;
        let mut row = vec![cell.label.clone()];
        row.extend(finals.iter().map(|&v| fmt(v)));
        row.push(fmt(mean));
        row.push(fmt(var.sqrt()));
        report.push(row);
    }

    let mut header = vec!["cell".to_string()];
    header.extend((0..seeds).map(|s| format!("final_seed{s}")));
    header.push("final_mean".into());
    header.push("final_std".into());
    write_csv(&out.join("report.csv"), &header.join(","), &report)?;
    line_chart_svg(
        &out.join("panel.svg"),
        &panel,
        &format!("ablation ({grid}) on {}", profile.name),
        "env steps",
        "staged return",
    )?;
    println!("ablate: report at {}", out.join("report.csv").display());
    Ok(())
}

fn cfg_beta_default(betas: &[f64]) -> f64 {
    betas.iter().cloned().find(|&b| b > 0.0).unwrap_or(0.1)
}

pub fn explore(cfg: &ConfigMap) -> Result<()> {
    let episodes: usize = cfg.get("episodes", 1000)?;
    let profile = ObjectProfile::by_name(&cfg.get_str("profile", "set4-analog"))?;
    let seed: u64 = cfg.get("seed", 0)?;
    let ckpt = cfg.get_opt("checkpoint");
    let bc_path = cfg.get_opt("bc");
    let out = out_dir(cfg, "explore")?;
    cfg.reject_unknown()?;

    let model = match &ckpt {
        Some(p) => Some(SkillModel::load(Path::new(p))?),
        None => None,
    };
    let bc = match &bc_path {
        Some(p) => Some(GaussianPolicy::load(Path::new(p))?),
        None => None,
    };

    let mut rows = Vec::new();
    let mut policies: Vec<(String, ZeroShotPolicy<'_>)> = vec![
        ("random".into(), ZeroShotPolicy::RandomActions),
        ("finger_frozen".into(), ZeroShotPolicy::FingerFrozen),
    ];
    if let Some(m) = &model {
        policies.push(("skills_uniform".into(), ZeroShotPolicy::SkillUniform(m)));
    }
    if let Some(b) = &bc {
        policies.push(("bc".into(), ZeroShotPolicy::Gaussian(b)));
    }
    for (name, p) in &policies {
        let row = exploration_report(p, &profile, episodes, seed);
        rows.push(vec![
            name.clone(),
            row.episodes.to_string(),
            fmt(row.dense),
            fmt(row.staged),
            fmt(row.joints),
            fmt(row.grasp),
            fmt(row.objects),
        ]);
        println!(
            "{name}: dense {:.2} staged {:.3} joints {:.5} grasp {:.5} objects {:.5}",
            row.dense, row.staged, row.joints, row.grasp, row.objects
        );
    }
    write_csv(
        &out.join("coverage.csv"),
        "method,episodes,dense,staged,joints,grasp,objects",
        &rows,
    )?;
    Ok(())
}

/// Smoke-level health check used by tests: the mean single-window bound is
/// finite on a freshly initialized model.
pub fn sanity_elbo(dataset: &Dataset, model: &SkillModel) -> Result<f64> {
    let views = model.hyper.views();
    let mut clipped = 0;
    let w = crate::datasets::make_window(
        &dataset.episodes[0],
        0,
        0,
        25.min(dataset.episodes[0].len()),
        &views,
        &dataset.manifest.action_ranges,
        &mut clipped,
    )
    .ok_or_else(|| Error::Data("first episode shorter than a window".into()))?;
    let noise = ZNoise::zeros(w.len(), model.hyper.k, 1, model.hyper.n_z);
    Ok(elbo_window(model, &w, &noise)?.total)
}
