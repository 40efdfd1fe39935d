//! Reward primitives and staged task rewards.
//!
//! Shaped primitives map a distance through a smooth tolerance curve: 1
//! inside the tolerance, then a Gaussian falloff, so every value stays in
//! `[0, 1]` and decreases monotonically with distance. Sparse primitives are
//! binary predicates on the profile tolerances. A stage is the mean of its
//! terms; stages only count as "reached" above a small activation floor so
//! the far tails of the smooth curves cannot skip the task ordering.

use super::{ObjectProfile, WorldState, BLUE, GREEN, OBJECT_NAMES, RED};
use crate::{Error, Result};

/// Height (above the table) an object must reach to count as lifted.
pub const LIFT_HEIGHT: f64 = 0.15;
/// Clearance of the hover target above the final stack position.
pub const HOVER_CLEARANCE: f64 = 0.015;
/// Gripper clearance over an object for the `Above` primitive.
pub const ABOVE_CLEARANCE: f64 = 0.1;
/// Stage values below this never select the stage as "current".
pub const ACTIVATION_FLOOR: f64 = 0.05;
/// A stage only contributes in staged-sparse mode once its value exceeds
/// this threshold.
pub const STAGE_SPARSE_THRESHOLD: f64 = 0.95;

/// `1` inside `tol`, then a smooth monotone falloff with scale `falloff`.
pub fn tolerance_curve(d: f64, tol: f64, falloff: f64) -> f64 {
    if d <= tol {
        1.0
    } else {
        let u = (d - tol) / falloff;
        (-0.5 * u * u).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    Reach,
    Grasp,
    CloseFingers,
    Lift,
    Hover,
    Stack,
    Above,
    PlaceNear,
    Pyramid,
}

/// One primitive with its object arguments (indices into the object array).
#[derive(Debug, Clone, PartialEq)]
pub struct StageTerm {
    pub kind: PrimitiveKind,
    pub args: Vec<usize>,
    /// Widens the horizontal tolerance (pyramid hover is deliberately loose).
    pub wide: f64,
}

impl StageTerm {
    fn new(kind: PrimitiveKind, args: Vec<usize>) -> StageTerm {
        StageTerm {
            kind,
            args,
            wide: 1.0,
        }
    }

    fn wide(kind: PrimitiveKind, args: Vec<usize>, factor: f64) -> StageTerm {
        StageTerm {
            kind,
            args,
            wide: factor,
        }
    }
}

/// How a stage combines its terms. `Mean` lets a shaped term guide progress
/// before the stage's predicate completes (reach-then-grasp); `Product`
/// keeps a stage silent until every conjunct holds (stack-then-leave).
/// Both keep the stage in `[0, 1]` and equal to 1 exactly when all terms
/// are met.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Mean,
    Product,
}

/// A sub-task: an ordered conjunction of primitive terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub name: String,
    pub terms: Vec<StageTerm>,
    pub combine: Combine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    StackRedOnBlue,
    /// Stack an arbitrary (top, bottom) pair; used by the all-pairs dataset.
    StackPair(usize, usize),
    Pyramid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    Dense,
    StagedSparse,
    Sparse,
}

impl RewardMode {
    pub fn parse(s: &str) -> Result<RewardMode> {
        match s {
            "dense" => Ok(RewardMode::Dense),
            "staged_sparse" | "staged" => Ok(RewardMode::StagedSparse),
            "sparse" => Ok(RewardMode::Sparse),
            other => Err(Error::Config(format!("unknown reward mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RewardMode::Dense => "dense",
            RewardMode::StagedSparse => "staged_sparse",
            RewardMode::Sparse => "sparse",
        }
    }
}

/// Ordered stage list plus the sparsification mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub task: Task,
    pub mode: RewardMode,
    pub stages: Vec<Stage>,
}

pub fn object_index(name: &str) -> Result<usize> {
    OBJECT_NAMES
        .iter()
        .position(|&n| n == name)
        .ok_or_else(|| Error::Config(format!("unknown object label '{name}'")))
}

/// Evaluate one reward primitive on a state. Shaped primitives return values
/// in `(0, 1]`; binary predicates return exactly 0 or 1.
pub fn reward_primitive(
    kind: PrimitiveKind,
    state: &WorldState,
    args: &[usize],
    profile: &ObjectProfile,
    wide: f64,
) -> f64 {
    let g = state.gripper_pos;
    match kind {
        PrimitiveKind::Reach => {
            let o = &state.objects[args[0]];
            let d = super::dist(g, o.pos);
            tolerance_curve(d, profile.grasp_radius, 0.25)
        }
        PrimitiveKind::Grasp => {
            if state.grasp_flag {
                1.0
            } else {
                0.0
            }
        }
        PrimitiveKind::CloseFingers => tolerance_curve(state.finger_aperture, 0.2, 0.4),
        PrimitiveKind::Lift => {
            let o = &state.objects[args[0]];
            let deficit = (LIFT_HEIGHT - o.pos.1).max(0.0);
            tolerance_curve(deficit, 0.0, 0.03)
        }
        PrimitiveKind::Hover => {
            let top = &state.objects[args[0]];
            let base = &state.objects[args[1]];
            let dx = (top.pos.0 - base.pos.0).abs();
            let target_z = base.pos.1 + base.half_extent + top.half_extent + HOVER_CLEARANCE;
            let dz = (top.pos.1 - target_z).abs();
            tolerance_curve(dx, profile.stack_tol_h * wide, 0.05)
                * tolerance_curve(dz, 0.02, 0.015)
        }
        PrimitiveKind::Stack => {
            let top = &state.objects[args[0]];
            let base = &state.objects[args[1]];
            let dx = (top.pos.0 - base.pos.0).abs();
            let dz = (top.pos.1 - (base.pos.1 + base.half_extent + top.half_extent)).abs();
            if !top.attached && dx <= profile.stack_tol_h && dz <= profile.stack_tol_v {
                1.0
            } else {
                0.0
            }
        }
        PrimitiveKind::Above => {
            let o = &state.objects[args[0]];
            let deficit = ((o.pos.1 + ABOVE_CLEARANCE) - g.1).max(0.0);
            tolerance_curve(deficit, 0.0, 0.05)
        }
        PrimitiveKind::PlaceNear => {
            let a = &state.objects[args[0]];
            let b = &state.objects[args[1]];
            let tol = 2.0 * (a.half_extent + b.half_extent);
            if !a.attached && super::dist(a.pos, b.pos) <= tol {
                1.0
            } else {
                0.0
            }
        }
        PrimitiveKind::Pyramid => {
            // args = [top, base_a, base_b]
            let top = &state.objects[args[0]];
            let a = &state.objects[args[1]];
            let b = &state.objects[args[2]];
            let mid_x = 0.5 * (a.pos.0 + b.pos.0);
            let base_gap = (a.pos.0 - b.pos.0).abs();
            let base_top = (a.pos.1 + a.half_extent).max(b.pos.1 + b.half_extent);
            let dx = (top.pos.0 - mid_x).abs();
            let dz = (top.pos.1 - (base_top + top.half_extent)).abs();
            let bases_adjacent = base_gap <= 2.0 * (a.half_extent + b.half_extent);
            if !top.attached
                && bases_adjacent
                && dx <= profile.stack_tol_h
                && dz <= profile.stack_tol_v
            {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn stage_value(stage: &Stage, state: &WorldState, profile: &ObjectProfile) -> f64 {
    let values = stage
        .terms
        .iter()
        .map(|t| reward_primitive(t.kind, state, &t.args, profile, t.wide));
    match stage.combine {
        Combine::Mean => values.sum::<f64>() / stage.terms.len() as f64,
        Combine::Product => values.product(),
    }
}

/// Build the ordered stage list for a task and mode.
pub fn task_spec(task: Task, mode: RewardMode) -> RewardSpec {
    use PrimitiveKind::*;
    let stages = match task {
        Task::StackRedOnBlue | Task::StackPair(..) => {
            let (top, base) = match task {
                Task::StackPair(t, b) => (t, b),
                _ => (RED, BLUE),
            };
            vec![
                Stage {
                    combine: Combine::Mean,
                    name: "reach_grasp".into(),
                    terms: vec![
                        StageTerm::new(Reach, vec![top]),
                        StageTerm::new(Grasp, vec![]),
                    ],
                },
                Stage {
                    combine: Combine::Mean,
                    name: "lift".into(),
                    terms: vec![
                        StageTerm::new(Lift, vec![top]),
                        StageTerm::new(Grasp, vec![]),
                    ],
                },
                Stage {
                    combine: Combine::Mean,
                    name: "hover".into(),
                    terms: vec![StageTerm::new(Hover, vec![top, base])],
                },
                Stage {
                    combine: Combine::Mean,
                    name: "stack".into(),
                    terms: vec![StageTerm::new(Stack, vec![top, base])],
                },
                Stage {
                    combine: Combine::Product,
                    name: "stack_leave".into(),
                    terms: vec![
                        StageTerm::new(Stack, vec![top, base]),
                        StageTerm::new(Above, vec![top]),
                    ],
                },
            ]
        }
        Task::Pyramid => vec![
            Stage {
                    combine: Combine::Mean,
                name: "reach_grasp_red".into(),
                terms: vec![
                    StageTerm::new(Reach, vec![RED]),
                    StageTerm::new(Grasp, vec![]),
                ],
            },
            Stage {
                    combine: Combine::Mean,
                name: "lift_red".into(),
                terms: vec![
                    StageTerm::new(Lift, vec![RED]),
                    StageTerm::new(Grasp, vec![]),
                ],
            },
            Stage {
                    combine: Combine::Mean,
                name: "hover_red_green".into(),
                terms: vec![StageTerm::wide(Hover, vec![RED, GREEN], 3.0)],
            },
            Stage {
                    combine: Combine::Mean,
                name: "place_red_near_green".into(),
                terms: vec![StageTerm::new(PlaceNear, vec![RED, GREEN])],
            },
            Stage {
                    combine: Combine::Mean,
                name: "reach_grasp_blue".into(),
                terms: vec![
                    StageTerm::new(Reach, vec![BLUE]),
                    StageTerm::new(Grasp, vec![]),
                ],
            },
            Stage {
                    combine: Combine::Mean,
                name: "lift_blue".into(),
                terms: vec![
                    StageTerm::new(Lift, vec![BLUE]),
                    StageTerm::new(Grasp, vec![]),
                ],
            },
            Stage {
                    combine: Combine::Product,
                name: "hover_blue_mid".into(),
                terms: vec![
                    StageTerm::wide(Hover, vec![BLUE, GREEN], 3.0),
                    StageTerm::wide(Hover, vec![BLUE, RED], 3.0),
                ],
            },
            Stage {
                    combine: Combine::Mean,
                name: "pyramid".into(),
                terms: vec![StageTerm::new(Pyramid, vec![BLUE, RED, GREEN])],
            },
            Stage {
                    combine: Combine::Product,
                name: "pyramid_leave".into(),
                terms: vec![
                    StageTerm::new(Pyramid, vec![BLUE, RED, GREEN]),
                    StageTerm::new(Above, vec![BLUE]),
                ],
            },
        ],
    };
    RewardSpec { task, mode, stages }
}

/// Per-timestep reward for one state.
///
/// Dense: the latest stage whose value clears the activation floor is
/// current; earlier stages are credited 1, the current stage contributes its
/// shaped value, and the sum is scaled by the stage count. Staged-sparse:
/// identical except a stage's value is zeroed until it exceeds
/// [`STAGE_SPARSE_THRESHOLD`]. Sparse: only the final task predicate,
/// unscaled.
pub fn staged_reward_at(spec: &RewardSpec, state: &WorldState, profile: &ObjectProfile) -> f64 {
    match spec.mode {
        RewardMode::Sparse => {
            // The bare task predicate: stack or pyramid.
            let stage = &spec.stages[spec.stages.len() - 2];
            stage_value(stage, state, profile)
        }
        RewardMode::Dense | RewardMode::StagedSparse => {
            let n = spec.stages.len() as f64;
            let cutoff = match spec.mode {
                RewardMode::Dense => ACTIVATION_FLOOR,
                _ => STAGE_SPARSE_THRESHOLD,
            };
            let mut values: Vec<f64> = spec
                .stages
                .iter()
                .map(|s| stage_value(s, state, profile))
                .collect();
            for v in &mut values {
                if *v <= cutoff {
                    *v = 0.0;
                }
            }
            match values.iter().rposition(|&v| v > 0.0) {
                None => 0.0,
                Some(c) => (c as f64 + values[c]) / n,
            }
        }
    }
}

/// Map a full state history to its per-timestep rewards.
pub fn staged_rewards(
    spec: &RewardSpec,
    history: &[WorldState],
    profile: &ObjectProfile,
) -> Vec<f64> {
    history
        .iter()
        .map(|s| staged_reward_at(spec, s, profile))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simenv::{reset, ObjectProfile};

    fn stacked_state(p: &ObjectProfile) -> WorldState {
        let mut s = reset(p, 5);
        let blue = s.objects[BLUE].pos;
        s.objects[RED].pos = (
            blue.0,
            blue.1 + s.objects[BLUE].half_extent + s.objects[RED].half_extent,
        );
        s.gripper_pos = (blue.0, blue.1 + 0.3);
        s.finger_aperture = 1.0;
        s
    }

    #[test]
    fn stack_predicate_on_centered_rest() {
        let p = ObjectProfile::easy();
        let s = stacked_state(&p);
        assert_eq!(
            reward_primitive(PrimitiveKind::Stack, &s, &[RED, BLUE], &p, 1.0),
            1.0
        );
    }

    #[test]
    fn stack_implies_hover_term_above_point_nine() {
        let p = ObjectProfile::easy();
        let s = stacked_state(&p);
        let hover = reward_primitive(PrimitiveKind::Hover, &s, &[RED, BLUE], &p, 1.0);
        assert!(hover > 0.9, "hover = {hover}");
    }

    #[test]
    fn grasp_zero_without_attachment() {
        let p = ObjectProfile::easy();
        let s = reset(&p, 0);
        assert_eq!(reward_primitive(PrimitiveKind::Grasp, &s, &[], &p, 1.0), 0.0);
    }

    #[test]
    fn reach_is_shaped_and_monotone() {
        let p = ObjectProfile::easy();
        let mut s = reset(&p, 1);
        let red = s.objects[RED].pos;
        // Strictly inside (0, 1) at half the falloff scale.
        s.gripper_pos = (red.0 + 0.125, red.1);
        let v = reward_primitive(PrimitiveKind::Reach, &s, &[RED], &p, 1.0);
        assert!(v > 0.0 && v < 1.0, "v = {v}");
        let mut last = f64::INFINITY;
        for i in 0..10 {
            let d = p.grasp_radius + 0.01 + 0.05 * i as f64;
            s.gripper_pos = (red.0 + d, red.1);
            let v = reward_primitive(PrimitiveKind::Reach, &s, &[RED], &p, 1.0);
            assert!(v < last, "not monotone at probe {i}");
            assert!(v > 0.0 && v < 1.0);
            last = v;
        }
    }

    #[test]
    fn all_stack_stages_complete_give_unit_reward() {
        let p = ObjectProfile::easy();
        let s = stacked_state(&p);
        for mode in [RewardMode::Dense, RewardMode::StagedSparse, RewardMode::Sparse] {
            let spec = task_spec(Task::StackRedOnBlue, mode);
            let r = staged_reward_at(&spec, &s, &p);
            assert!((r - 1.0).abs() < 1e-12, "{mode:?} r = {r}");
        }
    }

    #[test]
    fn episode_start_dense_reward_is_first_stage_fraction() {
        let p = ObjectProfile::easy();
        let spec = task_spec(Task::StackRedOnBlue, RewardMode::Dense);
        for seed in 0..50 {
            let s = reset(&p, seed);
            let r = staged_reward_at(&spec, &s, &p);
            // Before any contact only the reach/grasp stage can clear the
            // floor, so reward is that stage's value over 5.
            let v0 = stage_value(&spec.stages[0], &s, &p);
            let expect = if v0 > ACTIVATION_FLOOR { v0 / 5.0 } else { 0.0 };
            assert!((r - expect).abs() < 1e-12, "seed {seed}: r={r} expect={expect}");
            assert!((0.0..=0.2).contains(&r));
        }
    }

    #[test]
    fn staged_sparse_threshold_blocks_partial_stage() {
        let p = ObjectProfile::easy();
        let mut s = reset(&p, 2);
        // A partial reach (value in (0, 0.95)) must contribute nothing in
        // staged-sparse mode.
        let red = s.objects[RED].pos;
        s.gripper_pos = (red.0 + 0.06, red.1 + 0.06);
        let spec = task_spec(Task::StackRedOnBlue, RewardMode::StagedSparse);
        let v0 = stage_value(&spec.stages[0], &s, &p);
        assert!(v0 > 0.0 && v0 < STAGE_SPARSE_THRESHOLD, "v0 = {v0}");
        assert_eq!(staged_reward_at(&spec, &s, &p), 0.0);
    }

    #[test]
    fn stage_counts_match_task_layout() {
        assert_eq!(
            task_spec(Task::StackRedOnBlue, RewardMode::Dense).stages.len(),
            5
        );
        assert_eq!(
            task_spec(Task::Pyramid, RewardMode::StagedSparse).stages.len(),
            9
        );
    }

    #[test]
    fn staged_sparse_never_exceeds_dense_on_random_rollouts() {
        use rand::{Rng, SeedableRng};
        let p = ObjectProfile::easy();
        let dense = task_spec(Task::StackRedOnBlue, RewardMode::Dense);
        let sparse = task_spec(Task::StackRedOnBlue, RewardMode::StagedSparse);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        for ep in 0..5 {
            let mut s = reset(&p, ep);
            for _ in 0..200 {
                let a = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    0.0,
                ];
                s = crate::simenv::step(&s, &a, &p);
                let rd = staged_reward_at(&dense, &s, &p);
                let rs = staged_reward_at(&sparse, &s, &p);
                assert!((0.0..=1.0).contains(&rd));
                assert!((0.0..=1.0).contains(&rs));
                assert!(rs <= rd + 1e-12);
            }
        }
    }
}
