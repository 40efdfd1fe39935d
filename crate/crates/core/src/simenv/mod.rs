//! Deterministic planar manipulation world: a velocity-controlled gripper,
//! three colored blocks on a table, quasi-static support resolution, and the
//! staged task rewards used throughout the crate.
//!
//! The world lives in an `[0, 1] x [0, 0.5]` meter slice (x horizontal,
//! z vertical). Stepping is a pure function of `(state, action, profile)`:
//! replaying a recorded action sequence reproduces a trajectory bit-exactly.

mod expert;
mod rewards;
mod trace;

pub use expert::{ScriptedExpert, EXPERT_PHASES};
pub use rewards::{
    reward_primitive, staged_reward_at, staged_rewards, task_spec, PrimitiveKind, RewardMode,
    RewardSpec, Stage, StageTerm, Task,
};
pub use trace::{read_episode_jsonl, write_episode_jsonl, TraceStep};

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.05;
pub const EPISODE_LEN: usize = 200;
pub const GRIPPER_X_RANGE: (f64, f64) = (0.02, 0.98);
pub const GRIPPER_Z_RANGE: (f64, f64) = (0.03, 0.47);
pub const GRIPPER_HOME: (f64, f64) = (0.5, 0.35);
/// Aperture below which the fingers can seize a nearby object.
pub const GRASP_APERTURE: f64 = 0.2;
/// Aperture above which an attached object is released.
pub const RELEASE_APERTURE: f64 = 0.8;
/// Fraction of combined half-extents that still counts as resting support.
const SUPPORT_OVERLAP: f64 = 0.75;

pub const ACTION_DIM: usize = 4;
/// Raw ranges for (x-velocity, z-velocity, finger speed, reserved wrist).
pub const ACTION_RANGES: [(f64, f64); ACTION_DIM] =
    [(-0.25, 0.25), (-0.25, 0.25), (-4.0, 4.0), (-1.0, 1.0)];

pub const OBJECT_NAMES: [&str; 3] = ["red", "green", "blue"];
pub const RED: usize = 0;
pub const GREEN: usize = 1;
pub const BLUE: usize = 2;

/// Proprioceptive dims: gripper pos (2), vel (2), aperture, grasp flag.
pub const PROPRIO_DIM: usize = 6;
/// Per object: pos (2), half extent, attached flag, offset to pinch (2).
pub const PER_OBJECT_DIM: usize = 6;
pub const STATE_DIM: usize = PROPRIO_DIM + 3 * PER_OBJECT_DIM;

/// Geometric tolerances standing in for object-set difficulty. Smaller
/// tolerances make grasping and stacking harder.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProfile {
    pub name: String,
    pub grasp_radius: f64,
    pub stack_tol_h: f64,
    pub stack_tol_v: f64,
    pub object_half_extents: [f64; 3],
}

impl ObjectProfile {
    pub fn by_name(name: &str) -> Result<ObjectProfile> {
        let p = match name {
            // Rectangular prisms; the easy default.
            "set4-analog" => ObjectProfile {
                name: name.into(),
                grasp_radius: 0.04,
                stack_tol_h: 0.03,
                stack_tol_v: 0.01,
                object_half_extents: [0.025; 3],
            },
            // Limited stacking surface.
            "set5-analog" => ObjectProfile {
                name: name.into(),
                grasp_radius: 0.035,
                stack_tol_h: 0.022,
                stack_tol_v: 0.009,
                object_half_extents: [0.025; 3],
            },
            // Hard to grasp.
            "set1-analog" => ObjectProfile {
                name: name.into(),
                grasp_radius: 0.028,
                stack_tol_h: 0.02,
                stack_tol_v: 0.008,
                object_half_extents: [0.025; 3],
            },
            // Precise grasp and careful placement; the hard case.
            "set3-analog" => ObjectProfile {
                name: name.into(),
                grasp_radius: 0.02,
                stack_tol_h: 0.015,
                stack_tol_v: 0.008,
                object_half_extents: [0.025; 3],
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown object profile '{other}' (expected set1/set3/set4/set5-analog)"
                )))
            }
        };
        Ok(p)
    }

    pub fn easy() -> ObjectProfile {
        ObjectProfile::by_name("set4-analog").unwrap()
    }

    pub fn hard() -> ObjectProfile {
        ObjectProfile::by_name("set3-analog").unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub pos: (f64, f64),
    pub half_extent: f64,
    pub attached: bool,
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub gripper_pos: (f64, f64),
    pub gripper_vel: (f64, f64),
    pub finger_aperture: f64,
    pub grasp_flag: bool,
    pub objects: [ObjectState; 3],
    pub step_count: usize,
}

impl WorldState {
    pub fn attached_object(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.attached)
    }

    /// Flatten to the observation layout used by datasets and policies.
    pub fn observe(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.push(self.gripper_pos.0);
        v.push(self.gripper_pos.1);
        v.push(self.gripper_vel.0);
        v.push(self.gripper_vel.1);
        v.push(self.finger_aperture);
        v.push(if self.grasp_flag { 1.0 } else { 0.0 });
        for o in &self.objects {
            v.push(o.pos.0);
            v.push(o.pos.1);
            v.push(o.half_extent);
            v.push(if o.attached { 1.0 } else { 0.0 });
            v.push(self.gripper_pos.0 - o.pos.0);
            v.push(self.gripper_pos.1 - o.pos.1);
        }
        v
    }
}

/// Place the gripper at home and the three objects at non-overlapping random
/// table positions. Deterministic under `seed`.
pub fn reset(profile: &ObjectProfile, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = Vec::with_capacity(3);
    let margin = 0.04;
    while xs.len() < 3 {
        let he = profile.object_half_extents[xs.len()];
        let x = rng.gen_range(0.1..0.9);
        let clear = xs
            .iter()
            .enumerate()
            .all(|(j, &xj)| (x - xj).abs() >= profile.object_half_extents[j] + he + margin);
        if clear {
            xs.push(x);
        }
    }
    let objects = [RED, GREEN, BLUE].map(|i| ObjectState {
        pos: (xs[i], profile.object_half_extents[i]),
        half_extent: profile.object_half_extents[i],
        attached: false,
    });
    WorldState {
        gripper_pos: GRIPPER_HOME,
        gripper_vel: (0.0, 0.0),
        finger_aperture: 1.0,
        grasp_flag: false,
        objects,
        step_count: 0,
    }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

fn denormalize_action(a: &[f64]) -> [f64; ACTION_DIM] {
    let mut out = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        let n = clamp(a.get(i).copied().unwrap_or(0.0), -1.0, 1.0);
        let (lo, hi) = ACTION_RANGES[i];
        out[i] = lo + (n + 1.0) * 0.5 * (hi - lo);
    }
    out
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Advance the world by one control step. `action` is the normalized
/// 4-vector; out-of-range components are clipped. The wrist slot is reserved
/// and inert in 2-D.
pub fn step(state: &WorldState, action: &[f64], profile: &ObjectProfile) -> WorldState {
    let raw = denormalize_action(action);
    let mut next = state.clone();

    let old_pos = state.gripper_pos;
    let nx = clamp(old_pos.0 + raw[0] * DT, GRIPPER_X_RANGE.0, GRIPPER_X_RANGE.1);
    let nz = clamp(old_pos.1 + raw[1] * DT, GRIPPER_Z_RANGE.0, GRIPPER_Z_RANGE.1);
    next.gripper_pos = (nx, nz);
    // Report the effective velocity so clipping at bounds is observable.
    next.gripper_vel = ((nx - old_pos.0) / DT, (nz - old_pos.1) / DT);
    next.finger_aperture = clamp(state.finger_aperture + raw[2] * DT, 0.0, 1.0);

    // Release first so a re-grasp goes through a full open-close cycle.
    if next.finger_aperture > RELEASE_APERTURE {
        for o in &mut next.objects {
            o.attached = false;
        }
    }

    // Attach the nearest object within reach when the fingers are closed.
    if next.attached_object().is_none() && next.finger_aperture < GRASP_APERTURE {
        let mut best: Option<(usize, f64)> = None;
        for (i, o) in next.objects.iter().enumerate() {
            let d = dist(next.gripper_pos, o.pos);
            if d <= profile.grasp_radius && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            next.objects[i].attached = true;
            // The object snaps to the pinch point while held.
            next.objects[i].pos = next.gripper_pos;
        }
    }

    if let Some(i) = next.attached_object() {
        next.objects[i].pos = next.gripper_pos;
    }

    settle_objects(&mut next);
    next.grasp_flag = next.attached_object().is_some();
    next.step_count = state.step_count + 1;
    next
}

/// Drop every unattached object onto its highest support: the table, or the
/// top of an object it overlaps horizontally. Processed bottom-up so a block
/// never rests on something above it.
fn settle_objects(state: &mut WorldState) {
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        state.objects[a]
            .pos
            .1
            .partial_cmp(&state.objects[b].pos.1)
            .unwrap()
            .then(a.cmp(&b))
    });
    for &i in &order {
        if state.objects[i].attached {
            continue;
        }
        let (xi, zi) = state.objects[i].pos;
        let hei = state.objects[i].half_extent;
        let mut support = 0.0; // table top
        for j in 0..3 {
            if j == i {
                continue;
            }
            let oj = &state.objects[j];
            let top_j = oj.pos.1 + oj.half_extent;
            let overlap = (xi - oj.pos.0).abs() < SUPPORT_OVERLAP * (hei + oj.half_extent);
            // Only objects currently at or below our base can support.
            if overlap && top_j <= zi - hei + 1e-9 && top_j > support {
                support = top_j;
            }
        }
        state.objects[i].pos = (xi, support + hei);
    }
}

/// A resettable environment bundling profile, task reward, and an optional
/// action-noise knob. Environments are independent values and any number may
/// run in parallel.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub profile: ObjectProfile,
    pub spec: RewardSpec,
    pub state: WorldState,
    pub action_noise: f64,
    noise_rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

impl SimEnv {
    pub fn new(profile: ObjectProfile, spec: RewardSpec) -> SimEnv {
        let state = reset(&profile, 0);
        SimEnv {
            profile,
            spec,
            state,
            action_noise: 0.0,
            noise_rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = reset(&self.profile, seed);
        self.noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b9).wrapping_add(17));
        self.state.observe()
    }

    pub fn step(&mut self, action: &[f64]) -> StepOutcome {
        let mut a = action.to_vec();
        if self.action_noise > 0.0 {
            for v in a.iter_mut().take(ACTION_DIM) {
                let n: f64 = self.noise_rng.sample(rand_distr::StandardNormal);
                *v += self.action_noise * n;
            }
        }
        self.state = step(&self.state, &a, &self.profile);
        let reward = staged_reward_at(&self.spec, &self.state, &self.profile);
        StepOutcome {
            obs: self.state.observe(),
            reward,
            done: self.state.step_count >= EPISODE_LEN,
        }
    }
}
