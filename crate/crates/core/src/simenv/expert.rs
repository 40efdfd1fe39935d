//! Finite-state stacking controller used to generate demonstration data.
//!
//! The controller drives the gripper through reach, descend, close, lift,
//! hover, place, release, and retreat phases with proportional velocity
//! commands. Gaussian action noise (in normalized action space) adds
//! behavioral diversity; stall and lost-grasp recovery folds back to the
//! reach phase so moderately noisy runs still finish.

use super::{ObjectProfile, WorldState, ACTION_DIM, RELEASE_APERTURE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const EXPERT_PHASES: [&str; 9] = [
    "reach", "descend", "close", "lift", "hover", "place", "release", "retreat", "done",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Reach,
    Descend,
    Close,
    Lift,
    Hover,
    Place,
    Release,
    Retreat,
    Done,
}

impl Phase {
    fn label(self) -> &'static str {
        match self {
            Phase::Reach => "reach",
            Phase::Descend => "descend",
            Phase::Close => "close",
            Phase::Lift => "lift",
            Phase::Hover => "hover",
            Phase::Place => "place",
            Phase::Release => "release",
            Phase::Retreat => "retreat",
            Phase::Done => "done",
        }
    }
}

const SAFE_Z: f64 = 0.2;
const LIFT_Z: f64 = 0.17;
const RETREAT_Z: f64 = 0.3;
const KP: f64 = 6.0;
/// Steps before a phase is declared stuck and restarted from reach.
const PHASE_BUDGET: usize = 70;

#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    pub top: usize,
    pub base: usize,
    pub noise_scale: f64,
    phase: Phase,
    phase_steps: usize,
    rng: ChaCha8Rng,
}

impl ScriptedExpert {
    pub fn new(top: usize, base: usize, noise_scale: f64, seed: u64) -> ScriptedExpert {
        ScriptedExpert {
            top,
            base,
            noise_scale,
            phase: Phase::Reach,
            phase_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn phase_label(&self) -> &'static str {
        self.phase.label()
    }

    /// Normalized action for the current state, plus the phase label that
    /// produced it.
    pub fn act(&mut self, state: &WorldState, profile: &ObjectProfile) -> ([f64; ACTION_DIM], &'static str) {
        self.advance_phase(state, profile);
        let label = self.phase.label();

        let g = state.gripper_pos;
        let top = &state.objects[self.top];
        let base = &state.objects[self.base];
        let stack_z = base.pos.1 + base.half_extent + top.half_extent;

        // Per-phase position target and finger command (+ opens, - closes).
        let (target, finger): ((f64, f64), f64) = match self.phase {
            Phase::Reach => ((top.pos.0, SAFE_Z), 1.0),
            Phase::Descend => ((top.pos.0, (top.pos.1 + 0.004).max(super::GRIPPER_Z_RANGE.0)), 0.0),
            Phase::Close => (g, -1.0),
            Phase::Lift => ((g.0, LIFT_Z), -0.2),
            Phase::Hover => ((base.pos.0, stack_z + super::rewards::HOVER_CLEARANCE), -0.2),
            Phase::Place => ((base.pos.0, stack_z), -0.2),
            Phase::Release => (g, 1.0),
            Phase::Retreat => ((g.0, RETREAT_Z), 1.0),
            Phase::Done => (g, 1.0),
        };

        let (vmax_x, vmax_z) = (super::ACTION_RANGES[0].1, super::ACTION_RANGES[1].1);
        let mut a = [
            (KP * (target.0 - g.0) / vmax_x).clamp(-1.0, 1.0),
            (KP * (target.1 - g.1) / vmax_z).clamp(-1.0, 1.0),
            finger,
            0.0,
        ];
        if self.noise_scale > 0.0 {
            for v in &mut a {
                let n: f64 = self.rng.sample(StandardNormal);
                *v += self.noise_scale * n;
            }
            a[3] = 0.0;
        }
        self.phase_steps += 1;
        (a, label)
    }

    fn advance_phase(&mut self, state: &WorldState, profile: &ObjectProfile) {
        let g = state.gripper_pos;
        let top = &state.objects[self.top];
        let base = &state.objects[self.base];
        let stack_z = base.pos.1 + base.half_extent + top.half_extent;
        let holding = state.attached_object() == Some(self.top);

        let next = match self.phase {
            Phase::Reach => {
                if (g.0 - top.pos.0).abs() < 0.01 && (g.1 - SAFE_Z).abs() < 0.02 {
                    Some(Phase::Descend)
                } else {
                    None
                }
            }
            Phase::Descend => {
                if super::dist(g, top.pos) < profile.grasp_radius * 0.5 {
                    Some(Phase::Close)
                } else {
                    None
                }
            }
            Phase::Close => {
                if holding {
                    Some(Phase::Lift)
                } else if state.finger_aperture <= 0.02 {
                    // Missed grab: fully closed with nothing inside.
                    Some(Phase::Reach)
                } else {
                    None
                }
            }
            Phase::Lift => {
                if !holding {
                    Some(Phase::Reach)
                } else if g.1 >= LIFT_Z - 0.005 {
                    Some(Phase::Hover)
                } else {
                    None
                }
            }
            Phase::Hover => {
                if !holding {
                    Some(Phase::Reach)
                } else if (g.0 - base.pos.0).abs() < profile.stack_tol_h * 0.4
                    && (g.1 - (stack_z + super::rewards::HOVER_CLEARANCE)).abs() < 0.01
                {
                    Some(Phase::Place)
                } else {
                    None
                }
            }
            Phase::Place => {
                if !holding {
                    Some(Phase::Reach)
                } else if (g.1 - stack_z).abs() < profile.stack_tol_v * 0.5
                    && (g.0 - base.pos.0).abs() < profile.stack_tol_h * 0.5
                {
                    Some(Phase::Release)
                } else {
                    None
                }
            }
            Phase::Release => {
                if state.finger_aperture > RELEASE_APERTURE + 0.02 {
                    // Check the drop landed as a stack; otherwise try again.
                    let dx = (top.pos.0 - base.pos.0).abs();
                    let dz = (top.pos.1 - stack_z).abs();
                    if dx <= profile.stack_tol_h && dz <= profile.stack_tol_v {
                        Some(Phase::Retreat)
                    } else {
                        Some(Phase::Reach)
                    }
                } else {
                    None
                }
            }
            Phase::Retreat => {
                if g.1 > RETREAT_Z - 0.05 {
                    Some(Phase::Done)
                } else {
                    None
                }
            }
            Phase::Done => {
                // Re-engage if the stack is disturbed late in the episode.
                let dx = (top.pos.0 - base.pos.0).abs();
                if dx > profile.stack_tol_h * 2.0 {
                    Some(Phase::Reach)
                } else {
                    None
                }
            }
        };

        if let Some(p) = next {
            self.phase = p;
            self.phase_steps = 0;
        } else if self.phase_steps > PHASE_BUDGET && self.phase != Phase::Done {
            // Stuck (noise can pin the controller against a bound): restart.
            self.phase = Phase::Reach;
            self.phase_steps = 0;
        }

        // A grasp on the wrong object is released by restarting.
        if let Some(i) = state.attached_object() {
            if i != self.top && self.phase != Phase::Release {
                self.phase = Phase::Release;
                self.phase_steps = 0;
            }
        }
    }
}
