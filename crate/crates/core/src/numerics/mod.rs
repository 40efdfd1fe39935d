//! Dense-tensor arithmetic, reverse-mode gradients, distribution math, and
//! the optimizer used by every trainable component.
//!
//! All numeric state is 64-bit: the enumeration and finite-difference oracles
//! used in tests compare against closed-form values at tolerances below 1e-9,
//! which f32 cannot hold.

mod adam;
mod checkpoint;
mod dist;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::adam_update;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use dist::{CategoricalDist, DiagGaussian};
pub use mlp::{mlp_apply, mlp_infer, mlp_init, mlp_tape_apply, Activation, MlpDef};
pub use params::{EntryRef, ParamEntry, ParamGroup, ParamSet};
pub use tape::{
    gauss_kl_rows, gauss_kl_to_std_normal, gauss_log_prob_rows, NodeRef, Tape,
};
pub use tensor::Tensor;

/// Squash an unconstrained pre-activation onto `[lo, hi]` via a sigmoid.
/// `-inf` maps to `lo`, `+inf` to `hi`.
pub fn squash_to_range(pre: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(pre)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}
