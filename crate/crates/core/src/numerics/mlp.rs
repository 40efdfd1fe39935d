use super::{NodeRef, ParamGroup, ParamSet, Tape, Tensor};
use crate::{Error, Result};
use rand::Rng;

/// Activation applied to hidden layers. The final layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    None,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => super::elu(x),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }
}

/// Layer widths, input first: `[in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpDef {
    pub sizes: Vec<usize>,
}

impl MlpDef {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        MlpDef { sizes }
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

/// Glorot-uniform weight and zero bias tensors, alternating `w0, b0, w1, ...`.
pub fn mlp_init(def: &MlpDef, rng: &mut impl Rng) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for l in 0..def.layer_count() {
        let (fan_in, fan_out) = (def.sizes[l], def.sizes[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        out.push((format!("w{l}"), Tensor::matrix(fan_in, fan_out, w).unwrap()));
        out.push((format!("b{l}"), Tensor::row(vec![0.0; fan_out])));
    }
    out
}

/// Forward pass through a parameter group holding `w0, b0, w1, b1, ...`.
/// `activation` is applied to hidden layers only. Inputs are `[batch, in]`.
pub fn mlp_apply(group: &ParamGroup, input: &Tensor, activation: Activation) -> Result<Tensor> {
    let layers = group.entries.len() / 2;
    if layers == 0 || group.entries.len() % 2 != 0 {
        return Err(Error::Config(format!(
            "parameter group '{}' does not hold an alternating w/b layer list",
            group.name
        )));
    }
    let mut x = input.clone();
    for l in 0..layers {
        let w = &group.entries[2 * l].value;
        let b = &group.entries[2 * l + 1].value;
        if x.cols() != w.rows() {
            return Err(Error::Config(format!(
                "layer {l} of '{}': input width {:?} does not match weight shape {:?}",
                group.name,
                x.shape(),
                w.shape()
            )));
        }
        let mut y = x.matmul(w);
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                let mut v = y.at(r, c) + b.data()[c];
                if l + 1 < layers {
                    v = activation.apply(v);
                }
                y.set(r, c, v);
            }
        }
        x = y;
    }
    Ok(x)
}

/// Single-sample forward pass on raw slices; the hot path for actors and
/// scripted rollouts where no gradients are needed.
pub fn mlp_infer(group: &ParamGroup, input: &[f64], activation: Activation) -> Vec<f64> {
    let layers = group.entries.len() / 2;
    let mut x = input.to_vec();
    for l in 0..layers {
        let w = &group.entries[2 * l].value;
        let b = &group.entries[2 * l + 1].value;
        debug_assert_eq!(x.len(), w.rows(), "mlp_infer width at layer {l}");
        let mut y = b.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = w.row_slice(i);
            for (j, &wij) in row.iter().enumerate() {
                y[j] += xi * wij;
            }
        }
        if l + 1 < layers {
            for v in &mut y {
                *v = activation.apply(*v);
            }
        }
        x = y;
    }
    x
}

/// Tape forward pass. `entries` are the `(group, entry)` handles of
/// `w0, b0, w1, b1, ...` already bound as parameter nodes.
pub fn mlp_tape_apply(
    tape: &Tape,
    entries: &[NodeRef],
    input: NodeRef,
    activation: Activation,
) -> NodeRef {
    let layers = entries.len() / 2;
    debug_assert!(layers >= 1 && entries.len() % 2 == 0);
    let mut x = input;
    for l in 0..layers {
        let w = entries[2 * l];
        let b = entries[2 * l + 1];
        x = tape.add_row(tape.matmul(x, w), b);
        if l + 1 < layers {
            x = match activation {
                Activation::Elu => tape.elu(x),
                Activation::Tanh => tape.tanh(x),
                Activation::None => x,
            };
        }
    }
    x
}

/// Bind every entry of a group as parameter nodes, in entry order.
pub fn bind_group(tape: &Tape, params: &ParamSet, group: usize) -> Vec<NodeRef> {
    (0..params.groups[group].entries.len())
        .map(|e| tape.param(params, group, e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn group_from(def: &MlpDef, rng: &mut ChaCha8Rng) -> ParamGroup {
        let mut g = ParamGroup::new("net");
        for (name, t) in mlp_init(def, rng) {
            g.push(name, t);
        }
        g
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let def = MlpDef::new(vec![3, 4, 2]);
        let mut g = ParamGroup::new("net");
        for (name, t) in mlp_init(&def, &mut ChaCha8Rng::seed_from_u64(0)) {
            g.push(name, Tensor::zeros(t.shape().to_vec()));
        }
        let out = mlp_apply(&g, &Tensor::row(vec![1.0, -2.0, 0.5]), Activation::Elu).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut g = ParamGroup::new("net");
        g.push("w0", Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        g.push("b0", Tensor::row(vec![0.0; 3]));
        let v = vec![0.7, -1.3, 2.2];
        let out = mlp_apply(&g, &Tensor::row(v.clone()), Activation::None).unwrap();
        assert_eq!(out.data(), v.as_slice());
    }

    #[test]
    fn seeded_two_layer_matches_hand_rolled_matrix_oracle() {
        let def = MlpDef::new(vec![4, 5, 3]);
        let g = group_from(&def, &mut ChaCha8Rng::seed_from_u64(7));
        let input = vec![1.0; 4];
        let got = mlp_apply(&g, &Tensor::row(input.clone()), Activation::Elu).unwrap();

        // Independent dense arithmetic: explicit loops over w0/b0/w1/b1.
        let (w0, b0) = (&g.entries[0].value, &g.entries[1].value);
        let (w1, b1) = (&g.entries[2].value, &g.entries[3].value);
        let mut h = vec![0.0; 5];
        for j in 0..5 {
            let mut s = b0.data()[j];
            for i in 0..4 {
                s += input[i] * w0.at(i, j);
            }
            h[j] = if s > 0.0 { s } else { s.exp_m1() };
        }
        let mut y = vec![0.0; 3];
        for j in 0..3 {
            let mut s = b1.data()[j];
            for (i, &hi) in h.iter().enumerate() {
                s += hi * w1.at(i, j);
            }
            y[j] = s;
        }
        for (a, b) in got.data().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let def = MlpDef::new(vec![4, 5, 3]);
        let g = group_from(&def, &mut ChaCha8Rng::seed_from_u64(1));
        let err = mlp_apply(&g, &Tensor::row(vec![1.0; 6]), Activation::Elu).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 6]") && msg.contains("[4, 5]"), "{msg}");
    }

    #[test]
    fn infer_matches_batched_apply() {
        let def = MlpDef::new(vec![6, 8, 8, 2]);
        let g = group_from(&def, &mut ChaCha8Rng::seed_from_u64(3));
        let x: Vec<f64> = (0..6).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let a = mlp_apply(&g, &Tensor::row(x.clone()), Activation::Elu).unwrap();
        let b = mlp_infer(&g, &x, Activation::Elu);
        for (p, q) in a.data().iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
