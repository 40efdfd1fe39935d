use super::{ParamSet, Tensor};
use crate::{Error, Result};
use std::cell::RefCell;

/// Handle to one node in a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; receives no gradient.
    Leaf,
    /// Trainable leaf; gradient is routed back to the named entry of one
    /// of the parameter sets registered at `write_grads` time.
    Param { set: usize, group: usize, entry: usize },
    Add(NodeRef, NodeRef),
    Sub(NodeRef, NodeRef),
    Mul(NodeRef, NodeRef),
    Div(NodeRef, NodeRef),
    /// Multiply by a compile-time constant.
    Scale(NodeRef, f64),
    AddConst(NodeRef),
    MatMul(NodeRef, NodeRef),
    /// `[m, n] + [1, n]`, the bias pattern.
    AddRow(NodeRef, NodeRef),
    /// `[m, n] * [m, 1]`, broadcast over columns.
    MulCol(NodeRef, NodeRef),
    Elu(NodeRef),
    Tanh(NodeRef),
    Sigmoid(NodeRef),
    Exp(NodeRef),
    Ln(NodeRef),
    /// Row-wise reduction `[m, n] -> [m, 1]`.
    RowSum(NodeRef),
    SumAll(NodeRef),
    MeanAll(NodeRef),
    LogSoftmaxRows(NodeRef),
    LogSumExpRows(NodeRef),
    ConcatCols(Vec<NodeRef>),
    SliceCols(NodeRef, usize, usize),
    SliceRows(NodeRef, usize, usize),
    /// Per-row column gather `[m, n] -> [m, 1]` at `idx[r]`.
    GatherCols(NodeRef, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Dynamic computation record, rebuilt for every training step. Operations
/// append nodes eagerly; `backward` walks the record in reverse and leaves a
/// gradient per node, which `write_grads` then accumulates into a
/// [`ParamSet`].
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor) -> NodeRef {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, value });
        NodeRef(inner.nodes.len() - 1)
    }

    pub fn value(&self, n: NodeRef) -> Tensor {
        self.inner.borrow().nodes[n.0].value.clone()
    }

    pub fn value_scalar(&self, n: NodeRef) -> f64 {
        let inner = self.inner.borrow();
        let v = &inner.nodes[n.0].value;
        debug_assert_eq!(v.numel(), 1);
        v.data()[0]
    }

    pub fn shape(&self, n: NodeRef) -> Vec<usize> {
        self.inner.borrow().nodes[n.0].value.shape().to_vec()
    }

    /// Gradient of the last `backward` call with respect to node `n`.
    pub fn grad(&self, n: NodeRef) -> Option<Tensor> {
        self.inner.borrow().grads.get(n.0).and_then(|g| g.clone())
    }

    // ---- leaves ----

    pub fn constant(&self, value: Tensor) -> NodeRef {
        self.push(Op::Leaf, value)
    }

    pub fn constant_scalar(&self, v: f64) -> NodeRef {
        self.push(Op::Leaf, Tensor::scalar(v))
    }

    /// Register one parameter entry as a leaf. The current value is copied in;
    /// gradients flow back through `write_grads`. Single-set graphs use set 0.
    pub fn param(&self, params: &ParamSet, group: usize, entry: usize) -> NodeRef {
        self.param_in(0, params, group, entry)
    }

    /// As `param`, tagging the leaf with a parameter-set index for graphs
    /// that train several independent sets at once.
    pub fn param_in(&self, set: usize, params: &ParamSet, group: usize, entry: usize) -> NodeRef {
        let value = params.groups[group].entries[entry].value.clone();
        self.push(Op::Param { set, group, entry }, value)
    }

    // ---- arithmetic ----

    pub fn add(&self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
            assert_eq!(x.shape(), y.shape(), "add shapes");
            let mut out = x.clone();
            out.add_assign(y);
            out
        };
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
            assert_eq!(x.shape(), y.shape(), "sub shapes");
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
            assert_eq!(x.shape(), y.shape(), "mul shapes");
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, y) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
            assert_eq!(x.shape(), y.shape(), "div shapes");
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p / q).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&self, a: NodeRef, c: f64) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            let data = x.data().iter().map(|p| p * c).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&self, a: NodeRef, c: f64) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            let data = x.data().iter().map(|p| p + c).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.push(Op::AddConst(a), v)
    }

    pub fn neg(&self, a: NodeRef) -> NodeRef {
        self.scale(a, -1.0)
    }

    pub fn square(&self, a: NodeRef) -> NodeRef {
        self.mul(a, a)
    }

    pub fn matmul(&self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            inner.nodes[a.0].value.matmul(&inner.nodes[b.0].value)
        };
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_row(&self, a: NodeRef, bias: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, b) = (&inner.nodes[a.0].value, &inner.nodes[bias.0].value);
            assert_eq!(b.rows(), 1, "bias must be a row vector");
            assert_eq!(x.cols(), b.cols(), "bias width");
            let mut out = x.clone();
            let cols = out.cols();
            for r in 0..out.rows() {
                for c in 0..cols {
                    let v = out.at(r, c) + b.data()[c];
                    out.set(r, c, v);
                }
            }
            out
        };
        self.push(Op::AddRow(a, bias), v)
    }

    pub fn mul_col(&self, a: NodeRef, col: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let (x, cvec) = (&inner.nodes[a.0].value, &inner.nodes[col.0].value);
            assert_eq!(cvec.cols(), 1, "column factor must be [m, 1]");
            assert_eq!(x.rows(), cvec.rows(), "column factor height");
            let mut out = x.clone();
            let cols = out.cols();
            for r in 0..out.rows() {
                let f = cvec.at(r, 0);
                for c in 0..cols {
                    let v = out.at(r, c) * f;
                    out.set(r, c, v);
                }
            }
            out
        };
        self.push(Op::MulCol(a, col), v)
    }

    // ---- nonlinearities ----

    pub fn elu(&self, a: NodeRef) -> NodeRef {
        let v = self.map_unary(a, super::elu);
        self.push(Op::Elu(a), v)
    }

    pub fn tanh(&self, a: NodeRef) -> NodeRef {
        let v = self.map_unary(a, f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&self, a: NodeRef) -> NodeRef {
        let v = self.map_unary(a, super::sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&self, a: NodeRef) -> NodeRef {
        let v = self.map_unary(a, f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&self, a: NodeRef) -> NodeRef {
        let v = self.map_unary(a, f64::ln);
        self.push(Op::Ln(a), v)
    }

    fn map_unary(&self, a: NodeRef, f: impl Fn(f64) -> f64) -> Tensor {
        let inner = self.inner.borrow();
        let x = &inner.nodes[a.0].value;
        let data = x.data().iter().map(|&p| f(p)).collect();
        Tensor::new(x.shape().to_vec(), data).unwrap()
    }

    // ---- reductions and shaping ----

    pub fn row_sum(&self, a: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            let mut out = Tensor::zeros(vec![x.rows(), 1]);
            for r in 0..x.rows() {
                out.set(r, 0, x.row_slice(r).iter().sum());
            }
            out
        };
        self.push(Op::RowSum(a), v)
    }

    pub fn sum_all(&self, a: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            Tensor::scalar(inner.nodes[a.0].value.data().iter().sum())
        };
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&self, a: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)
        };
        self.push(Op::MeanAll(a), v)
    }

    /// Numerically stable per-row log-softmax.
    pub fn log_softmax_rows(&self, a: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            let mut out = x.clone();
            let cols = out.cols();
            for r in 0..out.rows() {
                let row = x.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for c in 0..cols {
                    out.set(r, c, row[c] - lse);
                }
            }
            out
        };
        self.push(Op::LogSoftmaxRows(a), v)
    }

    pub fn softmax_rows(&self, a: NodeRef) -> NodeRef {
        let ls = self.log_softmax_rows(a);
        self.exp(ls)
    }

    /// Per-row `log sum_j exp(a_rj)`, `[m, n] -> [m, 1]`.
    pub fn logsumexp_rows(&self, a: NodeRef) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            let mut out = Tensor::zeros(vec![x.rows(), 1]);
            for r in 0..x.rows() {
                let row = x.row_slice(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                out.set(r, 0, lse);
            }
            out
        };
        self.push(Op::LogSumExpRows(a), v)
    }

    pub fn concat_cols(&self, parts: &[NodeRef]) -> NodeRef {
        assert!(!parts.is_empty());
        let v = {
            let inner = self.inner.borrow();
            let rows = inner.nodes[parts[0].0].value.rows();
            let total: usize = parts.iter().map(|p| inner.nodes[p.0].value.cols()).sum();
            let mut out = Tensor::zeros(vec![rows, total]);
            let mut at = 0;
            for p in parts {
                let x = &inner.nodes[p.0].value;
                assert_eq!(x.rows(), rows, "concat_cols row mismatch");
                for r in 0..rows {
                    let src = x.row_slice(r);
                    for (c, &sv) in src.iter().enumerate() {
                        out.set(r, at + c, sv);
                    }
                }
                at += x.cols();
            }
            out
        };
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_cols(&self, a: NodeRef, from: usize, to: usize) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            assert!(from < to && to <= x.cols(), "slice_cols range");
            let mut out = Tensor::zeros(vec![x.rows(), to - from]);
            for r in 0..x.rows() {
                for c in from..to {
                    out.set(r, c - from, x.at(r, c));
                }
            }
            out
        };
        self.push(Op::SliceCols(a, from, to), v)
    }

    pub fn col(&self, a: NodeRef, c: usize) -> NodeRef {
        self.slice_cols(a, c, c + 1)
    }

    pub fn slice_rows(&self, a: NodeRef, from: usize, to: usize) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            assert!(from < to && to <= x.rows(), "slice_rows range");
            let mut out = Tensor::zeros(vec![to - from, x.cols()]);
            for r in from..to {
                for c in 0..x.cols() {
                    out.set(r - from, c, x.at(r, c));
                }
            }
            out
        };
        self.push(Op::SliceRows(a, from, to), v)
    }

    pub fn row(&self, a: NodeRef, r: usize) -> NodeRef {
        self.slice_rows(a, r, r + 1)
    }

    pub fn gather_cols(&self, a: NodeRef, idx: &[usize]) -> NodeRef {
        let v = {
            let inner = self.inner.borrow();
            let x = &inner.nodes[a.0].value;
            assert_eq!(idx.len(), x.rows(), "gather_cols index length");
            let mut out = Tensor::zeros(vec![x.rows(), 1]);
            for (r, &c) in idx.iter().enumerate() {
                out.set(r, 0, x.at(r, c));
            }
            out
        };
        self.push(Op::GatherCols(a, idx.to_vec()), v)
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Leaves per-node gradients behind;
    /// call [`Tape::write_grads`] to accumulate into parameter groups.
    pub fn backward(&self, loss: NodeRef) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss; got shape {:?}",
                inner.nodes[loss.0].value.shape()
            )));
        }
        let n = inner.nodes.len();
        inner.grads = vec![None; n];
        inner.grads[loss.0] = Some({
            let mut g = Tensor::zeros_like(&inner.nodes[loss.0].value);
            g.fill(1.0);
            g
        });

        for i in (0..=loss.0).rev() {
            let Some(g) = inner.grads[i].take() else {
                continue;
            };
            // Re-insert so callers can query; ops below only add to parents.
            let op = inner.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Param { .. } => {}
                Op::Add(a, b) => {
                    accumulate(&mut inner, a, &g);
                    accumulate(&mut inner, b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut inner, a, &g);
                    let mut ng = g.clone();
                    for v in ng.data_mut() {
                        *v = -*v;
                    }
                    accumulate(&mut inner, b, &ng);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, &inner.nodes[b.0].value, |p, q| p * q);
                    let gb = elementwise(&g, &inner.nodes[a.0].value, |p, q| p * q);
                    accumulate(&mut inner, a, &ga);
                    accumulate(&mut inner, b, &gb);
                }
                Op::Div(a, b) => {
                    let bv = inner.nodes[b.0].value.clone();
                    let av = inner.nodes[a.0].value.clone();
                    let ga = elementwise(&g, &bv, |p, q| p / q);
                    let mut gb = Tensor::zeros_like(&bv);
                    for (((gd, ad), bd), o) in g
                        .data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .zip(gb.data_mut())
                    {
                        *o = -gd * ad / (bd * bd);
                    }
                    accumulate(&mut inner, a, &ga);
                    accumulate(&mut inner, b, &gb);
                }
                Op::Scale(a, c) => {
                    let mut ga = g.clone();
                    for v in ga.data_mut() {
                        *v *= c;
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::AddConst(a) => accumulate(&mut inner, a, &g),
                Op::MatMul(a, b) => {
                    let av = inner.nodes[a.0].value.clone();
                    let bv = inner.nodes[b.0].value.clone();
                    // dA = g @ B^T ; dB = A^T @ g
                    let mut ga = Tensor::zeros_like(&av);
                    ndarray::linalg::general_mat_mul(
                        1.0,
                        &g.view2(),
                        &bv.view2().t(),
                        0.0,
                        &mut ga.view2_mut(),
                    );
                    let mut gb = Tensor::zeros_like(&bv);
                    ndarray::linalg::general_mat_mul(
                        1.0,
                        &av.view2().t(),
                        &g.view2(),
                        0.0,
                        &mut gb.view2_mut(),
                    );
                    accumulate(&mut inner, a, &ga);
                    accumulate(&mut inner, b, &gb);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut inner, a, &g);
                    let cols = g.cols();
                    let mut gb = Tensor::zeros(vec![1, cols]);
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            let v = gb.at(0, c) + g.at(r, c);
                            gb.set(0, c, v);
                        }
                    }
                    accumulate(&mut inner, bias, &gb);
                }
                Op::MulCol(a, colref) => {
                    let av = inner.nodes[a.0].value.clone();
                    let cv = inner.nodes[colref.0].value.clone();
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let f = cv.at(r, 0);
                        for c in 0..ga.cols() {
                            let v = ga.at(r, c) * f;
                            ga.set(r, c, v);
                        }
                    }
                    let mut gc = Tensor::zeros(vec![av.rows(), 1]);
                    for r in 0..av.rows() {
                        let mut s = 0.0;
                        for c in 0..av.cols() {
                            s += g.at(r, c) * av.at(r, c);
                        }
                        gc.set(r, 0, s);
                    }
                    accumulate(&mut inner, a, &ga);
                    accumulate(&mut inner, colref, &gc);
                }
                Op::Elu(a) => {
                    let av = inner.nodes[a.0].value.clone();
                    let ga = elementwise(&g, &av, |gd, x| {
                        if x > 0.0 {
                            gd
                        } else {
                            gd * x.exp()
                        }
                    });
                    accumulate(&mut inner, a, &ga);
                }
                Op::Tanh(a) => {
                    let yv = inner.nodes[i].value.clone();
                    let ga = elementwise(&g, &yv, |gd, y| gd * (1.0 - y * y));
                    accumulate(&mut inner, a, &ga);
                }
                Op::Sigmoid(a) => {
                    let yv = inner.nodes[i].value.clone();
                    let ga = elementwise(&g, &yv, |gd, y| gd * y * (1.0 - y));
                    accumulate(&mut inner, a, &ga);
                }
                Op::Exp(a) => {
                    let yv = inner.nodes[i].value.clone();
                    let ga = elementwise(&g, &yv, |gd, y| gd * y);
                    accumulate(&mut inner, a, &ga);
                }
                Op::Ln(a) => {
                    let av = inner.nodes[a.0].value.clone();
                    let ga = elementwise(&g, &av, |gd, x| gd / x);
                    accumulate(&mut inner, a, &ga);
                }
                Op::RowSum(a) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    for r in 0..av.rows() {
                        let gr = g.at(r, 0);
                        for c in 0..av.cols() {
                            ga.set(r, c, gr);
                        }
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::SumAll(a) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    ga.fill(g.data()[0]);
                    accumulate(&mut inner, a, &ga);
                }
                Op::MeanAll(a) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    ga.fill(g.data()[0] / av.numel() as f64);
                    accumulate(&mut inner, a, &ga);
                }
                Op::LogSoftmaxRows(a) => {
                    // d/dx log_softmax: g - softmax(x) * sum(g) per row.
                    let yv = inner.nodes[i].value.clone();
                    let mut ga = Tensor::zeros_like(&yv);
                    for r in 0..yv.rows() {
                        let gsum: f64 = g.row_slice(r).iter().sum();
                        for c in 0..yv.cols() {
                            ga.set(r, c, g.at(r, c) - yv.at(r, c).exp() * gsum);
                        }
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::LogSumExpRows(a) => {
                    // d/dx lse = softmax(x), scaled by the row's upstream grad.
                    let av = inner.nodes[a.0].value.clone();
                    let yv = inner.nodes[i].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    for r in 0..av.rows() {
                        let gr = g.at(r, 0);
                        let lse = yv.at(r, 0);
                        for c in 0..av.cols() {
                            ga.set(r, c, gr * (av.at(r, c) - lse).exp());
                        }
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = inner.nodes[p.0].value.cols();
                        let mut gp = Tensor::zeros(vec![g.rows(), w]);
                        for r in 0..g.rows() {
                            for c in 0..w {
                                gp.set(r, c, g.at(r, at + c));
                            }
                        }
                        accumulate(&mut inner, p, &gp);
                        at += w;
                    }
                }
                Op::SliceCols(a, from, _to) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, from + c, g.at(r, c));
                        }
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::SliceRows(a, from, _to) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(from + r, c, g.at(r, c));
                        }
                    }
                    accumulate(&mut inner, a, &ga);
                }
                Op::GatherCols(a, idx) => {
                    let av = inner.nodes[a.0].value.clone();
                    let mut ga = Tensor::zeros_like(&av);
                    for (r, &c) in idx.iter().enumerate() {
                        ga.set(r, c, g.at(r, 0));
                    }
                    accumulate(&mut inner, a, &ga);
                }
            }
            inner.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Accumulate parameter-leaf gradients from the last backward pass into
    /// the matching entries of `params`. Entries that never joined the record
    /// are left untouched.
    pub fn write_grads(&self, params: &mut ParamSet) {
        self.write_grads_multi(&mut [params]);
    }

    /// Multi-set variant: `sets[i]` receives the gradients of leaves tagged
    /// with set index `i`.
    pub fn write_grads_multi(&self, sets: &mut [&mut ParamSet]) {
        let inner = self.inner.borrow();
        for (i, node) in inner.nodes.iter().enumerate() {
            if let Op::Param { set, group, entry } = node.op {
                if let Some(Some(g)) = inner.grads.get(i) {
                    sets[set].groups[group].entries[entry].grad.add_assign(g);
                }
            }
        }
    }
}

fn accumulate(inner: &mut TapeInner, target: NodeRef, g: &Tensor) {
    match &mut inner.grads[target.0] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.numel(), b.numel());
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

// ---- distribution helpers on the tape ----

const LN_2PI: f64 = 1.8378770664093453;

/// Row-wise diagonal-Gaussian log density: `mean`, `std`, `x` are `[m, d]`,
/// result is `[m, 1]`.
pub fn gauss_log_prob_rows(t: &Tape, mean: NodeRef, std: NodeRef, x: NodeRef) -> NodeRef {
    let d = t.shape(mean)[1] as f64;
    let diff = t.sub(x, mean);
    let zscore = t.div(diff, std);
    let sq = t.square(zscore);
    let quad = t.row_sum(sq);
    let log_std_sum = t.row_sum(t.ln(std));
    let mut out = t.scale(quad, -0.5);
    out = t.sub(out, log_std_sum);
    t.add_const(out, -0.5 * d * LN_2PI)
}

/// Row-wise `KL(N(mean, std) || N(0, I))`, result `[m, 1]`.
pub fn gauss_kl_to_std_normal(t: &Tape, mean: NodeRef, std: NodeRef) -> NodeRef {
    let var = t.square(std);
    let mean_sq = t.square(mean);
    let ln_std = t.ln(std);
    let mut per_dim = t.add(var, mean_sq);
    per_dim = t.scale(per_dim, 0.5);
    per_dim = t.sub(per_dim, ln_std);
    per_dim = t.add_const(per_dim, -0.5);
    t.row_sum(per_dim)
}

/// Row-wise `KL(N(m1, s1) || N(m2, s2))` for diagonal Gaussians, `[m, 1]`.
pub fn gauss_kl_rows(
    t: &Tape,
    m1: NodeRef,
    s1: NodeRef,
    m2: NodeRef,
    s2: NodeRef,
) -> NodeRef {
    let ratio = t.div(s1, s2);
    let ratio_sq = t.square(ratio);
    let diff = t.sub(m1, m2);
    let diff_z = t.div(diff, s2);
    let diff_sq = t.square(diff_z);
    let mut per_dim = t.add(ratio_sq, diff_sq);
    per_dim = t.scale(per_dim, 0.5);
    let ln_ratio = t.ln(ratio);
    per_dim = t.sub(per_dim, ln_ratio);
    per_dim = t.add_const(per_dim, -0.5);
    t.row_sum(per_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_must_be_scalar() {
        let t = Tape::new();
        let a = t.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn grad_of_parameter_sum_is_one() {
        let mut params = ParamSet::new();
        let g = params.add_group("g");
        params.push_entry(g, "w", Tensor::row(vec![0.3, -1.2, 4.0]));
        let t = Tape::new();
        let w = t.param(&params, 0, 0);
        let loss = t.sum_all(w);
        t.backward(loss).unwrap();
        t.write_grads(&mut params);
        assert_eq!(params.groups[0].entries[0].grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_square_is_analytic() {
        let mut params = ParamSet::new();
        let g = params.add_group("g");
        params.push_entry(g, "w", Tensor::scalar(3.0));
        let t = Tape::new();
        let w = t.param(&params, 0, 0);
        let loss = t.sum_all(t.square(w));
        t.backward(loss).unwrap();
        t.write_grads(&mut params);
        assert!((params.groups[0].entries[0].grad.data()[0] - 6.0).abs() < 1e-14);
    }

    #[test]
    fn log_softmax_rows_normalizes() {
        let t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let ls = t.log_softmax_rows(a);
        let v = t.value(ls);
        for r in 0..2 {
            let s: f64 = v.row_slice(r).iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_grads_match_manual() {
        // loss = sum(A @ B); dA = row sums of B, dB = col sums of A.
        let mut params = ParamSet::new();
        let g = params.add_group("g");
        params.push_entry(g, "a", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        params.push_entry(g, "b", Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let t = Tape::new();
        let a = t.param(&params, 0, 0);
        let b = t.param(&params, 0, 1);
        let loss = t.sum_all(t.matmul(a, b));
        t.backward(loss).unwrap();
        t.write_grads(&mut params);
        assert_eq!(params.groups[0].entries[0].grad.data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(params.groups[0].entries[1].grad.data(), &[4.0, 4.0, 6.0, 6.0]);
    }
}
