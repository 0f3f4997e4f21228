//! Reverse-mode autodiff on a flat tape.
//!
//! A [`Tape`] owns an append-only arena of nodes; [`Var`] is a copyable
//! handle. Graphs are rebuilt per training step. [`Tape::backward`] produces
//! value-level gradients; [`Tape::grad_nodes`] builds the gradient of a
//! scalar w.r.t. one variable *as new graph nodes*, which is what the R1
//! penalty needs (gradients of that gradient then flow to parameters through
//! the ordinary backward pass). Only the op subset the discriminator uses
//! supports `grad_nodes`.

pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::fm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    AddC,
    MulC(f64),
    Neg,
    Recip,
    Relu,
    LRelu(f64),
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Softplus,
    Clamp01,
    Sin,
    Cos,
    Matmul { ta: bool, tb: bool },
    /// x + b where b has the length of axis 1 (channels of 4-d, columns of 2-d).
    AddAxis1,
    /// [N,C,H,W] * [N,C]
    MulNc,
    /// [N,C,H,W] + [N,C]
    AddNc,
    /// x * s with scalar node s
    MulScalar,
    /// x + s with scalar node s
    AddScalar,
    /// [C,H,W] * [1,H,W] or [N,C,H,W] * [N,1,H,W]
    MulPix,
    Conv2d { stride: usize, pad: usize },
    ConvT2d { stride: usize, pad: usize },
    /// Adjoint of Conv2d w.r.t. its input, as a first-class op (for R1).
    Conv2dDx { stride: usize, pad: usize },
    Upsample2x,
    InstanceNorm { stats: Vec<(f64, f64)> },
    SumAll,
    MeanAll,
    SumRows,
    /// x[n,m] - r[n]
    SubRows,
    GatherCols(Vec<usize>),
    MeanHw,
    ConcatAxis { axis: usize, sizes: Vec<usize> },
    SliceAxis { axis: usize, start: usize, len: usize },
    DiffX,
    DiffY,
    SecondDiffX,
    SecondDiffY,
    GridSample { fill: Vec<f64> },
    Reshape(Vec<usize>),
    RepeatN(usize),
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Value-level gradients keyed by node id.
pub struct Grads {
    g: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.id).and_then(|o| o.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.g.get_mut(v.id).and_then(|o| o.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            op,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
        }
    }

    fn push_from(&self, value: Tensor, parents: &[Var], op: Op) -> Var {
        let req = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(value, parents.iter().map(|p| p.id).collect(), op, req)
    }

    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, vec![], Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn param(&self, t: Tensor) -> Var {
        self.push(t, vec![], Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        nodes[v.id].value.item()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[x.id].value.map(&f)
        };
        self.push_from(value, &[x], op)
    }

    fn binary_same(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.zip(&nodes[b.id].value, &f)
        };
        self.push_from(value, &[a, b], op)
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Div, |x, y| x / y)
    }

    pub fn add_c(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddC, |v| v + c)
    }

    pub fn mul_c(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::MulC(c), |v| v * c)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(x, Op::Neg, |v| -v)
    }

    pub fn recip(&self, x: Var) -> Var {
        self.unary(x, Op::Recip, |v| 1.0 / v)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu, |v| v.max(0.0))
    }

    pub fn lrelu(&self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LRelu(slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, fm::sigmoid)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh, fm::tanh)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp, fm::exp)
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, Op::Ln, fm::ln)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, Op::Sqrt, fm::sqrt)
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Op::Abs, |v| v.abs())
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, Op::Softplus, fm::softplus)
    }

    pub fn clamp01(&self, x: Var) -> Var {
        self.unary(x, Op::Clamp01, |v| v.clamp(0.0, 1.0))
    }

    pub fn sin(&self, x: Var) -> Var {
        self.unary(x, Op::Sin, fm::sin)
    }

    pub fn cos(&self, x: Var) -> Var {
        self.unary(x, Op::Cos, fm::cos)
    }

    pub fn square(&self, x: Var) -> Var {
        self.mul(x, x)
    }

    // ---- shapes and broadcast ----

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let (value, orig) = {
            let nodes = self.nodes.borrow();
            (
                nodes[x.id].value.reshaped(shape),
                nodes[x.id].value.shape().to_vec(),
            )
        };
        self.push_from(value, &[x], Op::Reshape(orig))
    }

    /// Repeats a [C,H,W] (or any-rank) tensor along a new leading batch axis.
    pub fn repeat_n(&self, x: Var, n: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let mut shape = vec![n];
            shape.extend_from_slice(t.shape());
            let mut data = Vec::with_capacity(t.numel() * n);
            for _ in 0..n {
                data.extend_from_slice(t.data());
            }
            Tensor::new(shape, data)
        };
        self.push_from(value, &[x], Op::RepeatN(n))
    }

    /// x + b broadcast along axis 1 (dense bias for 2-d, channel bias for 4-d).
    pub fn add_axis1(&self, x: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.id].value;
            let bt = &nodes[b.id].value;
            let s = xt.shape();
            let c = s[1];
            assert_eq!(bt.numel(), c, "add_axis1 bias length");
            let inner: usize = s[2..].iter().product();
            let mut out = xt.clone();
            let od = out.data_mut();
            let bd = bt.data();
            let n = s[0];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * inner;
                    let bv = bd[ci];
                    for k in 0..inner {
                        od[base + k] += bv;
                    }
                }
            }
            out
        };
        self.push_from(value, &[x, b], Op::AddAxis1)
    }

    /// [N,C,H,W] * s[N,C]
    pub fn mul_nc(&self, x: Var, s: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.id].value;
            let st = &nodes[s.id].value;
            let (n, c) = (xt.shape()[0], xt.shape()[1]);
            assert_eq!(st.shape(), &[n, c], "mul_nc scale shape");
            let inner: usize = xt.shape()[2..].iter().product();
            let mut out = xt.clone();
            for p in 0..n * c {
                let sv = st.data()[p];
                for k in 0..inner {
                    out.data_mut()[p * inner + k] *= sv;
                }
            }
            out
        };
        self.push_from(value, &[x, s], Op::MulNc)
    }

    /// [N,C,H,W] + s[N,C]
    pub fn add_nc(&self, x: Var, s: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.id].value;
            let st = &nodes[s.id].value;
            let (n, c) = (xt.shape()[0], xt.shape()[1]);
            assert_eq!(st.shape(), &[n, c], "add_nc shift shape");
            let inner: usize = xt.shape()[2..].iter().product();
            let mut out = xt.clone();
            for p in 0..n * c {
                let sv = st.data()[p];
                for k in 0..inner {
                    out.data_mut()[p * inner + k] += sv;
                }
            }
            out
        };
        self.push_from(value, &[x, s], Op::AddNc)
    }

    /// x * s where s is a 1-element node.
    pub fn mul_scalar(&self, x: Var, s: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.id].value.item();
            nodes[x.id].value.map(|v| v * sv)
        };
        self.push_from(value, &[x, s], Op::MulScalar)
    }

    /// x + s where s is a 1-element node.
    pub fn add_scalar(&self, x: Var, s: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let sv = nodes[s.id].value.item();
            nodes[x.id].value.map(|v| v + sv)
        };
        self.push_from(value, &[x, s], Op::AddScalar)
    }

    /// [C,H,W] * m[1,H,W] (or [N,C,H,W] * m[N,1,H,W]).
    pub fn mul_pix(&self, x: Var, m: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xt = &nodes[x.id].value;
            let mt = &nodes[m.id].value;
            mul_pix_value(xt, mt)
        };
        self.push_from(value, &[x, m], Op::MulPix)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            matmul_t(&nodes[a.id].value, &nodes[b.id].value, ta, tb)
        };
        self.push_from(value, &[a, b], Op::Matmul { ta, tb })
    }

    // ---- convolutions ----

    pub fn conv2d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::conv2d_fwd(&nodes[x.id].value, &nodes[w.id].value, stride, pad)
        };
        self.push_from(value, &[x, w], Op::Conv2d { stride, pad })
    }

    pub fn conv_t2d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::convt2d_fwd(&nodes[x.id].value, &nodes[w.id].value, stride, pad)
        };
        self.push_from(value, &[x, w], Op::ConvT2d { stride, pad })
    }

    fn conv2d_dx_node(&self, g: Var, w: Var, stride: usize, pad: usize, in_h: usize, in_w: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::conv2d_dx(&nodes[g.id].value, &nodes[w.id].value, stride, pad, in_h, in_w)
        };
        let _ = (in_h, in_w);
        self.push_from(value, &[g, w], Op::Conv2dDx { stride, pad })
    }

    pub fn upsample2x(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::upsample2x(&nodes[x.id].value)
        };
        self.push_from(value, &[x], Op::Upsample2x)
    }

    pub fn instance_norm(&self, x: Var, eps: f64) -> Var {
        let (value, stats) = {
            let nodes = self.nodes.borrow();
            kernels::instance_norm_fwd(&nodes[x.id].value, eps)
        };
        self.push_from(value, &[x], Op::InstanceNorm { stats })
    }

    // ---- reductions and row ops ----

    pub fn sum_all(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            Tensor::scalar(nodes[x.id].value.sum())
        };
        self.push_from(value, &[x], Op::SumAll)
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            Tensor::scalar(nodes[x.id].value.mean())
        };
        self.push_from(value, &[x], Op::MeanAll)
    }

    pub fn sum_rows(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let (n, m) = (t.shape()[0], t.shape()[1]);
            Tensor::from_fn(&[n], |i| t.data()[i * m..(i + 1) * m].iter().sum())
        };
        self.push_from(value, &[x], Op::SumRows)
    }

    pub fn sub_rows(&self, x: Var, r: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let rt = &nodes[r.id].value;
            let (n, m) = (t.shape()[0], t.shape()[1]);
            assert_eq!(rt.numel(), n);
            Tensor::from_fn(&[n, m], |k| t.data()[k] - rt.data()[k / m])
        };
        self.push_from(value, &[x, r], Op::SubRows)
    }

    pub fn gather_cols(&self, x: Var, idx: Vec<usize>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let (n, m) = (t.shape()[0], t.shape()[1]);
            assert_eq!(idx.len(), n);
            Tensor::from_fn(&[n], |i| t.data()[i * m + idx[i]])
        };
        self.push_from(value, &[x], Op::GatherCols(idx))
    }

    pub fn mean_hw(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let (n, c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
            let m = (h * w) as f64;
            Tensor::from_fn(&[n, c], |p| {
                t.data()[p * h * w..(p + 1) * h * w].iter().sum::<f64>() / m
            })
        };
        self.push_from(value, &[x], Op::MeanHw)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let (value, sizes) = {
            let nodes = self.nodes.borrow();
            let ts: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let s0 = ts[0].shape();
            let outer: usize = s0[..axis].iter().product();
            let inner: usize = s0[axis + 1..].iter().product();
            let sizes: Vec<usize> = ts.iter().map(|t| t.shape()[axis]).collect();
            let ctot: usize = sizes.iter().sum();
            let mut shape = s0.to_vec();
            shape[axis] = ctot;
            let mut out = Tensor::zeros(&shape);
            let od = out.data_mut();
            for ni in 0..outer {
                let mut coff = 0;
                for t in &ts {
                    let c = t.shape()[axis];
                    let src = &t.data()[ni * c * inner..(ni + 1) * c * inner];
                    od[(ni * ctot + coff) * inner..(ni * ctot + coff + c) * inner]
                        .copy_from_slice(src);
                    coff += c;
                }
            }
            (out, sizes)
        };
        self.push_from(value, parts, Op::ConcatAxis { axis, sizes })
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.id].value;
            let s = t.shape();
            let outer: usize = s[..axis].iter().product();
            let c = s[axis];
            assert!(start + len <= c, "slice out of bounds");
            let inner: usize = s[axis + 1..].iter().product();
            let mut shape = s.to_vec();
            shape[axis] = len;
            let mut out = Tensor::zeros(&shape);
            for ni in 0..outer {
                let src = &t.data()[(ni * c + start) * inner..(ni * c + start + len) * inner];
                out.data_mut()[ni * len * inner..(ni + 1) * len * inner].copy_from_slice(src);
            }
            out
        };
        self.push_from(value, &[x], Op::SliceAxis { axis, start, len })
    }

    // ---- spatial differences and sampling ----

    pub fn diff_x(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::diff_last(&nodes[x.id].value, true)
        };
        self.push_from(value, &[x], Op::DiffX)
    }

    pub fn diff_y(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::diff_last(&nodes[x.id].value, false)
        };
        self.push_from(value, &[x], Op::DiffY)
    }

    pub fn second_diff_x(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::second_diff_last(&nodes[x.id].value, true)
        };
        self.push_from(value, &[x], Op::SecondDiffX)
    }

    pub fn second_diff_y(&self, x: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::second_diff_last(&nodes[x.id].value, false)
        };
        self.push_from(value, &[x], Op::SecondDiffY)
    }

    pub fn grid_sample(&self, img: Var, gu: Var, gv: Var, fill: Vec<f64>) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            kernels::grid_sample(
                &nodes[img.id].value,
                &nodes[gu.id].value,
                &nodes[gv.id].value,
                &fill,
            )
        };
        self.push_from(value, &[img, gu, gv], Op::GridSample { fill })
    }

    // ---- backward ----

    pub fn backward(&self, root: Var) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.numel(),
            1,
            "backward root must be scalar"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::scalar(1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let parent_grads = backward_op(node, &nodes, &g);
            for (slot, pg) in node.parents.iter().zip(parent_grads.into_iter()) {
                if let Some(pg) = pg {
                    if !nodes[*slot].requires_grad {
                        continue;
                    }
                    match &mut grads[*slot] {
                        Some(acc) => acc.add_in_place(&pg),
                        none => *none = Some(pg),
                    }
                }
            }
            // keep leaf grads; interior grads were taken
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Grads { g: grads }
    }

    /// Builds d(root)/d(wrt) as graph nodes (root must be scalar). Supports
    /// the op subset used by the discriminator forward pass.
    pub fn grad_nodes(&self, root: Var, wrt: Var) -> Var {
        let n_nodes = self.len();
        // Which nodes depend on wrt?
        let mut depends = vec![false; n_nodes];
        depends[wrt.id] = true;
        {
            let nodes = self.nodes.borrow();
            for id in wrt.id + 1..n_nodes {
                if nodes[id].parents.iter().any(|&p| depends[p]) {
                    depends[id] = true;
                }
            }
            assert!(
                depends[root.id],
                "grad_nodes: root does not depend on wrt"
            );
            assert_eq!(nodes[root.id].value.numel(), 1);
        }

        let mut grad_of: Vec<Option<Var>> = vec![None; n_nodes];
        let ones = {
            let shape = self.shape_of(root);
            self.constant(Tensor::full(&shape, 1.0))
        };
        grad_of[root.id] = Some(ones);

        for id in (wrt.id..=root.id).rev() {
            if !depends[id] {
                continue;
            }
            let Some(g) = grad_of[id] else { continue };
            if id == wrt.id {
                continue;
            }
            let (op, parents) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].parents.clone())
            };
            for (k, &p) in parents.iter().enumerate() {
                if !depends[p] {
                    continue;
                }
                let contrib = self.grad_node_for_parent(&op, &parents, k, g, id);
                match grad_of[p] {
                    Some(acc) => grad_of[p] = Some(self.add(acc, contrib)),
                    None => grad_of[p] = Some(contrib),
                }
            }
        }
        grad_of[wrt.id].expect("grad_nodes: no path accumulated")
    }

    /// One parent's gradient contribution, built as graph nodes.
    fn grad_node_for_parent(&self, op: &Op, parents: &[usize], k: usize, g: Var, node_id: usize) -> Var {
        match op {
            Op::Add => g,
            Op::Sub => {
                if k == 0 {
                    g
                } else {
                    self.neg(g)
                }
            }
            Op::Mul => {
                let other = Var { id: parents[1 - k] };
                self.mul(g, other)
            }
            Op::MulC(c) => self.mul_c(g, *c),
            Op::AddC => g,
            Op::Neg => self.neg(g),
            Op::Relu => {
                let mask = {
                    let nodes = self.nodes.borrow();
                    nodes[parents[0]].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
                };
                let m = self.constant(mask);
                self.mul(g, m)
            }
            Op::LRelu(slope) => {
                let slope = *slope;
                let mask = {
                    let nodes = self.nodes.borrow();
                    nodes[parents[0]].value.map(|v| if v > 0.0 { 1.0 } else { slope })
                };
                let m = self.constant(mask);
                self.mul(g, m)
            }
            Op::Softplus => {
                let x = Var { id: parents[0] };
                let s = self.sigmoid(x);
                self.mul(g, s)
            }
            Op::Reshape(orig) => self.reshape(g, orig),
            Op::SumAll => {
                let shape = {
                    let nodes = self.nodes.borrow();
                    nodes[parents[0]].value.shape().to_vec()
                };
                let ones = self.constant(Tensor::full(&shape, 1.0));
                self.mul_scalar(ones, g)
            }
            Op::MeanAll => {
                let shape = {
                    let nodes = self.nodes.borrow();
                    nodes[parents[0]].value.shape().to_vec()
                };
                let n: usize = shape.iter().product();
                let ones = self.constant(Tensor::full(&shape, 1.0 / n as f64));
                self.mul_scalar(ones, g)
            }
            Op::Matmul { ta, tb } => {
                let a = Var { id: parents[0] };
                let b = Var { id: parents[1] };
                // z = A' B' with A' = op(a), B' = op(b)
                if k == 0 {
                    // dA' = g B'^T; undo transpose on A
                    if !ta {
                        self.matmul(g, b, false, !*tb)
                    } else {
                        self.matmul(b, g, *tb, true)
                    }
                } else if !tb {
                    self.matmul(a, g, !*ta, false)
                } else {
                    self.matmul(g, a, true, *ta)
                }
            }
            Op::AddAxis1 => {
                if k == 0 {
                    g
                } else {
                    unimplemented!("grad_nodes: bias gradient of AddAxis1 is not needed")
                }
            }
            Op::Conv2d { stride, pad } => {
                let x = Var { id: parents[0] };
                let w = Var { id: parents[1] };
                if k == 0 {
                    let (in_h, in_w) = {
                        let nodes = self.nodes.borrow();
                        let s = nodes[x.id].value.shape().to_vec();
                        (s[2], s[3])
                    };
                    self.conv2d_dx_node(g, w, *stride, *pad, in_h, in_w)
                } else {
                    unimplemented!("grad_nodes: weight gradient of Conv2d is not needed")
                }
            }
            other => unimplemented!("grad_nodes not implemented for {other:?} (node {node_id})"),
        }
    }
}

fn mul_pix_value(x: &Tensor, m: &Tensor) -> Tensor {
    let xs = x.shape();
    let ms = m.shape();
    assert_eq!(xs.len(), ms.len(), "mul_pix rank");
    let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
    assert_eq!(&ms[ms.len() - 2..], &[h, w], "mul_pix spatial dims");
    let c_axis = xs.len() - 3;
    assert_eq!(ms[c_axis], 1, "mul_pix mask must have one channel");
    let n = if xs.len() == 4 { xs[0] } else { 1 };
    let c = xs[c_axis];
    let mut out = x.clone();
    let od = out.data_mut();
    let md = m.data();
    for ni in 0..n {
        let mbase = ni * h * w;
        for ci in 0..c {
            let xbase = (ni * c + ci) * h * w;
            for kk in 0..h * w {
                od[xbase + kk] *= md[mbase + kk];
            }
        }
    }
    out
}

fn matmul_t(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
    let k = ka;
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    kernels::for_each_chunk_mut(out.data_mut(), n, |i, orow| {
        for p in 0..k {
            let av = if ta { ad[p * ac + i] } else { ad[i * ac + p] };
            if av == 0.0 {
                continue;
            }
            if tb {
                for j in 0..n {
                    orow[j] += av * bd[j * bc + p];
                }
            } else {
                let brow = &bd[p * bc..p * bc + n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    });
    out
}

fn backward_op(node: &Node, nodes: &[Node], g: &Tensor) -> Vec<Option<Tensor>> {
    let pval = |k: usize| &nodes[node.parents[k]].value;
    match &node.op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Op::Mul => vec![
            Some(g.zip(pval(1), |gv, b| gv * b)),
            Some(g.zip(pval(0), |gv, a| gv * a)),
        ],
        Op::Div => {
            let a = pval(0);
            let b = pval(1);
            let da = g.zip(b, |gv, bv| gv / bv);
            let mut db = g.zip(a, |gv, av| gv * av);
            db = db.zip(b, |x, bv| -x / (bv * bv));
            vec![Some(da), Some(db)]
        }
        Op::AddC => vec![Some(g.clone())],
        Op::MulC(c) => vec![Some(g.map(|v| v * c))],
        Op::Neg => vec![Some(g.map(|v| -v))],
        Op::Recip => {
            let y = &node.value;
            vec![Some(g.zip(y, |gv, yv| -gv * yv * yv))]
        }
        Op::Relu => vec![Some(g.zip(pval(0), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
        Op::LRelu(s) => vec![Some(g.zip(pval(0), |gv, x| if x > 0.0 { gv } else { s * gv }))],
        Op::Sigmoid => {
            let y = &node.value;
            vec![Some(g.zip(y, |gv, yv| gv * yv * (1.0 - yv)))]
        }
        Op::Tanh => {
            let y = &node.value;
            vec![Some(g.zip(y, |gv, yv| gv * (1.0 - yv * yv)))]
        }
        Op::Exp => vec![Some(g.zip(&node.value, |gv, yv| gv * yv))],
        Op::Ln => vec![Some(g.zip(pval(0), |gv, x| gv / x))],
        Op::Sqrt => vec![Some(g.zip(&node.value, |gv, yv| {
            if yv == 0.0 {
                0.0
            } else {
                gv / (2.0 * yv)
            }
        }))],
        Op::Abs => vec![Some(g.zip(pval(0), |gv, x| {
            if x > 0.0 {
                gv
            } else if x < 0.0 {
                -gv
            } else {
                0.0
            }
        }))],
        Op::Softplus => vec![Some(g.zip(pval(0), |gv, x| gv * fm::sigmoid(x)))],
        Op::Clamp01 => vec![Some(g.zip(pval(0), |gv, x| {
            if x > 0.0 && x < 1.0 {
                gv
            } else {
                0.0
            }
        }))],
        Op::Sin => vec![Some(g.zip(pval(0), |gv, x| gv * fm::cos(x)))],
        Op::Cos => vec![Some(g.zip(pval(0), |gv, x| -gv * fm::sin(x)))],
        Op::Matmul { ta, tb } => {
            let a = pval(0);
            let b = pval(1);
            let da = if !*ta {
                matmul_t(g, b, false, !*tb)
            } else {
                matmul_t(b, g, *tb, true)
            };
            let db = if !*tb {
                matmul_t(a, g, !*ta, false)
            } else {
                matmul_t(g, a, true, *ta)
            };
            vec![Some(da), Some(db)]
        }
        Op::AddAxis1 => {
            let x = pval(0);
            let s = x.shape();
            let (n, c) = (s[0], s[1]);
            let inner: usize = s[2..].iter().product();
            let mut db = Tensor::zeros(&[c]);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * inner;
                    let mut acc = 0.0;
                    for kk in 0..inner {
                        acc += g.data()[base + kk];
                    }
                    db.data_mut()[ci] += acc;
                }
            }
            vec![Some(g.clone()), Some(db)]
        }
        Op::MulNc => {
            let x = pval(0);
            let st = pval(1);
            let (n, c) = (x.shape()[0], x.shape()[1]);
            let inner: usize = x.shape()[2..].iter().product();
            let mut dx = g.clone();
            let mut ds = Tensor::zeros(&[n, c]);
            for p in 0..n * c {
                let sv = st.data()[p];
                let mut acc = 0.0;
                for kk in 0..inner {
                    let idx = p * inner + kk;
                    acc += g.data()[idx] * x.data()[idx];
                    dx.data_mut()[idx] *= sv;
                }
                ds.data_mut()[p] = acc;
            }
            vec![Some(dx), Some(ds)]
        }
        Op::AddNc => {
            let x = pval(0);
            let (n, c) = (x.shape()[0], x.shape()[1]);
            let inner: usize = x.shape()[2..].iter().product();
            let mut ds = Tensor::zeros(&[n, c]);
            for p in 0..n * c {
                let mut acc = 0.0;
                for kk in 0..inner {
                    acc += g.data()[p * inner + kk];
                }
                ds.data_mut()[p] = acc;
            }
            vec![Some(g.clone()), Some(ds)]
        }
        Op::MulScalar => {
            let x = pval(0);
            let sv = pval(1).item();
            let dx = g.map(|gv| gv * sv);
            let ds = Tensor::scalar(g.data().iter().zip(x.data()).map(|(gv, xv)| gv * xv).sum());
            vec![Some(dx), Some(ds)]
        }
        Op::AddScalar => {
            let ds = Tensor::scalar(g.sum());
            vec![Some(g.clone()), Some(ds)]
        }
        Op::MulPix => {
            let x = pval(0);
            let m = pval(1);
            let xs = x.shape();
            let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
            let c_axis = xs.len() - 3;
            let n = if xs.len() == 4 { xs[0] } else { 1 };
            let c = xs[c_axis];
            let mut dx = g.clone();
            let mut dm = Tensor::zeros(m.shape());
            for ni in 0..n {
                let mbase = ni * h * w;
                for ci in 0..c {
                    let xbase = (ni * c + ci) * h * w;
                    for kk in 0..h * w {
                        dm.data_mut()[mbase + kk] += g.data()[xbase + kk] * x.data()[xbase + kk];
                        dx.data_mut()[xbase + kk] *= m.data()[mbase + kk];
                    }
                }
            }
            vec![Some(dx), Some(dm)]
        }
        Op::Conv2d { stride, pad } => {
            let x = pval(0);
            let w = pval(1);
            let (in_h, in_w) = (x.shape()[2], x.shape()[3]);
            let (kh, kw) = (w.shape()[2], w.shape()[3]);
            let dx = kernels::conv2d_dx(g, w, *stride, *pad, in_h, in_w);
            let dw = kernels::conv2d_dw(x, g, *stride, *pad, kh, kw);
            vec![Some(dx), Some(dw)]
        }
        Op::ConvT2d { stride, pad } => {
            let x = pval(0);
            let w = pval(1);
            let (in_h, in_w) = (x.shape()[2], x.shape()[3]);
            let (kh, kw) = (w.shape()[2], w.shape()[3]);
            let dx = kernels::convt2d_dx(g, w, *stride, *pad, in_h, in_w);
            let dw = kernels::convt2d_dw(x, g, *stride, *pad, kh, kw);
            vec![Some(dx), Some(dw)]
        }
        Op::Conv2dDx { stride, pad } => {
            // value = adjoint_x(g_in; w): linear in both parents.
            let gin = pval(0);
            let w = pval(1);
            let (kh, kw) = (w.shape()[2], w.shape()[3]);
            let dgin = kernels::conv2d_fwd(g, w, *stride, *pad);
            let dw = kernels::conv2d_dw(g, gin, *stride, *pad, kh, kw);
            vec![Some(dgin), Some(dw)]
        }
        Op::Upsample2x => vec![Some(kernels::upsample2x_adjoint(g))],
        Op::InstanceNorm { stats } => {
            vec![Some(kernels::instance_norm_bwd(pval(0), stats, g))]
        }
        Op::SumAll => {
            let shape = pval(0).shape().to_vec();
            vec![Some(Tensor::full(&shape, g.item()))]
        }
        Op::MeanAll => {
            let shape = pval(0).shape().to_vec();
            let n: usize = shape.iter().product::<usize>().max(1);
            vec![Some(Tensor::full(&shape, g.item() / n as f64))]
        }
        Op::SumRows => {
            let x = pval(0);
            let (n, m) = (x.shape()[0], x.shape()[1]);
            vec![Some(Tensor::from_fn(&[n, m], |k| g.data()[k / m]))]
        }
        Op::SubRows => {
            let x = pval(0);
            let (n, m) = (x.shape()[0], x.shape()[1]);
            let mut dr = Tensor::zeros(&[n]);
            for i in 0..n {
                dr.data_mut()[i] = -g.data()[i * m..(i + 1) * m].iter().sum::<f64>();
            }
            vec![Some(g.clone()), Some(dr)]
        }
        Op::GatherCols(idx) => {
            let x = pval(0);
            let (n, m) = (x.shape()[0], x.shape()[1]);
            let mut dx = Tensor::zeros(&[n, m]);
            for i in 0..n {
                dx.data_mut()[i * m + idx[i]] += g.data()[i];
            }
            vec![Some(dx)]
        }
        Op::MeanHw => {
            let x = pval(0);
            let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let m = (h * w) as f64;
            let mut dx = Tensor::zeros(x.shape());
            for p in 0..n * c {
                let gv = g.data()[p] / m;
                for kk in 0..h * w {
                    dx.data_mut()[p * h * w + kk] = gv;
                }
            }
            vec![Some(dx)]
        }
        Op::ConcatAxis { axis, sizes } => {
            let s = node.value.shape();
            let outer: usize = s[..*axis].iter().product();
            let ctot = s[*axis];
            let inner: usize = s[*axis + 1..].iter().product();
            let mut out = Vec::with_capacity(sizes.len());
            let mut coff = 0;
            for &c in sizes {
                let mut shape = s.to_vec();
                shape[*axis] = c;
                let mut dp = Tensor::zeros(&shape);
                for ni in 0..outer {
                    let src = &g.data()[(ni * ctot + coff) * inner..(ni * ctot + coff + c) * inner];
                    dp.data_mut()[ni * c * inner..(ni + 1) * c * inner].copy_from_slice(src);
                }
                out.push(Some(dp));
                coff += c;
            }
            out
        }
        Op::SliceAxis { axis, start, len } => {
            let x = pval(0);
            let s = x.shape();
            let outer: usize = s[..*axis].iter().product();
            let c = s[*axis];
            let inner: usize = s[*axis + 1..].iter().product();
            let mut dx = Tensor::zeros(s);
            for ni in 0..outer {
                let dst =
                    &mut dx.data_mut()[(ni * c + start) * inner..(ni * c + start + len) * inner];
                dst.copy_from_slice(&g.data()[ni * len * inner..(ni + 1) * len * inner]);
            }
            vec![Some(dx)]
        }
        Op::DiffX => vec![Some(kernels::diff_last_adjoint(g, true))],
        Op::DiffY => vec![Some(kernels::diff_last_adjoint(g, false))],
        Op::SecondDiffX => {
            let s = pval(0).shape();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            vec![Some(kernels::second_diff_last_adjoint(g, true, h, w))]
        }
        Op::SecondDiffY => {
            let s = pval(0).shape();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            vec![Some(kernels::second_diff_last_adjoint(g, false, h, w))]
        }
        Op::GridSample { fill } => {
            let (dimg, du, dv) = kernels::grid_sample_bwd(pval(0), pval(1), pval(2), fill, g);
            vec![Some(dimg), Some(du), Some(dv)]
        }
        Op::Reshape(orig) => vec![Some(g.reshaped(orig))],
        Op::RepeatN(n) => {
            let x = pval(0);
            let inner = x.numel();
            let mut dx = Tensor::zeros(x.shape());
            for b in 0..*n {
                for k in 0..inner {
                    dx.data_mut()[k] += g.data()[b * inner + k];
                }
            }
            vec![Some(dx)]
        }
    }
}
