//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use std::rc::Rc;

use flowguide_core::motion::{warp_bilinear, warp_vjp, FlowField};
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2, Ix3, Ix4, IxDyn, Zip};

use crate::conv::{conv2d_backward, conv2d_forward, temporal_backward, temporal_forward, ConvGeometry};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Temporal { x: Var, w: Var, b: Var, frames: usize },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    MulConst(Var, Rc<ArrayD<f32>>),
    AddChannel { x: Var, bias: Var },
    Silu(Var),
    LeakyRelu(Var, f32),
    Clamp01(Var),
    Abs(Var),
    Square(Var),
    Softplus(Var),
    Upsample2(Var),
    Concat(Var, Var),
    SelectFrames(Var, Rc<Vec<usize>>),
    Warp(Var, Rc<Vec<FlowField<f32>>>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: ArrayD<f32>,
    op: Op,
    needs_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f32>> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn as4(a: &ArrayD<f32>) -> ndarray::ArrayView4<'_, f32> {
    a.view().into_dimensionality::<Ix4>().expect("rank-4 tensor")
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f32>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &ArrayD<f32> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f32 {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "not a scalar");
        a.iter().next().copied().unwrap_or(0.0)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf without gradient.
    pub fn constant(&mut self, value: ArrayD<f32>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: ArrayD<f32>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A parameter leaf; frozen parameters carry no gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, store.is_trainable(id));
        self.nodes[v.0].param = Some((store.key(), id));
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let kernel = self.shape(w)[2];
        let geom = ConvGeometry { kernel, stride, pad };
        let bias = b.map(|b| self.value(b).as_slice().expect("contiguous bias").to_vec());
        let out = conv2d_forward(as4(self.value(x)), as4(self.value(w)), bias.as_deref(), geom);
        let ng = self.ng(&[x, w]) || b.is_some_and(|b| self.ng(&[b]));
        self.push(out.into_dyn(), Op::Conv2d { x, w, b, geom }, ng)
    }

    /// 3-tap convolution along frames within groups of `frames` consecutive
    /// samples; `w` is `[Co, C, 3]`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Var, frames: usize) -> Var {
        assert!(frames > 0 && self.shape(x)[0].is_multiple_of(frames), "batch not divisible by frame count");
        let wv = self.value(w).view().into_dimensionality::<Ix3>().expect("rank-3 weight");
        let bias = self.value(b).as_slice().expect("contiguous bias");
        let out = temporal_forward(as4(self.value(x)), wv, bias, frames);
        let ng = self.ng(&[x, w, b]);
        self.push(out.into_dyn(), Op::Temporal { x, w, b, frames }, ng)
    }

    /// `x`: `[B, I]`, `w`: `[O, I]`, `b`: `[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix2>().expect("rank-2 input");
        let wv = self.value(w).view().into_dimensionality::<Ix2>().expect("rank-2 weight");
        let bv = self.value(b).view().into_dimensionality::<Ix1>().expect("rank-1 bias");
        let out = xv.dot(&wv.t()) + bv;
        let ng = self.ng(&[x, w, b]);
        self.push(out.into_dyn(), Op::Linear { x, w, b }, ng)
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "operand shapes differ");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let out = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let out = self.value(a) - self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b);
        let out = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a) * s;
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Rc<ArrayD<f32>>) -> Var {
        assert_eq!(self.shape(a), c.shape(), "constant shape differs");
        let out = self.value(a) * &*c;
        let ng = self.ng(&[a]);
        self.push(out, Op::MulConst(a, c), ng)
    }

    /// `x`: `[B, C, H, W]` plus a per-sample channel offset `[B, C]`.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let bv = self.value(bias).view().into_dimensionality::<Ix2>().expect("rank-2 bias");
        let mut out = as4(self.value(x)).to_owned();
        for ((b, c), &v) in bv.indexed_iter() {
            out.index_axis_mut(Axis(0), b).index_axis_mut(Axis(0), c).mapv_inplace(|x| x + v);
        }
        let ng = self.ng(&[x, bias]);
        self.push(out.into_dyn(), Op::AddChannel { x, bias }, ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * sigmoid(x));
        let ng = self.ng(&[a]);
        self.push(out, Op::Silu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    /// Clamp to `[0, 1]`; gradient passes only where the input is inside.
    pub fn clamp01(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(0.0, 1.0));
        let ng = self.ng(&[a]);
        self.push(out, Op::Clamp01(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f32::abs);
        let ng = self.ng(&[a]);
        self.push(out, Op::Abs(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        let ng = self.ng(&[a]);
        self.push(out, Op::Square(a), ng)
    }

    /// `ln(1 + eˣ)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        let ng = self.ng(&[a]);
        self.push(out, Op::Softplus(a), ng)
    }

    /// Nearest-neighbour 2× spatial upsampling of `[B, C, H, W]`.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let x = as4(self.value(a));
        let (b, c, h, w) = x.dim();
        let out = Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(n, ch, y, xx)| x[[n, ch, y / 2, xx / 2]]);
        let ng = self.ng(&[a]);
        self.push(out.into_dyn(), Op::Upsample2(a), ng)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()]).expect("compatible shapes");
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Concat(a, b), ng)
    }

    /// Gathers samples along axis 0.
    pub fn select_frames(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).select(Axis(0), &idx);
        let ng = self.ng(&[a]);
        self.push(out, Op::SelectFrames(a, Rc::new(idx)), ng)
    }

    /// Backward-warps each sample `[C, H, W]` of `a` by its own flow.
    pub fn warp(&mut self, a: Var, flows: Rc<Vec<FlowField<f32>>>) -> Var {
        let x = as4(self.value(a));
        assert_eq!(x.dim().0, flows.len(), "one flow per sample");
        let mut out = Array4::<f32>::zeros(x.dim());
        for (i, f) in flows.iter().enumerate() {
            let warped = warp_bilinear(x.index_axis(Axis(0), i), f).expect("flow grid matches");
            out.index_axis_mut(Axis(0), i).assign(&warped);
        }
        let ng = self.ng(&[a]);
        self.push(out.into_dyn(), Op::Warp(a, flows), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = ArrayD::from_elem(IxDyn(&[]), v.sum() / v.len() as f32);
        let ng = self.ng(&[a]);
        self.push(out, Op::Mean(a), ng)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");
        let mut grads: Vec<Option<ArrayD<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<ArrayD<f32>>], v: Var, g: ArrayD<f32>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, g: &ArrayD<f32>, grads: &mut [Option<ArrayD<f32>>]) {
        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = self.nodes[x.0].needs_grad;
                let (dx, dw, db) = conv2d_backward(as4(self.value(*x)), as4(self.value(*w)), as4(g), *geom, need_dx);
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx.into_dyn());
                }
                self.accumulate(grads, *w, dw.into_dyn());
                if let Some(b) = b {
                    self.accumulate(grads, *b, Array1::from(db).into_dyn());
                }
            }
            Op::Temporal { x, w, b, frames } => {
                let wv = self.value(*w).view().into_dimensionality::<Ix3>().expect("rank-3 weight");
                let (dx, dw, db) = temporal_backward(as4(self.value(*x)), wv, as4(g), *frames);
                self.accumulate(grads, *x, dx.into_dyn());
                self.accumulate(grads, *w, dw.into_dyn());
                self.accumulate(grads, *b, Array1::from(db).into_dyn());
            }
            Op::Linear { x, w, b } => {
                let g2 = g.view().into_dimensionality::<Ix2>().expect("rank-2 grad");
                let xv = self.value(*x).view().into_dimensionality::<Ix2>().expect("rank-2 input");
                let wv = self.value(*w).view().into_dimensionality::<Ix2>().expect("rank-2 weight");
                self.accumulate(grads, *x, g2.dot(&wv).into_dyn());
                self.accumulate(grads, *w, g2.t().dot(&xv).into_dyn());
                self.accumulate(grads, *b, g2.sum_axis(Axis(0)).into_dyn());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g * self.value(*b));
                self.accumulate(grads, *b, g * self.value(*a));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::MulConst(a, c) => self.accumulate(grads, *a, g * &**c),
            Op::AddChannel { x, bias } => {
                self.accumulate(grads, *x, g.clone());
                let g4 = as4(g);
                let (b, c, _, _) = g4.dim();
                let db = Array2::from_shape_fn((b, c), |(n, ch)| g4.index_axis(Axis(0), n).index_axis(Axis(0), ch).sum());
                self.accumulate(grads, *bias, db.into_dyn());
            }
            Op::Silu(a) => {
                let d = Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| {
                    let s = sigmoid(x);
                    g * (s + x * s * (1.0 - s))
                });
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { slope * g });
                self.accumulate(grads, *a, d);
            }
            Op::Clamp01(a) => {
                let d = Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| if (0.0..=1.0).contains(&x) { g } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| g * x.signum() * f32::from(x != 0.0));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| 2.0 * g * x);
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| g * sigmoid(x));
                self.accumulate(grads, *a, d);
            }
            Op::Upsample2(a) => {
                let g4 = as4(g);
                let (b, c, h2, w2) = g4.dim();
                let mut d = Array4::<f32>::zeros((b, c, h2 / 2, w2 / 2));
                for ((n, ch, y, x), &v) in g4.indexed_iter() {
                    d[[n, ch, y / 2, x / 2]] += v;
                }
                self.accumulate(grads, *a, d.into_dyn());
            }
            Op::Concat(a, b) => {
                let ca = self.shape(*a)[1];
                let (ga, gb) = g.view().split_at(Axis(1), ca);
                self.accumulate(grads, *a, ga.to_owned());
                self.accumulate(grads, *b, gb.to_owned());
            }
            Op::SelectFrames(a, idx) => {
                let mut d = ArrayD::<f32>::zeros(self.value(*a).raw_dim());
                for (k, &src) in idx.iter().enumerate() {
                    let mut slot = d.index_axis_mut(Axis(0), src);
                    slot += &g.index_axis(Axis(0), k);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Warp(a, flows) => {
                let g4 = as4(g);
                let mut d = Array4::<f32>::zeros(g4.dim());
                for (i, f) in flows.iter().enumerate() {
                    let back = warp_vjp(f, g4.index_axis(Axis(0), i)).expect("flow grid matches");
                    d.index_axis_mut(Axis(0), i).assign(&back);
                }
                self.accumulate(grads, *a, d.into_dyn());
            }
            Op::Sum(a) => {
                let s = g.iter().next().copied().unwrap_or(0.0);
                self.accumulate(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), s));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f32;
                let s = g.iter().next().copied().unwrap_or(0.0) / n;
                self.accumulate(grads, *a, ArrayD::from_elem(self.value(*a).raw_dim(), s));
            }
        }
    }

    /// Adds the gradients of every parameter leaf drawn from `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Some((key, id)), Some(g)) = (node.param, g) {
                if key == store.key() {
                    store.add_grad(id, g);
                }
            }
        }
    }
}
