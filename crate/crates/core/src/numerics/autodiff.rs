//! Reverse-mode differentiation over a closed set of tensor ops.
//!
//! A [`Graph`] evaluates eagerly. When recording, every op whose inputs
//! require gradients is appended to a tape; [`Graph::backward`] walks the tape
//! in reverse. A non-recording graph keeps nothing, so intermediate values are
//! freed as soon as their [`Var`] handles drop.
//!
//! Index-selection decisions (patch matching, scan order) are made outside the
//! tape and enter as [`Graph::gather`] index maps: gradients flow through the
//! copied values, never through the selection itself.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, CharbonnierConfig, NormStats, WarpStencil};
use crate::ssm_kernel::{self, ScanInputs};
use crate::tensor::Tensor;

/// Name-addressed parameter tensors.
pub type NamedTensors = BTreeMap<String, Tensor>;

/// Handle to a value produced by a [`Graph`].
#[derive(Clone, Debug)]
pub struct Var {
    id: usize,
    requires_grad: bool,
    value: Rc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy, Debug)]
enum Act {
    Gelu,
    Silu,
    Softplus,
    LeakyRelu(f32),
    Exp,
}

impl Act {
    fn apply(self, v: f32) -> f32 {
        match self {
            Act::Gelu => ops::gelu(v),
            Act::Silu => ops::silu(v),
            Act::Softplus => ops::softplus(v),
            Act::LeakyRelu(s) => ops::leaky_relu(v, s),
            Act::Exp => v.exp(),
        }
    }

    /// Derivative given input `v` and output `y`.
    fn grad(self, v: f32, y: f32) -> f32 {
        match self {
            Act::Gelu => ops::gelu_grad(v),
            Act::Silu => ops::silu_grad(v),
            Act::Softplus => ops::sigmoid(v),
            Act::LeakyRelu(s) => {
                if v >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Act::Exp => y,
        }
    }
}

enum Op {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(Var, Var),
    Scale(usize, f32),
    ScaleLead(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<usize>,
    },
    Bmm {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Softmax {
        a: usize,
        y: Rc<Tensor>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: usize,
        stats: NormStats,
    },
    Pointwise {
        a: Var,
        y: Rc<Tensor>,
        act: Act,
    },
    Gather {
        a: usize,
        index: Rc<[usize]>,
        in_shape: Vec<usize>,
    },
    Concat(Vec<(usize, Vec<usize>)>),
    Reshape {
        a: usize,
        in_shape: Vec<usize>,
    },
    Warp {
        a: usize,
        stencil: Rc<WarpStencil>,
    },
    Scan {
        ids: [usize; 6],
        x: Var,
        inputs: ScanInputs,
        states: Tensor,
    },
    CharbonnierMean {
        sr: Var,
        hr: Rc<Tensor>,
        eps: f32,
    },
    CharbonnierGlobal {
        sr: Var,
        hr: Rc<Tensor>,
        value: f32,
    },
    Dot {
        a: usize,
        r: Rc<Tensor>,
    },
}

struct Node {
    out: usize,
    out_shape: Vec<usize>,
    op: Op,
}

/// Eager evaluator with an optional reverse-mode tape.
pub struct Graph {
    recording: bool,
    next_id: usize,
    tape: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients keyed by variable id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when no path reached it.
    pub fn get_or_zero(&self, v: &Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    /// A graph that records a tape for [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            recording: true,
            next_id: 0,
            tape: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    /// A graph that only evaluates.
    pub fn no_grad() -> Self {
        Graph {
            recording: false,
            ..Graph::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn fresh(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let id = self.next_id;
        self.next_id += 1;
        Var {
            id,
            requires_grad: requires_grad && self.recording,
            value: Rc::new(value),
        }
    }

    fn push(&mut self, value: Tensor, op_name: &'static str, inputs: &[&Var], op: impl FnOnce() -> Op) -> Result<Var> {
        value.check_finite(op_name)?;
        let rg = self.recording && inputs.iter().any(|v| v.requires_grad);
        let out_shape = value.shape().to_vec();
        let var = self.fresh(value, rg);
        if rg {
            self.tape.push(Node {
                out: var.id,
                out_shape,
                op: op(),
            });
        }
        Ok(var)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.fresh(t, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.fresh(t, true)
    }

    /// Named parameter, created on first use and shared afterwards.
    pub fn param(&mut self, store: &NamedTensors, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(v.clone());
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::ModelMismatch(format!("missing parameter {name:?}")))?;
        let v = self.fresh(t.clone(), true);
        self.params.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x + y)?;
        let (ia, ib) = (a.id, b.id);
        self.push(v, "add", &[a, b], || Op::Add(ia, ib))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x - y)?;
        let (ia, ib) = (a.id, b.id);
        self.push(v, "sub", &[a, b], || Op::Sub(ia, ib))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let v = a.value().zip_map(b.value(), |x, y| x * y)?;
        self.push(v, "mul", &[a, b], || Op::Mul(a.clone(), b.clone()))
    }

    pub fn scale(&mut self, a: &Var, s: f32) -> Result<Var> {
        let v = a.value().map(|x| x * s);
        let ia = a.id;
        self.push(v, "scale", &[a], || Op::Scale(ia, s))
    }

    /// `x[c, ...] * s[c]` for `s` spanning the leading axis.
    pub fn scale_lead(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let lead = *x.shape().first().unwrap_or(&0);
        if s.shape() != [lead] {
            return Err(Error::shape("scale_lead", format!("{:?} by {:?}", x.shape(), s.shape())));
        }
        let inner = x.value().numel() / lead.max(1);
        let sd = s.value().data();
        let mut v = x.value().clone();
        for (i, chunk) in v.data_mut().chunks_mut(inner.max(1)).enumerate() {
            for e in chunk {
                *e *= sd[i];
            }
        }
        self.push(v, "scale_lead", &[x, s], || Op::ScaleLead(x.clone(), s.clone()))
    }

    pub fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, stride: usize, padding: usize) -> Result<Var> {
        let v = ops::conv2d_unchecked(x.value(), w.value(), b.value(), stride, padding)?;
        let ib = b.id;
        self.push(v, "conv2d", &[x, w, b], || Op::Conv2d {
            x: x.clone(),
            w: w.clone(),
            b: ib,
            stride,
            padding,
        })
    }

    pub fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let v = ops::linear(x.value(), w.value(), b.map(|b| b.value()))?;
        let ib = b.map(|b| b.id);
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.push(v, "linear", &inputs, || Op::Linear {
            x: x.clone(),
            w: w.clone(),
            b: ib,
        })
    }

    pub fn bmm(&mut self, a: &Var, b: &Var, transpose_b: bool) -> Result<Var> {
        let v = ops::bmm(a.value(), b.value(), transpose_b)?;
        self.push(v, "bmm", &[a, b], || Op::Bmm {
            a: a.clone(),
            b: b.clone(),
            transpose_b,
        })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: &Var) -> Result<Var> {
        let axis = a.shape().len().checked_sub(1).ok_or_else(|| Error::arg("softmax", "scalar"))?;
        let y = Rc::new(ops::softmax(a.value(), axis)?);
        let ia = a.id;
        let saved = Rc::clone(&y);
        self.push((*y).clone(), "softmax", &[a], || Op::Softmax { a: ia, y: saved })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Result<Var> {
        let (v, stats) = ops::layer_norm_with_stats(x.value(), gamma.value(), beta.value(), eps)?;
        let ib = beta.id;
        self.push(v, "layer_norm", &[x, gamma, beta], || Op::LayerNorm {
            x: x.clone(),
            gamma: gamma.clone(),
            beta: ib,
            stats,
        })
    }

    fn pointwise(&mut self, a: &Var, act: Act, name: &'static str) -> Result<Var> {
        let y = Rc::new(a.value().map(|v| act.apply(v)));
        let saved = Rc::clone(&y);
        self.push((*y).clone(), name, &[a], || Op::Pointwise {
            a: a.clone(),
            y: saved,
            act,
        })
    }

    pub fn gelu(&mut self, a: &Var) -> Result<Var> {
        self.pointwise(a, Act::Gelu, "gelu")
    }

    pub fn silu(&mut self, a: &Var) -> Result<Var> {
        self.pointwise(a, Act::Silu, "silu")
    }

    pub fn softplus(&mut self, a: &Var) -> Result<Var> {
        self.pointwise(a, Act::Softplus, "softplus")
    }

    pub fn leaky_relu(&mut self, a: &Var, slope: f32) -> Result<Var> {
        self.pointwise(a, Act::LeakyRelu(slope), "leaky_relu")
    }

    pub fn exp(&mut self, a: &Var) -> Result<Var> {
        self.pointwise(a, Act::Exp, "exp")
    }

    /// `out[i] = a[index[i]]` with output extents `shape`.
    pub fn gather(&mut self, a: &Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let v = ops::gather(a.value(), &index, shape)?;
        let (ia, in_shape) = (a.id, a.shape().to_vec());
        self.push(v, "gather", &[a], || Op::Gather { a: ia, index, in_shape })
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::arg("concat", "no inputs"))?;
        let tail = &first.shape()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape().is_empty() || &p.shape()[1..] != tail {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", p.shape(), first.shape())));
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.value().data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        let v = Tensor::new(shape, data)?;
        let ids: Vec<(usize, Vec<usize>)> = parts.iter().map(|p| (p.id, p.shape().to_vec())).collect();
        let refs: Vec<&Var> = parts.iter().collect();
        self.push(v, "concat", &refs, || Op::Concat(ids))
    }

    pub fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let v = a.value().clone().reshape(shape)?;
        let (ia, in_shape) = (a.id, a.shape().to_vec());
        self.push(v, "reshape", &[a], || Op::Reshape { a: ia, in_shape })
    }

    /// Bilinear warp by a constant flow field; no gradient reaches the flow.
    pub fn warp(&mut self, a: &Var, flow: &Tensor) -> Result<Var> {
        let (_, h, w) = a.value().dims3()?;
        let stencil = Rc::new(ops::warp_stencil(flow, h, w)?);
        let v = ops::warp_apply(a.value(), &stencil)?;
        let ia = a.id;
        self.push(v, "bilinear_warp", &[a], || Op::Warp { a: ia, stencil })
    }

    /// Sequential selective scan; see [`crate::ssm_kernel`].
    pub fn selective_scan(&mut self, x: &Var, delta: &Var, a: &Var, b: &Var, c: &Var, d: &Var) -> Result<Var> {
        let inputs = ScanInputs {
            delta: delta.value().clone(),
            a: a.value().clone(),
            b: b.value().clone(),
            c: c.value().clone(),
            d: d.value().clone(),
        };
        let (y, states) = ssm_kernel::scan_sequential_with_states(x.value(), &inputs)?;
        let ids = [x.id, delta.id, a.id, b.id, c.id, d.id];
        self.push(y, "selective_scan", &[x, delta, a, b, c, d], || Op::Scan {
            ids,
            x: x.clone(),
            inputs,
            states,
        })
    }

    /// Mean per-element Charbonnier penalty against a constant target.
    pub fn charbonnier_mean(&mut self, sr: &Var, hr: &Tensor, cfg: CharbonnierConfig) -> Result<Var> {
        let v = ops::charbonnier_mean(sr.value(), hr, cfg)?;
        let hr = Rc::new(hr.clone());
        self.push(Tensor::scalar(v), "charbonnier_mean", &[sr], || Op::CharbonnierMean {
            sr: sr.clone(),
            hr,
            eps: cfg.epsilon,
        })
    }

    /// Global Charbonnier penalty against a constant target.
    pub fn charbonnier_global(&mut self, sr: &Var, hr: &Tensor, cfg: CharbonnierConfig) -> Result<Var> {
        let value = ops::charbonnier_loss(sr.value(), hr, cfg)?;
        let hr = Rc::new(hr.clone());
        self.push(Tensor::scalar(value), "charbonnier_global", &[sr], || Op::CharbonnierGlobal {
            sr: sr.clone(),
            hr,
            value,
        })
    }

    /// `sum(a * r)` for a constant `r`.
    pub fn dot_const(&mut self, a: &Var, r: &Tensor) -> Result<Var> {
        if a.shape() != r.shape() {
            return Err(Error::shape("dot_const", format!("{:?} vs {:?}", a.shape(), r.shape())));
        }
        let s: f64 = a.value().data().iter().zip(r.data()).map(|(&x, &y)| x as f64 * y as f64).sum();
        let (ia, r) = (a.id, Rc::new(r.clone()));
        self.push(Tensor::scalar(s as f32), "dot_const", &[a], || Op::Dot { a: ia, r })
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.value().numel() != 1 {
            return Err(Error::arg("backward", format!("loss must be scalar, got {:?}", loss.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.next_id];
        grads[loss.id] = Some(Tensor::full(loss.shape(), 1.0));
        for node in self.tape.iter().rev() {
            let Some(gy) = grads[node.out].take() else {
                continue;
            };
            debug_assert_eq!(gy.shape(), &node.out_shape[..]);
            let gy_ref = &gy;
            match &node.op {
                Op::Add(a, b) => {
                    add_into(&mut grads[*a], gy_ref.clone());
                    add_into(&mut grads[*b], gy_ref.clone());
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[*a], gy_ref.clone());
                    add_into(&mut grads[*b], gy_ref.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    if a.requires_grad {
                        add_into(&mut grads[a.id], gy_ref.zip_map(b.value(), |g, y| g * y)?);
                    }
                    if b.requires_grad {
                        add_into(&mut grads[b.id], gy_ref.zip_map(a.value(), |g, x| g * x)?);
                    }
                }
                Op::Scale(a, s) => add_into(&mut grads[*a], gy_ref.map(|v| v * s)),
                Op::ScaleLead(x, s) => {
                    let lead = s.value().numel();
                    let inner = gy_ref.numel() / lead.max(1);
                    let sd = s.value().data();
                    if x.requires_grad {
                        let mut gx = gy_ref.clone();
                        for (i, ch) in gx.data_mut().chunks_mut(inner.max(1)).enumerate() {
                            for e in ch {
                                *e *= sd[i];
                            }
                        }
                        add_into(&mut grads[x.id], gx);
                    }
                    if s.requires_grad {
                        let gs: Vec<f32> = gy_ref
                            .data()
                            .chunks(inner.max(1))
                            .zip(x.value().data().chunks(inner.max(1)))
                            .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
                            .collect();
                        add_into(&mut grads[s.id], Tensor::new(vec![lead], gs)?);
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (gx, gw, gb) = ops::conv2d_backward(x.value(), w.value(), gy_ref, *stride, *padding)?;
                    if x.requires_grad {
                        add_into(&mut grads[x.id], gx);
                    }
                    add_into(&mut grads[w.id], gw);
                    add_into(&mut grads[*b], gb);
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) = ops::linear_backward(x.value(), w.value(), gy_ref)?;
                    if x.requires_grad {
                        add_into(&mut grads[x.id], gx);
                    }
                    add_into(&mut grads[w.id], gw);
                    if let Some(b) = b {
                        add_into(&mut grads[*b], gb);
                    }
                }
                Op::Bmm { a, b, transpose_b } => {
                    let (ga, gb) = ops::bmm_backward(a.value(), b.value(), *transpose_b, gy_ref)?;
                    add_into(&mut grads[a.id], ga);
                    add_into(&mut grads[b.id], gb);
                }
                Op::Softmax { a, y } => add_into(&mut grads[*a], ops::softmax_last_backward(y, gy_ref)),
                Op::LayerNorm { x, gamma, beta, stats } => {
                    let (gx, gg, gb) = ops::layer_norm_backward(x.value(), gamma.value(), stats, gy_ref);
                    add_into(&mut grads[x.id], gx);
                    add_into(&mut grads[gamma.id], gg);
                    add_into(&mut grads[*beta], gb);
                }
                Op::Pointwise { a, y, act } => {
                    let mut g = gy_ref.clone();
                    for ((gv, &xv), &yv) in g.data_mut().iter_mut().zip(a.value().data()).zip(y.data()) {
                        *gv *= act.grad(xv, yv);
                    }
                    add_into(&mut grads[a.id], g);
                }
                Op::Gather { a, index, in_shape } => {
                    add_into(&mut grads[*a], ops::scatter_add(gy_ref, index, in_shape));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for (id, shape) in parts {
                        let n: usize = shape.iter().product();
                        let slice = gy_ref.data()[off..off + n].to_vec();
                        off += n;
                        add_into(&mut grads[*id], Tensor::new(shape.clone(), slice)?);
                    }
                }
                Op::Reshape { a, in_shape } => add_into(&mut grads[*a], gy_ref.clone().reshape(in_shape)?),
                Op::Warp { a, stencil } => add_into(&mut grads[*a], ops::warp_backward(gy_ref, stencil)),
                Op::Scan { ids, x, inputs, states } => {
                    let g = ssm_kernel::scan_backward(x.value(), inputs, states, gy_ref)?;
                    for (id, t) in ids.iter().zip([g.x, g.delta, g.a, g.b, g.c, g.d]) {
                        add_into(&mut grads[*id], t);
                    }
                }
                Op::CharbonnierMean { sr, hr, eps } => {
                    let scale = gy_ref.data()[0] / sr.value().numel() as f32;
                    let e2 = eps * eps;
                    let g = sr.value().zip_map(hr, |s, h| {
                        let d = s - h;
                        scale * d / (d * d + e2).sqrt()
                    })?;
                    add_into(&mut grads[sr.id], g);
                }
                Op::CharbonnierGlobal { sr, hr, value } => {
                    let scale = gy_ref.data()[0] / value;
                    add_into(&mut grads[sr.id], sr.value().zip_map(hr, |s, h| scale * (s - h))?);
                }
                Op::Dot { a, r } => {
                    let s = gy_ref.data()[0];
                    add_into(&mut grads[*a], r.map(|v| v * s));
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Gradients for every named parameter used by the graph.
    pub fn param_grads(&self, grads: &Gradients) -> NamedTensors {
        self.params
            .iter()
            .map(|(name, v)| {
                (name.clone(), grads.get_or_zero(v))
            })
            .collect()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Evaluates a scalar function of named parameters and its reverse-mode
/// gradient with respect to every parameter the function reads.
pub fn value_and_grad<F>(params: &NamedTensors, f: F) -> Result<(f32, NamedTensors)>
where
    F: FnOnce(&mut Graph, &NamedTensors) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(&loss)?;
    let mut out = g.param_grads(&grads);
    for (name, t) in params {
        out.entry(name.clone()).or_insert_with(|| Tensor::zeros(t.shape()));
    }
    Ok((loss.value().data()[0], out))
}

/// Central finite-difference gradient of `f` with respect to the named
/// parameters in `names`, in f64 arithmetic over the perturbed evaluations.
/// The step is `rel_step * max(|w|, 1)`.
pub fn finite_difference_grad<F>(params: &NamedTensors, names: &[&str], rel_step: f64, f: F) -> Result<NamedTensors>
where
    F: Fn(&NamedTensors) -> Result<f64>,
{
    let mut out = NamedTensors::new();
    let mut work = params.clone();
    for &name in names {
        let base = params
            .get(name)
            .ok_or_else(|| Error::arg("finite_difference_grad", format!("unknown parameter {name}")))?
            .clone();
        let mut g = vec![0.0f32; base.numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let w = base.data()[i];
            let h = rel_step * (w.abs() as f64).max(1.0);
            let (wp, wm) = ((w as f64 + h) as f32, (w as f64 - h) as f32);
            work.get_mut(name).expect("present").data_mut()[i] = wp;
            let fp = f(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = wm;
            let fm = f(&work)?;
            work.get_mut(name).expect("present").data_mut()[i] = w;
            *gi = ((fp - fm) / (wp as f64 - wm as f64)) as f32;
        }
        out.insert(name.to_string(), Tensor::new(base.shape().to_vec(), g)?);
    }
    Ok(out)
}

/// Norm-wise relative error `||a - b|| / max(||a||, ||b||, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let na: f64 = a.data().iter().map(|&x| (x as f64).powi(2)).sum();
    let nb: f64 = b.data().iter().map(|&x| (x as f64).powi(2)).sum();
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}
