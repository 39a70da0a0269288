//! Eagerly evaluated operations recorded for a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::convkit::{
    conv2d_adjoint_raw, conv2d_filter_grad_raw, conv2d_raw, periodic_conv_raw, periodic_logdet, periodic_logdet_grad,
    Boundary, ConvGeom, Filter, Padding, Tensor4,
};
use crate::error::{Error, Result};
use crate::numerics::{householder_orthogonal, householder_reflection, inverse, lu_slogdet, RMatrix};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Recorded operation kinds. Every input is a [`Var`] on the same tape.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f64),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    /// All entries → scalar.
    Sum(Var),
    /// `[n, ...]` → `[n]`.
    SumPerExample(Var),
    /// Scalar → `[n]`.
    Expand {
        x: Var,
        n: usize,
    },
    Reshape {
        x: Var,
        shape: Vec<usize>,
    },
    /// `x: [n, c_in, h, w]`, `filter: [c_out, c_in, kh, kw]`, `bias: [c_out]`.
    Conv2d {
        x: Var,
        filter: Var,
        bias: Option<Var>,
        pad: Padding,
        boundary: Boundary,
    },
    /// Wrap-boundary convolution evaluated in the frequency domain.
    PeriodicConv {
        x: Var,
        filter: Var,
        pad: Padding,
    },
    /// `y = x · exp(log_scale[c]) + bias[c]`.
    AffinePerChannel {
        x: Var,
        log_scale: Var,
        bias: Var,
    },
    MatMul(Var, Var),
    /// `[c]` → `[c, c]` diagonal matrix.
    DiagEmbed(Var),
    /// Rows of `[k, c]` as reflection vectors → `Q = H₁⋯H_k`.
    Householder(Var),
    /// `log |det W|` of a square matrix.
    LogAbsDet(Var),
    /// `Σ_c log |f[c, c, center]|`.
    LogAbsDiagTaps {
        filter: Var,
        center: (usize, usize),
    },
    /// `Σ_uv log |det Ŵ_uv|` on an `h × w` torus.
    PeriodicLogDet {
        filter: Var,
        pad: Padding,
        h: usize,
        w: usize,
    },
    SliceChannels {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatChannels(Var, Var),
    Squeeze(Var),
    Unsqueeze(Var),
    /// Per-example log density of `z` under `N(mean, exp(log_std)²)`; absent moments mean
    /// the standard normal.
    GaussianLogProb {
        z: Var,
        mean: Option<Var>,
        log_std: Option<Var>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | ConcatChannels(a, b) => vec![*a, *b],
            AddScalar(x, _)
            | Scale(x, _)
            | Exp(x)
            | Log(x)
            | Sigmoid(x)
            | Relu(x)
            | Sum(x)
            | SumPerExample(x)
            | DiagEmbed(x)
            | Householder(x)
            | LogAbsDet(x)
            | Squeeze(x)
            | Unsqueeze(x) => vec![*x],
            Expand { x, .. } | Reshape { x, .. } | SliceChannels { x, .. } => vec![*x],
            Conv2d { x, filter, bias, .. } => {
                let mut v = vec![*x, *filter];
                v.extend(bias);
                v
            }
            PeriodicConv { x, filter, .. } => vec![*x, *filter],
            AffinePerChannel { x, log_scale, bias } => vec![*x, *log_scale, *bias],
            LogAbsDiagTaps { filter, .. } | PeriodicLogDet { filter, .. } => vec![*filter],
            GaussianLogProb { z, mean, log_std } => {
                let mut v = vec![*z];
                v.extend(mean);
                v.extend(log_std);
                v
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of evaluated operations.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: one accumulated gradient per node that needed one.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
        .expect("shape preserved")
}

fn filter_dims(f: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match f.shape()[..] {
        [co, ci, kh, kw] => Ok((co, ci, kh, kw)),
        _ => Err(Error::shape(format!("filter must be rank 4, got {:?}", f.shape()))),
    }
}

fn square_dim(m: &Tensor) -> Result<usize> {
    match m.shape()[..] {
        [r, c] if r == c => Ok(r),
        _ => Err(Error::shape(format!("expected a square matrix, got {:?}", m.shape()))),
    }
}

fn conv_geom(x: &Tensor, f: &Tensor, pad: Padding, boundary: Boundary) -> Result<ConvGeom> {
    let (_, c, h, w) = x.dims4()?;
    let (co, ci, kh, kw) = filter_dims(f)?;
    if ci != c {
        return Err(Error::shape(format!("filter expects {ci} input channels, tensor has {c}")));
    }
    if !pad.preserves_size(kh, kw) {
        return Err(Error::invalid("filter padding does not preserve spatial size"));
    }
    Ok(ConvGeom { c_in: ci, c_out: co, kh, kw, pad, h, w, boundary })
}

fn as_filter(f: &Tensor, pad: Padding) -> Result<Filter> {
    let (co, ci, kh, kw) = filter_dims(f)?;
    Filter::new(co, ci, kh, kw, f.data().to_vec(), pad)
}

fn reflection_vectors(v: &Tensor) -> Result<(Vec<Vec<f64>>, usize)> {
    match v.shape()[..] {
        [k, c] => Ok(((0..k).map(|i| v.data()[i * c..(i + 1) * c].to_vec()).collect(), c)),
        _ => Err(Error::shape(format!("reflection vectors must be [k, c], got {:?}", v.shape()))),
    }
}

fn add_into(acc: &mut Option<Tensor>, shape: &[usize], contribution: &[f64]) {
    let t = acc.get_or_insert_with(|| Tensor::zeros(shape));
    for (a, c) in t.data_mut().iter_mut().zip(contribution) {
        *a += c;
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.value(v);
        self.nodes[v.index].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::invalid("variable was not recorded on this tape"));
        }
        Ok(&self.nodes[v.index].value)
    }

    /// Evaluates `op` and appends it.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        if matches!(op, Op::Leaf) {
            return Err(Error::invalid("leaves are created with Tape::leaf or Tape::constant"));
        }
        let mut needs_grad = false;
        for v in op.inputs() {
            self.check(v)?;
            needs_grad |= self.nodes[v.index].needs_grad;
        }
        let value = self.eval(&op)?;
        Ok(self.push(value, op, needs_grad))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.index].value;
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => {
                same_shape(val(a), val(b), "add")?;
                zip(val(a), val(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same_shape(val(a), val(b), "sub")?;
                zip(val(a), val(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same_shape(val(a), val(b), "mul")?;
                zip(val(a), val(b), |x, y| x * y)
            }
            Op::AddScalar(x, c) => map(val(x), |v| v + c),
            Op::Scale(x, c) => map(val(x), |v| v * c),
            Op::Exp(x) => map(val(x), f64::exp),
            Op::Log(x) => map(val(x), f64::ln),
            Op::Sigmoid(x) => map(val(x), sigmoid),
            Op::Relu(x) => map(val(x), |v| v.max(0.0)),
            Op::Sum(x) => Tensor::scalar(val(x).data().iter().sum()),
            Op::SumPerExample(x) => {
                let t = val(x);
                let n = *t.shape().first().ok_or_else(|| Error::shape("per-example sum of a scalar"))?;
                let per = t.len().checked_div(n).unwrap_or(0);
                Tensor::vector((0..n).map(|b| t.data()[b * per..(b + 1) * per].iter().sum()).collect())
            }
            Op::Expand { x, n } => Tensor::full(&[*n], val(x).item()?),
            Op::Reshape { x, shape } => val(x).clone().reshape(shape)?,
            Op::Conv2d { x, filter, bias, pad, boundary } => {
                let (xt, ft) = (val(x), val(filter));
                let g = conv_geom(xt, ft, *pad, *boundary)?;
                let mut out = conv2d_raw(&g, xt.data(), ft.data());
                if let Some(b) = bias {
                    let bt = val(b);
                    if bt.shape() != [g.c_out] {
                        return Err(Error::shape(format!("bias {:?} for {} output channels", bt.shape(), g.c_out)));
                    }
                    let hw = g.h * g.w;
                    for (k, o) in out.iter_mut().enumerate() {
                        *o += bt.data()[(k / hw) % g.c_out];
                    }
                }
                Tensor::new(vec![xt.shape()[0], g.c_out, g.h, g.w], out)?
            }
            Op::PeriodicConv { x, filter, pad } => {
                let (xt, ft) = (val(x), val(filter));
                let g = conv_geom(xt, ft, *pad, Boundary::Wrap)?;
                let out = periodic_conv_raw(&as_filter(ft, *pad)?, g.h, g.w, xt.data());
                Tensor::new(vec![xt.shape()[0], g.c_out, g.h, g.w], out)?
            }
            Op::AffinePerChannel { x, log_scale, bias } => {
                let xt = val(x);
                let (_, c, h, w) = xt.dims4()?;
                let (ls, b) = (val(log_scale), val(bias));
                if ls.shape() != [c] || b.shape() != [c] {
                    return Err(Error::shape(format!("per-channel parameters must have shape [{c}]")));
                }
                let scale: Vec<f64> = ls.data().iter().map(|v| v.exp()).collect();
                let hw = h * w;
                let data = xt
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let ch = (k / hw) % c;
                        v * scale[ch] + b.data()[ch]
                    })
                    .collect();
                Tensor::new(xt.shape().to_vec(), data)?
            }
            Op::MatMul(a, b) => Tensor::from(val(a).to_matrix()?.matmul(&val(b).to_matrix()?)?),
            Op::DiagEmbed(x) => {
                let t = val(x);
                if t.rank() != 1 {
                    return Err(Error::shape("diagonal embedding needs a vector"));
                }
                Tensor::from(RMatrix::from_diag(t.data()))
            }
            Op::Householder(v) => {
                let (vecs, c) = reflection_vectors(val(v))?;
                Tensor::from(householder_orthogonal(&vecs, c)?)
            }
            Op::LogAbsDet(m) => {
                square_dim(val(m))?;
                Tensor::scalar(lu_slogdet(&val(m).to_matrix()?)?.log_abs)
            }
            Op::LogAbsDiagTaps { filter, center } => {
                let f = val(filter);
                let (co, ci, kh, kw) = filter_dims(f)?;
                if co != ci || center.0 >= kh || center.1 >= kw {
                    return Err(Error::shape("diagonal taps need a square filter and a valid center"));
                }
                let s = (0..co).map(|c| f.data()[((c * ci + c) * kh + center.0) * kw + center.1].abs().ln()).sum();
                Tensor::scalar(s)
            }
            Op::PeriodicLogDet { filter, pad, h, w } => {
                let f = as_filter(val(filter), *pad)?;
                if f.c_in() != f.c_out() {
                    return Err(Error::shape("periodic log-determinant needs a square channel map"));
                }
                Tensor::scalar(periodic_logdet(&f, *h, *w)?)
            }
            Op::SliceChannels { x, start, len } => Tensor::from(val(x).to_tensor4()?.slice_channels(*start, *len)?),
            Op::ConcatChannels(a, b) => {
                Tensor::from(Tensor4::concat_channels(&val(a).to_tensor4()?, &val(b).to_tensor4()?)?)
            }
            Op::Squeeze(x) => Tensor::from(val(x).to_tensor4()?.space_to_depth()?),
            Op::Unsqueeze(x) => Tensor::from(val(x).to_tensor4()?.depth_to_space()?),
            Op::GaussianLogProb { z, mean, log_std } => {
                let zt = val(z);
                for m in mean.iter().chain(log_std) {
                    same_shape(zt, val(m), "gaussian moments")?;
                }
                let n = *zt.shape().first().ok_or_else(|| Error::shape("log density of a scalar"))?;
                let per = zt.len().checked_div(n).unwrap_or(0);
                let out = (0..n)
                    .map(|b| {
                        (b * per..(b + 1) * per)
                            .map(|k| {
                                let mu = mean.map_or(0.0, |m| val(&m).data()[k]);
                                let ls = log_std.map_or(0.0, |s| val(&s).data()[k]);
                                let e = (zt.data()[k] - mu) * (-ls).exp();
                                -HALF_LN_2PI - ls - 0.5 * e * e
                            })
                            .sum()
                    })
                    .collect();
                Tensor::vector(out)
            }
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.check(loss)?;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        if !self.nodes[loss.index].needs_grad {
            return Err(Error::invalid("loss does not depend on any trainable leaf"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.index).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop(idx, &g, &mut grads)?;
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[idx].op, Op::Leaf) {
                *g = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.index].value;
        let wants = |v: &Var| self.nodes[v.index].needs_grad;
        let gd = g.data();
        let mut give = |v: &Var, contribution: &[f64]| {
            if self.nodes[v.index].needs_grad {
                add_into(&mut grads[v.index], self.nodes[v.index].value.shape(), contribution);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                give(a, gd);
                give(b, gd);
            }
            Op::Sub(a, b) => {
                give(a, gd);
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                give(b, &neg);
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    give(a, zip(g, val(b), |g, y| g * y).data());
                }
                if wants(b) {
                    give(b, zip(g, val(a), |g, x| g * x).data());
                }
            }
            Op::AddScalar(x, _) => give(x, gd),
            Op::Scale(x, c) => give(x, map(g, |v| v * c).data()),
            Op::Exp(x) => give(x, zip(g, y, |g, y| g * y).data()),
            Op::Log(x) => give(x, zip(g, val(x), |g, x| g / x).data()),
            Op::Sigmoid(x) => give(x, zip(g, y, |g, s| g * s * (1.0 - s)).data()),
            Op::Relu(x) => give(x, zip(g, val(x), |g, x| if x > 0.0 { g } else { 0.0 }).data()),
            Op::Sum(x) => give(x, &vec![gd[0]; val(x).len()]),
            Op::SumPerExample(x) => {
                let n = gd.len();
                let per = val(x).len().checked_div(n).unwrap_or(0);
                let c: Vec<f64> = (0..n * per).map(|k| gd[k / per]).collect();
                give(x, &c);
            }
            Op::Expand { x, .. } => give(x, &[gd.iter().sum()]),
            Op::Reshape { x, .. } => give(x, gd),
            Op::Conv2d { x, filter, bias, pad, boundary } => {
                let geom = conv_geom(val(x), val(filter), *pad, *boundary)?;
                if wants(x) {
                    give(x, &conv2d_adjoint_raw(&geom, gd, val(filter).data()));
                }
                if wants(filter) {
                    give(filter, &conv2d_filter_grad_raw(&geom, gd, val(x).data()));
                }
                if let Some(b) = bias {
                    let hw = geom.h * geom.w;
                    let mut gb = vec![0.0; geom.c_out];
                    for (k, v) in gd.iter().enumerate() {
                        gb[(k / hw) % geom.c_out] += v;
                    }
                    give(b, &gb);
                }
            }
            Op::PeriodicConv { x, filter, pad } => {
                let geom = conv_geom(val(x), val(filter), *pad, Boundary::Wrap)?;
                if wants(x) {
                    give(x, &conv2d_adjoint_raw(&geom, gd, val(filter).data()));
                }
                if wants(filter) {
                    give(filter, &conv2d_filter_grad_raw(&geom, gd, val(x).data()));
                }
            }
            Op::AffinePerChannel { x, log_scale, bias } => {
                let xt = val(x);
                let (_, c, h, w) = xt.dims4()?;
                let hw = h * w;
                let scale: Vec<f64> = val(log_scale).data().iter().map(|v| v.exp()).collect();
                if wants(x) {
                    let gx: Vec<f64> = gd.iter().enumerate().map(|(k, g)| g * scale[(k / hw) % c]).collect();
                    give(x, &gx);
                }
                let mut gls = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (k, (g, xv)) in gd.iter().zip(xt.data()).enumerate() {
                    let ch = (k / hw) % c;
                    gls[ch] += g * xv * scale[ch];
                    gb[ch] += g;
                }
                give(log_scale, &gls);
                give(bias, &gb);
            }
            Op::MatMul(a, b) => {
                let gm = g.to_matrix()?;
                if wants(a) {
                    give(a, gm.matmul(&val(b).to_matrix()?.transpose())?.as_slice());
                }
                if wants(b) {
                    give(b, val(a).to_matrix()?.transpose().matmul(&gm)?.as_slice());
                }
            }
            Op::DiagEmbed(x) => {
                let n = val(x).len();
                let d: Vec<f64> = (0..n).map(|i| gd[i * n + i]).collect();
                give(x, &d);
            }
            Op::Householder(v) => give(v, &householder_backward(val(v), &g.to_matrix()?)?),
            Op::LogAbsDet(m) => {
                let inv = inverse(&val(m).to_matrix()?)?.transpose();
                give(m, map(&Tensor::from(inv), |v| v * gd[0]).data());
            }
            Op::LogAbsDiagTaps { filter, center } => {
                let f = val(filter);
                let (co, ci, kh, kw) = filter_dims(f)?;
                let mut gf = vec![0.0; f.len()];
                for c in 0..co {
                    let k = ((c * ci + c) * kh + center.0) * kw + center.1;
                    gf[k] = gd[0] / f.data()[k];
                }
                give(filter, &gf);
            }
            Op::PeriodicLogDet { filter, pad, h, w } => {
                let gf = periodic_logdet_grad(&as_filter(val(filter), *pad)?, *h, *w)?;
                give(filter, &gf.iter().map(|v| v * gd[0]).collect::<Vec<_>>());
            }
            Op::SliceChannels { x, start, len } => {
                let (n, c, h, w) = val(x).dims4()?;
                let hw = h * w;
                let mut gx = vec![0.0; n * c * hw];
                for b in 0..n {
                    let dst = b * c * hw + start * hw;
                    gx[dst..dst + len * hw].copy_from_slice(&gd[b * len * hw..(b + 1) * len * hw]);
                }
                give(x, &gx);
            }
            Op::ConcatChannels(a, b) => {
                let gt = g.to_tensor4()?;
                let ca = val(a).dims4()?.1;
                let cb = val(b).dims4()?.1;
                if wants(a) {
                    give(a, gt.slice_channels(0, ca)?.data());
                }
                if wants(b) {
                    give(b, gt.slice_channels(ca, cb)?.data());
                }
            }
            Op::Squeeze(x) => give(x, g.to_tensor4()?.depth_to_space()?.data()),
            Op::Unsqueeze(x) => give(x, g.to_tensor4()?.space_to_depth()?.data()),
            Op::GaussianLogProb { z, mean, log_std } => {
                let zt = val(z);
                let n = gd.len();
                let per = zt.len().checked_div(n).unwrap_or(0);
                let mut gz = vec![0.0; zt.len()];
                let mut gls = vec![0.0; zt.len()];
                for k in 0..zt.len() {
                    let mu = mean.map_or(0.0, |m| val(&m).data()[k]);
                    let ls = log_std.map_or(0.0, |s| val(&s).data()[k]);
                    let inv_sigma = (-ls).exp();
                    let e = (zt.data()[k] - mu) * inv_sigma;
                    let gb = gd[k / per];
                    gz[k] = -gb * e * inv_sigma;
                    gls[k] = gb * (e * e - 1.0);
                }
                if let Some(m) = mean {
                    let gm: Vec<f64> = gz.iter().map(|v| -v).collect();
                    give(m, &gm);
                }
                if let Some(s) = log_std {
                    give(s, &gls);
                }
                give(z, &gz);
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradient with respect to the reflection vectors of `L(Q)`, `Q = H₁⋯H_k`, given `G = ∂L/∂Q`.
fn householder_backward(v: &Tensor, g: &RMatrix) -> Result<Vec<f64>> {
    let (vecs, c) = reflection_vectors(v)?;
    let k = vecs.len();
    let hs: Vec<RMatrix> = vecs
        .iter()
        .enumerate()
        .map(|(i, vi)| householder_reflection(vi).ok_or(Error::ZeroVector { index: i }))
        .collect::<Result<_>>()?;
    // prefix[i] = H₁⋯H_i, suffix[i] = H_{i+1}⋯H_k
    let mut prefix = vec![RMatrix::identity(c)];
    for h in &hs {
        let next = prefix.last().expect("non-empty").matmul(h)?;
        prefix.push(next);
    }
    let mut suffix = vec![RMatrix::identity(c); k + 1];
    for i in (0..k).rev() {
        suffix[i] = hs[i].matmul(&suffix[i + 1])?;
    }
    let mut out = Vec::with_capacity(k * c);
    for (i, vi) in vecs.iter().enumerate() {
        let gi = prefix[i].transpose().matmul(g)?.matmul(&suffix[i + 1].transpose())?;
        let n: f64 = vi.iter().map(|x| x * x).sum();
        let gv = gi.matvec(vi)?;
        let gtv = gi.transpose().matvec(vi)?;
        let vgv: f64 = vi.iter().zip(&gv).map(|(a, b)| a * b).sum();
        for j in 0..c {
            out.push(-2.0 / n * (gv[j] + gtv[j]) + 4.0 * vgv * vi[j] / (n * n));
        }
    }
    Ok(out)
}

/// Shorthands for [`Tape::record`].
impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(x, c))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(x, c))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }

    pub fn sum_per_example(&mut self, x: Var) -> Result<Var> {
        self.record(Op::SumPerExample(x))
    }

    pub fn expand(&mut self, x: Var, n: usize) -> Result<Var> {
        self.record(Op::Expand { x, n })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape { x, shape: shape.to_vec() })
    }

    pub fn conv2d(&mut self, x: Var, filter: Var, bias: Option<Var>, pad: Padding, boundary: Boundary) -> Result<Var> {
        self.record(Op::Conv2d { x, filter, bias, pad, boundary })
    }

    pub fn periodic_conv(&mut self, x: Var, filter: Var, pad: Padding) -> Result<Var> {
        self.record(Op::PeriodicConv { x, filter, pad })
    }

    pub fn affine_per_channel(&mut self, x: Var, log_scale: Var, bias: Var) -> Result<Var> {
        self.record(Op::AffinePerChannel { x, log_scale, bias })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn diag_embed(&mut self, x: Var) -> Result<Var> {
        self.record(Op::DiagEmbed(x))
    }

    pub fn householder(&mut self, vectors: Var) -> Result<Var> {
        self.record(Op::Householder(vectors))
    }

    pub fn log_abs_det(&mut self, m: Var) -> Result<Var> {
        self.record(Op::LogAbsDet(m))
    }

    pub fn log_abs_diag_taps(&mut self, filter: Var, center: (usize, usize)) -> Result<Var> {
        self.record(Op::LogAbsDiagTaps { filter, center })
    }

    pub fn periodic_logdet(&mut self, filter: Var, pad: Padding, h: usize, w: usize) -> Result<Var> {
        self.record(Op::PeriodicLogDet { filter, pad, h, w })
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::SliceChannels { x, start, len })
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatChannels(a, b))
    }

    pub fn squeeze(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Squeeze(x))
    }

    pub fn unsqueeze(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Unsqueeze(x))
    }

    pub fn gaussian_log_prob(&mut self, z: Var, mean: Option<Var>, log_std: Option<Var>) -> Result<Var> {
        self.record(Op::GaussianLogProb { z, mean, log_std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_zero_records_one_node() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, -2.0]));
        let z = t.constant(Tensor::zeros(&[2]));
        let before = t.len();
        let y = t.add(x, z).unwrap();
        assert_eq!(t.len(), before + 1);
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.5, -2.0, 3.0]));
        let y = t.leaf(Tensor::vector(vec![0.5, 4.0, -1.0]));
        let p = t.mul(x, y).unwrap();
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), t.value(y).data());
        assert_eq!(g.get(y).unwrap().data(), t.value(x).data());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 3]));
        let s = t.sum(x).unwrap();
        assert_eq!(t.backward(s).unwrap().get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn log_abs_det_of_diagonal() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 4.0]).unwrap());
        let l = t.log_abs_det(w).unwrap();
        assert!((t.value(l).item().unwrap() - 8f64.ln()).abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.5, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn reused_variable_accumulates() {
        // x·x + 3x has derivative 2x + 3
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.7, -1.1]));
        let sq = t.mul(x, x).unwrap();
        let lin = t.scale(x, 3.0).unwrap();
        let y = t.add(sq, lin).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0 * 0.7 + 3.0, 2.0 * -1.1 + 3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[3]));
        let y = t.exp(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NotScalar(s)) if s == vec![3]));
    }

    #[test]
    fn foreign_and_detached_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        assert!(b.exp(x).is_err());
        let c = b.constant(Tensor::scalar(2.0));
        let y = b.exp(c).unwrap();
        assert!(b.backward(y).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2]));
        let b = t.leaf(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
    }
}
