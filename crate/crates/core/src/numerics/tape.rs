//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] owns every value computed through it. Operations append a node
//! and return a [`Var`] handle; [`Tape::backward`] replays the record in
//! reverse. Each tape also carries the [`FlopCounter`] for the forward work
//! it recorded.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::flops::{LAYER_NORM_FLOPS_PER_ELEM, SOFTMAX_FLOPS_PER_ELEM};
use super::special::{self, digamma, gelu, gelu_grad, sigmoid, softplus};
use super::{kernels, FlopCounter, FlopKind, NumericsError, Result, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Softplus,
    Sigmoid,
    Exp,
    Ln,
    Lgamma,
    Abs,
    Square,
    Sqrt,
    Recip,
    Gelu,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Lgamma => "lgamma",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Recip => "recip",
            Unary::Gelu => "gelu",
        }
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddLast(usize, usize),
    MulLast(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    MulConst(usize, Vec<S>),
    Linear {
        x: usize,
        w: usize,
        rows: usize,
        k: usize,
        n: usize,
    },
    BatchedMatmul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Softmax(usize, usize),
    Unary(usize, Unary),
    ClampMin(usize, S),
    LayerNorm {
        x: usize,
        inv_std: Vec<S>,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Clone, Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    tape: u64,
    grads: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(&v.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Operation record confined to one thread of computation.
#[derive(Debug)]
pub struct Tape<S> {
    id: u64,
    nodes: Vec<Node<S>>,
    flops: FlopCounter,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(NumericsError::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            flops: FlopCounter::new(),
        }
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn reset_flops(&mut self) {
        self.flops.reset();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumericsError::Graph(format!(
                "variable {v:?} was not recorded on tape {}",
                self.id
            )));
        }
        Ok(v.index)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        let i = self.index(v).expect("variable belongs to this tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let g = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: g,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, mut t: Tensor<S>) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn param(&mut self, mut t: Tensor<S>) -> Var {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: impl FnOnce(usize, usize) -> Op<S>,
    ) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        same_shape(name, va.shape(), vb.shape())?;
        let out = va.zip_map(vb, f)?;
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ia) || self.needs(ib);
        self.push(out, op(ia, ib), g, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div)
    }

    fn last_axis_broadcast(
        &mut self,
        x: Var,
        v: Var,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: impl FnOnce(usize, usize) -> Op<S>,
    ) -> Result<Var> {
        let (ix, iv) = (self.index(x)?, self.index(v)?);
        let xs = self.nodes[ix].value.shape().to_vec();
        let width = *xs.last().unwrap();
        if self.nodes[iv].value.len() != width {
            return Err(NumericsError::shape(
                name,
                format!(
                    "vector of {} values cannot broadcast over last axis of {xs:?}",
                    self.nodes[iv].value.len()
                ),
            ));
        }
        let vd = self.nodes[iv].value.data();
        let data: Vec<S> = self.nodes[ix]
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| f(a, vd[i % width]))
            .collect();
        self.flops.add(FlopKind::Elementwise, data.len() as u64);
        let g = self.needs(ix) || self.needs(iv);
        self.push(Tensor::new(xs, data)?, op(ix, iv), g, name)
    }

    /// `x + b` with `b` broadcast along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.last_axis_broadcast(x, b, "add_bias", |a, b| a + b, Op::AddLast)
    }

    /// `x ⊙ g` with `g` broadcast along the last axis.
    pub fn mul_gain(&mut self, x: Var, g: Var) -> Result<Var> {
        self.last_axis_broadcast(x, g, "mul_gain", |a, b| a * b, Op::MulLast)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(|v| v * c);
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::Scale(ix, c), g, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(|v| v + c);
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::AddScalar(ix), g, "add_scalar")
    }

    /// Elementwise product with a fixed (non-differentiated) tensor, e.g. a
    /// dropout mask.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<S>) -> Result<Var> {
        let ix = self.index(x)?;
        same_shape("mul_const", self.nodes[ix].value.shape(), c.shape())?;
        let out = self.nodes[ix].value.zip_map(c, |a, b| a * b)?;
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::MulConst(ix, c.data().to_vec()), g, "mul_const")
    }

    /// Matrix product `a · b` with `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        kernels::matmul_dims(self.nodes[ia].value.shape(), self.nodes[ib].value.shape())?;
        self.linear(a, b)
    }

    /// `x · w` applied to the last axis of `x` (`[..., k] · [k, n] → [..., n]`).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let xs = self.nodes[ix].value.shape().to_vec();
        let ws = self.nodes[iw].value.shape().to_vec();
        let k = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != k {
            return Err(NumericsError::shape(
                "matmul",
                format!("inner dimensions disagree: {xs:?} x {ws:?}"),
            ));
        }
        let n = ws[1];
        let rows = self.nodes[ix].value.len() / k;
        let data = kernels::matmul(
            self.nodes[ix].value.data(),
            self.nodes[iw].value.data(),
            rows,
            k,
            n,
        );
        self.flops.add(FlopKind::Matmul, 2 * (rows * k * n) as u64);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let g = self.needs(ix) || self.needs(iw);
        self.push(
            Tensor::new(shape, data)?,
            Op::Linear {
                x: ix,
                w: iw,
                rows,
                k,
                n,
            },
            g,
            "matmul",
        )
    }

    /// Batched product over matching leading axes:
    /// `[..., m, k] · [..., k, n]`, or `[..., m, k] · [..., n, k]ᵀ` when `trans_b`.
    pub fn batched_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let sa = self.nodes[ia].value.shape().to_vec();
        let sb = self.nodes[ib].value.shape().to_vec();
        let r = sa.len();
        if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(NumericsError::shape(
                "batched_matmul",
                format!("incompatible operands {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(NumericsError::shape(
                "batched_matmul",
                format!("inner dimensions disagree: {sa:?} x {sb:?} (trans_b={trans_b})"),
            ));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let ad = self.nodes[ia].value.data();
        let bd = self.nodes[ib].value.data();
        let mut out = vec![S::zero(); batch * m * n];
        for bi in 0..batch {
            kernels::gemm_acc(
                &ad[bi * m * k..(bi + 1) * m * k],
                &bd[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
                false,
                trans_b,
            );
        }
        self.flops.add(FlopKind::Matmul, 2 * (batch * m * k * n) as u64);
        let mut shape = sa;
        shape[r - 1] = n;
        let g = self.needs(ia) || self.needs(ib);
        self.push(
            Tensor::new(shape, out)?,
            Op::BatchedMatmul {
                a: ia,
                b: ib,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            g,
            "batched_matmul",
        )
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.permute(axes)?;
        let g = self.needs(ix);
        self.push(out, Op::Permute(ix, axes.to_vec()), g, "permute")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let mut out = self.nodes[ix].value.reshape(shape)?;
        out.set_requires_grad(false);
        let g = self.needs(ix);
        self.push(out, Op::Reshape(ix), g, "reshape")
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let xs = self.nodes[ix].value.shape().to_vec();
        if axis >= xs.len() || len == 0 || start + len > xs[axis] {
            return Err(NumericsError::shape(
                "narrow",
                format!("[{start}, {}) along axis {axis} of {xs:?}", start + len),
            ));
        }
        let (outer, ext, inner) = kernels::axis_split(&xs, axis);
        let src = self.nodes[ix].value.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let g = self.needs(ix);
        self.push(Tensor::new(shape, data)?, Op::Narrow { x: ix, axis, start }, g, "narrow")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.softmax(axis)?;
        self.flops
            .add(FlopKind::Softmax, SOFTMAX_FLOPS_PER_ELEM * out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::Softmax(ix, axis), g, "softmax")
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var> {
        let ix = self.index(x)?;
        let src = &self.nodes[ix].value;
        let out = match u {
            Unary::Softplus => src.map(softplus),
            Unary::Sigmoid => src.map(sigmoid),
            Unary::Exp => src.map(|v| v.exp()),
            Unary::Ln => {
                if let Some(&bad) = src.data().iter().find(|v| !(**v > S::zero())) {
                    return Err(NumericsError::Domain {
                        op: "ln",
                        value: bad.to_f64_lossy(),
                    });
                }
                src.map(|v| v.ln())
            }
            Unary::Lgamma => {
                let data = src
                    .data()
                    .iter()
                    .map(|&v| special::lgamma(v))
                    .collect::<Result<Vec<S>>>()?;
                Tensor::new(src.shape().to_vec(), data)?
            }
            Unary::Abs => src.map(|v| v.abs()),
            Unary::Square => src.map(|v| v * v),
            Unary::Sqrt => src.map(|v| v.sqrt()),
            Unary::Recip => src.map(|v| S::one() / v),
            Unary::Gelu => src.map(gelu),
        };
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::Unary(ix, u), g, u.name())
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Ln)
    }
    pub fn lgamma(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Lgamma)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }
    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Recip)
    }
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Gelu)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: S) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.nodes[ix].value.map(|v| v.max(floor));
        self.flops.add(FlopKind::Elementwise, out.len() as u64);
        let g = self.needs(ix);
        self.push(out, Op::ClampMin(ix, floor), g, "clamp_min")
    }

    /// Normalization over the last axis without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: S) -> Result<Var> {
        let ix = self.index(x)?;
        let xs = self.nodes[ix].value.shape().to_vec();
        let width = *xs.last().unwrap();
        let (y, inv_std) = kernels::layer_norm(self.nodes[ix].value.data(), width, eps);
        self.flops
            .add(FlopKind::LayerNorm, LAYER_NORM_FLOPS_PER_ELEM * y.len() as u64);
        let g = self.needs(ix);
        self.push(Tensor::new(xs, y)?, Op::LayerNorm { x: ix, inv_std }, g, "layer_norm")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let s = self.nodes[ix].value.sum();
        self.flops
            .add(FlopKind::Reduction, self.nodes[ix].value.len() as u64);
        let g = self.needs(ix);
        self.push(Tensor::scalar(s), Op::Sum(ix), g, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let s = self.nodes[ix].value.mean();
        self.flops
            .add(FlopKind::Reduction, self.nodes[ix].value.len() as u64);
        let g = self.needs(ix);
        self.push(Tensor::scalar(s), Op::Mean(ix), g, "mean")
    }

    /// Gradient of the scalar `loss` with respect to every leaf that
    /// requires a gradient. Leaves unreachable from `loss` receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let il = self.index(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(NumericsError::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; il + 1];
        grads[il] = Some(vec![S::one()]);

        for i in (0..=il).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                grads[i] = Some(dy);
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }

        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![S::zero(); node.value.len()]);
                out.insert(i, Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], target: usize, delta: Vec<S>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, dy: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.to_vec());
                self.accumulate(grads, *b, dy.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, dy.iter().zip(vb).map(|(&g, &v)| g * v).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, dy.iter().zip(va).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, dy.iter().zip(vb).map(|(&g, &v)| g / v).collect());
                }
                if self.needs(*b) {
                    let d = dy
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(&g, (&x, &z))| -g * x / (z * z))
                        .collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddLast(x, b) => {
                let width = val(*b).len();
                self.accumulate(grads, *x, dy.to_vec());
                if self.needs(*b) {
                    let mut db = vec![S::zero(); width];
                    for (j, &g) in dy.iter().enumerate() {
                        db[j % width] = db[j % width] + g;
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::MulLast(x, gain) => {
                let vg = val(*gain);
                let width = vg.len();
                if self.needs(*x) {
                    let d = dy.iter().enumerate().map(|(j, &g)| g * vg[j % width]).collect();
                    self.accumulate(grads, *x, d);
                }
                if self.needs(*gain) {
                    let vx = val(*x);
                    let mut dg = vec![S::zero(); width];
                    for (j, (&g, &xv)) in dy.iter().zip(vx).enumerate() {
                        dg[j % width] = dg[j % width] + g * xv;
                    }
                    self.accumulate(grads, *gain, dg);
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, dy.iter().map(|&g| g * *c).collect());
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::MulConst(x, c) => {
                self.accumulate(grads, *x, dy.iter().zip(c).map(|(&g, &m)| g * m).collect());
            }
            Op::Linear { x, w, rows, k, n } => {
                if self.needs(*x) {
                    let d = kernels::gemm(dy, val(*w), *rows, *n, *k, false, true);
                    self.accumulate(grads, *x, d);
                }
                if self.needs(*w) {
                    let d = kernels::gemm(val(*x), dy, *k, *rows, *n, true, false);
                    self.accumulate(grads, *w, d);
                }
            }
            Op::BatchedMatmul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (val(*a), val(*b));
                if self.needs(*a) {
                    let mut da = vec![S::zero(); batch * m * k];
                    for bi in 0..*batch {
                        let dyb = &dy[bi * m * n..(bi + 1) * m * n];
                        let bb = &vb[bi * k * n..(bi + 1) * k * n];
                        // dA = dY · Bᵀ, or dY · B when B was used transposed
                        kernels::gemm_acc(dyb, bb, &mut da[bi * m * k..(bi + 1) * m * k], m, n, k, false, !trans_b);
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![S::zero(); batch * k * n];
                    for bi in 0..*batch {
                        let dyb = &dy[bi * m * n..(bi + 1) * m * n];
                        let ab = &va[bi * m * k..(bi + 1) * m * k];
                        let slot = &mut db[bi * k * n..(bi + 1) * k * n];
                        if *trans_b {
                            // B is [n, k]: dB = dYᵀ · A
                            kernels::gemm_acc(dyb, ab, slot, n, m, k, true, false);
                        } else {
                            kernels::gemm_acc(ab, dyb, slot, k, m, n, true, false);
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Permute(x, axes) => {
                let inv = kernels::inverse_permutation(axes);
                let (_, d) = kernels::permute(dy, node.value.shape(), &inv);
                self.accumulate(grads, *x, d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, dy.to_vec()),
            Op::Narrow { x, axis, start } => {
                let xs = self.nodes[*x].value.shape();
                let (outer, ext, inner) = kernels::axis_split(xs, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![S::zero(); self.nodes[*x].value.len()];
                for o in 0..outer {
                    let dst = o * ext * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&dy[src..src + len * inner]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x, axis) => {
                let d = kernels::softmax_backward(y, dy, node.value.shape(), *axis);
                self.accumulate(grads, *x, d);
            }
            Op::Unary(x, u) => {
                let xv = val(*x);
                let d: Vec<S> = match u {
                    Unary::Softplus => dy.iter().zip(xv).map(|(&g, &v)| g * sigmoid(v)).collect(),
                    Unary::Sigmoid => dy
                        .iter()
                        .zip(y)
                        .map(|(&g, &s)| g * s * (S::one() - s))
                        .collect(),
                    Unary::Exp => dy.iter().zip(y).map(|(&g, &e)| g * e).collect(),
                    Unary::Ln => dy.iter().zip(xv).map(|(&g, &v)| g / v).collect(),
                    Unary::Lgamma => dy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| g * digamma(v).expect("lgamma forward validated domain"))
                        .collect(),
                    Unary::Abs => dy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| {
                            if v > S::zero() {
                                g
                            } else if v < S::zero() {
                                -g
                            } else {
                                S::zero()
                            }
                        })
                        .collect(),
                    Unary::Square => dy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| g * (v + v))
                        .collect(),
                    Unary::Sqrt => dy
                        .iter()
                        .zip(y)
                        .map(|(&g, &r)| g / (r + r))
                        .collect(),
                    Unary::Recip => dy.iter().zip(y).map(|(&g, &r)| -g * r * r).collect(),
                    Unary::Gelu => dy.iter().zip(xv).map(|(&g, &v)| g * gelu_grad(v)).collect(),
                };
                self.accumulate(grads, *x, d);
            }
            Op::ClampMin(x, floor) => {
                let d = dy
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| if v > *floor { g } else { S::zero() })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::LayerNorm { x, inv_std } => {
                let width = *node.value.shape().last().unwrap();
                let d = kernels::layer_norm_backward(y, inv_std, dy, width);
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let n = self.nodes[*x].value.len();
                self.accumulate(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[*x].value.len();
                let g = dy[0] / S::from_usize_lossy(n);
                self.accumulate(grads, *x, vec![g; n]);
            }
        }
    }
}
