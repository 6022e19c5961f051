//! Tape of dense operations with reverse-mode backward rules.
//!
//! A [`Graph`] records every operation in creation order, so the tape is
//! already topologically sorted. One graph serves one forward/backward pass
//! and is never shared across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{broadcast_map, broadcast_shape, strided_map, strides, Tensor};
use crate::{AutogradError, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { a: Var, axis: usize, start: usize },
    IndexSelect { a: Var, idx: Vec<usize> },
    Softmax(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout { a: Var, mask: Vec<f64> },
    SumAll(Var),
    MeanAll(Var),
    SumAxis { a: Var, axis: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// A graph in evaluation mode (dropout is the identity).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// A graph in training mode; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(AutogradError::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&out_shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// `a[..., m, k] x b[k, n] -> [..., m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(AutogradError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k;
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            0.0,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Batched matmul over matching leading dims:
    /// `a[.., m, k] x b[.., k, n]`, or `b[.., n, k]` transposed when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || AutogradError::Shape {
            op: "bmm",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 3 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(err());
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(err());
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let bstr = if trans_b { (1, k) } else { (n, 1) };
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &va[i * m * k..(i + 1) * m * k],
                (k, 1),
                &vb[i * k * n..(i + 1) * k * n],
                bstr,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Bmm { a, b, trans_b }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape).map_err(|_| AutogradError::Shape {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: shape.to_vec(),
        })?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if axes.len() != sa.len() || axes.iter().any(|&x| x >= sa.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(AutogradError::Shape {
                op: "permute",
                lhs: sa,
                rhs: axes.to_vec(),
            });
        }
        let map = permute_map(&sa, axes);
        let src = self.value(a).data();
        let data: Vec<f64> = map.iter().map(|&i| src[i]).collect();
        let shape: Vec<usize> = axes.iter().map(|&x| sa[x]).collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(AutogradError::Shape {
                op: "transpose",
                lhs: self.shape(a).to_vec(),
                rhs: vec![],
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(AutogradError::Shape {
                op: "concat",
                lhs: first,
                rhs: vec![axis],
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(k, (x, y))| k != axis && x != y)
            {
                return Err(AutogradError::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let w = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start >= end || end > sa[axis] {
            return Err(AutogradError::Shape {
                op: "slice",
                lhs: sa,
                rhs: vec![axis, start, end],
            });
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * sa[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = sa;
        shape[axis] = end - start;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Slice { a, axis, start }, rg))
    }

    /// Selects rows along axis 0.
    pub fn index_select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.is_empty() || idx.iter().any(|&i| i >= sa[0]) {
            return Err(AutogradError::Shape {
                op: "index_select",
                lhs: sa,
                rhs: idx.to_vec(),
            });
        }
        let inner: usize = sa[1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut shape = sa;
        shape[0] = idx.len();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::IndexSelect {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over the last axis. Entries of `-inf` receive exactly zero weight.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = *v.shape().last().unwrap_or(&1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Softmax(a), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(AutogradError::Shape {
                op: "layer_norm",
                lhs: sx,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let vx = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = vx.len() / d;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.len()];
        for r in 0..rows {
            let row = &vx[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout in training mode; identity otherwise.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if !self.train || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(&shape, data).unwrap(), Op::Dropout { a, mask }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(AutogradError::Shape {
                op: "sum_axis",
                lhs: sa,
                rhs: vec![axis],
            });
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let n = sa[axis];
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape = sa;
        shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SumAxis { a, axis }, rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self.shape(a).get(axis).unwrap_or(&1);
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Pearson correlation between matching rows of `a` and `b` (`[R, n]`),
    /// returning `[R]`. Rows with zero variance yield NaN; callers filter
    /// those out beforehand.
    pub fn pearson_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || self.shape(b) != sa.as_slice() {
            return Err(AutogradError::Shape {
                op: "pearson_rows",
                lhs: sa,
                rhs: self.shape(b).to_vec(),
            });
        }
        let rows = sa[0];
        let ma = self.mean_axis(a, 1)?;
        let ma = self.reshape(ma, &[rows, 1])?;
        let ca = self.sub(a, ma)?;
        let mb = self.mean_axis(b, 1)?;
        let mb = self.reshape(mb, &[rows, 1])?;
        let cb = self.sub(b, mb)?;
        let cross = self.mul(ca, cb)?;
        let num = self.sum_axis(cross, 1)?;
        let sqa = self.square(ca);
        let va = self.sum_axis(sqa, 1)?;
        let sqb = self.square(cb);
        let vb = self.sum_axis(sqb, 1)?;
        let den = self.mul(va, vb)?;
        let den = self.sqrt(den);
        self.div(num, den)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(AutogradError::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let out_shape = node.value.shape();
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        macro_rules! acc {
            ($v:expr, $f:expr) => {{
                let v: Var = $v;
                if self.rg(v) {
                    let n = self.nodes[v.0].value.len();
                    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(buf);
                }
            }};
        }
        // Elementwise local-derivative accumulation for unary ops.
        let unary = |grads: &mut [Option<Vec<f64>>], a: Var, d: &dyn Fn(usize) -> f64| {
            if self.rg(a) {
                let n = self.nodes[a.0].value.len();
                let buf = grads[a.0].get_or_insert_with(|| vec![0.0; n]);
                for k in 0..n {
                    buf[k] += g[k] * d(k);
                }
            }
        };
        // Broadcast-aware accumulation: buf[map[k]] += g[k] * d(k).
        let bin = |grads: &mut [Option<Vec<f64>>], x: Var, d: &dyn Fn(usize) -> f64| {
            if !self.rg(x) {
                return;
            }
            let sx = shp(x);
            let n = self.nodes[x.0].value.len();
            let buf = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
            if sx == out_shape {
                for k in 0..g.len() {
                    buf[k] += g[k] * d(k);
                }
            } else {
                let map = broadcast_map(out_shape, sx);
                for k in 0..g.len() {
                    buf[map[k]] += g[k] * d(k);
                }
            }
        };
        let idx = |x: Var| -> Option<Vec<usize>> {
            if shp(x) == out_shape {
                None
            } else {
                Some(broadcast_map(out_shape, shp(x)))
            }
        };
        let at = |data: &[f64], map: &Option<Vec<usize>>, k: usize| match map {
            None => data[k],
            Some(m) => data[m[k]],
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                bin(grads, *a, &|_| 1.0);
                bin(grads, *b, &|_| 1.0);
            }
            Op::Sub(a, b) => {
                bin(grads, *a, &|_| 1.0);
                bin(grads, *b, &|_| -1.0);
            }
            Op::Mul(a, b) => {
                let (ma, mb) = (idx(*a), idx(*b));
                let (va, vb) = (val(*a), val(*b));
                bin(grads, *a, &|k| at(vb, &mb, k));
                bin(grads, *b, &|k| at(va, &ma, k));
            }
            Op::Div(a, b) => {
                let (ma, mb) = (idx(*a), idx(*b));
                let (va, vb) = (val(*a), val(*b));
                bin(grads, *a, &|k| 1.0 / at(vb, &mb, k));
                bin(grads, *b, &|k| {
                    let y = at(vb, &mb, k);
                    -at(va, &ma, k) / (y * y)
                });
            }
            Op::Scale(a, c) => unary(grads, *a, &|_| *c),
            Op::AddScalar(a) => unary(grads, *a, &|_| 1.0),
            Op::Sigmoid(a) => unary(grads, *a, &|k| out[k] * (1.0 - out[k])),
            Op::Tanh(a) => unary(grads, *a, &|k| 1.0 - out[k] * out[k]),
            Op::Relu(a) => {
                let va = val(*a);
                unary(grads, *a, &|k| if va[k] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Exp(a) => unary(grads, *a, &|k| out[k]),
            Op::Log(a) => {
                let va = val(*a);
                unary(grads, *a, &|k| 1.0 / va[k])
            }
            Op::Square(a) => {
                let va = val(*a);
                unary(grads, *a, &|k| 2.0 * va[k])
            }
            Op::Sqrt(a) => unary(grads, *a, &|k| 0.5 / out[k]),
            Op::Clamp { a, lo, hi } => {
                let va = val(*a);
                unary(grads, *a, &|k| if va[k] > *lo && va[k] < *hi { 1.0 } else { 0.0 })
            }
            Op::Dropout { a, mask } => unary(grads, *a, &|k| mask[k]),
            Op::Reshape(a) => unary(grads, *a, &|_| 1.0),
            Op::MatMul(a, b) => {
                let sb = shp(*b);
                let (k, n) = (sb[0], sb[1]);
                let m = g.len() / n;
                acc!(*a, |buf: &mut Vec<f64>| {
                    gemm(m, n, k, g, (n, 1), val(*b), (1, n), buf, 1.0)
                });
                acc!(*b, |buf: &mut Vec<f64>| {
                    gemm(k, m, n, val(*a), (1, k), g, (n, 1), buf, 1.0)
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = shp(*a);
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = out_shape[r - 1];
                let batch = g.len() / (m * n);
                let (va, vb) = (val(*a), val(*b));
                let tb = *trans_b;
                acc!(*a, |buf: &mut Vec<f64>| {
                    // dA = dC * B^T  (B stored k x n, or n x k when transposed)
                    let bs = if tb { (k, 1) } else { (1, n) };
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n, 1),
                            &vb[i * k * n..(i + 1) * k * n],
                            bs,
                            &mut buf[i * m * k..(i + 1) * m * k],
                            1.0,
                        );
                    }
                });
                acc!(*b, |buf: &mut Vec<f64>| {
                    for i in 0..batch {
                        let ga = &g[i * m * n..(i + 1) * m * n];
                        let aa = &va[i * m * k..(i + 1) * m * k];
                        let dst = &mut buf[i * k * n..(i + 1) * k * n];
                        if tb {
                            // dB (n x k) = dC^T * A
                            gemm(n, m, k, ga, (1, n), aa, (k, 1), dst, 1.0);
                        } else {
                            // dB (k x n) = A^T * dC
                            gemm(k, m, n, aa, (1, k), ga, (n, 1), dst, 1.0);
                        }
                    }
                });
            }
            Op::Permute(a, axes) => {
                let map = permute_map(shp(*a), axes);
                acc!(*a, |buf: &mut Vec<f64>| {
                    for (k, &src) in map.iter().enumerate() {
                        buf[src] += g[k];
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut off = 0;
                for &p in parts {
                    let w = shp(p)[*axis] * inner;
                    acc!(p, |buf: &mut Vec<f64>| {
                        for o in 0..outer {
                            for j in 0..w {
                                buf[o * w + j] += g[o * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::Slice { a, axis, start } => {
                let sa = shp(*a);
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[*axis + 1..].iter().product();
                let w = out_shape[*axis] * inner;
                let full = sa[*axis] * inner;
                acc!(*a, |buf: &mut Vec<f64>| {
                    for o in 0..outer {
                        for j in 0..w {
                            buf[o * full + start * inner + j] += g[o * w + j];
                        }
                    }
                });
            }
            Op::IndexSelect { a, idx } => {
                let inner: usize = shp(*a)[1..].iter().product();
                acc!(*a, |buf: &mut Vec<f64>| {
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..inner {
                            buf[src * inner + j] += g[r * inner + j];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let n = *out_shape.last().unwrap_or(&1);
                acc!(*a, |buf: &mut Vec<f64>| {
                    for r in 0..g.len() / n {
                        let ys = &out[r * n..(r + 1) * n];
                        let gs = &g[r * n..(r + 1) * n];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, gg)| y * gg).sum();
                        for j in 0..n {
                            buf[r * n + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *out_shape.last().unwrap();
                let rows = g.len() / d;
                let gm = val(*gamma);
                acc!(*x, |buf: &mut Vec<f64>| {
                    for r in 0..rows {
                        let gs = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dx = gs[j] * gm[j];
                            s1 += dx;
                            s2 += dx * xh[j];
                        }
                        let c = inv_std[r] / d as f64;
                        for j in 0..d {
                            let dx = gs[j] * gm[j];
                            buf[r * d + j] += c * (d as f64 * dx - s1 - xh[j] * s2);
                        }
                    }
                });
                acc!(*gamma, |buf: &mut Vec<f64>| {
                    for k in 0..g.len() {
                        buf[k % d] += g[k] * xhat[k];
                    }
                });
                acc!(*beta, |buf: &mut Vec<f64>| {
                    for k in 0..g.len() {
                        buf[k % d] += g[k];
                    }
                });
            }
            Op::SumAll(a) | Op::MeanAll(a) => {
                let n = match node.op {
                    Op::MeanAll(_) => self.nodes[a.0].value.len() as f64,
                    _ => 1.0,
                };
                if self.rg(*a) {
                    let len = self.nodes[a.0].value.len();
                    let buf = grads[a.0].get_or_insert_with(|| vec![0.0; len]);
                    for v in buf.iter_mut() {
                        *v += g[0] / n;
                    }
                }
            }
            Op::SumAxis { a, axis } => {
                let sa = shp(*a);
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[*axis + 1..].iter().product();
                let n = sa[*axis];
                acc!(*a, |buf: &mut Vec<f64>| {
                    for o in 0..outer {
                        for kk in 0..n {
                            let base = (o * n + kk) * inner;
                            for j in 0..inner {
                                buf[base + j] += g[o * inner + j];
                            }
                        }
                    }
                });
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// For each output flat index of a permutation, the source flat index.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let st = strides(in_shape);
    let out: Vec<usize> = axes.iter().map(|&x| in_shape[x]).collect();
    let ostr: Vec<usize> = axes.iter().map(|&x| st[x]).collect();
    strided_map(&out, &ostr)
}

/// `c = a * b + beta * c` for row-major blocks described by (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the asserts above bound every index reached through the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
