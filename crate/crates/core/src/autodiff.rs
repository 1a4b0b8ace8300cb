//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] owns every intermediate value produced while building a loss.
//! Nodes are appended in evaluation order, so the tape index order is already
//! a topological order and [`Graph::backward`] walks it once in reverse.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable operations the graph knows how to record.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Subtract,
    /// Elementwise product.
    Multiply,
    /// Multiplication by a constant scalar.
    Scale(f64),
    /// 2-D × 2-D.
    Matmul,
    /// `[B, Cin, H, W]` ⊛ `[Cout, Cin, 3, 3]`, stride 1, zero padding 1.
    Conv2d,
    /// Over the last axis.
    Softmax,
    Sigmoid,
    /// `ln σ(x)`, evaluated without forming σ(x).
    LogSigmoid,
    Ln,
    Exp,
    SumAll,
    MeanAll,
    SquaredNorm,
    Reshape(Vec<usize>),
    Concat(usize),
    /// 2-D only.
    Transpose,
    Slice { axis: usize, start: usize, len: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Subtract => "subtract",
            Primitive::Multiply => "multiply",
            Primitive::Scale(_) => "scale",
            Primitive::Matmul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::Softmax => "softmax",
            Primitive::Sigmoid => "sigmoid",
            Primitive::LogSigmoid => "log-sigmoid",
            Primitive::Ln => "ln",
            Primitive::Exp => "exp",
            Primitive::SumAll => "sum-all",
            Primitive::MeanAll => "mean-all",
            Primitive::SquaredNorm => "squared-l2-norm",
            Primitive::Reshape(_) => "reshape",
            Primitive::Concat(_) => "concatenate",
            Primitive::Transpose => "transpose",
            Primitive::Slice { .. } => "slice",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Add
            | Primitive::Subtract
            | Primitive::Multiply
            | Primitive::Matmul
            | Primitive::Conv2d => Some(2),
            Primitive::Concat(_) => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
enum Origin {
    Leaf,
    Op(Primitive, Vec<Var>),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    origin: Origin,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<F = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Graph::backward`]: ∂root/∂node for every node that requires a gradient.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<F> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Origin::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Origin::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0]
            .value
            .item()
            .expect("scalar() on a non-scalar node")
            .as_f64()
    }

    fn push(&mut self, value: Tensor<F>, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluate `prim` on `inputs` and record the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(Error::domain(
                    prim.name(),
                    format!("expects {n} inputs, got {}", inputs.len()),
                ));
            }
        }
        let value = {
            let vals: Vec<&Tensor<F>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            forward(&prim, &vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, Origin::Op(prim, inputs.to_vec()), requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Multiply, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Matmul, &[a, b])
    }

    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        self.apply(Primitive::Conv2d, &[x, w])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LogSigmoid, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Ln, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SumAll, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::MeanAll, &[a])
    }

    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::SquaredNorm, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat(axis), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }

    /// `x · σ(x)`
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let s = self.sigmoid(a)?;
        self.mul(a, s)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let root_val = &self.nodes[root.0].value;
        if root_val.numel() != 1 {
            return Err(Error::domain(
                "backward",
                format!("root must be a scalar, got shape {:?}", root_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(root_val.shape()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Origin::Op(prim, inputs) = &node.origin else {
                continue;
            };
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let in_vals: Vec<&Tensor<F>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let local = vjp(prim, &in_vals, &node.value, &upstream, &needs)?;
            for ((input, g), need) in inputs.iter().zip(local).zip(needs) {
                if !need {
                    continue;
                }
                let g = g.expect("vjp returns a gradient for every input that needs one");
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
            // keep leaf gradients, drop the rest once consumed
            grads[idx] = None;
        }
        // Leaves never have their slot taken, so grads now holds exactly the leaf gradients.
        let mut all = grads;
        all.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads: all,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[inline]
fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn log_sigmoid<F: Scalar>(x: F) -> F {
    // ln σ(x) = min(x, 0) − ln(1 + e^{−|x|})
    x.min(F::zero()) - (-x.abs()).exp().ln_1p()
}

fn conv_shapes<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>) -> Result<(usize, usize, usize, usize, usize)> {
    let ok = x.rank() == 4
        && w.rank() == 4
        && w.shape()[1] == x.shape()[1]
        && w.shape()[2] == 3
        && w.shape()[3] == 3;
    if !ok {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let s = x.shape();
    Ok((s[0], s[1], w.shape()[0], s[2], s[3]))
}

/// Valid output range along one spatial axis for kernel offset `k` (0..3).
#[inline]
fn conv_range(k: usize, n: usize) -> (usize, usize) {
    // input index = out + k − 1 must lie in 0..n
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi)
}

fn conv2d_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, cin, cout, h, wd) = conv_shapes(x, w)?;
    let xs = x.data();
    let ws = w.data();
    let plane = h * wd;
    let mut out = vec![F::zero(); b * cout * plane];
    for bi in 0..b {
        for co in 0..cout {
            let o = &mut out[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
            for ci in 0..cin {
                let xin = &xs[(bi * cin + ci) * plane..(bi * cin + ci + 1) * plane];
                for ky in 0..3 {
                    let (ylo, yhi) = conv_range(ky, h);
                    for kx in 0..3 {
                        let wv = ws[((co * cin + ci) * 3 + ky) * 3 + kx];
                        if wv == F::zero() {
                            continue;
                        }
                        let (xlo, xhi) = conv_range(kx, wd);
                        for y in ylo..yhi {
                            let iy = y + ky - 1;
                            let orow = &mut o[y * wd + xlo..y * wd + xhi];
                            let irow = &xin[iy * wd + xlo + kx - 1..iy * wd + xhi + kx - 1];
                            for (ov, &iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, cout, h, wd], out)
}

fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    gy: &Tensor<F>,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor<F>>, Option<Tensor<F>>) {
    let s = x.shape();
    let (b, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let cout = w.shape()[0];
    let plane = h * wd;
    let xs = x.data();
    let ws = w.data();
    let gs = gy.data();
    let mut gx = need_x.then(|| vec![F::zero(); xs.len()]);
    let mut gw = need_w.then(|| vec![F::zero(); ws.len()]);
    for bi in 0..b {
        for co in 0..cout {
            let g = &gs[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
            for ci in 0..cin {
                let xoff = (bi * cin + ci) * plane;
                for ky in 0..3 {
                    let (ylo, yhi) = conv_range(ky, h);
                    for kx in 0..3 {
                        let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                        let (xlo, xhi) = conv_range(kx, wd);
                        let wv = ws[widx];
                        let mut acc = F::zero();
                        for y in ylo..yhi {
                            let iy = y + ky - 1;
                            let grow = &g[y * wd + xlo..y * wd + xhi];
                            let ibase = xoff + iy * wd + xlo + kx - 1;
                            if need_w {
                                let irow = &xs[ibase..ibase + (xhi - xlo)];
                                for (&gv, &iv) in grow.iter().zip(irow) {
                                    acc += gv * iv;
                                }
                            }
                            if let Some(gx) = gx.as_mut() {
                                let xrow = &mut gx[ibase..ibase + (xhi - xlo)];
                                for (xv, &gv) in xrow.iter_mut().zip(grow) {
                                    *xv += wv * gv;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::new(s.to_vec(), d).expect("shape")),
        gw.map(|d| Tensor::new(w.shape().to_vec(), d).expect("shape")),
    )
}

fn softmax_last<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let n = *a.shape().last().expect("rank >= 1");
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::new(a.shape().to_vec(), out).expect("shape")
}

fn forward<F: Scalar>(prim: &Primitive, x: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let name = prim.name();
    Ok(match prim {
        Primitive::Add => x[0].zip_map(x[1], name, |a, b| a + b)?,
        Primitive::Subtract => x[0].zip_map(x[1], name, |a, b| a - b)?,
        Primitive::Multiply => x[0].zip_map(x[1], name, |a, b| a * b)?,
        Primitive::Scale(s) => {
            let s = F::of(*s);
            x[0].map(|a| a * s)
        }
        Primitive::Matmul => x[0].matmul(x[1])?,
        Primitive::Conv2d => conv2d_forward(x[0], x[1])?,
        Primitive::Softmax => softmax_last(x[0]),
        Primitive::Sigmoid => x[0].map(sigmoid),
        Primitive::LogSigmoid => x[0].map(log_sigmoid),
        Primitive::Ln => {
            if let Some(bad) = x[0].data().iter().find(|v| **v <= F::zero()) {
                return Err(Error::domain(
                    name,
                    format!("logarithm of non-positive value {bad}"),
                ));
            }
            x[0].map(|a| a.ln())
        }
        Primitive::Exp => x[0].map(|a| a.exp()),
        Primitive::SumAll => Tensor::scalar(x[0].sum()),
        Primitive::MeanAll => Tensor::scalar(x[0].sum() / F::of(x[0].numel() as f64)),
        Primitive::SquaredNorm => Tensor::scalar(x[0].data().iter().map(|&v| v * v).sum()),
        Primitive::Reshape(shape) => x[0].reshape(shape)?,
        Primitive::Concat(axis) => Tensor::concat(x, *axis)?,
        Primitive::Transpose => x[0].transpose2()?,
        Primitive::Slice { axis, start, len } => x[0].narrow(*axis, *start, *len)?,
    })
}

/// Vector-Jacobian products: gradient for each input given the upstream gradient.
fn vjp<F: Scalar>(
    prim: &Primitive,
    x: &[&Tensor<F>],
    y: &Tensor<F>,
    gy: &Tensor<F>,
    needs: &[bool],
) -> Result<Vec<Option<Tensor<F>>>> {
    let name = prim.name();
    let gate = |i: usize, f: &dyn Fn() -> Result<Tensor<F>>| -> Result<Option<Tensor<F>>> {
        if needs[i] {
            f().map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(match prim {
        Primitive::Add => vec![gate(0, &|| Ok(gy.clone()))?, gate(1, &|| Ok(gy.clone()))?],
        Primitive::Subtract => vec![
            gate(0, &|| Ok(gy.clone()))?,
            gate(1, &|| Ok(gy.map(|g| -g)))?,
        ],
        Primitive::Multiply => vec![
            gate(0, &|| gy.zip_map(x[1], name, |g, b| g * b))?,
            gate(1, &|| gy.zip_map(x[0], name, |g, a| g * a))?,
        ],
        Primitive::Scale(s) => {
            let s = F::of(*s);
            vec![Some(gy.map(|g| g * s))]
        }
        Primitive::Matmul => {
            let (m, k, n) = (x[0].shape()[0], x[0].shape()[1], x[1].shape()[1]);
            vec![
                gate(0, &|| {
                    let mut out = vec![F::zero(); m * k];
                    kernels::matmul_bt(gy.data(), x[1].data(), &mut out, m, n, k);
                    Tensor::new(vec![m, k], out)
                })?,
                gate(1, &|| {
                    let mut out = vec![F::zero(); k * n];
                    kernels::matmul_at(x[0].data(), gy.data(), &mut out, m, k, n);
                    Tensor::new(vec![k, n], out)
                })?,
            ]
        }
        Primitive::Conv2d => {
            let (gx, gw) = conv2d_backward(x[0], x[1], gy, needs[0], needs[1]);
            vec![gx, gw]
        }
        Primitive::Softmax => {
            let n = *y.shape().last().expect("rank >= 1");
            let mut out = vec![F::zero(); y.numel()];
            for ((o, yr), gr) in out
                .chunks_mut(n)
                .zip(y.data().chunks(n))
                .zip(gy.data().chunks(n))
            {
                let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = yv * (gv - dot);
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), out)?)]
        }
        Primitive::Sigmoid => vec![Some(gy.zip_map(y, name, |g, s| g * s * (F::one() - s))?)],
        Primitive::LogSigmoid => {
            vec![Some(gy.zip_map(x[0], name, |g, a| g * sigmoid(-a))?)]
        }
        Primitive::Ln => vec![Some(gy.zip_map(x[0], name, |g, a| g / a)?)],
        Primitive::Exp => vec![Some(gy.zip_map(y, name, |g, e| g * e)?)],
        Primitive::SumAll => {
            let g = gy.data()[0];
            vec![Some(Tensor::full(x[0].shape(), g))]
        }
        Primitive::MeanAll => {
            let g = gy.data()[0] / F::of(x[0].numel() as f64);
            vec![Some(Tensor::full(x[0].shape(), g))]
        }
        Primitive::SquaredNorm => {
            let g = gy.data()[0] * F::of(2.0);
            vec![Some(x[0].map(|a| a * g))]
        }
        Primitive::Reshape(_) => vec![Some(gy.reshape(x[0].shape())?)],
        Primitive::Concat(axis) => {
            let mut start = 0;
            let mut out = Vec::with_capacity(x.len());
            for (i, part) in x.iter().enumerate() {
                let len = part.shape()[*axis];
                out.push(if needs[i] {
                    Some(gy.narrow(*axis, start, len)?)
                } else {
                    None
                });
                start += len;
            }
            out
        }
        Primitive::Transpose => vec![Some(gy.transpose2()?)],
        Primitive::Slice { axis, start, len } => {
            let src = x[0].shape();
            let outer: usize = src[..*axis].iter().product();
            let inner: usize = src[axis + 1..].iter().product();
            let mut out = vec![F::zero(); x[0].numel()];
            let block = src[*axis] * inner;
            for o in 0..outer {
                let dst = o * block + start * inner;
                out[dst..dst + len * inner]
                    .copy_from_slice(&gy.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(src.to_vec(), out)?)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[4]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_f64(&[3], &[1000.0, 1000.0, -1000.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.scalar(y), 0.5);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let y = g.matmul(a, i).unwrap();
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn squared_norm_of_3_4_is_25() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[3., 4.]));
        let y = g.sq_norm(x).unwrap();
        assert_eq!(g.scalar(y), 25.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn squared_norm_gradient_is_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let s = g.sq_norm(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2., 4.]);
    }

    #[test]
    fn neg_log_sigmoid_gradient() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::scalar(0.6));
        let s = g.sigmoid(w).unwrap();
        let l = g.ln(s).unwrap();
        let loss = g.neg(l).unwrap();
        let grads = g.backward(loss).unwrap();
        // frozen from a central difference (h = 1e-4) of −ln σ(w) at 0.6
        assert_abs_diff_eq!(grads.wrt(w).data()[0], -0.3543436937742046, epsilon = 1e-8);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.wrt(x).data(), &[7.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn log_of_non_positive_fails() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2], &[1.0, 0.0]));
        let err = g.ln(x).unwrap_err().to_string();
        assert!(err.contains("ln"), "{err}");
    }

    #[test]
    fn shape_error_names_primitive_and_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[3]));
        let err = g.add(a, c).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::scalar(2.0));
        let p = g.param(Tensor::scalar(5.0));
        let y = g.mul(c, p).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(c).data(), &[0.0]);
        assert_eq!(grads.wrt(p).data(), &[2.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = g.constant(t(&[1, 1, 3, 3], &k));
        let y = g.conv2d(x, w).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_shift_kernel_zero_pads() {
        // kernel picks the left neighbour: out[y][x] = in[y][x-1]
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 3], &[1., 2., 3.]));
        let mut k = vec![0.0; 9];
        k[3] = 1.0;
        let w = g.constant(t(&[1, 1, 3, 3], &k));
        let y = g.conv2d(x, w).unwrap();
        assert_eq!(g.value(y).data(), &[0., 1., 2.]);
    }
}
