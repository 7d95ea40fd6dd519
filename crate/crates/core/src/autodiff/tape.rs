//! Recorded computation graph with reverse-mode gradients.
//!
//! A [`Tape`] is built once for fixed input and parameter shapes, then
//! replayed with [`Tape::forward`] as many times as needed. Shape errors are
//! reported while recording, so a tape that was built successfully can only
//! fail at run time on mismatched inputs.

use super::tensor::{gemm, tanh, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(usize),
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Affine { a: Var, scale: f64, shift: f64 },
    Rows { a: Var, start: usize },
    Square(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    inputs: Vec<Var>,
    params: Vec<Var>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    evaluated: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            rows,
            cols,
            needs_grad,
        });
        self.values.push(Tensor::zeros(rows, cols));
        self.grads.push(Tensor::zeros(0, 0));
        self.evaluated = false;
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(Error::UnknownNode(v.0))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.node(v).map(|n| (n.rows, n.cols))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Declares a runtime input of the given shape.
    pub fn input(&mut self, rows: usize, cols: usize) -> Var {
        let slot = self.inputs.len();
        let v = self.push(Op::Input(slot), rows, cols, false);
        self.inputs.push(v);
        v
    }

    /// Registers a trainable parameter; gradients are returned in
    /// registration order.
    pub fn param(&mut self, rows: usize, cols: usize) -> Var {
        let slot = self.params.len();
        let v = self.push(Op::Param(slot), rows, cols, true);
        self.params.push(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), m, n, g))
    }

    /// Adds a `1 x n` row to every row of an `m x n` value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let (br, bc) = self.dims(bias)?;
        if br != 1 || bc != n {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: vec![m, n],
                rhs: vec![br, bc],
            });
        }
        let g = self.ng(a) || self.ng(bias);
        Ok(self.push(Op::AddBias(a, bias), m, n, g))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let da = self.dims(a)?;
        let db = self.dims(b)?;
        if da != db {
            return Err(Error::Shape {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("add", a, b)?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), m, n, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("sub", a, b)?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), m, n, g))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.same_shape("mul", a, b)?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b), m, n, g))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let g = self.ng(a);
        Ok(self.push(Op::Tanh(a), m, n, g))
    }

    /// `scale * a + shift`, element-wise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let g = self.ng(a);
        Ok(self.push(Op::Affine { a, scale, shift }, m, n, g))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// Contiguous block of `len` rows starting at `start`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start + len > m || len == 0 {
            return Err(Error::Shape {
                op: "rows",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let g = self.ng(a);
        Ok(self.push(Op::Rows { a, start }, len, n, g))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let g = self.ng(a);
        Ok(self.push(Op::Square(a), m, n, g))
    }

    /// Mean over all entries, as a `1 x 1` value.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if m * n == 0 {
            return Err(Error::Shape {
                op: "mean",
                lhs: vec![m, n],
                rhs: vec![],
            });
        }
        let g = self.ng(a);
        Ok(self.push(Op::Mean(a), 1, 1, g))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    fn check_feed(&self, op: &'static str, vars: &[Var], feed: &[&Tensor]) -> Result<()> {
        if vars.len() != feed.len() {
            return Err(Error::Shape {
                op,
                lhs: vec![vars.len()],
                rhs: vec![feed.len()],
            });
        }
        for (v, t) in vars.iter().zip(feed) {
            let n = &self.nodes[v.0];
            if t.rows() != n.rows || t.cols() != n.cols || t.len() != n.rows * n.cols {
                return Err(Error::Shape {
                    op,
                    lhs: vec![n.rows, n.cols],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Evaluates every node. Identical feeds give bit-identical values.
    pub fn forward(&mut self, inputs: &[&Tensor], params: &[&Tensor]) -> Result<()> {
        self.check_feed("forward(inputs)", &self.inputs, inputs)?;
        self.check_feed("forward(params)", &self.params, params)?;
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let (done, rest) = self.values.split_at_mut(i);
            let out = rest[0].data_mut();
            let val = |v: Var| done[v.0].data();
            match op {
                Op::Input(s) => out.copy_from_slice(inputs[s].data()),
                Op::Param(s) => out.copy_from_slice(params[s].data()),
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let n = self.nodes[b.0].cols;
                    gemm(m, k, n, val(a), false, val(b), false, 0.0, out);
                }
                Op::AddBias(a, b) => {
                    let bias = val(b);
                    let n = bias.len();
                    for (row_out, row_in) in out.chunks_mut(n).zip(val(a).chunks(n)) {
                        for ((o, x), c) in row_out.iter_mut().zip(row_in).zip(bias) {
                            *o = x + c;
                        }
                    }
                }
                Op::Add(a, b) => zip2(out, val(a), val(b), |x, y| x + y),
                Op::Sub(a, b) => zip2(out, val(a), val(b), |x, y| x - y),
                Op::Mul(a, b) => zip2(out, val(a), val(b), |x, y| x * y),
                Op::Tanh(a) => zip1(out, val(a), tanh),
                Op::Affine { a, scale, shift } => zip1(out, val(a), |x| scale * x + shift),
                Op::Rows { a, start } => {
                    let n = self.nodes[a.0].cols;
                    let len = out.len();
                    out.copy_from_slice(&val(a)[start * n..start * n + len]);
                }
                Op::Square(a) => zip1(out, val(a), |x| x * x),
                Op::Mean(a) => {
                    let src = val(a);
                    out[0] = src.iter().sum::<f64>() / src.len() as f64;
                }
            }
        }
        self.evaluated = true;
        Ok(())
    }

    /// Gradient of `seed * sum(output)` with respect to every registered
    /// parameter, in registration order.
    pub fn backward(&mut self, output: Var, seed: f64) -> Result<Vec<Tensor>> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        self.node(output)?;
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.needs_grad {
                if g.len() != node.rows * node.cols {
                    *g = Tensor::zeros(node.rows, node.cols);
                } else {
                    g.fill(0.0);
                }
            }
        }
        if !self.nodes[output.0].needs_grad {
            return Ok(self.param_grads());
        }
        self.grads[output.0].fill(seed);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (lower, upper) = self.grads.split_at_mut(i);
            let dc = upper[0].data();
            let vals = &self.values;
            let nodes = &self.nodes;
            match op {
                Op::Input(_) | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].rows, nodes[a.0].cols);
                    let n = nodes[b.0].cols;
                    if nodes[a.0].needs_grad {
                        // dA += dC * B^T
                        gemm(
                            m,
                            n,
                            k,
                            dc,
                            false,
                            vals[b.0].data(),
                            true,
                            1.0,
                            lower[a.0].data_mut(),
                        );
                    }
                    if nodes[b.0].needs_grad {
                        // dB += A^T * dC
                        gemm(
                            k,
                            m,
                            n,
                            vals[a.0].data(),
                            true,
                            dc,
                            false,
                            1.0,
                            lower[b.0].data_mut(),
                        );
                    }
                }
                Op::AddBias(a, b) => {
                    if nodes[a.0].needs_grad {
                        acc(lower[a.0].data_mut(), dc, |g| g);
                    }
                    if nodes[b.0].needs_grad {
                        let db = lower[b.0].data_mut();
                        let n = db.len();
                        for row in dc.chunks(n) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a.0].needs_grad {
                        acc(lower[a.0].data_mut(), dc, |g| g);
                    }
                    if nodes[b.0].needs_grad {
                        acc(lower[b.0].data_mut(), dc, |g| g);
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.0].needs_grad {
                        acc(lower[a.0].data_mut(), dc, |g| g);
                    }
                    if nodes[b.0].needs_grad {
                        acc(lower[b.0].data_mut(), dc, |g| -g);
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[a.0].needs_grad {
                        acc_zip(lower[a.0].data_mut(), dc, vals[b.0].data(), |g, y| g * y);
                    }
                    if nodes[b.0].needs_grad {
                        acc_zip(lower[b.0].data_mut(), dc, vals[a.0].data(), |g, x| g * x);
                    }
                }
                Op::Tanh(a) => {
                    acc_zip(lower[a.0].data_mut(), dc, vals[i].data(), |g, y| {
                        g * (1.0 - y * y)
                    });
                }
                Op::Affine { a, scale, .. } => acc(lower[a.0].data_mut(), dc, |g| scale * g),
                Op::Rows { a, start } => {
                    let n = nodes[a.0].cols;
                    let dst = &mut lower[a.0].data_mut()[start * n..start * n + dc.len()];
                    for (d, g) in dst.iter_mut().zip(dc) {
                        *d += g;
                    }
                }
                Op::Square(a) => {
                    acc_zip(lower[a.0].data_mut(), dc, vals[a.0].data(), |g, x| {
                        2.0 * g * x
                    });
                }
                Op::Mean(a) => {
                    let da = lower[a.0].data_mut();
                    let g = dc[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += g);
                }
            }
        }
        Ok(self.param_grads())
    }

    fn param_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| self.grads[p.0].clone())
            .collect()
    }
}

fn zip1(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64) {
    for (o, x) in out.iter_mut().zip(a) {
        *o = f(*x);
    }
}

fn zip2(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = f(*x, *y);
    }
}

fn acc(dst: &mut [f64], g: &[f64], f: impl Fn(f64) -> f64) {
    for (d, x) in dst.iter_mut().zip(g) {
        *d += f(*x);
    }
}

fn acc_zip(dst: &mut [f64], g: &[f64], other: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, x), y) in dst.iter_mut().zip(g).zip(other) {
        *d += f(*x, *y);
    }
}
