//! Reverse-mode autodiff tape.
//!
//! Every node is evaluated eagerly when it is pushed. Backward passes are
//! themselves recorded as ordinary nodes on the same tape, so a gradient
//! returned by [`Graph::grad`] can be differentiated again (double
//! backpropagation, used by the discriminator gradient penalty).

use super::{NeuralError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SafeRecip(Var),
    RowNorm(Var),
    Concat(Vec<Var>),
    Slice { a: Var, start: usize },
    Pad { a: Var, start: usize },
    Reshape(Var),
    Im2Col { a: Var, geom: ConvGeom },
    Col2Im { a: Var, geom: ConvGeom },
    Clamp { a: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
}

/// Geometry of a channels-last 1-D convolution.
///
/// Input rows hold `length * channels` values laid out position-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub length: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_length(&self) -> usize {
        if self.length < self.kernel {
            0
        } else {
            (self.length - self.kernel) / self.stride + 1
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Create one per forward pass and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        shape2(&self.nodes[v.0].value)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NeuralError {
        NeuralError::ShapeMismatch {
            op,
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    /// Leaf that receives gradients.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let t = as_matrix(t);
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = as_matrix(t);
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, trainable: bool) -> Var {
        if trainable {
            self.variable(t)
        } else {
            self.constant(t)
        }
    }

    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NeuralError> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let k1 = if ta { ar } else { ac };
        let k2 = if tb { bc } else { br };
        if k1 != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let v = Tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value, ta, tb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul { a, b, ta, tb }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.matmul_t(a, b, false, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NeuralError> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape()
            && self.dims(a) != self.dims(b)
        {
            return Err(self.mismatch(op, a, b));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NeuralError> {
        self.same_shape(name, a, b)?;
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    fn row_op(&self, name: &'static str, a: Var, row: Var) -> Result<(), NeuralError> {
        let (_, c) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(self.mismatch(name, a, row));
        }
        Ok(())
    }

    /// `[m,n] + [1,n]`, the row broadcast over all rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NeuralError> {
        self.row_op("add_row", a, row)?;
        let (m, n) = self.dims(a);
        let av = &self.nodes[a.0].value;
        let rv = self.nodes[row.0].value.data();
        let mut out = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rv[j];
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddRow(a, row), rg))
    }

    /// `[m,n] * [1,n]` elementwise with row broadcast.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NeuralError> {
        self.row_op("mul_row", a, row)?;
        let (m, n) = self.dims(a);
        let av = &self.nodes[a.0].value;
        let rv = self.nodes[row.0].value.data();
        let mut out = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= rv[j];
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MulRow(a, row), rg))
    }

    /// Column sums: `[m,n] -> [1,n]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let d = self.nodes[a.0].value.data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += d[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(1, n, out), Op::SumRows(a), rg)
    }

    /// `[1,n] -> [m,n]`.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var, NeuralError> {
        let (r, n) = self.dims(a);
        if r != 1 {
            return Err(NeuralError::ShapeMismatch {
                op: "broadcast_rows",
                lhs: vec![r, n],
                rhs: vec![m, n],
            });
        }
        let d = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(d);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::BroadcastRows(a), rg))
    }

    /// Row sums: `[m,n] -> [m,1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let d = self.nodes[a.0].value.data();
        let out: Vec<f64> = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, 1, out), Op::SumCols(a), rg)
    }

    /// `[m,1] -> [m,n]`.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var, NeuralError> {
        let (m, c) = self.dims(a);
        if c != 1 {
            return Err(NeuralError::ShapeMismatch {
                op: "broadcast_cols",
                lhs: vec![m, c],
                rhs: vec![m, n],
            });
        }
        let d = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * n);
        for &x in d.iter().take(m) {
            out.extend(std::iter::repeat_n(x, n));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::BroadcastCols(a), rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let c = self.sum_cols(a);
        self.sum_rows(c)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(v, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.nodes[a.0].value.map(f);
        let rg = self.rg(&[a]);
        self.push(v, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// `1/x`, with `0` mapped to `0`.
    pub fn safe_recip(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x == 0.0 { 0.0 } else { 1.0 / x }, Op::SafeRecip(a))
    }

    /// Per-row Euclidean norm `[m,n] -> [m,1]`. The gradient at a zero row is zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let d = self.nodes[a.0].value.data();
        let out: Vec<f64> = (0..m)
            .map(|i| d[i * n..(i + 1) * n].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, 1, out), Op::RowNorm(a), rg)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { a, lo, hi })
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let m = self.dims(parts[0]).0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(self.mismatch("concat", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row_slice(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(m, total, out), Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start+len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NeuralError> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(NeuralError::ShapeMismatch {
                op: "slice",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let d = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&d[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::matrix(m, len, out), Op::Slice { a, start }, rg))
    }

    fn pad(&mut self, a: Var, start: usize, total: usize) -> Var {
        let (m, n) = self.dims(a);
        let d = self.nodes[a.0].value.data();
        let mut out = vec![0.0; m * total];
        for i in 0..m {
            out[i * total + start..i * total + start + n].copy_from_slice(&d[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, total, out), Op::Pad { a, start }, rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NeuralError> {
        let (m, n) = self.dims(a);
        if m * n != rows * cols {
            return Err(NeuralError::ShapeMismatch {
                op: "reshape",
                lhs: vec![m, n],
                rhs: vec![rows, cols],
            });
        }
        let v = Tensor::matrix(rows, cols, self.nodes[a.0].value.data().to_vec());
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Unfold a channels-last 1-D signal into `[batch*out_len, kernel*channels]` patches.
    pub fn im2col(&mut self, a: Var, geom: ConvGeom) -> Result<Var, NeuralError> {
        let (b, n) = self.dims(a);
        let lout = geom.out_length();
        if n != geom.length * geom.channels || lout == 0 {
            return Err(NeuralError::ShapeMismatch {
                op: "im2col",
                lhs: vec![b, n],
                rhs: vec![geom.length, geom.channels, geom.kernel],
            });
        }
        let v = im2col_value(self.nodes[a.0].value.data(), b, geom);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Im2Col { a, geom }, rg))
    }

    fn col2im(&mut self, a: Var, geom: ConvGeom) -> Var {
        let (rows, _) = self.dims(a);
        let lout = geom.out_length();
        let b = rows / lout;
        let v = col2im_value(self.nodes[a.0].value.data(), b, geom);
        let rg = self.rg(&[a]);
        self.push(v, Op::Col2Im { a, geom }, rg)
    }

    /// Gradients of the scalar `y` (shape `[1,1]`) with respect to `wrt`.
    ///
    /// The returned nodes live on this tape and are differentiable.
    /// Entries are `None` when `y` does not depend on that leaf.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>, NeuralError> {
        if self.nodes[y.0].value.len() != 1 {
            return Err(NeuralError::NotScalar(self.nodes[y.0].value.shape().to_vec()));
        }
        let n = y.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        let seed = self.constant(Tensor::scalar(1.0));
        grads[y.0] = Some(seed);
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let out = Var(i);
            let contribs: Vec<(Var, Var)> = self.vjp(&op, out, g)?;
            for (inp, gi) in contribs {
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                grads[inp.0] = Some(match grads[inp.0] {
                    None => gi,
                    Some(prev) => self.add(prev, gi)?,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| if w.0 < n { grads[w.0] } else { None })
            .collect())
    }

    fn mask(&mut self, a: Var, f: impl Fn(f64) -> bool) -> Var {
        let m = self.nodes[a.0].value.map(|x| if f(x) { 1.0 } else { 0.0 });
        self.constant(m)
    }

    fn vjp(&mut self, op: &Op, out: Var, g: Var) -> Result<Vec<(Var, Var)>, NeuralError> {
        Ok(match *op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, ta, tb } => {
                let mut v = Vec::with_capacity(2);
                if self.requires_grad(a) {
                    let ga = if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    };
                    v.push((a, ga));
                }
                if self.requires_grad(b) {
                    let gb = if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    };
                    v.push((b, gb));
                }
                v
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.scale(g, -1.0);
                vec![(a, g), (b, nb)]
            }
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.requires_grad(a) {
                    let ga = self.mul(g, b)?;
                    v.push((a, ga));
                }
                if self.requires_grad(b) {
                    let gb = self.mul(g, a)?;
                    v.push((b, gb));
                }
                v
            }
            Op::AddRow(a, r) => {
                let gr = self.sum_rows(g);
                vec![(a, g), (r, gr)]
            }
            Op::MulRow(a, r) => {
                let mut v = Vec::with_capacity(2);
                if self.requires_grad(a) {
                    let ga = self.mul_row(g, r)?;
                    v.push((a, ga));
                }
                if self.requires_grad(r) {
                    let p = self.mul(g, a)?;
                    let gr = self.sum_rows(p);
                    v.push((r, gr));
                }
                v
            }
            Op::SumRows(a) => {
                let m = self.dims(a).0;
                vec![(a, self.broadcast_rows(g, m)?)]
            }
            Op::BroadcastRows(a) => vec![(a, self.sum_rows(g))],
            Op::SumCols(a) => {
                let n = self.dims(a).1;
                vec![(a, self.broadcast_cols(g, n)?)]
            }
            Op::BroadcastCols(a) => vec![(a, self.sum_cols(g))],
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::Tanh(a) => {
                let sq = self.mul(out, out)?;
                let neg = self.scale(sq, -1.0);
                let d = self.add_scalar(neg, 1.0);
                vec![(a, self.mul(g, d)?)]
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(out, -1.0);
                let om = self.add_scalar(neg, 1.0);
                let d = self.mul(out, om)?;
                vec![(a, self.mul(g, d)?)]
            }
            Op::Relu(a) => {
                let m = self.mask(a, |x| x > 0.0);
                vec![(a, self.mul(g, m)?)]
            }
            Op::Exp(a) => vec![(a, self.mul(g, out)?)],
            Op::Log(a) => {
                let r = self.safe_recip(a);
                vec![(a, self.mul(g, r)?)]
            }
            Op::SafeRecip(a) => {
                let sq = self.mul(out, out)?;
                let d = self.scale(sq, -1.0);
                vec![(a, self.mul(g, d)?)]
            }
            Op::RowNorm(a) => {
                let n = self.dims(a).1;
                let r = self.safe_recip(out);
                let gr = self.mul(g, r)?;
                let b = self.broadcast_cols(gr, n)?;
                vec![(a, self.mul(b, a)?)]
            }
            Op::Concat(ref parts) => {
                let mut v = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let len = self.dims(p).1;
                    if self.requires_grad(p) {
                        let s = self.slice(g, start, len)?;
                        v.push((p, s));
                    }
                    start += len;
                }
                v
            }
            Op::Slice { a, start } => {
                let total = self.dims(a).1;
                vec![(a, self.pad(g, start, total))]
            }
            Op::Pad { a, start } => {
                let len = self.dims(a).1;
                vec![(a, self.slice(g, start, len)?)]
            }
            Op::Reshape(a) => {
                let (m, n) = self.dims(a);
                vec![(a, self.reshape(g, m, n)?)]
            }
            Op::Im2Col { a, geom } => vec![(a, self.col2im(g, geom))],
            Op::Col2Im { a, geom } => vec![(a, self.im2col(g, geom)?)],
            Op::Clamp { a, lo, hi } => {
                let m = self.mask(a, |x| x > lo && x < hi);
                vec![(a, self.mul(g, m)?)]
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.nodes[a.0].value.clone(), self.nodes[b.0].value.clone());
                let ma = self.constant(av.zip(&bv, |x, y| if x <= y { 1.0 } else { 0.0 }));
                let mb = self.constant(av.zip(&bv, |x, y| if x <= y { 0.0 } else { 1.0 }));
                let ga = self.mul(g, ma)?;
                let gb = self.mul(g, mb)?;
                vec![(a, ga), (b, gb)]
            }
        })
    }
}

fn as_matrix(t: Tensor) -> Tensor {
    if t.shape().len() == 2 {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        Tensor::matrix(r, c, t.into_data())
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

fn im2col_value(d: &[f64], batch: usize, g: ConvGeom) -> Tensor {
    let lout = g.out_length();
    let width = g.kernel * g.channels;
    let inrow = g.length * g.channels;
    let mut out = vec![0.0; batch * lout * width];
    for b in 0..batch {
        for l in 0..lout {
            let dst = (b * lout + l) * width;
            let src = b * inrow + l * g.stride * g.channels;
            out[dst..dst + width].copy_from_slice(&d[src..src + width]);
        }
    }
    Tensor::matrix(batch * lout, width, out)
}

fn col2im_value(d: &[f64], batch: usize, g: ConvGeom) -> Tensor {
    let lout = g.out_length();
    let width = g.kernel * g.channels;
    let inrow = g.length * g.channels;
    let mut out = vec![0.0; batch * inrow];
    for b in 0..batch {
        for l in 0..lout {
            let src = (b * lout + l) * width;
            let dst = b * inrow + l * g.stride * g.channels;
            for k in 0..width {
                out[dst + k] += d[src + k];
            }
        }
    }
    Tensor::matrix(batch, inrow, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let y = g.sum_all(sq);
        let gx = g.grad(y, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(gx).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(vec![1.0, -3.0]));
        let c = g.constant(Tensor::scalar(7.0));
        let z = g.scale(x, 0.0);
        let s = g.sum_all(z);
        let y = g.add(s, c).unwrap();
        let gx = g.grad(y, &[x]).unwrap()[0].unwrap();
        assert!(g.value(gx).data().iter().all(|&v| v == 0.0));
        // a tape that never touches x yields no gradient at all
        let mut g2 = Graph::new();
        let x2 = g2.variable(Tensor::row(vec![1.0]));
        let c2 = g2.constant(Tensor::scalar(3.0));
        assert_eq!(g2.grad(c2, &[x2]).unwrap()[0], None);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.variable(Tensor::matrix(2, 3, vec![0.0; 6]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            NeuralError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::row(vec![2.0]));
        let x = g.variable(Tensor::row(vec![3.0]));
        let y = g.mul(w, x).unwrap();
        let y = g.sum_all(y);
        let gr = g.grad(y, &[w, x]).unwrap();
        assert_eq!(gr[0], None);
        assert_eq!(g.value(gr[1].unwrap()).item(), 2.0);
    }

    #[test]
    fn row_norm_gradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(vec![0.0, 0.0]));
        let n = g.row_norm(x);
        let y = g.sum_all(n);
        assert_eq!(g.value(y).item(), 0.0);
        let gx = g.grad(y, &[x]).unwrap()[0].unwrap();
        assert_eq!(g.value(gx).data(), &[0.0, 0.0]);
    }

    #[test]
    fn im2col_layout() {
        // length 4, 1 channel, kernel 2, stride 2
        let geom = ConvGeom {
            length: 4,
            channels: 1,
            kernel: 2,
            stride: 2,
        };
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let c = g.im2col(x, geom).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
