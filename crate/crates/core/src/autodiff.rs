//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every value on the tape is a dense matrix. The op set is the minimum
//! needed by the encoders, the projection head and the contrastive losses.
//! A tape is consumed by [`Tape::backward`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, Matrix};

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable (or frozen) matrix with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub grad: Option<Matrix>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix, requires_grad: bool) -> Self {
        Self { value, grad: None, requires_grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Arc<Matrix>),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    PRelu(Var, Var),
    Elu(Var),
    HConcat(Var, Var),
    RowNormalize(Var),
    RowDot(Var, Var),
    Diag(Var),
    RowSum(Var),
    Sum(Var),
    Transpose(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Operation tape. Values are computed eagerly as ops are recorded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    zero_norm_rows: usize,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Rows that had zero norm in a [`Tape::row_normalize`] call; such
    /// rows normalize to zero.
    pub fn zero_norm_rows(&self) -> usize {
        self.zero_norm_rows
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.leaf(t.value.clone(), t.requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a, b), &[a, b]))
    }

    /// Constant sparse matrix times `a`.
    pub fn spmm(&mut self, s: Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let v = s.spmm(self.value(a))?;
        Ok(self.push(v, Op::SpMM(s, a), &[a]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Adds a `1 x c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        if self.value(bias).shape() != (1, c) {
            return Err(Error::dim(format!("add_row: bias {:?} for {r}x{c}", self.value(bias).shape())));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, bb) in v.row_mut(i).iter_mut().zip(&b) {
                *x += bb;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias), &[a, bias]))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Arc<Matrix>) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::dim("mul_const shape mismatch"));
        }
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(v, Op::MulConst(a, c), &[a]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    /// Leaky ReLU with a learned `1 x 1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Result<Var> {
        if self.value(slope).shape() != (1, 1) {
            return Err(Error::dim("prelu slope must be 1x1"));
        }
        let s = self.scalar(slope);
        let v = self.value(a).map(|x| if x > 0.0 { x } else { s * x });
        Ok(self.push(v, Op::PRelu(a, slope), &[a, slope]))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(a), &[a])
    }

    /// Column-wise concatenation `[a ; b]`.
    pub fn hconcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        if ra != rb {
            return Err(Error::dim("hconcat row mismatch"));
        }
        let mut v = Matrix::zeros(ra, ca + cb);
        for i in 0..ra {
            let row = v.row_mut(i);
            row[..ca].copy_from_slice(self.nodes[a.0].value.row(i));
            row[ca..].copy_from_slice(self.nodes[b.0].value.row(i));
        }
        Ok(self.push(v, Op::HConcat(a, b), &[a, b]))
    }

    /// Scales each row to unit L2 norm; zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let mut zeros = 0;
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            } else {
                zeros += 1;
            }
        }
        self.zero_norm_rows += zeros;
        self.push(v, Op::RowNormalize(a), &[a])
    }

    /// Row-wise dot products of equally shaped `a`, `b`; `r x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (r, _) = self.value(a).shape();
        let v = Matrix::from_fn(r, 1, |i, _| {
            crate::linalg::dot(self.nodes[a.0].value.row(i), self.nodes[b.0].value.row(i))
        });
        Ok(self.push(v, Op::RowDot(a, b), &[a, b]))
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        if r != c {
            return Err(Error::dim("diag of non-square matrix"));
        }
        let v = Matrix::from_fn(r, 1, |i, _| self.nodes[a.0].value[(i, i)]);
        Ok(self.push(v, Op::Diag(a), &[a]))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = Matrix::from_fn(m.rows(), 1, |i, _| m.row(i).iter().sum());
        self.push(v, Op::RowSum(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    /// Reverse pass from a `1 x 1` output. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let val = |v: Var| &self.nodes[v.0].value;
            let mut contrib: Vec<(Var, Matrix)> = Vec::with_capacity(2);
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    contrib.push((*a, g.matmul_t(val(*b))?));
                    contrib.push((*b, val(*a).t_matmul(&g)?));
                }
                Op::MatMulT(a, b) => {
                    contrib.push((*a, g.matmul(val(*b))?));
                    contrib.push((*b, g.t_matmul(val(*a))?));
                }
                Op::SpMM(s, a) => contrib.push((*a, s.spmm_t(&g)?)),
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g));
                }
                Op::Sub(a, b) => {
                    contrib.push((*b, g.scale(-1.0)));
                    contrib.push((*a, g));
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    contrib.push((*bias, gb));
                    contrib.push((*a, g));
                }
                Op::MulConst(a, c) => contrib.push((*a, g.zip_map(c, |x, y| x * y))),
                Op::Scale(a, c) => contrib.push((*a, g.scale(*c))),
                Op::Exp(a) => contrib.push((*a, g.zip_map(&node.value, |x, y| x * y))),
                Op::Log(a) => contrib.push((*a, g.zip_map(val(*a), |x, y| x / y))),
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    contrib.push((*a, g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { s * x })));
                }
                Op::PRelu(a, slope) => {
                    let s = val(*slope).data()[0];
                    let av = val(*a);
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(x, y)| if *y > 0.0 { 0.0 } else { x * y })
                        .sum();
                    contrib.push((*slope, Matrix::filled(1, 1, gs)));
                    contrib.push((*a, g.zip_map(av, |x, y| if y > 0.0 { x } else { s * x })));
                }
                Op::Elu(a) => {
                    let out = &node.value;
                    let d = Matrix::from_fn(out.rows(), out.cols(), |i, j| {
                        if val(*a)[(i, j)] > 0.0 {
                            1.0
                        } else {
                            out[(i, j)] + 1.0
                        }
                    });
                    contrib.push((*a, g.zip_map(&d, |x, y| x * y)));
                }
                Op::HConcat(a, b) => {
                    let ca = val(*a).cols();
                    let cb = val(*b).cols();
                    let ga = Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                    let gb = Matrix::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]);
                    contrib.push((*a, ga));
                    contrib.push((*b, gb));
                }
                Op::RowNormalize(a) => {
                    let av = val(*a);
                    let y = &node.value;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let n = crate::linalg::norm(av.row(i));
                        if n == 0.0 {
                            continue;
                        }
                        let yg = crate::linalg::dot(y.row(i), g.row(i));
                        for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                            *o = (g[(i, j)] - y[(i, j)] * yg) / n;
                        }
                    }
                    contrib.push((*a, ga));
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = Matrix::from_fn(av.rows(), av.cols(), |i, j| g[(i, 0)] * bv[(i, j)]);
                    let gb = Matrix::from_fn(av.rows(), av.cols(), |i, j| g[(i, 0)] * av[(i, j)]);
                    contrib.push((*a, ga));
                    contrib.push((*b, gb));
                }
                Op::Diag(a) => {
                    let n = g.rows();
                    let mut ga = Matrix::zeros(n, n);
                    for i in 0..n {
                        ga[(i, i)] = g[(i, 0)];
                    }
                    contrib.push((*a, ga));
                }
                Op::RowSum(a) => {
                    let (r, c) = val(*a).shape();
                    contrib.push((*a, Matrix::from_fn(r, c, |i, _| g[(i, 0)])));
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    contrib.push((*a, Matrix::filled(r, c, g[(0, 0)])));
                }
                Op::Transpose(a) => contrib.push((*a, g.transpose())),
            }
            for (p, gp) in contrib {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&gp),
                    slot @ None => *slot = Some(gp),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the loss with respect to every leaf that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Writes gradients into `tensors`, replacing whatever was there.
    /// Tensors not reached by the loss receive zeros.
    pub fn assign(&self, vars: &[Var], tensors: &mut [&mut Tensor]) {
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            if !t.requires_grad {
                t.grad = None;
                continue;
            }
            let (r, c) = t.shape();
            t.grad = Some(self.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(r, c)));
        }
    }
}
