//! Matrix-granular reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value. `backward`
//! walks the nodes in exact reverse order of recording and accumulates
//! adjoints into the parents that require a gradient. A tape can be
//! differentiated once; call [`Tape::reset`] to reuse the allocation.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::matrix::{Matrix, SparseMatrix};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op<F> {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, F),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Abs(Var),
    SpMM(Arc<SparseMatrix<F>>, Var),
    RowL2Normalize(Var),
    Concat(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Hsic { r: Var, weight: Matrix<F>, kernel: Matrix<F>, sigma: F },
    StraightThrough { p: Var, dsoft: Vec<F> },
}

struct Node<F> {
    value: Matrix<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Rows whose L2 norm falls below this are left unnormalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Option<Matrix<F>>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: None }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads = None;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<F>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<F>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Matrix<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Input, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Matrix<F>, op: Op<F>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("node {} produced NaN/Inf", self.nodes.len())));
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds a 1 x d row to every row of an n x d matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape(format!("bias {:?} for input {:?}", b.shape(), x.shape())));
        }
        let mut v = x.clone();
        for r in 0..v.rows() {
            for (o, &bv) in v.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(a, bias), &[a, bias])
    }

    /// Multiplies row i of an n x d matrix by entry i of an n x 1 column.
    pub fn scale_rows(&mut self, a: Var, c: Var) -> Result<Var> {
        let (x, s) = (self.value(a), self.value(c));
        if s.cols() != 1 || s.rows() != x.rows() {
            return Err(Error::shape(format!("row scale {:?} for {:?}", s.shape(), x.shape())));
        }
        let mut v = x.clone();
        for r in 0..v.rows() {
            let k = s.get(r, 0);
            v.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        self.push(v, Op::ScaleRows(a, c), &[a, c])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: F, shift: F) -> Result<Var> {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        self.affine(a, c, F::zero())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(F::zero()));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(F::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(F::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    /// Fixed sparse operator applied on the left.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix<F>>, a: Var) -> Result<Var> {
        let v = s.matmul(self.value(a))?;
        self.push(v, Op::SpMM(Arc::clone(s), a), &[a])
    }

    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let thr = F::lit(DEGENERATE_NORM);
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let norm = row.iter().map(|&x| x * x).sum::<F>().sqrt();
            if norm >= thr {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        self.push(v, Op::RowL2Normalize(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hstack(&mats)?;
        self.push(v, Op::Concat(parts.to_vec()), parts)
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape(format!("row {bad} out of {}", x.rows())));
        }
        let v = x.select_rows(idx);
        self.push(v, Op::SelectRows(a, idx.to_vec()), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::invalid("mean of an empty matrix"));
        }
        let v = Matrix::scalar(x.sum() / F::from_usize(x.len()).unwrap());
        self.push(v, Op::Mean(a), &[a])
    }

    /// Fused empirical HSIC between the rows of `r` and a fixed label vector.
    ///
    /// `weight` is the doubly centred label kernel divided by m^2, so the
    /// statistic equals `<K_r, weight>`. The forward value is evaluated as
    /// `<H K_r H, H K_t H> / m^2`, which is exactly zero when either kernel
    /// is constant.
    pub(crate) fn hsic_node(
        &mut self,
        r: Var,
        weight: Matrix<F>,
        kernel: Matrix<F>,
        sigma: F,
        value: F,
    ) -> Result<Var> {
        self.push(Matrix::scalar(value), Op::Hsic { r, weight, kernel, sigma }, &[r])
    }

    /// Node whose forward value is supplied but whose local derivative with
    /// respect to the n x 1 input `p` is `dsoft` (straight-through estimator).
    pub(crate) fn straight_through(&mut self, p: Var, forward: Matrix<F>, dsoft: Vec<F>) -> Result<Var> {
        if forward.shape() != self.value(p).shape() || dsoft.len() != forward.len() {
            return Err(Error::shape("straight-through forward/derivative size"));
        }
        self.push(forward, Op::StraightThrough { p, dsoft }, &[p])
    }

    /// Reverse sweep from a 1x1 loss node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Tape("backward called twice without reset".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Tape(format!("loss must be 1x1, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Matrix<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(F::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix<F>> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Matrix<F>, grads: &mut [Option<Matrix<F>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul_nt(self.value(*b))?);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.scale(-F::one()));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.hadamard(self.value(*b))?);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.hadamard(self.value(*a))?);
                }
            }
            Op::AddRow(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::ScaleRows(a, c) => {
                let (x, s) = (self.value(*a), self.value(*c));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let k = s.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|o| *o *= k);
                    }
                    accumulate(grads, *a, ga);
                }
                if self.needs(*c) {
                    let gc: Vec<F> =
                        (0..x.rows()).map(|r| x.row(r).iter().zip(g.row(r)).map(|(&xv, &gv)| xv * gv).sum()).collect();
                    accumulate(grads, *c, Matrix::column(&gc));
                }
            }
            Op::Affine(a, scale) => accumulate(grads, *a, g.scale(*scale)),
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, g.zip_with(x, |gv, xv| if xv > F::zero() { gv } else { F::zero() })?);
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_with(out, |gv, y| gv * (F::one() - y * y))?),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_with(out, |gv, y| gv * y * (F::one() - y))?),
            Op::Square(a) => {
                let two = F::lit(2.0);
                accumulate(grads, *a, g.zip_with(self.value(*a), |gv, x| two * x * gv)?);
            }
            Op::Abs(a) => accumulate(grads, *a, g.zip_with(self.value(*a), |gv, x| gv * signum0(x))?),
            Op::SpMM(s, a) => accumulate(grads, *a, s.matmul_t(g)?),
            Op::RowL2Normalize(a) => {
                let x = self.value(*a);
                let thr = F::lit(DEGENERATE_NORM);
                let mut ga = g.clone();
                for r in 0..x.rows() {
                    let xr = x.row(r);
                    let norm = xr.iter().map(|&v| v * v).sum::<F>().sqrt();
                    if norm < thr {
                        continue;
                    }
                    // d(x/|x|) = (I - y y^T) / |x|, y = x/|x|
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: F = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr).zip(y) {
                        *o = (gv - dot * yv) / norm;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        accumulate(grads, *p, gp);
                    }
                    off += w;
                }
            }
            Op::SelectRows(a, idx) => {
                let x = self.value(*a);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &gv) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), g.item()));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let k = g.item() / F::from_usize(x.len()).unwrap();
                accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), k));
            }
            Op::Hsic { r, weight, kernel, sigma } => {
                let x = self.value(*r);
                let (m, d) = x.shape();
                let coef = -F::lit(2.0) * g.item() / (*sigma * *sigma);
                let mut gr = Matrix::zeros(m, d);
                for i in 0..m {
                    let xi = x.row(i);
                    let mut acc = vec![F::zero(); d];
                    for j in 0..m {
                        if i == j {
                            continue;
                        }
                        let w = weight.get(i, j) * kernel.get(i, j);
                        if w == F::zero() {
                            continue;
                        }
                        for ((a, &p), &q) in acc.iter_mut().zip(xi).zip(x.row(j)) {
                            *a += w * (p - q);
                        }
                    }
                    for (o, a) in gr.row_mut(i).iter_mut().zip(acc) {
                        *o = coef * a;
                    }
                }
                accumulate(grads, *r, gr);
            }
            Op::StraightThrough { p, dsoft } => {
                let gp: Vec<F> = g.data().iter().zip(dsoft).map(|(&a, &b)| a * b).collect();
                let x = self.value(*p);
                accumulate(grads, *p, Matrix::from_vec(x.rows(), x.cols(), gp)?);
            }
        }
        Ok(())
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Matrix<F>>], v: Var, g: Matrix<F>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn signum0<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else if x < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}
