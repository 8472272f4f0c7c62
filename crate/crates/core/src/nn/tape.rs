//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation in evaluation order. Each node owns its
//! forward value; [`Tape::backward`] seeds the scalar loss with 1 and walks
//! the nodes in reverse, accumulating vector-Jacobian products into the
//! parents. Only nodes created with [`Tape::param`] are reported back.

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    /// `a + bias` with `bias` a `1 x n` row broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Relu(Var),
    /// Row sums, `B x C -> B x 1`.
    RowSum(Var),
    /// `a / s` with `s` a `B x 1` column broadcast over the columns of `a`.
    DivCol(Var, Var),
    SoftmaxRows(Var),
    /// `ln(max(x, eps))`; the gradient is zero where the floor is active.
    LogFloor(Var, f64),
    /// Column means, `B x C -> 1 x C`.
    MeanRows(Var),
    /// Sum of every entry, `-> 1 x 1`.
    SumAll(Var),
    /// Rows `start..start + len` of the parent.
    SliceRows(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the loss with respect to every parameter node, in creation
/// order.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Var>,
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.params.iter().position(|&p| p == v).map(|i| &self.grads[i])
    }

    pub fn into_vec(self) -> Vec<Matrix> {
        self.grads
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Param)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row");
        assert_eq!(av.cols(), bv.cols(), "bias width");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums = av.iter_rows().map(|r| r.iter().sum()).collect();
        let v = Matrix::from_vec(av.rows(), 1, sums);
        self.push(v, Op::RowSum(a))
    }

    pub fn div_col(&mut self, a: Var, s: Var) -> Var {
        let (av, sv) = (self.value(a), self.value(s));
        assert_eq!(sv.shape(), (av.rows(), 1), "divisor must be a column");
        let mut out = av.clone();
        for r in 0..out.rows() {
            let d = sv[(r, 0)];
            out.row_mut(r).iter_mut().for_each(|x| *x /= d);
        }
        self.push(out, Op::DivCol(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_floor(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| x.max(eps).ln());
        self.push(v, Op::LogFloor(a, eps))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.rows().max(1) as f64;
        let mut out = Matrix::zeros(1, av.cols());
        for r in av.iter_rows() {
            for (o, x) in out.as_mut_slice().iter_mut().zip(r) {
                *o += x;
            }
        }
        out.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        self.push(out, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.rows(), "row slice out of range");
        let cols = av.cols();
        let v = Matrix::from_vec(len, cols, av.as_slice()[start * cols..(start + len) * cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    /// Reverse sweep from the scalar `loss`.
    ///
    /// Fails if `loss` is not `1 x 1` or no parameter node is among its
    /// ancestors.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be 1x1, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut reached_param = false;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Constant => {}
                Op::Param => {
                    reached_param = true;
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(b));
                    let gb = self.value(a).t_matmul(&g);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (o, x) in gb.as_mut_slice().iter_mut().zip(r) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, a, g);
                    accumulate(&mut grads, bias, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, b, g.clone());
                    accumulate(&mut grads, a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.map(|x| -x));
                    accumulate(&mut grads, a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(b), |x, y| x * y);
                    let gb = g.zip_map(self.value(a), |x, y| x * y);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, a, g.map(|x| k * x)),
                Op::AddScalar(a) => accumulate(&mut grads, a, g),
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(a), |x, y| 2.0 * x * y);
                    accumulate(&mut grads, a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::RowSum(a) => {
                    let av = self.value(a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let gr = g[(r, 0)];
                        ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::DivCol(a, s) => {
                    let (av, sv) = (self.value(a), self.value(s));
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sv.rows(), 1);
                    for r in 0..av.rows() {
                        let d = sv[(r, 0)];
                        let dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        gs[(r, 0)] = -dot / (d * d);
                        ga.row_mut(r).iter_mut().for_each(|x| *x /= d);
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, s, gs);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                        for ((o, &gx), &p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = p * (gx - dot);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::LogFloor(a, eps) => {
                    let ga = g.zip_map(self.value(a), |x, y| if y > eps { x / y } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::MeanRows(a) => {
                    let av = self.value(a);
                    let n = av.rows().max(1) as f64;
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *o = x / n;
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let cols = av.cols();
                    ga.as_mut_slice()[start * cols..start * cols + g.as_slice().len()]
                        .copy_from_slice(g.as_slice());
                    accumulate(&mut grads, a, ga);
                }
                Op::SumAll(a) => {
                    let av = self.value(a);
                    accumulate(&mut grads, a, Matrix::filled(av.rows(), av.cols(), g[(0, 0)]));
                }
            }
        }

        if !reached_param {
            return Err(Error::Disconnected);
        }
        let mut params = Vec::new();
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) {
                params.push(Var(i));
                out.push(
                    grads
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols())),
                );
            }
        }
        Ok(Gradients { params, grads: out })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_is_disconnected() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(3.0));
        assert!(matches!(t.backward(c), Err(Error::Disconnected)));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut t = Tape::new();
        let p = t.param(Matrix::from_vec(1, 2, vec![1.0, 2.0]));
        let unused = t.param(Matrix::from_vec(2, 2, vec![5.0; 4]));
        let s = t.sum_all(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(p).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(g.get(unused).unwrap().as_slice(), &[0.0; 4]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let theta = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.5, -0.25]);
        let mut t = Tape::new();
        let p = t.param(theta.clone());
        let sq = t.square(p);
        let s = t.sum_all(sq);
        let loss = t.scale(s, 0.5);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap(), &theta);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let p = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(p), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax_rows(&Matrix::from_vec(1, 2, vec![1000.0, 0.0]));
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p[(0, 1)] >= 0.0 && p[(0, 1)] < 1e-300);
    }
}
