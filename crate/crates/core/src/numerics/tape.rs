//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every operation evaluates eagerly and appends a node holding its value and
//! the indices of its parents. Parents always precede children, so a single
//! reverse sweep over the node list visits nodes in a valid order for the
//! chain rule.

use crate::error::{Error, Result};

use super::matrix::{Activation, Elementwise, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable input (model parameter or probe).
    Leaf,
    /// Input that never needs a gradient.
    Constant,
    MatMul(Var, Var),
    Binary(Elementwise, Var, Var),
    /// Matrix plus a column vector broadcast over its columns.
    AddColumn(Var, Var),
    Activate(Activation, Var),
    /// Rows of the first operand followed by rows of the second.
    ConcatRows(Var, Var),
    Reshape(Var),
    Transpose(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Square(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`; zeros when `var` does not
    /// influence the root.
    pub fn get(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving nothing behind.
    pub fn take(&mut self, var: Var) -> Matrix {
        self.grads[var.0].take().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.0];
            Matrix::zeros(r, c)
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: Elementwise) -> Result<Var> {
        let value = self.value(a).elementwise(self.value(b), kind)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Mul)
    }

    /// `m + bias·1ᵀ` for an `r x c` matrix `m` and `r x 1` column `bias`.
    pub fn add_column(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (mv, bv) = (self.value(m), self.value(bias));
        if bv.cols() != 1 || bv.rows() != mv.rows() {
            return Err(Error::ShapeMismatch {
                op: "add_column",
                left: mv.shape(),
                right: bv.shape(),
            });
        }
        let cols = mv.cols();
        let mut value = mv.clone();
        for (i, row) in value.as_mut_slice().chunks_mut(cols.max(1)).enumerate() {
            let b = bv.as_slice()[i];
            row.iter_mut().for_each(|x| *x += b);
        }
        let ng = self.needs(m) || self.needs(bias);
        Ok(self.push(value, Op::AddColumn(m, bias), ng))
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).activation(kind);
        let ng = self.needs(x);
        self.push(value, Op::Activate(kind, x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Relu)
    }

    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Result<Var> {
        let (t, b) = (self.value(top), self.value(bottom));
        if t.cols() != b.cols() {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                left: t.shape(),
                right: b.shape(),
            });
        }
        let mut data = Vec::with_capacity(t.len() + b.len());
        data.extend_from_slice(t.as_slice());
        data.extend_from_slice(b.as_slice());
        let value = Matrix::from_vec(t.rows() + b.rows(), t.cols(), data)?;
        let ng = self.needs(top) || self.needs(bottom);
        Ok(self.push(value, Op::ConcatRows(top, bottom), ng))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(x).clone().reshape(rows, cols)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(value, Op::Transpose(x), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let ng = self.needs(x);
        self.push(value, Op::Square(x), ng)
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        let ng = self.needs(x);
        self.push(value, Op::Sum(x), ng)
    }

    /// Mean of all entries as a `1 x 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Matrix::filled(1, 1, v.sum() / v.len() as f64);
        let ng = self.needs(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// Reverse sweep from a scalar `root`, returning d(root)/d(node) for every
    /// node that requires a gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::NonScalarRoot(rv.rows(), rv.cols()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let upstream = match (&node.op, &grads[idx]) {
                (Op::Leaf | Op::Constant, _) | (_, None) => continue,
                (_, Some(g)) => g.clone(),
            };
            self.propagate(node, &upstream, &mut grads)?;
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut accumulate = |v: Var, contribution: Matrix| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot => *slot = Some(contribution),
            }
        };

        match node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    accumulate(a, g.matmul_nt(self.value(b))?);
                }
                if self.needs(b) {
                    accumulate(b, self.value(a).matmul_tn(g)?);
                }
            }
            Op::Binary(kind, a, b) => match kind {
                Elementwise::Add => {
                    accumulate(a, g.clone());
                    accumulate(b, g.clone());
                }
                Elementwise::Sub => {
                    accumulate(a, g.clone());
                    accumulate(b, g.negate());
                }
                Elementwise::Mul => {
                    if self.needs(a) {
                        accumulate(a, g.mul(self.value(b))?);
                    }
                    if self.needs(b) {
                        accumulate(b, g.mul(self.value(a))?);
                    }
                }
            },
            Op::AddColumn(m, bias) => {
                accumulate(m, g.clone());
                if self.needs(bias) {
                    let cols = g.cols();
                    let sums: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    debug_assert_eq!(sums.len() * cols, g.len());
                    accumulate(bias, Matrix::column(&sums));
                }
            }
            Op::Activate(kind, x) => {
                let input = self.value(x);
                let out = &node.value;
                let data: Vec<f64> = g
                    .as_slice()
                    .iter()
                    .zip(input.as_slice().iter().zip(out.as_slice()))
                    .map(|(&gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                accumulate(x, Matrix::from_vec(g.rows(), g.cols(), data)?);
            }
            Op::ConcatRows(top, bottom) => {
                let split = self.value(top).len();
                let (t, b) = g.as_slice().split_at(split);
                let (tr, br) = (self.value(top).rows(), self.value(bottom).rows());
                accumulate(top, Matrix::from_vec(tr, g.cols(), t.to_vec())?);
                accumulate(bottom, Matrix::from_vec(br, g.cols(), b.to_vec())?);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(x).shape();
                accumulate(x, g.clone().reshape(r, c)?);
            }
            Op::Transpose(x) => accumulate(x, g.transpose()),
            Op::Scale(x, s) => accumulate(x, g.scale(s)),
            Op::Square(x) => accumulate(x, g.mul(&self.value(x).scale(2.0))?),
            Op::Sum(x) => {
                let (r, c) = self.value(x).shape();
                accumulate(x, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(x) => {
                let v = self.value(x);
                let (r, c) = v.shape();
                accumulate(x, Matrix::filled(r, c, g.get(0, 0) / v.len() as f64));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    /// Central finite differences of `f` at `x`.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for k in 0..x.len() {
            let mut plus = x.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = x.clone();
            minus.as_mut_slice()[k] -= h;
            out.as_mut_slice()[k] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(analytic: &Matrix, numeric: &Matrix, rel: f64) {
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            let scale = a.abs().max(n.abs());
            if scale < 1e-6 {
                assert!((a - n).abs() < 1e-8, "analytic {a} numeric {n}");
            } else {
                assert!((a - n).abs() / scale < rel, "analytic {a} numeric {n}");
            }
        }
    }

    /// Builds `sum(op(x, y) ⊙ probe)` so every output entry carries a distinct weight.
    fn check_binary(
        x: Matrix,
        y: Matrix,
        op: fn(&mut Tape, Var, Var) -> Result<Var>,
        probe: Matrix,
    ) {
        let eval = |x: &Matrix, y: &Matrix| -> (f64, Matrix, Matrix) {
            let mut t = Tape::new();
            let (xv, yv) = (t.leaf(x.clone()), t.leaf(y.clone()));
            let out = op(&mut t, xv, yv).unwrap();
            let p = t.constant(probe.clone());
            let w = t.mul(out, p).unwrap();
            let s = t.sum(w);
            let mut g = t.backward(s).unwrap();
            (t.value(s).get(0, 0), g.take(xv), g.take(yv))
        };
        let (_, gx, gy) = eval(&x, &y);
        let nx = numeric_grad(&x, &|xp| eval(xp, &y).0);
        let ny = numeric_grad(&y, &|yp| eval(&x, yp).0);
        assert_close(&gx, &nx, 1e-6);
        assert_close(&gy, &ny, 1e-6);
    }

    fn check_unary(x: Matrix, op: fn(&mut Tape, Var) -> Var, probe: Matrix) {
        let eval = |x: &Matrix| -> (f64, Matrix) {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let out = op(&mut t, xv);
            let p = t.constant(probe.clone());
            let w = t.mul(out, p).unwrap();
            let s = t.sum(w);
            let mut g = t.backward(s).unwrap();
            (t.value(s).get(0, 0), g.take(xv))
        };
        let (_, gx) = eval(&x);
        let nx = numeric_grad(&x, &|xp| eval(xp).0);
        assert_close(&gx, &nx, 1e-6);
    }

    #[test]
    fn square_of_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 1, 3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).get(0, 0), 6.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::NonScalarRoot(2, 2))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(2, 3, 1.0));
        let unused = t.leaf(Matrix::filled(4, 1, 1.0));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused), Matrix::zeros(4, 1));
        assert_eq!(g.get(x), Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn sigmoid_matmul_matches_finite_differences() {
        let mut rng = Rng::new(1);
        let w = rng.uniform_matrix(4, 4, -1.0, 1.0);
        let z = rng.uniform_matrix(4, 1, -1.0, 1.0);
        let f = |w: &Matrix| -> (f64, Matrix) {
            let mut t = Tape::new();
            let wv = t.leaf(w.clone());
            let zv = t.constant(z.clone());
            let p = t.matmul(wv, zv).unwrap();
            let s = t.sigmoid(p);
            let out = t.sum(s);
            let g = t.backward(out).unwrap();
            (t.value(out).get(0, 0), g.get(wv))
        };
        let (_, analytic) = f(&w);
        let numeric = numeric_grad(&w, &|wp| f(wp).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = Rng::new(2);
        let mut m = |r, c| rng.uniform_matrix(r, c, -1.0, 1.0);
        check_binary(m(3, 4), m(4, 2), |t, a, b| t.matmul(a, b), m(3, 2));
        check_binary(m(3, 3), m(3, 3), |t, a, b| t.add(a, b), m(3, 3));
        check_binary(m(3, 3), m(3, 3), |t, a, b| t.sub(a, b), m(3, 3));
        check_binary(m(3, 3), m(3, 3), |t, a, b| t.mul(a, b), m(3, 3));
        check_binary(m(3, 4), m(3, 1), |t, a, b| t.add_column(a, b), m(3, 4));
        check_binary(m(2, 3), m(4, 3), |t, a, b| t.concat_rows(a, b), m(6, 3));
        check_unary(m(3, 4), |t, x| t.sigmoid(x), m(3, 4));
        check_unary(m(3, 4), |t, x| t.tanh(x), m(3, 4));
        check_unary(m(3, 4), |t, x| t.relu(x), m(3, 4));
        check_unary(m(3, 4), |t, x| t.transpose(x), m(4, 3));
        check_unary(m(3, 4), |t, x| t.reshape(x, 2, 6).unwrap(), m(2, 6));
        check_unary(m(3, 4), |t, x| t.scale(x, -2.5), m(3, 4));
        check_unary(m(3, 4), |t, x| t.square(x), m(3, 4));
        check_unary(m(3, 4), |t, x| t.mean(x), m(1, 1));
        check_unary(m(3, 4), |t, x| t.sum(x), m(1, 1));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = sum(x ⊙ x + x) => df/dx = 2x + 1
        let x0 = Matrix::from_rows(&[[0.5, -1.0], [2.0, 3.0]]);
        let mut t = Tape::new();
        let x = t.leaf(x0.clone());
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), x0.map(|v| 2.0 * v + 1.0));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let x = t.leaf(Matrix::filled(2, 2, 2.0));
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(c), Matrix::zeros(2, 2));
        assert_eq!(g.get(x), Matrix::filled(2, 2, 1.0));
    }
}
