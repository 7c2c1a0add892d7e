//! Minimal reverse-mode tape over matrix-valued nodes.
//!
//! Building a graph evaluates it eagerly and records each node. The op set
//! is fixed: matmul, transpose, add-bias (row broadcast), add, scale,
//! elementwise map, row-softmax, mean cross-entropy (from probabilities or
//! fused with the softmax), and mean-pool over rows.
//!
//! ```
//! use bpu_core::linalg::Matrix;
//! use bpu_core::nnet::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
//! let x = tape.constant(Matrix::row_vector(&[2.0, -1.0]));
//! let z = tape.matmul(x, w).unwrap();
//! let p = tape.row_softmax(z).unwrap();
//! let loss = tape.cross_entropy(p, &[0]).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().shape(), (2, 2));
//! ```

use super::ElementMap;
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;

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
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Map(Var, ElementMap),
    RowSoftmax(Var),
    CrossEntropy(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    MeanPool(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    param: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node reached from the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of `shape` when `v` does not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
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

    fn push(&mut self, value: Matrix, op: Op, param: bool) -> Var {
        self.nodes.push(Node { value, op, param });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn is_param(&self, v: Var) -> bool {
        self.nodes[v.0].param
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), false))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), false)
    }

    /// Adds the `1 x m` row `bias` to every row of the `n x m` input.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out[(i, j)] += bv[(0, j)];
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), false))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), false)
    }

    pub fn map(&mut self, a: Var, f: ElementMap) -> Var {
        let out = self.value(a).map(|v| f.apply(v));
        self.push(out, Op::Map(a, f), false)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let p = super::softmax(x.row(i));
            for (j, v) in p.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        if !out.is_finite() {
            return Err(Error::Numeric {
                context: "row softmax",
                layer: 0,
            });
        }
        Ok(self.push(out, Op::RowSoftmax(a), false))
    }

    /// Mean over rows of `−ln P[i, labels[i]]`, as a `1 x 1` node.
    pub fn cross_entropy(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(p);
        if labels.len() != pv.rows() {
            return contract(format!(
                "{} labels for {} probability rows",
                labels.len(),
                pv.rows()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= pv.cols()) {
            return contract(format!("label {bad} out of range for {} classes", pv.cols()));
        }
        let n = labels.len() as f64;
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| super::cross_entropy(pv.row(i), y))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy(p, labels.to_vec()),
            false,
        ))
    }

    /// Mean cross-entropy taken directly from logits, one row per example.
    /// Stays finite when the true-class probability underflows.
    pub fn softmax_cross_entropy(&mut self, z: Var, labels: &[usize]) -> Result<Var> {
        let zv = self.value(z);
        if labels.len() != zv.rows() || labels.is_empty() {
            return contract(format!("{} labels for {} logit rows", labels.len(), zv.rows()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= zv.cols()) {
            return contract(format!("label {bad} out of range for {} classes", zv.cols()));
        }
        let n = labels.len() as f64;
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| super::loss_from_logits(zv.row(i), y))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy(z, labels.to_vec()),
            false,
        ))
    }

    /// Column means: `n x m` → `1 x m`.
    pub fn mean_pool(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows() as f64;
        let mut out = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                out[(0, j)] += x[(i, j)] / n;
            }
        }
        self.push(out, Op::MeanPool(a), false)
    }

    /// Reverse sweep from a scalar (`1 x 1`) node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return contract("backward called before any forward computation was recorded");
        }
        if self.value(loss).shape() != (1, 1) {
            return contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = upstream.matmul_t(self.value(*b))?;
                    let db = self.value(*a).transpose().matmul(&upstream)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, upstream.transpose())?,
                Op::AddBias(x, bias) => {
                    let mut db = Matrix::zeros(1, upstream.cols());
                    for i in 0..upstream.rows() {
                        for j in 0..upstream.cols() {
                            db[(0, j)] += upstream[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *x, upstream)?;
                    accumulate(&mut grads, *bias, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, upstream.clone())?;
                    accumulate(&mut grads, *b, upstream)?;
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, upstream.scale(*c))?,
                Op::Map(a, f) => {
                    let x = self.value(*a);
                    let mut d = upstream;
                    for (g, &xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        *g *= f.derivative(xv);
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::RowSoftmax(a) => {
                    let p = &node.value;
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for i in 0..p.rows() {
                        let inner: f64 = (0..p.cols()).map(|k| upstream[(i, k)] * p[(i, k)]).sum();
                        for j in 0..p.cols() {
                            d[(i, j)] = p[(i, j)] * (upstream[(i, j)] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::CrossEntropy(p, labels) => {
                    let pv = self.value(*p);
                    let n = labels.len() as f64;
                    let up = upstream[(0, 0)];
                    let mut d = Matrix::zeros(pv.rows(), pv.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        d[(i, y)] = -up / (n * pv[(i, y)]);
                    }
                    accumulate(&mut grads, *p, d)?;
                }
                Op::SoftmaxCrossEntropy(z, labels) => {
                    let zv = self.value(*z);
                    let scale = upstream[(0, 0)] / labels.len() as f64;
                    let mut d = Matrix::zeros(zv.rows(), zv.cols());
                    for (i, &y) in labels.iter().enumerate() {
                        let p = super::softmax(zv.row(i));
                        for (j, pj) in super::logit_gradient(&p, y).into_iter().enumerate() {
                            d[(i, j)] = scale * pj;
                        }
                    }
                    accumulate(&mut grads, *z, d)?;
                }
                Op::MeanPool(a) => {
                    let x = self.value(*a);
                    let n = x.rows() as f64;
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            d[(i, j)] = upstream[(0, j)] / n;
                        }
                    }
                    accumulate(&mut grads, *a, d)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, d: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}
