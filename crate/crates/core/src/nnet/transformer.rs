//! Single-block, single-head attention + feed-forward classifier.
//!
//! ```text
//! S  = X W_Q (X W_K)ᵀ / √d        A = row-softmax(S)
//! H₁ = X + A (X W_V)
//! H₂ = H₁ + σ(H₁ W₁ᵀ) W₂ᵀ         (FFN(x) = W₂ σ(W₁ x) per row)
//! z  = W_c · mean_rows(H₂) + b_c
//! ```
//!
//! Residual connections only, no normalization.

use super::tape::{Tape, Var};
use super::{softmax, Activation};
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{rng_gaussian_matrix, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTransformerParams {
    pub d: usize,
    pub d_ff: usize,
    /// `d x d`, applied as `X W_Q`.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// `d_ff x d`.
    pub w_1: Matrix,
    /// `d x d_ff`.
    pub w_2: Matrix,
    /// `C x d`.
    pub w_c: Matrix,
    pub b_c: Vec<f64>,
    pub activation: Activation,
}

impl ToyTransformerParams {
    pub fn init(
        stream: &mut RngStream,
        d: usize,
        d_ff: usize,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        if d == 0 || d_ff == 0 || num_classes < 2 {
            return contract("transformer needs d, d_ff >= 1 and at least two classes");
        }
        let sd = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            d,
            d_ff,
            w_q: rng_gaussian_matrix(stream, d, d, 0.0, sd(d)),
            w_k: rng_gaussian_matrix(stream, d, d, 0.0, sd(d)),
            w_v: rng_gaussian_matrix(stream, d, d, 0.0, sd(d)),
            w_1: rng_gaussian_matrix(stream, d_ff, d, 0.0, sd(d)),
            w_2: rng_gaussian_matrix(stream, d, d_ff, 0.0, sd(d_ff)),
            w_c: rng_gaussian_matrix(stream, num_classes, d, 0.0, sd(d)),
            b_c: vec![0.0; num_classes],
            activation,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.w_c.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerTrace {
    pub attention: Matrix,
    pub h1: Matrix,
    pub ffn_hidden: Matrix,
    pub h2: Matrix,
    pub pooled: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn transformer_forward(params: &ToyTransformerParams, x: &Matrix) -> Result<(TransformerTrace, Vec<f64>)> {
    if x.rows() == 0 {
        return contract("transformer input needs at least one position");
    }
    if x.cols() != params.d {
        return Err(Error::Shape {
            op: "transformer_forward",
            lhs: (params.d, params.d),
            rhs: x.shape(),
        });
    }
    let sigma = params.activation.as_map();
    let q = x.matmul(&params.w_q)?;
    let k = x.matmul(&params.w_k)?;
    let v = x.matmul(&params.w_v)?;
    let scores = q.matmul_t(&k)?.scale(1.0 / (params.d as f64).sqrt());
    let mut attention = Matrix::zeros(x.rows(), x.rows());
    for i in 0..x.rows() {
        for (j, pij) in softmax(scores.row(i)).into_iter().enumerate() {
            attention[(i, j)] = pij;
        }
    }
    let h1 = x.add(&attention.matmul(&v)?)?;
    let ffn_hidden = h1.matmul_t(&params.w_1)?.map(|t| sigma.apply(t));
    let h2 = h1.add(&ffn_hidden.matmul_t(&params.w_2)?)?;
    let n = h2.rows() as f64;
    let pooled: Vec<f64> = (0..h2.cols())
        .map(|j| (0..h2.rows()).map(|i| h2[(i, j)]).sum::<f64>() / n)
        .collect();
    let mut z = params.w_c.matvec(&pooled)?;
    for (zi, b) in z.iter_mut().zip(&params.b_c) {
        *zi += b;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "transformer logits",
            layer: 1,
        });
    }
    let p = softmax(&z);
    Ok((
        TransformerTrace {
            attention,
            h1,
            ffn_hidden,
            h2,
            pooled,
            z: z.clone(),
            p,
        },
        z,
    ))
}

/// Tape handles for every transformer weight. Each may be a leaf or a
/// derived node (e.g. a frozen base plus an adapter update).
#[derive(Debug, Clone, Copy)]
pub struct TransformerVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_1: Var,
    pub w_2: Var,
    pub w_c: Var,
    /// `1 x C` row.
    pub b_c: Var,
}

impl TransformerVars {
    /// Registers every weight of `params` as a tape parameter.
    pub fn params_on(tape: &mut Tape, params: &ToyTransformerParams) -> Self {
        Self {
            w_q: tape.param(params.w_q.clone()),
            w_k: tape.param(params.w_k.clone()),
            w_v: tape.param(params.w_v.clone()),
            w_1: tape.param(params.w_1.clone()),
            w_2: tape.param(params.w_2.clone()),
            w_c: tape.param(params.w_c.clone()),
            b_c: tape.param(Matrix::row_vector(&params.b_c)),
        }
    }
}

/// Records the forward graph for one sequence; returns the `1 x C` logits.
pub fn transformer_graph(
    tape: &mut Tape,
    vars: &TransformerVars,
    activation: Activation,
    x: &Matrix,
) -> Result<Var> {
    let d = x.cols();
    let xv = tape.constant(x.clone());
    let q = tape.matmul(xv, vars.w_q)?;
    let k = tape.matmul(xv, vars.w_k)?;
    let v = tape.matmul(xv, vars.w_v)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = tape.row_softmax(scores)?;
    let mixed = tape.matmul(attn, v)?;
    let h1 = tape.add(xv, mixed)?;
    let w1t = tape.transpose(vars.w_1);
    let pre = tape.matmul(h1, w1t)?;
    let hidden = tape.map(pre, activation.as_map());
    let w2t = tape.transpose(vars.w_2);
    let ffn = tape.matmul(hidden, w2t)?;
    let h2 = tape.add(h1, ffn)?;
    let pooled = tape.mean_pool(h2);
    let wct = tape.transpose(vars.w_c);
    let logits = tape.matmul(pooled, wct)?;
    tape.add_bias(logits, vars.b_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> ToyTransformerParams {
        let mut s = RngStream::new(seed);
        ToyTransformerParams::init(&mut s, 4, 6, 3, Activation::Tanh).unwrap()
    }

    #[test]
    fn single_position_attention_is_trivial() {
        let mut p = params(1);
        p.w_1 = Matrix::zeros(6, 4);
        let x = Matrix::row_vector(&[0.5, -0.2, 1.0, 0.3]);
        let (trace, _) = transformer_forward(&p, &x).unwrap();
        assert_eq!(trace.attention.as_slice(), &[1.0]);
        let expected = x.add(&x.matmul(&p.w_v).unwrap()).unwrap();
        assert!(trace.h1.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zeroed_block_pools_the_input() {
        let mut p = params(2);
        p.w_v = Matrix::zeros(4, 4);
        p.w_1 = Matrix::zeros(6, 4);
        p.w_2 = Matrix::zeros(4, 6);
        p.b_c = vec![0.1, -0.2, 0.3];
        let mut s = RngStream::new(7);
        let x = rng_gaussian_matrix(&mut s, 5, 4, 0.0, 1.0);
        let (_, z) = transformer_forward(&p, &x).unwrap();
        let mean: Vec<f64> = (0..4).map(|j| x.col(j).iter().sum::<f64>() / 5.0).collect();
        let mut expected = p.w_c.matvec(&mean).unwrap();
        expected.iter_mut().zip(&p.b_c).for_each(|(e, b)| *e += b);
        for (a, b) in z.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn tape_graph_matches_direct_forward() {
        let p = params(3);
        let mut s = RngStream::new(9);
        let x = rng_gaussian_matrix(&mut s, 4, 4, 0.0, 1.0);
        let (_, z) = transformer_forward(&p, &x).unwrap();
        let mut tape = Tape::new();
        let vars = TransformerVars::params_on(&mut tape, &p);
        let logits = transformer_graph(&mut tape, &vars, p.activation, &x).unwrap();
        for (a, b) in tape.value(logits).as_slice().iter().zip(&z) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_empty_sequence() {
        let p = params(4);
        assert!(transformer_forward(&p, &Matrix::zeros(0, 4)).is_err());
    }
}
