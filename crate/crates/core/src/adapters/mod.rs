//! Low-rank adapters whose product passes through an elementwise map φ:
//!
//! ```text
//! h = W₀ x + φ(A Bᵀ) x + bias        A: out x r,  B: in x r
//! ```
//!
//! `φ` is the identity for plain LoRA, `sin(ω ·)` for the bounded sine
//! variant, and tanh / sigmoid / relu / clip for ablations.

mod attach;

pub use attach::{attach_adapters, mlp_target_ids, transformer_target_ids, AttachMode};

use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::nnet::ElementMap;
use crate::rng::{rng_gaussian_matrix, RngStream};
use serde::{Deserialize, Serialize};

pub const DEFAULT_OMEGA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdapterKind {
    Plain,
    Sine { omega: f64 },
    Tanh,
    Sigmoid,
    Relu,
    Clip { lo: f64, hi: f64 },
}

impl AdapterKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AdapterKind::Sine { omega } if !(omega > 0.0 && omega.is_finite()) => {
                contract(format!("sine adapter needs omega > 0, got {omega}"))
            }
            AdapterKind::Clip { lo, hi } if !(lo < hi) => {
                contract(format!("clip adapter needs lo < hi, got [{lo}, {hi}]"))
            }
            _ => Ok(()),
        }
    }

    pub fn as_map(&self) -> ElementMap {
        match *self {
            AdapterKind::Plain => ElementMap::Identity,
            AdapterKind::Sine { omega } => ElementMap::Sin { omega },
            AdapterKind::Tanh => ElementMap::Tanh,
            AdapterKind::Sigmoid => ElementMap::Sigmoid,
            AdapterKind::Relu => ElementMap::Relu,
            AdapterKind::Clip { lo, hi } => ElementMap::Clip { lo, hi },
        }
    }

    /// Closed range of φ, or `None` when φ is unbounded.
    pub fn range(&self) -> Option<(f64, f64)> {
        match *self {
            AdapterKind::Sine { .. } | AdapterKind::Tanh => Some((-1.0, 1.0)),
            AdapterKind::Sigmoid => Some((0.0, 1.0)),
            AdapterKind::Clip { lo, hi } => Some((lo, hi)),
            AdapterKind::Plain | AdapterKind::Relu => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdapterKind::Plain => "plain",
            AdapterKind::Sine { .. } => "sine",
            AdapterKind::Tanh => "tanh",
            AdapterKind::Sigmoid => "sigmoid",
            AdapterKind::Relu => "relu",
            AdapterKind::Clip { .. } => "clip",
        }
    }
}

/// One adapted linear layer. `w0` and `bias` are frozen; only `a` and `b`
/// are trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub a: Matrix,
    pub b: Matrix,
    pub kind: AdapterKind,
    pub w0: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub a: Matrix,
    pub b: Matrix,
    pub bias: Vec<f64>,
}

impl AdapterParams {
    pub fn new(a: Matrix, b: Matrix, kind: AdapterKind, w0: Matrix, bias: Vec<f64>) -> Result<Self> {
        kind.validate()?;
        let (out, inp) = w0.shape();
        let r = a.cols();
        if a.rows() != out || b.rows() != inp || b.cols() != r {
            return Err(Error::Shape {
                op: "adapter factors",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        if r == 0 || r > out.min(inp) {
            return contract(format!("adapter rank {r} outside 1..={}", out.min(inp)));
        }
        if bias.len() != out {
            return contract(format!("adapter bias has {} entries, expected {out}", bias.len()));
        }
        Ok(Self { a, b, kind, w0, bias })
    }

    /// Freezes `w0` and `bias` and draws fresh factors with [`init_adapter`].
    pub fn init(stream: &mut RngStream, kind: AdapterKind, w0: Matrix, bias: Vec<f64>, r: usize) -> Result<Self> {
        let (out, inp) = w0.shape();
        if r == 0 || r > out.min(inp) {
            return contract(format!("adapter rank {r} outside 1..={}", out.min(inp)));
        }
        let (a, b) = init_adapter(stream, out, inp, r)?;
        Self::new(a, b, kind, w0, bias)
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w0.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn trainable_count(&self) -> usize {
        self.a.as_slice().len() + self.b.as_slice().len()
    }

    /// `W₀ + φ(A Bᵀ)`.
    pub fn effective_weight(&self) -> Matrix {
        let mut w = effective_update(self);
        for (x, w0) in w.as_mut_slice().iter_mut().zip(self.w0.as_slice()) {
            *x += w0;
        }
        w
    }
}

fn low_rank_product(ap: &AdapterParams) -> Matrix {
    ap.a.matmul_t(&ap.b).expect("factor shapes checked at construction")
}

pub fn effective_update(ap: &AdapterParams) -> Matrix {
    let phi = ap.kind.as_map();
    low_rank_product(ap).map(|v| phi.apply(v))
}

pub fn adapter_forward(ap: &AdapterParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != ap.in_dim() {
        return Err(Error::Shape {
            op: "adapter_forward",
            lhs: ap.w0.shape(),
            rhs: (x.len(), 1),
        });
    }
    let base = ap.w0.matvec(x)?;
    let delta = effective_update(ap).matvec(x)?;
    Ok(base
        .iter()
        .zip(&delta)
        .zip(&ap.bias)
        .map(|((b, d), c)| b + d + c)
        .collect())
}

/// Factor gradients from `G = ∂𝓛/∂φ(ABᵀ)`: with `P = G ⊙ φ'(ABᵀ)`,
/// `∇A = P B` and `∇B = Pᵀ A`.
pub fn factor_grads(ap: &AdapterParams, g: &Matrix) -> Result<(Matrix, Matrix)> {
    if g.shape() != ap.w0.shape() {
        return Err(Error::Shape {
            op: "factor_grads",
            lhs: ap.w0.shape(),
            rhs: g.shape(),
        });
    }
    let phi = ap.kind.as_map();
    let mut p = low_rank_product(ap);
    for (pv, gv) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *pv = gv * phi.derivative(*pv);
    }
    let grad_a = p.matmul(&ap.b)?;
    let grad_b = p.transpose().matmul(&ap.a)?;
    Ok((grad_a, grad_b))
}

pub fn adapter_backward(ap: &AdapterParams, x: &[f64], g_h: &[f64]) -> Result<AdapterGrads> {
    if x.len() != ap.in_dim() || g_h.len() != ap.out_dim() {
        return Err(Error::Shape {
            op: "adapter_backward",
            lhs: ap.w0.shape(),
            rhs: (g_h.len(), x.len()),
        });
    }
    let (a, b) = factor_grads(ap, &Matrix::outer(g_h, x))?;
    Ok(AdapterGrads {
        a,
        b,
        bias: g_h.to_vec(),
    })
}

/// `A ~ N(0, 1/r)` entrywise (row-major draws), `B = 0`.
pub fn init_adapter(stream: &mut RngStream, out: usize, inp: usize, r: usize) -> Result<(Matrix, Matrix)> {
    if r == 0 {
        return contract("adapter rank must be at least 1");
    }
    let a = rng_gaussian_matrix(stream, out, r, 0.0, 1.0 / (r as f64).sqrt());
    Ok((a, Matrix::zeros(inp, r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const KINDS: [AdapterKind; 6] = [
        AdapterKind::Plain,
        AdapterKind::Sine { omega: 100.0 },
        AdapterKind::Tanh,
        AdapterKind::Sigmoid,
        AdapterKind::Relu,
        AdapterKind::Clip { lo: -1.5, hi: 1.5 },
    ];

    fn instance(seed: u64, kind: AdapterKind, out: usize, inp: usize, r: usize) -> AdapterParams {
        let mut s = RngStream::new(seed);
        let w0 = rng_gaussian_matrix(&mut s, out, inp, 0.0, 1.0);
        let a = rng_gaussian_matrix(&mut s, out, r, 0.0, 0.5);
        let b = rng_gaussian_matrix(&mut s, inp, r, 0.0, 0.5);
        let bias = s.gaussian_vec(out, 0.0, 1.0);
        AdapterParams::new(a, b, kind, w0, bias).unwrap()
    }

    #[test]
    fn zero_b_gives_zero_or_half_update() {
        for kind in KINDS {
            let mut ap = instance(1, kind, 3, 4, 2);
            ap.b = Matrix::zeros(4, 2);
            let u = effective_update(&ap);
            let expected = if kind == AdapterKind::Sigmoid { 0.5 } else { 0.0 };
            assert!(u.as_slice().iter().all(|&v| v == expected), "{kind:?}");
        }
    }

    #[test]
    fn sine_quarter_period_hits_one() {
        let omega = 100.0;
        let ap = AdapterParams::new(
            Matrix::filled(1, 1, PI / (2.0 * omega)),
            Matrix::filled(1, 1, 1.0),
            AdapterKind::Sine { omega },
            Matrix::zeros(1, 1),
            vec![0.0],
        )
        .unwrap();
        assert!((effective_update(&ap)[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sine_small_argument_taylor_bound() {
        let omega = 100.0;
        let mut ap = instance(2, AdapterKind::Sine { omega }, 5, 4, 2);
        let lin = ap.a.matmul_t(&ap.b).unwrap();
        let s = 0.1 / (omega * lin.max_abs());
        ap.a = ap.a.scale(s);
        let lin = ap.a.matmul_t(&ap.b).unwrap().scale(omega);
        assert!(lin.max_abs() <= 0.1 + 1e-15);
        let u = effective_update(&ap);
        let gap = u.sub(&lin).unwrap().max_abs();
        assert!(gap <= 0.1f64.powi(3) / 6.0);
    }

    #[test]
    fn inactive_adapter_forward_is_base() {
        let mut ap = instance(3, AdapterKind::Sine { omega: 100.0 }, 4, 3, 2);
        ap.b = Matrix::zeros(3, 2);
        ap.bias = vec![0.0; 4];
        let x = [0.3, -1.2, 2.0];
        assert_eq!(adapter_forward(&ap, &x).unwrap(), ap.w0.matvec(&x).unwrap());
    }

    #[test]
    fn plain_forward_matches_merged_weight() {
        let ap = instance(4, AdapterKind::Plain, 5, 3, 2);
        let x = [0.7, 0.1, -0.4];
        let merged = ap.w0.add(&ap.a.matmul_t(&ap.b).unwrap()).unwrap();
        let mut expected = merged.matvec(&x).unwrap();
        expected.iter_mut().zip(&ap.bias).for_each(|(e, b)| *e += b);
        for (u, v) in adapter_forward(&ap, &x).unwrap().iter().zip(&expected) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        for kind in KINDS {
            let ap = instance(5, kind, 4, 3, 2);
            let g = adapter_backward(&ap, &[1.0, 2.0, 3.0], &[0.0; 4]).unwrap();
            assert!(g.a.max_abs() == 0.0 && g.b.max_abs() == 0.0);
            assert!(g.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn plain_backward_is_lora_chain_rule() {
        let ap = instance(6, AdapterKind::Plain, 4, 3, 2);
        let x = [0.5, -1.0, 0.25];
        let gh = [1.0, -2.0, 0.5, 0.0];
        let g = adapter_backward(&ap, &x, &gh).unwrap();
        let outer = Matrix::outer(&gh, &x);
        assert_eq!(g.a, outer.matmul(&ap.b).unwrap());
        assert_eq!(g.b, outer.transpose().matmul(&ap.a).unwrap());
        assert_eq!(g.bias, gh.to_vec());
    }

    #[test]
    fn init_is_zero_update_except_sigmoid() {
        for kind in KINDS {
            let mut s = RngStream::new(11);
            let w0 = Matrix::filled(4, 6, 0.5);
            let ap = AdapterParams::init(&mut s, kind, w0, vec![0.0; 4], 3).unwrap();
            let u = effective_update(&ap);
            let expected = if kind == AdapterKind::Sigmoid { 0.5 } else { 0.0 };
            assert!(u.as_slice().iter().all(|&v| v == expected));
            assert_eq!(ap.b, Matrix::zeros(6, 3));
        }
    }

    #[test]
    fn kind_validation() {
        assert!(AdapterKind::Sine { omega: 0.0 }.validate().is_err());
        assert!(AdapterKind::Sine { omega: -1.0 }.validate().is_err());
        assert!(AdapterKind::Clip { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(AdapterKind::Clip { lo: -1.5, hi: 1.5 }.validate().is_ok());
    }

    #[test]
    fn rank_above_min_dim_rejected() {
        let mut s = RngStream::new(1);
        let r = AdapterParams::init(&mut s, AdapterKind::Plain, Matrix::zeros(2, 5), vec![0.0; 2], 3);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
