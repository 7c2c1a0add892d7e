//! Fully connected classifier with explicit forward and backward passes.
//!
//! Notation follows the usual layer recursion: `a_0 = x`,
//! `h_l = W_l a_{l-1} + b_l`, `a_l = σ(h_l)` for hidden layers,
//! `z = W_L a_{L-1} + b_L`, `p = softmax(z)`. Backward:
//! `g_L = p − e_y`, `g_l = D_l W_{l+1}ᵀ g_{l+1}` with `D_l = diag(σ'(h_l))`,
//! and `∇W_l = g_l a_{l-1}ᵀ`.

use super::Activation;
use crate::error::{contract, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::{rng_gaussian_matrix, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `d_l x d_{l-1}`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return contract("an MLP needs at least one layer");
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.b.len() != layer.w.rows() {
                return contract(format!(
                    "layer {}: bias length {} does not match {} output rows",
                    l + 1,
                    layer.b.len(),
                    layer.w.rows()
                ));
            }
            if l > 0 && layers[l - 1].w.rows() != layer.w.cols() {
                return contract(format!(
                    "layer {} expects width {} but layer {} produces {}",
                    l + 1,
                    layer.w.cols(),
                    l,
                    layers[l - 1].w.rows()
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases.
    /// `widths` lists `d_0, d_1, …, d_L`.
    pub fn init(stream: &mut RngStream, widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return contract("widths must list at least input and output sizes");
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                w: rng_gaussian_matrix(stream, w[1], w[0], 0.0, 1.0 / (w[0] as f64).sqrt()),
                b: vec![0.0; w[1]],
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.rows())
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.w.rows()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `a_0 … a_{L-1}`; `a[0]` is the input.
    pub a: Vec<Vec<f64>>,
    /// `h_1 … h_{L-1}`; `h[l-1]` holds `h_l`.
    pub h: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// `g_1 … g_L`; `g[l-1]` holds `g_l`.
    pub g: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.w.rows(), l.w.cols()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            g: Vec::new(),
        }
    }

    /// `self += c * other` on weights and biases.
    pub fn accumulate(&mut self, c: f64, other: &GradientSet) -> Result<()> {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            w.axpy(c, ow)?;
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in b.iter_mut().zip(ob) {
                *x += c * y;
            }
        }
        Ok(())
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// `−ln p_y`; `+∞` when `p_y` is zero.
pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    let py = p[y];
    if py <= 0.0 {
        f64::INFINITY
    } else {
        -py.ln()
    }
}

/// `p − e_y`.
pub fn logit_gradient(p: &[f64], y: usize) -> Vec<f64> {
    let mut g = p.to_vec();
    g[y] -= 1.0;
    g
}

/// `max_{j≠y} (z_j − z_y)`.
pub fn margin(z: &[f64], y: usize) -> f64 {
    z.iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &zj)| zj - z[y])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cross-entropy of `softmax(z)` at `y`, evaluated from the logits around
/// the margin so it never overflows and never rounds below the margin.
pub fn loss_from_logits(z: &[f64], y: usize) -> f64 {
    let m = margin(z, y);
    let shifted: f64 = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &zj)| (zj - z[y] - m).exp())
        .sum();
    if m > 0.0 {
        m + ((-m).exp() + shifted).ln()
    } else {
        // Every term e^{z_j − z_y} ≤ e^m ≤ 1.
        (shifted * m.exp()).ln_1p()
    }
}

/// `(m, ln(1 + (C−1)e^m))`, the sandwich around the cross-entropy loss.
pub fn loss_margin_bounds(z: &[f64], y: usize) -> (f64, f64) {
    let m = margin(z, y);
    let others = (z.len() - 1) as f64;
    let upper = if m > 0.0 {
        m + ((-m).exp() + others).ln()
    } else {
        (others * m.exp()).ln_1p()
    };
    (m, upper)
}

pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape {
            op: "mlp_forward",
            lhs: params.layers[0].w.shape(),
            rhs: (x.len(), 1),
        });
    }
    let sigma = params.activation.as_map();
    let depth = params.depth();
    let mut a = Vec::with_capacity(depth);
    let mut h = Vec::with_capacity(depth - 1);
    a.push(x.to_vec());
    for (l, layer) in params.layers[..depth - 1].iter().enumerate() {
        let mut pre = layer.w.matvec(&a[l])?;
        for (v, b) in pre.iter_mut().zip(&layer.b) {
            *v += b;
        }
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "hidden pre-activation",
                layer: l + 1,
            });
        }
        a.push(pre.iter().map(|&v| sigma.apply(v)).collect());
        h.push(pre);
    }
    let last = &params.layers[depth - 1];
    let mut z = last.w.matvec(&a[depth - 1])?;
    for (v, b) in z.iter_mut().zip(&last.b) {
        *v += b;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context: "logits",
            layer: depth,
        });
    }
    let p = softmax(&z);
    Ok(ForwardTrace { a, h, z, p })
}

pub fn mlp_backward(params: &MlpParams, trace: &ForwardTrace, y: usize) -> Result<GradientSet> {
    if y >= params.num_classes() {
        return contract(format!("label {y} out of range for {} classes", params.num_classes()));
    }
    mlp_backward_from_logit_grad(params, trace, logit_gradient(&trace.p, y))
}

/// Backward pass seeded with an arbitrary `∇_z` (e.g. a scaled `p − e_y`).
pub fn mlp_backward_from_logit_grad(
    params: &MlpParams,
    trace: &ForwardTrace,
    g_last: Vec<f64>,
) -> Result<GradientSet> {
    let depth = params.depth();
    let sigma = params.activation.as_map();
    let mut g = vec![Vec::new(); depth];
    g[depth - 1] = g_last;
    for l in (0..depth - 1).rev() {
        // g_l = D_l W_{l+1}ᵀ g_{l+1}
        let back = params.layers[l + 1].w.t_matvec(&g[l + 1])?;
        g[l] = back
            .iter()
            .zip(&trace.h[l])
            .map(|(&v, &pre)| v * sigma.derivative(pre))
            .collect();
    }
    let weights = (0..depth)
        .map(|l| Matrix::outer(&g[l], &trace.a[l]))
        .collect();
    let biases = g.clone();
    Ok(GradientSet { weights, biases, g })
}

/// Euclidean norm of the logits; convenience for diagnostics.
pub fn logit_norm(trace: &ForwardTrace) -> f64 {
    norm2(&trace.z)
}

/// Same gradients as [`mlp_backward`], obtained by recording the network
/// on a [`Tape`](super::Tape) (row convention: `h = a Wᵀ + b`) and sweeping
/// it in reverse.
pub fn mlp_tape_backward(params: &MlpParams, x: &[f64], y: usize) -> Result<GradientSet> {
    use super::Tape;
    let mut tape = Tape::new();
    let vars: Vec<_> = params
        .layers
        .iter()
        .map(|l| (tape.param(l.w.clone()), tape.param(Matrix::row_vector(&l.b))))
        .collect();
    let mut a = tape.constant(Matrix::row_vector(x));
    let depth = params.depth();
    for (l, &(w, b)) in vars.iter().enumerate() {
        let wt = tape.transpose(w);
        let pre = tape.matmul(a, wt)?;
        let h = tape.add_bias(pre, b)?;
        a = if l + 1 < depth {
            tape.map(h, params.activation.as_map())
        } else {
            h
        };
    }
    let p = tape.row_softmax(a)?;
    let loss = tape.cross_entropy(p, &[y])?;
    let grads = tape.backward(loss)?;
    let weights = vars
        .iter()
        .map(|&(w, _)| grads.get_or_zeros(w, tape.value(w).shape()))
        .collect();
    let biases = vars
        .iter()
        .map(|&(_, b)| grads.get_or_zeros(b, tape.value(b).shape()).into_vec())
        .collect();
    Ok(GradientSet {
        weights,
        biases,
        g: Vec::new(),
    })
}
