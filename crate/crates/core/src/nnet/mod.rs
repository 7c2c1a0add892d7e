//! Models the unlearning method acts on: a fully connected classifier with
//! closed-form backpropagation, a small reverse-mode tape, and a
//! single-block attention + feed-forward classifier built on that tape.

pub mod mlp;
pub mod tape;
pub mod transformer;

use serde::{Deserialize, Serialize};

pub use mlp::{
    cross_entropy, logit_gradient, loss_from_logits, loss_margin_bounds, margin, mlp_backward,
    mlp_backward_from_logit_grad, mlp_forward, mlp_tape_backward, softmax, ForwardTrace, GradientSet, Layer,
    MlpParams,
};
pub use tape::{Tape, Var};
pub use transformer::{
    transformer_forward, transformer_graph, ToyTransformerParams, TransformerTrace,
    TransformerVars,
};

/// Hidden-layer nonlinearity σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn as_map(self) -> ElementMap {
        match self {
            Activation::Tanh => ElementMap::Tanh,
            Activation::Relu => ElementMap::Relu,
            Activation::Sigmoid => ElementMap::Sigmoid,
        }
    }
}

/// Elementwise scalar map with a known derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementMap {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
    Sin { omega: f64 },
    Clip { lo: f64, hi: f64 },
}

impl ElementMap {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ElementMap::Identity => x,
            ElementMap::Tanh => x.tanh(),
            ElementMap::Relu => x.max(0.0),
            ElementMap::Sigmoid => sigmoid(x),
            ElementMap::Sin { omega } => (omega * x).sin(),
            ElementMap::Clip { lo, hi } => x.clamp(lo, hi),
        }
    }

    /// Derivative at `x`. Kinks (relu at 0, clip at its bounds) take the
    /// value of the flat side: 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ElementMap::Identity => 1.0,
            ElementMap::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ElementMap::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ElementMap::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ElementMap::Sin { omega } => omega * (omega * x).cos(),
            ElementMap::Clip { lo, hi } => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
