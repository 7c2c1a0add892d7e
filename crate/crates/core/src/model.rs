//! A trainable view over either architecture: every weight matrix sits in a
//! slot that is frozen, fully trainable, or adapted. Optimizers see the
//! trainable parameters as a flat list of slices.

use crate::adapters::{factor_grads, AdapterParams};
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::nnet::{
    loss_from_logits, mlp_backward, mlp_forward, transformer_graph, Activation, GradientSet, Layer,
    MlpParams, Tape, ToyTransformerParams, TransformerVars,
};
use serde::{Deserialize, Serialize};

/// Declared in lexicographic order so the derived `Ord` sorts by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Attention,
    Classifier,
    Ffn,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Attention => "attention",
            Component::Classifier => "classifier",
            Component::Ffn => "ffn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Slot {
    Frozen(Layer),
    Full(Layer),
    Adapted(AdapterParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSlot {
    /// Target identifier, e.g. `fc2` or `ffn.w1`.
    pub name: String,
    pub layer_id: usize,
    pub component: Component,
    /// Whether the architecture uses this slot's bias.
    pub has_bias: bool,
    pub slot: Slot,
}

impl WeightSlot {
    pub fn effective_weight(&self) -> Matrix {
        match &self.slot {
            Slot::Frozen(l) | Slot::Full(l) => l.w.clone(),
            Slot::Adapted(ap) => ap.effective_weight(),
        }
    }

    pub fn bias(&self) -> &[f64] {
        match &self.slot {
            Slot::Frozen(l) | Slot::Full(l) => &l.b,
            Slot::Adapted(ap) => &ap.bias,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self.slot, Slot::Frozen(_))
    }

    pub fn adapter(&self) -> Option<&AdapterParams> {
        match &self.slot {
            Slot::Adapted(ap) => Some(ap),
            _ => None,
        }
    }

    /// Frozen base matrix, if the slot has one.
    pub fn frozen_base(&self) -> Option<&Matrix> {
        match &self.slot {
            Slot::Frozen(l) => Some(&l.w),
            Slot::Adapted(ap) => Some(&ap.w0),
            Slot::Full(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    FactorA,
    FactorB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub slot: usize,
    pub layer_id: usize,
    pub component: Component,
    pub role: ParamRole,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    Mlp { activation: Activation },
    Transformer { d: usize, d_ff: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Arch,
    pub slots: Vec<WeightSlot>,
}

/// Mean loss and mean gradients over a batch, expressed against each slot's
/// effective weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub loss: f64,
    pub logits: Vec<Vec<f64>>,
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Vec<f64>>,
}

pub(crate) const TRANSFORMER_SLOTS: [(&str, Component); 6] = [
    ("attn.q", Component::Attention),
    ("attn.k", Component::Attention),
    ("attn.v", Component::Attention),
    ("ffn.w1", Component::Ffn),
    ("ffn.w2", Component::Ffn),
    ("head", Component::Classifier),
];

impl Model {
    /// Every layer fully trainable.
    pub fn from_mlp(params: MlpParams) -> Self {
        let depth = params.depth();
        let slots = params
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, layer)| WeightSlot {
                name: format!("fc{}", i + 1),
                layer_id: i + 1,
                component: if i + 1 == depth {
                    Component::Classifier
                } else {
                    Component::Ffn
                },
                has_bias: true,
                slot: Slot::Full(layer),
            })
            .collect();
        Self {
            arch: Arch::Mlp {
                activation: params.activation,
            },
            slots,
        }
    }

    /// Every weight fully trainable; only the head carries a bias.
    pub fn from_transformer(params: ToyTransformerParams) -> Self {
        let no_bias = |w: Matrix| {
            let n = w.rows();
            Layer { w, b: vec![0.0; n] }
        };
        let layers = [
            no_bias(params.w_q),
            no_bias(params.w_k),
            no_bias(params.w_v),
            no_bias(params.w_1),
            no_bias(params.w_2),
            Layer {
                w: params.w_c,
                b: params.b_c,
            },
        ];
        let slots = layers
            .into_iter()
            .zip(TRANSFORMER_SLOTS)
            .enumerate()
            .map(|(i, (layer, (name, component)))| WeightSlot {
                name: name.to_string(),
                layer_id: i + 1,
                component,
                has_bias: name == "head",
                slot: Slot::Full(layer),
            })
            .collect();
        Self {
            arch: Arch::Transformer {
                d: params.d,
                d_ff: params.d_ff,
                activation: params.activation,
            },
            slots,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.slots.last().map(|s| s.bias().len()).unwrap_or(0)
    }

    /// Freezes every slot in place.
    pub fn freeze_all(&mut self) {
        for s in &mut self.slots {
            if let Slot::Full(l) = &s.slot {
                s.slot = Slot::Frozen(l.clone());
            }
        }
    }

    pub fn effective_mlp(&self) -> Result<MlpParams> {
        let Arch::Mlp { activation } = self.arch else {
            return contract("effective_mlp called on a transformer model");
        };
        let layers = self
            .slots
            .iter()
            .map(|s| Layer {
                w: s.effective_weight(),
                b: s.bias().to_vec(),
            })
            .collect();
        MlpParams::new(layers, activation)
    }

    pub fn effective_transformer(&self) -> Result<ToyTransformerParams> {
        let Arch::Transformer { d, d_ff, activation } = self.arch else {
            return contract("effective_transformer called on an MLP model");
        };
        let w: Vec<Matrix> = self.slots.iter().map(WeightSlot::effective_weight).collect();
        Ok(ToyTransformerParams {
            d,
            d_ff,
            w_q: w[0].clone(),
            w_k: w[1].clone(),
            w_v: w[2].clone(),
            w_1: w[3].clone(),
            w_2: w[4].clone(),
            w_c: w[5].clone(),
            b_c: self.slots[5].bias().to_vec(),
            activation,
        })
    }

    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self.arch {
            Arch::Mlp { .. } => Ok(mlp_forward(&self.effective_mlp()?, x.as_slice())?.z),
            Arch::Transformer { .. } => {
                Ok(crate::nnet::transformer_forward(&self.effective_transformer()?, x)?.1)
            }
        }
    }

    /// Logits for many inputs, materializing effective weights once.
    pub fn logits_batch(&self, xs: &[Matrix]) -> Result<Vec<Vec<f64>>> {
        match self.arch {
            Arch::Mlp { .. } => {
                let p = self.effective_mlp()?;
                xs.iter().map(|x| Ok(mlp_forward(&p, x.as_slice())?.z)).collect()
            }
            Arch::Transformer { .. } => {
                let p = self.effective_transformer()?;
                xs.iter()
                    .map(|x| Ok(crate::nnet::transformer_forward(&p, x)?.1))
                    .collect()
            }
        }
    }

    /// Mean cross-entropy and its gradients over `(xs[i], ys[i])`.
    pub fn batch_grad(&self, xs: &[&Matrix], ys: &[usize]) -> Result<BatchEval> {
        if xs.is_empty() || xs.len() != ys.len() {
            return contract(format!("batch with {} inputs and {} labels", xs.len(), ys.len()));
        }
        let c = self.num_classes();
        if let Some(&bad) = ys.iter().find(|&&y| y >= c) {
            return contract(format!("label {bad} out of range for {c} classes"));
        }
        let inv = 1.0 / xs.len() as f64;
        match self.arch {
            Arch::Mlp { .. } => {
                let p = self.effective_mlp()?;
                let mut acc = GradientSet::zeros_like(&p);
                let mut loss = 0.0;
                let mut logits = Vec::with_capacity(xs.len());
                for (x, &y) in xs.iter().zip(ys) {
                    let trace = mlp_forward(&p, x.as_slice())?;
                    acc.accumulate(inv, &mlp_backward(&p, &trace, y)?)?;
                    loss += inv * loss_from_logits(&trace.z, y);
                    logits.push(trace.z);
                }
                Ok(BatchEval {
                    loss,
                    logits,
                    weight_grads: acc.weights,
                    bias_grads: acc.biases,
                })
            }
            Arch::Transformer { activation, .. } => {
                let p = self.effective_transformer()?;
                let mut weight_grads: Vec<Matrix> = self
                    .slots
                    .iter()
                    .map(|s| {
                        let (r, c) = s.effective_weight().shape();
                        Matrix::zeros(r, c)
                    })
                    .collect();
                let mut bias_c = vec![0.0; c];
                let mut loss = 0.0;
                let mut logits = Vec::with_capacity(xs.len());
                for (x, &y) in xs.iter().zip(ys) {
                    let mut tape = Tape::new();
                    let vars = TransformerVars::params_on(&mut tape, &p);
                    let z = transformer_graph(&mut tape, &vars, activation, x)?;
                    let l = tape.softmax_cross_entropy(z, &[y])?;
                    let grads = tape.backward(l)?;
                    let order = [vars.w_q, vars.w_k, vars.w_v, vars.w_1, vars.w_2, vars.w_c];
                    for (acc, v) in weight_grads.iter_mut().zip(order) {
                        acc.axpy(inv, &grads.get_or_zeros(v, acc.shape()))?;
                    }
                    let gb = grads.get_or_zeros(vars.b_c, (1, c));
                    bias_c.iter_mut().zip(gb.as_slice()).for_each(|(b, g)| *b += inv * g);
                    loss += inv * tape.value(l)[(0, 0)];
                    logits.push(tape.value(z).as_slice().to_vec());
                }
                let mut bias_grads: Vec<Vec<f64>> =
                    self.slots.iter().map(|s| vec![0.0; s.bias().len()]).collect();
                bias_grads[5] = bias_c;
                Ok(BatchEval {
                    loss,
                    logits,
                    weight_grads,
                    bias_grads,
                })
            }
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            let mut push = |role: ParamRole, decay: bool, shape: (usize, usize)| {
                specs.push(ParamSpec {
                    slot: i,
                    layer_id: s.layer_id,
                    component: s.component,
                    role,
                    decay,
                    shape,
                })
            };
            match &s.slot {
                Slot::Frozen(_) => {}
                Slot::Full(l) => {
                    push(ParamRole::Weight, true, l.w.shape());
                    if s.has_bias {
                        push(ParamRole::Bias, false, (1, l.b.len()));
                    }
                }
                Slot::Adapted(ap) => {
                    push(ParamRole::FactorA, true, ap.a.shape());
                    push(ParamRole::FactorB, true, ap.b.shape());
                }
            }
        }
        specs
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for s in &self.slots {
            match &s.slot {
                Slot::Frozen(_) => {}
                Slot::Full(l) => {
                    out.push(l.w.as_slice());
                    if s.has_bias {
                        out.push(l.b.as_slice());
                    }
                }
                Slot::Adapted(ap) => {
                    out.push(ap.a.as_slice());
                    out.push(ap.b.as_slice());
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            let has_bias = s.has_bias;
            match &mut s.slot {
                Slot::Frozen(_) => {}
                Slot::Full(l) => {
                    out.push(l.w.as_mut_slice());
                    if has_bias {
                        out.push(l.b.as_mut_slice());
                    }
                }
                Slot::Adapted(ap) => {
                    out.push(ap.a.as_mut_slice());
                    out.push(ap.b.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Gradients of the trainable parameters, in [`Model::params`] order.
    pub fn param_grads(&self, eval: &BatchEval) -> Result<Vec<Vec<f64>>> {
        if eval.weight_grads.len() != self.slots.len() {
            return contract("batch evaluation does not match the model's slots");
        }
        let mut out = Vec::new();
        for ((s, gw), gb) in self.slots.iter().zip(&eval.weight_grads).zip(&eval.bias_grads) {
            match &s.slot {
                Slot::Frozen(_) => {}
                Slot::Full(l) => {
                    if gw.shape() != l.w.shape() {
                        return Err(Error::Shape {
                            op: "param_grads",
                            lhs: l.w.shape(),
                            rhs: gw.shape(),
                        });
                    }
                    out.push(gw.as_slice().to_vec());
                    if s.has_bias {
                        out.push(gb.clone());
                    }
                }
                Slot::Adapted(ap) => {
                    let (ga, gb) = factor_grads(ap, gw)?;
                    out.push(ga.into_vec());
                    out.push(gb.into_vec());
                }
            }
        }
        Ok(out)
    }

    /// Copies of all frozen matrices, for immutability checks.
    pub fn frozen_snapshot(&self) -> Vec<Matrix> {
        self.slots
            .iter()
            .filter_map(|s| s.frozen_base().cloned())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn mlp_model() -> Model {
        let mut s = RngStream::new(5);
        Model::from_mlp(MlpParams::init(&mut s, &[3, 4, 2], Activation::Tanh).unwrap())
    }

    #[test]
    fn mlp_slots_are_labelled() {
        let m = mlp_model();
        let names: Vec<_> = m.slots.iter().map(|s| (s.name.as_str(), s.component)).collect();
        assert_eq!(names, vec![("fc1", Component::Ffn), ("fc2", Component::Classifier)]);
        assert_eq!(m.trainable_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(m.num_classes(), 2);
    }

    #[test]
    fn component_order_is_lexicographic() {
        let mut v = vec![Component::Ffn, Component::Classifier, Component::Attention];
        v.sort();
        let names: Vec<_> = v.iter().map(|c| c.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn single_example_batch_matches_mlp_backward() {
        let m = mlp_model();
        let x = Matrix::row_vector(&[0.2, -0.4, 1.0]);
        let eval = m.batch_grad(&[&x], &[1]).unwrap();
        let p = m.effective_mlp().unwrap();
        let g = mlp_backward(&p, &mlp_forward(&p, x.as_slice()).unwrap(), 1).unwrap();
        assert_eq!(eval.weight_grads, g.weights);
        assert_eq!(eval.bias_grads, g.biases);
    }

    #[test]
    fn frozen_model_has_no_params() {
        let mut m = mlp_model();
        m.freeze_all();
        assert_eq!(m.trainable_count(), 0);
        assert_eq!(m.frozen_snapshot().len(), 2);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = mlp_model();
        assert!(matches!(m.batch_grad(&[], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn transformer_round_trips_through_slots() {
        let mut s = RngStream::new(8);
        let p = ToyTransformerParams::init(&mut s, 4, 5, 3, Activation::Tanh).unwrap();
        let m = Model::from_transformer(p.clone());
        assert_eq!(m.effective_transformer().unwrap(), p);
        assert_eq!(m.num_classes(), 3);
        // Only the head bias is a parameter.
        let biases = m.param_specs().iter().filter(|s| s.role == ParamRole::Bias).count();
        assert_eq!(biases, 1);
    }
}
