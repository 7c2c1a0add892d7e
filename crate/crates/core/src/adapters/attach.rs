use super::{AdapterKind, AdapterParams};
use crate::error::{contract, Result};
use crate::model::{Arch, Model, Slot, WeightSlot};
use crate::nnet::Layer;
use crate::rng::RngStream;

/// What happens to weights that are not targeted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttachMode {
    #[default]
    FreezeRest,
    TrainRest,
}

pub fn mlp_target_ids(depth: usize) -> Vec<String> {
    (1..=depth).map(|l| format!("fc{l}")).collect()
}

/// Query and key projections are not adaptable.
pub fn transformer_target_ids() -> Vec<String> {
    ["attn.v", "ffn.w1", "ffn.w2", "head"].map(String::from).to_vec()
}

fn valid_targets(model: &Model) -> Vec<String> {
    match model.arch {
        Arch::Mlp { .. } => mlp_target_ids(model.slots.len()),
        Arch::Transformer { .. } => transformer_target_ids(),
    }
}

/// Freezes the current effective weights of `model` and pairs each targeted
/// weight with a fresh adapter. Factors are drawn in slot order, so the
/// result does not depend on the order of `targets`.
pub fn attach_adapters(
    model: &Model,
    targets: &[String],
    kind: AdapterKind,
    r: usize,
    stream: &mut RngStream,
    mode: AttachMode,
) -> Result<Model> {
    kind.validate()?;
    let valid = valid_targets(model);
    let unknown: Vec<&String> = targets.iter().filter(|t| !valid.contains(t)).collect();
    if !unknown.is_empty() {
        return contract(format!(
            "unknown adapter target(s) {unknown:?}; valid identifiers are {valid:?}"
        ));
    }
    let mut slots = Vec::with_capacity(model.slots.len());
    for s in &model.slots {
        let w = s.effective_weight();
        let b = s.bias().to_vec();
        let slot = if targets.contains(&s.name) {
            Slot::Adapted(AdapterParams::init(stream, kind, w, b, r)?)
        } else if mode == AttachMode::TrainRest {
            Slot::Full(Layer { w, b })
        } else {
            Slot::Frozen(Layer { w, b })
        };
        slots.push(WeightSlot {
            name: s.name.clone(),
            layer_id: s.layer_id,
            component: s.component,
            has_bias: s.has_bias,
            slot,
        });
    }
    Ok(Model {
        arch: model.arch,
        slots,
    })
}
