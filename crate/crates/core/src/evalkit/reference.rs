use super::data::Dataset;
use crate::error::{contract, Result};
use crate::model::Model;
use crate::unlearn::{train_supervised, ObjectiveMode, Outcome, TrainConfig};
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Mutex, OnceLock};

fn cache() -> &'static Mutex<HashMap<u64, Model>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Model>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn key(retain: &Dataset, template: &Model, config: &TrainConfig) -> u64 {
    let mut h = DefaultHasher::new();
    for x in &retain.inputs {
        x.shape().hash(&mut h);
        x.as_slice().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    retain.labels.hash(&mut h);
    format!("{template:?}").hash(&mut h);
    format!("{config:?}").hash(&mut h);
    h.finish()
}

pub fn clear_reference_cache() {
    cache().lock().expect("reference cache poisoned").clear();
}

/// Supervised training on the retain set only, memoized per process on
/// `(retain data, template, config)`. Divergence is an error: a broken
/// reference would make every forget-quality number meaningless.
pub fn train_reference(retain: &Dataset, template: &Model, config: &TrainConfig) -> Result<Model> {
    if config.alpha_f != 0.0 || config.objective_mode != ObjectiveMode::GradientDifference {
        return contract("reference training must be plain supervised (alpha_f = 0, gradient_difference)");
    }
    let k = key(retain, template, config);
    if let Some(m) = cache().lock().expect("reference cache poisoned").get(&k) {
        return Ok(m.clone());
    }
    let run = train_supervised(template.clone(), retain, config)?;
    if run.outcome != Outcome::Completed {
        return contract(format!("reference training diverged: {:?}", run.outcome));
    }
    cache()
        .lock()
        .expect("reference cache poisoned")
        .insert(k, run.model.clone());
    Ok(run.model)
}
