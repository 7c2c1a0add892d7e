//! Experiment configuration: one JSON document, every key optional,
//! unknown keys rejected.
//!
//! | key                          | default         |
//! |------------------------------|-----------------|
//! | `model.kind`                 | `mlp`           |
//! | `model.widths`               | `[64, 64]`      |
//! | `model.depth`                | widths + 1      |
//! | `model.activation`           | `tanh`          |
//! | `adapter.kind`               | `sine`          |
//! | `adapter.rank`               | `4`             |
//! | `adapter.omega`              | `100`           |
//! | `adapter.clip_lo/clip_hi`    | `-1` / `1`      |
//! | `adapter.targets`            | every layer (mlp), `ffn.w1, ffn.w2` (transformer) |
//! | `data.generator`             | `random_label`  |
//! | `data.n / classes / dim`     | `512 / 8 / 16`  |
//! | `data.noise`                 | `1`             |
//! | `data.seq_len`               | `4`             |
//! | `data.forget_fraction`       | `0.1`           |
//! | `data.holdout_fraction`      | `0.2`           |
//! | `train.learning_rate`        | `5e-5`          |
//! | `train.batch_size`           | `8`             |
//! | `train.iterations`           | `1000`          |
//! | `train.optimizer`            | AdamW (0.9, 0.999, 1e-8, 0.01) |
//! | `pretrain.iterations`        | `2000`          |
//! | `pretrain.learning_rate`     | `3e-3`          |
//! | `pretrain.batch_size`        | `32`            |
//! | `diagnostics.check_every`    | `10`            |
//! | `diagnostics.guard`          | factor `1e3`, mode `record` |
//! | `diagnostics.explosion_factor/window` | `50` / `5` |
//! | `output.directory`           | `$BPU_DEFAULT_OUT` or `runs` |

use crate::error::{CliError, CliResult};
use bpu_core::adapters::{AdapterKind, DEFAULT_OMEGA};
use bpu_core::evalkit::GeneratorKind;
use bpu_core::nnet::Activation;
use bpu_core::unlearn::{GuardConfig, ObjectiveMode, OptimizerConfig, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub adapter: AdapterSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Mlp,
    Transformer,
}

/// `widths` are the hidden widths; a transformer takes exactly one, its
/// feed-forward width, and uses `data.dim` as model width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub widths: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mlp,
            widths: vec![64, 64],
            depth: None,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKindName {
    Plain,
    #[default]
    Sine,
    Tanh,
    Sigmoid,
    Relu,
    Clip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub kind: AdapterKindName,
    pub rank: usize,
    pub omega: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,
    /// Train non-targeted weights in full instead of freezing them.
    pub train_rest: bool,
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self {
            kind: AdapterKindName::Sine,
            rank: 4,
            omega: DEFAULT_OMEGA,
            clip_lo: -1.0,
            clip_hi: 1.0,
            targets: None,
            train_rest: false,
        }
    }
}

impl AdapterSection {
    pub fn adapter_kind(&self) -> AdapterKind {
        match self.kind {
            AdapterKindName::Plain => AdapterKind::Plain,
            AdapterKindName::Sine => AdapterKind::Sine { omega: self.omega },
            AdapterKindName::Tanh => AdapterKind::Tanh,
            AdapterKindName::Sigmoid => AdapterKind::Sigmoid,
            AdapterKindName::Relu => AdapterKind::Relu,
            AdapterKindName::Clip => AdapterKind::Clip {
                lo: self.clip_lo,
                hi: self.clip_hi,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub generator: GeneratorKind,
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub noise: f64,
    pub seq_len: usize,
    pub forget_fraction: f64,
    pub holdout_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            generator: GeneratorKind::RandomLabel,
            n: 512,
            classes: 8,
            dim: 16,
            noise: 1.0,
            seq_len: 4,
            forget_fraction: 0.1,
            holdout_fraction: 0.2,
        }
    }
}

/// Unlearning hyperparameters; the guard lives under `diagnostics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha_r: f64,
    pub alpha_f: f64,
    pub lambda: f64,
    pub optimizer: OptimizerConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub objective_mode: ObjectiveMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            alpha_r: t.alpha_r,
            alpha_f: t.alpha_f,
            lambda: t.lambda,
            optimizer: t.optimizer,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            iterations: t.iterations,
            seed: t.seed,
            objective_mode: t.objective_mode,
        }
    }
}

/// Supervised AdamW training of the base model and the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 3e-3,
            batch_size: 32,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub theorem_checks: bool,
    pub check_every: usize,
    pub guard: GuardConfig,
    pub explosion_factor: f64,
    pub explosion_window: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            theorem_checks: false,
            check_every: bpu_core::diagnostics::DEFAULT_CHECK_EVERY,
            guard: GuardConfig::default(),
            explosion_factor: bpu_core::diagnostics::DEFAULT_EXPLOSION_FACTOR,
            explosion_window: bpu_core::diagnostics::DEFAULT_EXPLOSION_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    pub emit_norms: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            emit_norms: true,
        }
    }
}

/// Value lists keyed by dotted config path, e.g. `"adapter.omega"`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub params: BTreeMap<String, Vec<Value>>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha_r: t.alpha_r,
            alpha_f: t.alpha_f,
            lambda: t.lambda,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            iterations: t.iterations,
            seed: t.seed,
            guard: self.diagnostics.guard,
            objective_mode: t.objective_mode,
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        let p = &self.pretrain;
        TrainConfig {
            alpha_f: 0.0,
            optimizer: OptimizerConfig::Adamw {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: p.weight_decay,
            },
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            iterations: p.iterations,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn adapter_targets(&self) -> Vec<String> {
        if let Some(t) = &self.adapter.targets {
            return t.clone();
        }
        match self.model.kind {
            ModelKind::Mlp => bpu_core::adapters::mlp_target_ids(self.model.widths.len() + 1),
            ModelKind::Transformer => vec!["ffn.w1".into(), "ffn.w2".into()],
        }
    }

    /// `(identifier, out, in)` of every adaptable weight.
    pub fn layer_dims(&self) -> Vec<(String, usize, usize)> {
        let (d, c) = (self.data.dim, self.data.classes);
        match self.model.kind {
            ModelKind::Mlp => {
                let mut w = vec![d];
                w.extend(&self.model.widths);
                w.push(c);
                w.windows(2)
                    .enumerate()
                    .map(|(i, p)| (format!("fc{}", i + 1), p[1], p[0]))
                    .collect()
            }
            ModelKind::Transformer => {
                let f = self.model.widths.first().copied().unwrap_or(0);
                vec![
                    ("attn.v".into(), d, d),
                    ("ffn.w1".into(), f, d),
                    ("ffn.w2".into(), d, f),
                    ("head".into(), c, d),
                ]
            }
        }
    }

    /// Every constraint violation, each naming its dotted field.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        let m = &self.model;
        check(
            !m.widths.is_empty() && m.widths.iter().all(|&w| w >= 1),
            format!("model.widths must be non-empty with every width >= 1 (got {:?})", m.widths),
        );
        match m.kind {
            ModelKind::Mlp => {
                if let Some(d) = m.depth {
                    check(
                        d == m.widths.len() + 1,
                        format!("model.depth must equal len(model.widths) + 1 = {} (got {d})", m.widths.len() + 1),
                    );
                }
            }
            ModelKind::Transformer => {
                check(
                    m.widths.len() == 1,
                    format!("model.widths must hold exactly one feed-forward width for a transformer (got {:?})", m.widths),
                );
                if let Some(d) = m.depth {
                    check(d == 1, format!("model.depth must be 1 for a transformer (got {d})"));
                }
            }
        }

        let a = &self.adapter;
        check(a.rank >= 1, format!("adapter.rank must be >= 1 (got {})", a.rank));
        check(
            a.omega > 0.0 && a.omega.is_finite(),
            format!("adapter.omega must be > 0 (got {})", a.omega),
        );
        check(
            a.clip_lo < a.clip_hi,
            format!("adapter.clip_lo must be < adapter.clip_hi (got {} and {})", a.clip_lo, a.clip_hi),
        );
        if let Some(t) = &a.targets {
            check(!t.is_empty(), "adapter.targets must not be empty when given".into());
            let valid = match m.kind {
                ModelKind::Mlp => bpu_core::adapters::mlp_target_ids(m.widths.len() + 1),
                ModelKind::Transformer => bpu_core::adapters::transformer_target_ids(),
            };
            for name in t {
                check(
                    valid.contains(name),
                    format!("adapter.targets entry {name:?} is not one of {valid:?}"),
                );
            }
        }

        if a.rank >= 1 {
            for (name, out, inp) in self.layer_dims() {
                if self.adapter_targets().contains(&name) {
                    check(
                        a.rank <= out.min(inp),
                        format!("adapter.rank must be <= min(out, in) = {} for target {name} (got {})", out.min(inp), a.rank),
                    );
                }
            }
        }

        let d = &self.data;
        check(d.classes >= 2, format!("data.classes must be >= 2 (got {})", d.classes));
        check(d.dim >= 1, format!("data.dim must be >= 1 (got {})", d.dim));
        check(d.seq_len >= 1, format!("data.seq_len must be >= 1 (got {})", d.seq_len));
        check(
            d.noise > 0.0 && d.noise.is_finite(),
            format!("data.noise must be > 0 (got {})", d.noise),
        );
        check(
            d.forget_fraction > 0.0 && d.forget_fraction < 1.0,
            format!("data.forget_fraction must be in (0, 1) (got {})", d.forget_fraction),
        );
        check(
            d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0,
            format!("data.holdout_fraction must be in (0, 1) (got {})", d.holdout_fraction),
        );
        check(
            d.forget_fraction + d.holdout_fraction < 1.0,
            format!(
                "data.forget_fraction + data.holdout_fraction must be < 1 (got {})",
                d.forget_fraction + d.holdout_fraction
            ),
        );
        let n_f = (d.n as f64 * d.forget_fraction).floor() as usize;
        let n_h = (d.n as f64 * d.holdout_fraction).floor() as usize;
        check(
            n_f >= 1 && n_h >= 1 && d.n > n_f + n_h,
            format!("data.n must leave non-empty forget, holdout and retain sets (got {})", d.n),
        );
        let sequence = d.generator == bpu_core::evalkit::GeneratorKind::SequenceBlobs;
        check(
            sequence == (m.kind == ModelKind::Transformer),
            format!(
                "data.generator {:?} does not match model.kind {:?}: sequence_blobs feeds the transformer, the others feed the mlp",
                d.generator, m.kind
            ),
        );

        v.extend(self.train_config().violations("train."));
        let p = &self.pretrain;
        check_into(&mut v, p.learning_rate > 0.0 && p.learning_rate.is_finite(), || {
            format!("pretrain.learning_rate must be > 0 (got {})", p.learning_rate)
        });
        check_into(&mut v, p.batch_size >= 1, || format!("pretrain.batch_size must be >= 1 (got {})", p.batch_size));
        check_into(&mut v, p.weight_decay >= 0.0, || {
            format!("pretrain.weight_decay must be >= 0 (got {})", p.weight_decay)
        });
        let g = &self.diagnostics;
        check_into(&mut v, g.check_every >= 1, || {
            format!("diagnostics.check_every must be >= 1 (got {})", g.check_every)
        });
        check_into(&mut v, g.explosion_factor > 1.0, || {
            format!("diagnostics.explosion_factor must be > 1 (got {})", g.explosion_factor)
        });
        check_into(&mut v, g.explosion_window >= 1, || {
            format!("diagnostics.explosion_window must be >= 1 (got {})", g.explosion_window)
        });
        v.iter_mut()
            .filter(|s| s.starts_with("train.guard."))
            .for_each(|s| *s = s.replacen("train.guard.", "diagnostics.guard.", 1));
        v
    }

    pub fn validate(self) -> CliResult<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Invalid(v))
        }
    }

    /// Copy with the dotted `path` set to `value`, re-parsed so that type
    /// errors and unknown keys surface as config errors.
    pub fn with_override(&self, path: &str, value: &Value) -> CliResult<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut cursor = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let Value::Object(map) = cursor else {
                return Err(CliError::Invalid(vec![format!("sweep path {path:?} does not name a config field")]));
            };
            if i + 1 == parts.len() {
                map.insert((*part).to_string(), value.clone());
                break;
            }
            cursor = map.entry((*part).to_string()).or_insert_with(|| Value::Object(Default::default()));
        }
        serde_json::from_value(doc).map_err(|e| CliError::Invalid(vec![format!("sweep value for {path}: {e}")]))
    }
}

fn check_into(v: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        v.push(msg());
    }
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

/// Pretty JSON with a trailing newline: the canonical serialized form.
pub fn to_canonical_json(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}
