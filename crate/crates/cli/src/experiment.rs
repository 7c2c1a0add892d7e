//! One run end to end: generate and split data, pretrain the base model on
//! retain ∪ forget, train the retain-only reference from the same
//! initialization, attach adapters, unlearn, evaluate.

use crate::config::{ExperimentConfig, ModelKind};
use crate::error::CliResult;
use bpu_core::adapters::{attach_adapters, AttachMode};
use bpu_core::diagnostics::{detect_explosion, Metric, MetricSelector};
use bpu_core::evalkit::{evaluate, split, train_reference, Dataset, DatasetSpec, EvalReport, SplitSpec};
use bpu_core::model::{Component, Model};
use bpu_core::nnet::{MlpParams, ToyTransformerParams};
use bpu_core::rng::RngStream;
use bpu_core::unlearn::{run_unlearning, train_supervised, Outcome, RunResult, SessionOptions, UnlearnSession};
use serde::{Deserialize, Serialize};

const TAG_DATA: u64 = 0x4441_5441;
const TAG_SPLIT: u64 = 0x5350_4C49_54;
const TAG_INIT: u64 = 0x494E_4954;
const TAG_PRETRAIN: u64 = 0x5052_4554;
const TAG_ADAPTER: u64 = 0x4144_4150;
const TAG_UNLEARN: u64 = 0x554E_4C52;

/// Per-purpose seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub pretrain: u64,
    pub adapter: u64,
    pub unlearn: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let root = RngStream::new(master);
        let s = |tag| root.derive(tag).next_u64();
        Self {
            master,
            data: s(TAG_DATA),
            split: s(TAG_SPLIT),
            init: s(TAG_INIT),
            pretrain: s(TAG_PRETRAIN),
            adapter: s(TAG_ADAPTER),
            unlearn: s(TAG_UNLEARN),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub retain: Dataset,
    pub forget: Dataset,
    pub holdout: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionRecord {
    pub layer_id: usize,
    pub component: Component,
    pub metric: Metric,
    pub fired: bool,
    pub first_iter: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub seeds: Seeds,
    pub splits: Splits,
    pub original: Model,
    pub reference: Model,
    pub original_report: EvalReport,
    pub final_report: EvalReport,
    pub run: RunResult,
    pub explosions: Vec<ExplosionRecord>,
}

pub fn build_splits(cfg: &ExperimentConfig, seeds: &Seeds) -> CliResult<Splits> {
    let d = &cfg.data;
    let ds = Dataset::generate(&DatasetSpec {
        kind: d.generator,
        n: d.n,
        num_classes: d.classes,
        dim: d.dim,
        noise: d.noise,
        seq_len: d.seq_len,
        seed: seeds.data,
    })?;
    let (retain, forget, holdout) = split(
        &ds,
        &SplitSpec {
            forget_fraction: d.forget_fraction,
            holdout_fraction: d.holdout_fraction,
            seed: seeds.split,
        },
    )?;
    Ok(Splits { retain, forget, holdout })
}

pub fn init_model(cfg: &ExperimentConfig, seeds: &Seeds) -> CliResult<Model> {
    let mut s = RngStream::new(seeds.init);
    let m = &cfg.model;
    let d = &cfg.data;
    Ok(match m.kind {
        ModelKind::Mlp => {
            let mut widths = vec![d.dim];
            widths.extend(&m.widths);
            widths.push(d.classes);
            Model::from_mlp(MlpParams::init(&mut s, &widths, m.activation)?)
        }
        ModelKind::Transformer => {
            Model::from_transformer(ToyTransformerParams::init(&mut s, d.dim, m.widths[0], d.classes, m.activation)?)
        }
    })
}

fn require_completed(run: &RunResult, what: &str) -> CliResult<()> {
    match &run.outcome {
        Outcome::Completed => Ok(()),
        other => Err(bpu_core::Error::Contract(format!("{what} did not complete: {other:?}")).into()),
    }
}

/// Base model trained on retain ∪ forget, and the retain-only reference.
pub fn pretrain(cfg: &ExperimentConfig, seeds: &Seeds, splits: &Splits) -> CliResult<(Model, Model)> {
    let init = init_model(cfg, seeds)?;
    let pcfg = cfg.pretrain_config(seeds.pretrain);
    let full = splits.retain.union(&splits.forget);
    let run = train_supervised(init.clone(), &full, &pcfg)?;
    require_completed(&run, "pretraining")?;
    let reference = train_reference(&splits.retain, &init, &pcfg)?;
    Ok((run.model, reference))
}

pub fn attach(cfg: &ExperimentConfig, seeds: &Seeds, original: &Model) -> CliResult<Model> {
    let mode = if cfg.adapter.train_rest {
        AttachMode::TrainRest
    } else {
        AttachMode::FreezeRest
    };
    Ok(attach_adapters(
        original,
        &cfg.adapter_targets(),
        cfg.adapter.adapter_kind(),
        cfg.adapter.rank,
        &mut RngStream::new(seeds.adapter),
        mode,
    )?)
}

/// Explosion detection on weight and gradient norms of every trainable
/// layer.
pub fn explosion_records(cfg: &ExperimentConfig, run: &RunResult) -> CliResult<Vec<ExplosionRecord>> {
    let Some(first) = run.history.first() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for e in first.norms.iter().filter(|e| matches!(e.metric, Metric::WeightFro | Metric::GradFro)) {
        let ev = detect_explosion(
            &run.history,
            MetricSelector::Norm {
                layer_id: e.layer_id,
                metric: e.metric,
            },
            cfg.diagnostics.explosion_factor,
            cfg.diagnostics.explosion_window,
        )?;
        out.push(ExplosionRecord {
            layer_id: e.layer_id,
            component: e.component,
            metric: e.metric,
            fired: ev.fired,
            first_iter: ev.first_iter,
        });
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutput> {
    let seeds = Seeds::from_master(cfg.train.seed);
    let splits = build_splits(cfg, &seeds)?;
    let (original, reference) = pretrain(cfg, &seeds, &splits)?;
    let adapted = attach(cfg, &seeds, &original)?;
    let mut tcfg = cfg.train_config();
    tcfg.seed = seeds.unlearn;
    let session = UnlearnSession::new(
        adapted,
        &splits.retain,
        &splits.forget,
        tcfg,
        SessionOptions {
            theorem_checks: cfg.diagnostics.theorem_checks,
            check_every: cfg.diagnostics.check_every,
        },
    )?;
    let run = run_unlearning(session)?;
    let original_report = evaluate(&original, &reference, &splits.retain, &splits.forget, &splits.holdout)?;
    let final_report = if run.model.is_finite() {
        evaluate(&run.model, &reference, &splits.retain, &splits.forget, &splits.holdout)?
    } else {
        non_finite_report()
    };
    let explosions = explosion_records(cfg, &run)?;
    Ok(ExperimentOutput {
        seeds,
        splits,
        original,
        reference,
        original_report,
        final_report,
        run,
        explosions,
    })
}

/// Report for a model whose weights are no longer finite.
fn non_finite_report() -> EvalReport {
    EvalReport {
        forget_quality_proxy: f64::NAN,
        model_utility_proxy: f64::NAN,
        membership_attack_acc: f64::NAN,
        retain_acc: f64::NAN,
        forget_acc: f64::NAN,
        holdout_acc: f64::NAN,
        forget_loss_mean: f64::NAN,
    }
}
