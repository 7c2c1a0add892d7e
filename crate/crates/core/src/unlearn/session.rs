use super::optim::{adamw_step, grad_difference_step, sgd_step, AdamWParams, OptState};
use super::{GuardMode, ObjectiveMode, OptimizerConfig, TrainConfig};
use crate::diagnostics::{check_thm2_assumptions, record_iteration, StepGrads, TraceRecord};
use crate::error::{contract, Error, Result};
use crate::evalkit::Dataset;
use crate::linalg::{Matrix, SVD_CAP};
use crate::model::{Arch, BatchEval, Model};
use crate::nnet::mlp_forward;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

const TAG_RETAIN: u64 = 0x5245_5441_494E;
const TAG_FORGET: u64 = 0x464F_5247_4554;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub theorem_checks: bool,
    pub check_every: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            theorem_checks: false,
            check_every: crate::diagnostics::DEFAULT_CHECK_EVERY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnSession<'a> {
    pub model: Model,
    pub retain: &'a Dataset,
    pub forget: &'a Dataset,
    pub config: TrainConfig,
    pub options: SessionOptions,
}

impl<'a> UnlearnSession<'a> {
    pub fn new(
        model: Model,
        retain: &'a Dataset,
        forget: &'a Dataset,
        config: TrainConfig,
        options: SessionOptions,
    ) -> Result<Self> {
        let v = config.violations("");
        if !v.is_empty() {
            return contract(v.join("; "));
        }
        if options.check_every == 0 {
            return contract("check_every must be >= 1");
        }
        let needs_retain = config.objective_mode != ObjectiveMode::PureAscent;
        let needs_forget = match config.objective_mode {
            ObjectiveMode::GradientDifference => config.alpha_f > 0.0,
            ObjectiveMode::PureAscent | ObjectiveMode::Combined => true,
        };
        if needs_retain && retain.is_empty() {
            return contract("this objective needs a non-empty retain set");
        }
        if needs_forget && forget.is_empty() {
            return contract("this objective needs a non-empty forget set");
        }
        Ok(Self {
            model,
            retain,
            forget,
            config,
            options,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// The guard fired in halt mode.
    GuardHalt { iter: usize },
    /// A loss, gradient, or weight became non-finite.
    Diverged { iter: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub history: Vec<TraceRecord>,
    pub outcome: Outcome,
}

/// Batch evaluations and parameter gradients for one step. A side is
/// `None` when its batch was empty.
#[derive(Debug, Clone)]
pub struct ObjectiveGrads {
    pub retain: Option<(BatchEval, Vec<Vec<f64>>)>,
    pub forget: Option<(BatchEval, Vec<Vec<f64>>)>,
    /// `∇(𝓛_r − λ𝓛_f)` in combined mode.
    pub combined: Option<Vec<Vec<f64>>>,
}

impl ObjectiveGrads {
    /// `c_r ∇𝓛_r + c_f ∇𝓛_f` against parameters and effective weights;
    /// absent sides contribute zero.
    pub fn weighted(&self, model: &Model, c_r: f64, c_f: f64) -> Result<StepGrads> {
        let mut weights: Vec<Matrix> = model
            .slots
            .iter()
            .map(|s| {
                let (r, c) = s.effective_weight().shape();
                Matrix::zeros(r, c)
            })
            .collect();
        let mut params: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        for (side, c) in [(&self.retain, c_r), (&self.forget, c_f)] {
            let Some((eval, grads)) = side else { continue };
            if c == 0.0 {
                continue;
            }
            for (w, g) in weights.iter_mut().zip(&eval.weight_grads) {
                w.axpy(c, g)?;
            }
            for (p, g) in params.iter_mut().zip(grads) {
                p.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
        }
        Ok(StepGrads { weights, params })
    }
}

fn eval_side(model: &Model, xs: &[&Matrix], ys: &[usize]) -> Result<Option<(BatchEval, Vec<Vec<f64>>)>> {
    if xs.is_empty() {
        return Ok(None);
    }
    let eval = model.batch_grad(xs, ys)?;
    let grads = model.param_grads(&eval)?;
    Ok(Some((eval, grads)))
}

/// Mean cross-entropy gradients over each non-empty batch. Combined mode
/// additionally returns `∇(𝓛_r − λ𝓛_f)`.
pub fn compute_objective_grads(
    model: &Model,
    retain: (&[&Matrix], &[usize]),
    forget: (&[&Matrix], &[usize]),
    mode: ObjectiveMode,
    lambda: f64,
) -> Result<ObjectiveGrads> {
    let need_retain = matches!(mode, ObjectiveMode::GradientDifference | ObjectiveMode::Combined);
    let need_forget = matches!(mode, ObjectiveMode::PureAscent | ObjectiveMode::Combined);
    if need_retain && retain.0.is_empty() {
        return contract(format!("{mode:?} needs a non-empty retain batch"));
    }
    if need_forget && forget.0.is_empty() {
        return contract(format!("{mode:?} needs a non-empty forget batch"));
    }
    let r = eval_side(model, retain.0, retain.1)?;
    let f = eval_side(model, forget.0, forget.1)?;
    let combined = match (mode, &r, &f) {
        (ObjectiveMode::Combined, Some((_, gr)), Some((_, gf))) => Some(
            gr.iter()
                .zip(gf)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - lambda * y).collect())
                .collect(),
        ),
        _ => None,
    };
    Ok(ObjectiveGrads {
        retain: r,
        forget: f,
        combined,
    })
}

fn sample<'d>(ds: &'d Dataset, rng: &mut RngStream, k: usize) -> (Vec<&'d Matrix>, Vec<usize>) {
    if ds.is_empty() {
        return (Vec::new(), Vec::new());
    }
    (0..k)
        .map(|_| {
            let i = rng.next_index(ds.len());
            (&ds.inputs[i], ds.labels[i])
        })
        .unzip()
}

fn assumption_reports(model: &Model, x: &Matrix, y: usize) -> Result<Vec<crate::diagnostics::AssumptionReport>> {
    let p = model.effective_mlp()?;
    if p.widths().iter().any(|&w| w > SVD_CAP) {
        return Ok(Vec::new());
    }
    let trace = mlp_forward(&p, x.as_slice())?;
    (1..p.depth())
        .map(|l| check_thm2_assumptions(&p, &trace, y, l))
        .collect()
}

/// Runs the configured loop: sample with replacement, evaluate gradients,
/// record a trace, check the guard, step.
pub fn run_unlearning(session: UnlearnSession<'_>) -> Result<RunResult> {
    let UnlearnSession {
        mut model,
        retain,
        forget,
        config: cfg,
        options,
    } = session;
    let root = RngStream::new(cfg.seed);
    let mut rng_r = root.derive(TAG_RETAIN);
    let mut rng_f = root.derive(TAG_FORGET);
    let specs = model.param_specs();
    let decay: Vec<bool> = specs.iter().map(|s| s.decay).collect();
    let mut opt = match cfg.optimizer {
        OptimizerConfig::Sgd => OptState::Sgd,
        OptimizerConfig::Adamw { .. } => {
            OptState::adamw_for(&model.params().iter().map(|p| p.len()).collect::<Vec<_>>())
        }
    };
    let (c_r, c_f) = cfg.step_coefficients();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut baseline: Option<f64> = None;
    let mut outcome = Outcome::Completed;

    for iter in 0..cfg.iterations {
        let (rx, ry) = sample(retain, &mut rng_r, cfg.batch_size);
        let (fx, fy) = if cfg.objective_mode == ObjectiveMode::GradientDifference && cfg.alpha_f == 0.0 {
            (Vec::new(), Vec::new())
        } else {
            sample(forget, &mut rng_f, cfg.batch_size)
        };
        let grads = match compute_objective_grads(&model, (&rx, &ry), (&fx, &fy), cfg.objective_mode, cfg.lambda) {
            Ok(g) => g,
            Err(Error::Numeric { context, layer }) => {
                outcome = Outcome::Diverged {
                    iter,
                    reason: format!("non-finite value in {context} (layer {layer})"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let step = grads.weighted(&model, c_r, c_f)?;
        let mut record = record_iteration(
            &model,
            &step,
            grads.retain.as_ref().map(|(e, _)| (e, ry.as_slice())),
            grads.forget.as_ref().map(|(e, _)| (e, fy.as_slice())),
            iter,
        );
        if options.theorem_checks && iter % options.check_every == 0 {
            if let Arch::Mlp { .. } = model.arch {
                let (x, y) = fx.first().zip(fy.first()).or(rx.first().zip(ry.first())).expect("non-empty batch");
                record.assumptions = assumption_reports(&model, x, *y)?;
            }
        }
        let total = record.grad_norm_total;
        let base = *baseline.get_or_insert(total);
        record.guard_flag = !total.is_finite() || total > cfg.guard.norm_factor * base;
        let losses_finite = [record.loss_retain, record.loss_forget]
            .iter()
            .zip([grads.retain.is_some(), grads.forget.is_some()])
            .all(|(l, present)| !present || l.is_finite());
        let guard_flag = record.guard_flag;
        history.push(record);
        if !losses_finite || !total.is_finite() {
            outcome = Outcome::Diverged {
                iter,
                reason: "non-finite loss or gradient".into(),
            };
            break;
        }
        if guard_flag && cfg.guard.mode == GuardMode::Halt {
            outcome = Outcome::GuardHalt { iter };
            break;
        }

        let mut theta = model.params_mut();
        match cfg.optimizer {
            OptimizerConfig::Sgd => match cfg.objective_mode {
                ObjectiveMode::GradientDifference => {
                    let zeros = || step.params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
                    let gr = grads.retain.as_ref().map(|(_, g)| g.clone()).unwrap_or_else(zeros);
                    let gf = grads.forget.as_ref().map(|(_, g)| g.clone()).unwrap_or_else(zeros);
                    grad_difference_step(&mut theta, &gr, &gf, cfg.alpha_r, cfg.alpha_f)?;
                }
                ObjectiveMode::PureAscent => {
                    let (_, gf) = grads.forget.as_ref().expect("checked by compute_objective_grads");
                    sgd_step(&mut theta, gf, cfg.learning_rate)?;
                }
                ObjectiveMode::Combined => {
                    let neg: Vec<Vec<f64>> = grads
                        .combined
                        .as_ref()
                        .expect("combined mode")
                        .iter()
                        .map(|g| g.iter().map(|v| -v).collect())
                        .collect();
                    sgd_step(&mut theta, &neg, cfg.learning_rate)?;
                }
            },
            OptimizerConfig::Adamw { beta1, beta2, eps, weight_decay } => {
                let hp = AdamWParams {
                    lr: cfg.learning_rate,
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                };
                adamw_step(&mut theta, &step.params, &mut opt, &hp, &decay)?;
            }
        }
        if !model.is_finite() {
            outcome = Outcome::Diverged {
                iter,
                reason: "non-finite weights after the update".into(),
            };
            break;
        }
    }
    Ok(RunResult {
        model,
        history,
        outcome,
    })
}

/// Plain supervised descent on `data` with the configured optimizer.
pub fn train_supervised(model: Model, data: &Dataset, config: &TrainConfig) -> Result<RunResult> {
    let cfg = TrainConfig {
        alpha_f: 0.0,
        objective_mode: ObjectiveMode::GradientDifference,
        ..config.clone()
    };
    let empty = Dataset::empty(data.num_classes);
    run_unlearning(UnlearnSession::new(model, data, &empty, cfg, SessionOptions::default())?)
}
