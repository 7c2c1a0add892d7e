//! Per-iteration instrumentation: Frobenius norms per layer, logit and
//! margin statistics, loss/margin containment checks, the layer-chain
//! assumptions behind the ascent-divergence argument, and growth detectors.

use crate::adapters::effective_update;
use crate::error::{contract, Result};
use crate::linalg::{norm2, project_onto, svd_small, Matrix, SVD_CAP};
use crate::model::{BatchEval, Component, Model, Slot};
use crate::nnet::{logit_gradient, loss_from_logits, loss_margin_bounds, margin, ForwardTrace, MlpParams};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EXPLOSION_FACTOR: f64 = 50.0;
pub const DEFAULT_EXPLOSION_WINDOW: usize = 5;
pub const DEFAULT_CHECK_EVERY: usize = 10;
pub const MARGIN_SLACK: f64 = 1e-12;

/// Declared in lexicographic order so the derived `Ord` sorts by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AdapterFro,
    AdapterGradFro,
    GradFro,
    WeightFro,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::AdapterFro => "adapter_fro",
            Metric::AdapterGradFro => "adapter_grad_fro",
            Metric::GradFro => "grad_fro",
            Metric::WeightFro => "weight_fro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Metric::AdapterFro, Metric::AdapterGradFro, Metric::GradFro, Metric::WeightFro]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub layer_id: usize,
    pub component: Component,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub layer: usize,
    /// σ_min of `D_l W_{l+1}ᵀ D_{l+1} … W_{L-1}ᵀ D_{L-1}`.
    pub sigma_min_chain: f64,
    /// `‖Proj_{V₁}(∇_z𝓛)‖ / ‖∇_z𝓛‖`, with `V₁` the top right singular
    /// vector of `W_Lᵀ`. Zero when `∇_z𝓛 = 0`.
    pub v1_projection_ratio: f64,
    pub a_prev_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss_retain: f64,
    pub loss_forget: f64,
    pub logit_norm_mean: f64,
    pub margin_mean: f64,
    /// Sorted by layer, then component, then metric.
    pub norms: Vec<NormEntry>,
    /// Frobenius norm of the full trainable step gradient.
    pub grad_norm_total: f64,
    pub guard_flag: bool,
    pub margin_violations: usize,
    pub assumptions: Vec<AssumptionReport>,
    /// Set when any recorded value is NaN or infinite.
    pub non_finite: bool,
}

impl TraceRecord {
    pub fn norm(&self, layer_id: usize, metric: Metric) -> Option<f64> {
        self.norms
            .iter()
            .find(|e| e.layer_id == layer_id && e.metric == metric)
            .map(|e| e.value)
    }
}

/// Gradients of the quantity the optimizer descends at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    /// Per slot, against the effective weight.
    pub weights: Vec<Matrix>,
    /// Per trainable parameter, in [`Model::params`] order.
    pub params: Vec<Vec<f64>>,
}

impl StepGrads {
    pub fn total_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginCheck {
    pub holds: bool,
    pub lower: f64,
    pub actual: f64,
    pub upper: f64,
}

/// `m ≤ 𝓛 ≤ ln(1 + (C−1)eᵐ)` within [`MARGIN_SLACK`].
pub fn check_margin_bound(z: &[f64], y: usize) -> MarginCheck {
    let (lower, upper) = loss_margin_bounds(z, y);
    let actual = loss_from_logits(z, y);
    MarginCheck {
        holds: actual >= lower - MARGIN_SLACK && actual <= upper + MARGIN_SLACK,
        lower,
        actual,
        upper,
    }
}

/// Norm entries for every trainable slot of `model`.
pub fn layer_norms(model: &Model, grads: &StepGrads) -> Vec<NormEntry> {
    let mut out = Vec::new();
    let mut param_idx = 0;
    for (slot, gw) in model.slots.iter().zip(&grads.weights) {
        let mut push = |metric, value| {
            out.push(NormEntry {
                layer_id: slot.layer_id,
                component: slot.component,
                metric,
                value,
            })
        };
        match &slot.slot {
            Slot::Frozen(_) => continue,
            Slot::Full(l) => {
                push(Metric::WeightFro, l.w.frobenius_norm());
                push(Metric::GradFro, gw.frobenius_norm());
                param_idx += if slot.has_bias { 2 } else { 1 };
            }
            Slot::Adapted(ap) => {
                push(Metric::WeightFro, ap.effective_weight().frobenius_norm());
                push(Metric::GradFro, gw.frobenius_norm());
                push(Metric::AdapterFro, effective_update(ap).frobenius_norm());
                let sq: f64 = grads.params[param_idx..param_idx + 2]
                    .iter()
                    .flat_map(|p| p.iter())
                    .map(|v| v * v)
                    .sum();
                push(Metric::AdapterGradFro, sq.sqrt());
                param_idx += 2;
            }
        }
    }
    out.sort_by(|a, b| (a.layer_id, a.component, a.metric).cmp(&(b.layer_id, b.component, b.metric)));
    out
}

/// Assembles one trace record. `forget` supplies logit and margin
/// statistics; the margin check covers both batches.
pub fn record_iteration(
    model: &Model,
    grads: &StepGrads,
    retain: Option<(&BatchEval, &[usize])>,
    forget: Option<(&BatchEval, &[usize])>,
    iter: usize,
) -> TraceRecord {
    let norms = layer_norms(model, grads);
    let mut violations = 0;
    for (eval, ys) in retain.iter().chain(forget.iter()) {
        violations += eval
            .logits
            .iter()
            .zip(ys.iter())
            .filter(|(z, &y)| !check_margin_bound(z, y).holds)
            .count();
    }
    let (logit_norm_mean, margin_mean) = match forget {
        Some((eval, ys)) => {
            let n = ys.len() as f64;
            (
                eval.logits.iter().map(|z| norm2(z)).sum::<f64>() / n,
                eval.logits.iter().zip(ys).map(|(z, &y)| margin(z, y)).sum::<f64>() / n,
            )
        }
        None => (f64::NAN, f64::NAN),
    };
    let loss_retain = retain.map_or(f64::NAN, |(e, _)| e.loss);
    let loss_forget = forget.map_or(f64::NAN, |(e, _)| e.loss);
    let grad_norm_total = grads.total_norm();
    let present = [
        retain.map(|_| loss_retain),
        forget.map(|_| loss_forget),
        forget.map(|_| logit_norm_mean),
        forget.map(|_| margin_mean),
        Some(grad_norm_total),
    ];
    let non_finite = present.iter().flatten().any(|v| !v.is_finite())
        || norms.iter().any(|e| !e.value.is_finite());
    TraceRecord {
        iter,
        loss_retain,
        loss_forget,
        logit_norm_mean,
        margin_mean,
        norms,
        grad_norm_total,
        guard_flag: false,
        margin_violations: violations,
        assumptions: Vec::new(),
        non_finite,
    }
}

/// Layer-chain measurements at layer `layer_l` (1-based, `1 ≤ l ≤ L−1`).
pub fn check_thm2_assumptions(
    model: &MlpParams,
    trace: &ForwardTrace,
    y: usize,
    layer_l: usize,
) -> Result<AssumptionReport> {
    let depth = model.depth();
    if layer_l == 0 || layer_l >= depth {
        return contract(format!("layer {layer_l} outside 1..={}", depth.saturating_sub(1)));
    }
    if let Some(w) = model.widths().iter().find(|&&w| w > SVD_CAP) {
        return contract(format!(
            "diagnostic model width {w} exceeds the SVD cap of {SVD_CAP}"
        ));
    }
    let sigma = model.activation.as_map();
    let d = |l: usize| -> Vec<f64> { trace.h[l - 1].iter().map(|&h| sigma.derivative(h)).collect() };
    let mut chain = Matrix::diag(&d(layer_l));
    for k in layer_l + 1..depth {
        chain = chain.matmul_t(&model.layers[k - 1].w)?;
        let dk = d(k);
        for i in 0..chain.rows() {
            for (j, s) in dk.iter().enumerate() {
                chain[(i, j)] *= s;
            }
        }
    }
    let sigma_min_chain = svd_small(&chain)?.sigma_min();

    let w_last_t = model.layers[depth - 1].w.transpose();
    let svd = svd_small(&w_last_t)?;
    let v1 = svd.v.col(0);
    let gz = logit_gradient(&trace.p, y);
    let gz_norm = norm2(&gz);
    let v1_projection_ratio = if gz_norm == 0.0 {
        0.0
    } else {
        (norm2(&project_onto(&gz, &v1)?) / gz_norm).min(1.0)
    };
    Ok(AssumptionReport {
        layer: layer_l,
        sigma_min_chain,
        v1_projection_ratio,
        a_prev_norm: norm2(&trace.a[depth - 1]),
    })
}

/// Series extracted from a trace history for detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricSelector {
    Norm { layer_id: usize, metric: Metric },
    GradNormTotal,
    LogitNormMean,
    LossForget,
}

impl MetricSelector {
    pub fn value(&self, r: &TraceRecord) -> Option<f64> {
        match *self {
            MetricSelector::Norm { layer_id, metric } => r.norm(layer_id, metric),
            MetricSelector::GradNormTotal => Some(r.grad_norm_total),
            MetricSelector::LogitNormMean => Some(r.logit_norm_mean),
            MetricSelector::LossForget => Some(r.loss_forget),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplosionEvent {
    pub fired: bool,
    pub first_iter: Option<usize>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn series(history: &[TraceRecord], selector: &MetricSelector) -> Result<Vec<f64>> {
    history
        .iter()
        .map(|r| match selector.value(r) {
            Some(v) => Ok(v),
            None => contract(format!("metric {selector:?} missing at iteration {}", r.iter)),
        })
        .collect()
}

/// Fires at the first record whose trailing `window`-median exceeds
/// `factor` times the first record's value.
pub fn detect_explosion(
    history: &[TraceRecord],
    selector: MetricSelector,
    factor: f64,
    window: usize,
) -> Result<ExplosionEvent> {
    if history.is_empty() {
        return contract("detect_explosion needs a non-empty history");
    }
    if !(factor > 1.0) || window == 0 {
        return contract(format!("detect_explosion needs factor > 1 and window >= 1, got {factor}, {window}"));
    }
    let values = series(history, &selector)?;
    Ok(detect_in_series(&values, factor, window)
        .map(|i| ExplosionEvent {
            fired: true,
            first_iter: Some(history[i].iter),
        })
        .unwrap_or(ExplosionEvent {
            fired: false,
            first_iter: None,
        }))
}

/// Index form of [`detect_explosion`] over a raw series.
pub fn detect_in_series(values: &[f64], factor: f64, window: usize) -> Option<usize> {
    let threshold = factor * values.first()?;
    (window.saturating_sub(1)..values.len())
        .find(|&i| median(&values[i + 1 - window..=i]) > threshold)
}

/// Final-window median over initial value of `sqrt(Σ value²)` across the
/// component's entries.
pub fn component_growth_summary(
    history: &[TraceRecord],
    component: Component,
    metric: Metric,
    window: usize,
) -> Result<f64> {
    if history.is_empty() || window == 0 {
        return contract("component_growth_summary needs a non-empty history and window >= 1");
    }
    let aggregate = |r: &TraceRecord| -> Option<f64> {
        let vals: Vec<f64> = r
            .norms
            .iter()
            .filter(|e| e.component == component && e.metric == metric)
            .map(|e| e.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let series: Option<Vec<f64>> = history.iter().map(aggregate).collect();
    let Some(series) = series else {
        return contract(format!(
            "component {} with metric {} absent from the history",
            component.as_str(),
            metric.as_str()
        ));
    };
    let initial = series[0];
    if initial == 0.0 {
        return contract("component growth undefined for a zero initial norm");
    }
    let w = window.min(series.len());
    Ok(median(&series[series.len() - w..]) / initial)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iter: usize, entries: &[(usize, Component, Metric, f64)]) -> TraceRecord {
        TraceRecord {
            iter,
            loss_retain: 0.0,
            loss_forget: 0.0,
            logit_norm_mean: 0.0,
            margin_mean: 0.0,
            norms: entries
                .iter()
                .map(|&(layer_id, component, metric, value)| NormEntry {
                    layer_id,
                    component,
                    metric,
                    value,
                })
                .collect(),
            grad_norm_total: 0.0,
            guard_flag: false,
            margin_violations: 0,
            assumptions: Vec::new(),
            non_finite: false,
        }
    }

    fn series_history(values: &[f64]) -> Vec<TraceRecord> {
        values
            .iter()
            .enumerate()
            .map(|(t, &v)| record(t, &[(1, Component::Ffn, Metric::WeightFro, v)]))
            .collect()
    }

    const SEL: MetricSelector = MetricSelector::Norm {
        layer_id: 1,
        metric: Metric::WeightFro,
    };

    #[test]
    fn constant_series_never_fires() {
        let h = series_history(&[3.0; 100]);
        assert!(!detect_explosion(&h, SEL, 50.0, 5).unwrap().fired);
    }

    #[test]
    fn geometric_series_fires_at_log_threshold() {
        let values: Vec<f64> = (0..100).map(|t| 1.1f64.powi(t)).collect();
        let ev = detect_explosion(&series_history(&values), SEL, 50.0, 1).unwrap();
        // Least t with 1.1^t > 50 is ceil(ln 50 / ln 1.1) = 42.
        assert_eq!(ev.first_iter, Some((50f64.ln() / 1.1f64.ln()).ceil() as usize));
        assert_eq!(ev.first_iter, Some(42));
    }

    #[test]
    fn single_spike_is_filtered() {
        let mut values = vec![1.0; 30];
        values[12] = 1e6;
        assert!(!detect_explosion(&series_history(&values), SEL, 50.0, 5).unwrap().fired);
    }

    #[test]
    fn empty_history_is_rejected() {
        assert!(detect_explosion(&[], SEL, 50.0, 5).is_err());
    }

    #[test]
    fn growth_of_constant_and_ramp() {
        let h = series_history(&[2.0; 10]);
        assert_eq!(component_growth_summary(&h, Component::Ffn, Metric::WeightFro, 5).unwrap(), 1.0);
        let ramp: Vec<f64> = (1..=11).map(f64::from).collect();
        let h = series_history(&ramp);
        assert_eq!(component_growth_summary(&h, Component::Ffn, Metric::WeightFro, 1).unwrap(), 11.0);
        assert!(component_growth_summary(&h, Component::Attention, Metric::WeightFro, 1).is_err());
    }

    #[test]
    fn growth_aggregates_entries_in_quadrature() {
        let h = vec![
            record(0, &[(1, Component::Ffn, Metric::GradFro, 3.0), (2, Component::Ffn, Metric::GradFro, 4.0)]),
            record(1, &[(1, Component::Ffn, Metric::GradFro, 6.0), (2, Component::Ffn, Metric::GradFro, 8.0)]),
        ];
        assert_eq!(component_growth_summary(&h, Component::Ffn, Metric::GradFro, 1).unwrap(), 2.0);
    }

    #[test]
    fn margin_check_examples() {
        let c = check_margin_bound(&[0.0, 0.0], 0);
        assert!(c.holds && c.lower == 0.0 && (c.upper - 2f64.ln()).abs() < 1e-15);
        assert!(check_margin_bound(&[10.0, 0.0, -3.0], 2).holds);
    }

    #[test]
    fn metric_names_sort_like_enum() {
        let all = [Metric::AdapterFro, Metric::AdapterGradFro, Metric::GradFro, Metric::WeightFro];
        let mut names: Vec<_> = all.iter().map(|m| m.as_str()).collect();
        names.sort();
        assert_eq!(names, all.iter().map(|m| m.as_str()).collect::<Vec<_>>());
        assert_eq!(Metric::parse("grad_fro"), Some(Metric::GradFro));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
