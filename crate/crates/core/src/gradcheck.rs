//! Central finite-difference checks of every analytical gradient path,
//! shared by the test suites and the `gradcheck` command.
//!
//! Relative error is `|a − n| / max(|a|, |n|, REL_FLOOR)`, so entries whose
//! true gradient is far below the finite-difference noise floor are
//! compared absolutely.

use crate::adapters::{attach_adapters, AdapterKind, AttachMode};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{Model, Slot};
use crate::nnet::{loss_from_logits, mlp_backward, mlp_forward, mlp_tape_backward, Activation, MlpParams, ToyTransformerParams};
use crate::rng::{rng_gaussian_matrix, RngStream};
use serde::{Deserialize, Serialize};

pub const FD_STEP: f64 = 1e-6;
pub const REL_FLOOR: f64 = 1e-3;
pub const MLP_TOL: f64 = 1e-5;
pub const ADAPTER_TOL: f64 = 1e-5;
pub const TRANSFORMER_TOL: f64 = 1e-4;
pub const DUAL_TOL: f64 = 1e-10;
/// Minimum distance of every `ABᵀ` entry from a kink of relu or clip.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    /// Largest relative error, or largest absolute difference for the
    /// dual-backprop suite.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: impl Into<String>, cases: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases,
            max_error,
            tolerance,
            passed: max_error < tolerance,
        }
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn mean_loss(model: &Model, xs: &[Matrix], ys: &[usize]) -> Result<f64> {
    let logits = model.logits_batch(xs)?;
    Ok(logits.iter().zip(ys).map(|(z, &y)| loss_from_logits(z, y)).sum::<f64>() / ys.len() as f64)
}

/// Largest relative error between [`Model::param_grads`] and central
/// differences of the mean batch loss, over every trainable scalar.
pub fn model_fd_error(model: &Model, xs: &[Matrix], ys: &[usize]) -> Result<f64> {
    let refs: Vec<&Matrix> = xs.iter().collect();
    let analytic = model.param_grads(&model.batch_grad(&refs, ys)?)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for (k, &a) in grad.iter().enumerate() {
            let orig = probe.params()[pi][k];
            probe.params_mut()[pi][k] = orig + FD_STEP;
            let up = mean_loss(&probe, xs, ys)?;
            probe.params_mut()[pi][k] = orig - FD_STEP;
            let down = mean_loss(&probe, xs, ys)?;
            probe.params_mut()[pi][k] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok(worst)
}

fn random_widths(s: &mut RngStream, depth_lo: usize, depth_hi: usize) -> Vec<usize> {
    let depth = depth_lo + s.next_index(depth_hi - depth_lo + 1);
    let mut w: Vec<usize> = (0..depth).map(|_| 2 + s.next_index(5)).collect();
    w.push(2 + s.next_index(4));
    w
}

fn random_batch(s: &mut RngStream, n: usize, rows: usize, dim: usize, classes: usize) -> (Vec<Matrix>, Vec<usize>) {
    (0..n)
        .map(|_| (rng_gaussian_matrix(s, rows, dim, 0.0, 1.0), s.next_index(classes)))
        .unzip()
}

/// Fully trainable MLPs of depth 2–4 on single examples.
pub fn mlp_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut s = RngStream::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let widths = random_widths(&mut s, 2, 4);
        let act = [Activation::Tanh, Activation::Sigmoid][case % 2];
        let model = Model::from_mlp(MlpParams::init(&mut s, &widths, act)?);
        let (xs, ys) = random_batch(&mut s, 1, 1, widths[0], *widths.last().unwrap());
        worst = worst.max(model_fd_error(&model, &xs, &ys)?);
    }
    Ok(SuiteReport::new("mlp_backward", cases, worst, MLP_TOL))
}

fn kinks(kind: AdapterKind) -> Vec<f64> {
    match kind {
        AdapterKind::Relu => vec![0.0],
        AdapterKind::Clip { lo, hi } => vec![lo, hi],
        _ => Vec::new(),
    }
}

/// Factor scale per kind: large enough that clip saturates on some entries.
fn factor_std(kind: AdapterKind) -> f64 {
    match kind {
        AdapterKind::Clip { .. } => 1.0,
        AdapterKind::Sine { .. } => 0.1,
        _ => 0.5,
    }
}

/// Every layer adapted with `kind`, non-zero random factors, gradients
/// through the full network loss on a two-example batch.
pub fn adapter_suite(kind: AdapterKind, cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut s = RngStream::new(seed);
    let mut worst = 0.0f64;
    let sd = factor_std(kind);
    for _ in 0..cases {
        let widths = random_widths(&mut s, 1, 2);
        let base = Model::from_mlp(MlpParams::init(&mut s, &widths, Activation::Tanh)?);
        let targets: Vec<String> = base.slots.iter().map(|sl| sl.name.clone()).collect();
        let r = 1 + s.next_index(2);
        let mut model = attach_adapters(&base, &targets, kind, r, &mut s, AttachMode::FreezeRest)?;
        for slot in &mut model.slots {
            let Slot::Adapted(ap) = &mut slot.slot else { continue };
            let r = ap.rank().min(ap.out_dim()).min(ap.in_dim());
            loop {
                ap.a = rng_gaussian_matrix(&mut s, ap.out_dim(), r, 0.0, sd);
                ap.b = rng_gaussian_matrix(&mut s, ap.in_dim(), r, 0.0, sd);
                let prod = ap.a.matmul_t(&ap.b)?;
                let ks = kinks(kind);
                if prod.as_slice().iter().all(|v| ks.iter().all(|k| (v - k).abs() >= KINK_MARGIN)) {
                    break;
                }
            }
        }
        let (xs, ys) = random_batch(&mut s, 2, 1, widths[0], *widths.last().unwrap());
        worst = worst.max(model_fd_error(&model, &xs, &ys)?);
    }
    Ok(SuiteReport::new(format!("adapter_backward[{}]", kind.name()), cases, worst, ADAPTER_TOL))
}

/// Toy transformer gradients through the tape; even cases train every
/// weight, odd cases train tanh adapters on the value and feed-forward
/// weights.
pub fn transformer_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut s = RngStream::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let d = 2 + s.next_index(3);
        let d_ff = 2 + s.next_index(4);
        let c = 2 + s.next_index(3);
        let n = 1 + s.next_index(4);
        let act = [Activation::Tanh, Activation::Sigmoid][case % 2];
        let base = Model::from_transformer(ToyTransformerParams::init(&mut s, d, d_ff, c, act)?);
        let model = if case % 2 == 0 {
            base
        } else {
            let targets = ["attn.v", "ffn.w1", "ffn.w2"].map(String::from);
            let mut m = attach_adapters(&base, &targets, AdapterKind::Tanh, 1, &mut s, AttachMode::FreezeRest)?;
            for slot in &mut m.slots {
                if let Slot::Adapted(ap) = &mut slot.slot {
                    ap.b = rng_gaussian_matrix(&mut s, ap.in_dim(), ap.rank(), 0.0, 0.5);
                }
            }
            m
        };
        let (xs, ys) = random_batch(&mut s, 2, n, d, c);
        worst = worst.max(model_fd_error(&model, &xs, &ys)?);
    }
    Ok(SuiteReport::new("transformer_tape", cases, worst, TRANSFORMER_TOL))
}

/// Max absolute difference between closed-form and tape MLP gradients.
pub fn dual_backprop_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut s = RngStream::new(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let widths = random_widths(&mut s, 1, 4);
        let act = [Activation::Tanh, Activation::Relu, Activation::Sigmoid][case % 3];
        let params = MlpParams::init(&mut s, &widths, act)?;
        let x = s.gaussian_vec(widths[0], 0.0, 1.0);
        let y = s.next_index(*widths.last().unwrap());
        let closed = mlp_backward(&params, &mlp_forward(&params, &x)?, y)?;
        let taped = mlp_tape_backward(&params, &x, y)?;
        for (a, b) in closed.weights.iter().zip(&taped.weights) {
            worst = worst.max(a.sub(b)?.max_abs());
        }
        for (a, b) in closed.biases.iter().zip(&taped.biases) {
            for (u, v) in a.iter().zip(b) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok(SuiteReport::new("dual_backprop", cases, worst, DUAL_TOL))
}

pub fn all_adapter_kinds(omega: f64) -> [AdapterKind; 6] {
    [
        AdapterKind::Plain,
        AdapterKind::Sine { omega },
        AdapterKind::Tanh,
        AdapterKind::Sigmoid,
        AdapterKind::Relu,
        AdapterKind::Clip { lo: -1.5, hi: 1.5 },
    ]
}

/// Every suite at its full case count.
pub fn run_all(seed: u64, omega: f64) -> Result<Vec<SuiteReport>> {
    let mut out = vec![mlp_suite(100, seed)?];
    for (i, kind) in all_adapter_kinds(omega).into_iter().enumerate() {
        out.push(adapter_suite(kind, 100, seed.wrapping_add(1 + i as u64))?);
    }
    out.push(transformer_suite(20, seed.wrapping_add(11))?);
    out.push(dual_backprop_suite(50, seed.wrapping_add(12))?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert_eq!(rel_err(0.0, 1e-9), 1e-6);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_suites_pass() {
        assert!(mlp_suite(5, 1).unwrap().passed);
        assert!(adapter_suite(AdapterKind::Sine { omega: 100.0 }, 5, 2).unwrap().passed);
        assert!(transformer_suite(2, 3).unwrap().passed);
        assert!(dual_backprop_suite(5, 4).unwrap().passed);
    }
}
