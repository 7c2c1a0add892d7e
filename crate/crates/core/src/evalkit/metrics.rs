use super::data::Dataset;
use super::ks::{ks_pvalue, ks_statistic};
use crate::error::{contract, Result};
use crate::model::Model;
use crate::nnet::loss_from_logits;
use serde::{Deserialize, Serialize};

/// Model-utility proxy is the harmonic mean of retain and holdout accuracy;
/// forget quality is a KS p-value on true-class log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forget_quality_proxy: f64,
    pub model_utility_proxy: f64,
    pub membership_attack_acc: f64,
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub holdout_acc: f64,
    pub forget_loss_mean: f64,
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(model: &Model, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return contract("accuracy of an empty dataset");
    }
    let logits = model.logits_batch(&ds.inputs)?;
    let hits = logits.iter().zip(&ds.labels).filter(|(z, &y)| argmax(z) == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

pub fn per_example_losses(model: &Model, ds: &Dataset) -> Result<Vec<f64>> {
    let logits = model.logits_batch(&ds.inputs)?;
    Ok(logits.iter().zip(&ds.labels).map(|(z, &y)| loss_from_logits(z, y)).collect())
}

/// `log p_y` per example.
pub fn true_class_log_probs(model: &Model, ds: &Dataset) -> Result<Vec<f64>> {
    Ok(per_example_losses(model, ds)?.into_iter().map(|l| -l).collect())
}

pub fn forget_quality_proxy(unlearned: &Model, reference: &Model, forget: &Dataset) -> Result<f64> {
    let a = true_class_log_probs(unlearned, forget)?;
    let b = true_class_log_probs(reference, forget)?;
    ks_pvalue(ks_statistic(&a, &b)?, a.len(), b.len())
}

/// Zero when either input is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn model_utility_proxy(model: &Model, retain: &Dataset, holdout: &Dataset) -> Result<f64> {
    Ok(harmonic_mean(accuracy(model, retain)?, accuracy(model, holdout)?))
}

/// Best balanced accuracy of "member iff loss ≤ t" over every threshold at
/// a sample value (plus one below all of them), folded to `[0.5, 1]`.
pub fn membership_attack_from_losses(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return contract("membership attack needs members and nonmembers");
    }
    if members.iter().chain(nonmembers).any(|v| v.is_nan()) {
        return contract("membership attack losses contain NaN");
    }
    let mut m = members.to_vec();
    let mut n = nonmembers.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let (nm, nn) = (m.len() as f64, n.len() as f64);
    let mut best = 0.5f64;
    let (mut i, mut j) = (0, 0);
    while i < m.len() || j < n.len() {
        let t = match (m.get(i), n.get(j)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        while i < m.len() && m[i] <= t {
            i += 1;
        }
        while j < n.len() && n[j] <= t {
            j += 1;
        }
        let bacc = 0.5 * (i as f64 / nm + (nn - j as f64) / nn);
        best = best.max(bacc).max(1.0 - bacc);
    }
    Ok(best)
}

pub fn membership_attack_acc(model: &Model, members: &Dataset, nonmembers: &Dataset) -> Result<f64> {
    membership_attack_from_losses(&per_example_losses(model, members)?, &per_example_losses(model, nonmembers)?)
}

pub fn evaluate(
    model: &Model,
    reference: &Model,
    retain: &Dataset,
    forget: &Dataset,
    holdout: &Dataset,
) -> Result<EvalReport> {
    let retain_acc = accuracy(model, retain)?;
    let holdout_acc = accuracy(model, holdout)?;
    let forget_losses = per_example_losses(model, forget)?;
    Ok(EvalReport {
        forget_quality_proxy: forget_quality_proxy(model, reference, forget)?,
        model_utility_proxy: harmonic_mean(retain_acc, holdout_acc),
        membership_attack_acc: membership_attack_from_losses(&forget_losses, &per_example_losses(model, holdout)?)?,
        retain_acc,
        forget_acc: accuracy(model, forget)?,
        holdout_acc,
        forget_loss_mean: forget_losses.iter().sum::<f64>() / forget_losses.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(1.0, 1.0), 1.0);
        assert_eq!(harmonic_mean(0.0, 0.8), 0.0);
        assert_eq!(harmonic_mean(0.7, 0.0), 0.0);
        assert!((harmonic_mean(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn indistinguishable_losses() {
        let s = [0.3, 0.1, 0.7, 0.2];
        assert_eq!(membership_attack_from_losses(&s, &s).unwrap(), 0.5);
    }

    #[test]
    fn perfect_separation() {
        let c = 8f64.ln();
        assert_eq!(membership_attack_from_losses(&[0.0; 5], &[c; 7]).unwrap(), 1.0);
    }

    #[test]
    fn small_hand_case() {
        // Thresholds 0.1, 0.15, 0.2, 0.3 give balanced accuracies
        // 0.75, 0.5, 0.75, 0.5; the best is 0.75.
        let v = membership_attack_from_losses(&[0.1, 0.2], &[0.15, 0.3]).unwrap();
        assert_eq!(v, 0.75);
    }

    #[test]
    fn flipped_attack_is_folded() {
        assert_eq!(membership_attack_from_losses(&[5.0, 6.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn empty_sides_rejected() {
        assert!(membership_attack_from_losses(&[], &[1.0]).is_err());
    }
}
