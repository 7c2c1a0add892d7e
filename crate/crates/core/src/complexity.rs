//! Closed-form operation and parameter counts for an adapted `k x d`
//! layer (input width `d`, output width `k`, rank `r`).
//!
//! Counts are leading terms with unit constants:
//!
//! | term            | count          |
//! |-----------------|----------------|
//! | base `W₀x`      | `dk`           |
//! | low-rank        | `dr + kr`      |
//! | sine map        | `kd`           |
//! | backward extra  | `kd(1 + r)`    |
//! | parameters      | `(d + k)r`     |

use crate::adapters::{adapter_forward, AdapterKind, AdapterParams};
use crate::error::{contract, Result};
use crate::linalg::Matrix;
use crate::rng::{rng_gaussian_matrix, RngStream};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub d: u64,
    pub k: u64,
    pub r: u64,
    pub base_ops: u128,
    pub lowrank_ops: u128,
    pub sine_ops: u128,
    pub total_forward_ops: u128,
    pub backward_extra_ops: u128,
    pub param_count: u128,
    pub overhead_ratio: f64,
}

fn positive(args: &[(&str, u64)]) -> Result<()> {
    match args.iter().find(|(_, v)| *v == 0) {
        Some((name, _)) => contract(format!("{name} must be >= 1")),
        None => Ok(()),
    }
}

pub fn lora_param_count(d: u64, k: u64, r: u64) -> Result<u128> {
    positive(&[("d", d), ("k", k), ("r", r)])?;
    Ok((d as u128 + k as u128) * r as u128)
}

pub fn backward_extra_cost(d: u64, k: u64, r: u64) -> Result<u128> {
    positive(&[("d", d), ("k", k), ("r", r)])?;
    Ok(k as u128 * d as u128 * (1 + r as u128))
}

/// `kd / ((d + k) r)`: sine-map work relative to the low-rank work.
pub fn overhead_ratio(d: u64, k: u64, r: u64) -> Result<f64> {
    let kd = k as u128 * d as u128;
    Ok(kd as f64 / lora_param_count(d, k, r)? as f64)
}

/// `k / n²`: sine-map work relative to attention's `n²d`.
pub fn attention_ratio(k: u64, n: u64) -> Result<f64> {
    positive(&[("k", k), ("n", n)])?;
    Ok(k as f64 / (n as u128 * n as u128) as f64)
}

pub fn forward_cost(d: u64, k: u64, r: u64) -> Result<CostBreakdown> {
    positive(&[("d", d), ("k", k), ("r", r)])?;
    let (dw, kw, rw) = (d as u128, k as u128, r as u128);
    let base_ops = dw * kw;
    let lowrank_ops = dw * rw + kw * rw;
    let sine_ops = kw * dw;
    Ok(CostBreakdown {
        d,
        k,
        r,
        base_ops,
        lowrank_ops,
        sine_ops,
        total_forward_ops: base_ops + lowrank_ops + sine_ops,
        backward_extra_ops: backward_extra_cost(d, k, r)?,
        param_count: lora_param_count(d, k, r)?,
        overhead_ratio: overhead_ratio(d, k, r)?,
    })
}

pub fn rank_table(d: u64, k: u64, ranks: &[u64]) -> Result<Vec<CostBreakdown>> {
    ranks.iter().map(|&r| forward_cost(d, k, r)).collect()
}

/// Mean wall-clock nanoseconds of `adapter_forward` per rank, for a sine
/// adapter on an `out x inp` layer. Informational only.
pub fn bench_adapter_forward(out: usize, inp: usize, ranks: &[usize], reps: usize) -> Result<Vec<(usize, f64)>> {
    let mut s = RngStream::new(0xBE7C);
    let x = s.gaussian_vec(inp, 0.0, 1.0);
    ranks
        .iter()
        .map(|&r| {
            let ap = AdapterParams::new(
                rng_gaussian_matrix(&mut s, out, r, 0.0, 0.1),
                rng_gaussian_matrix(&mut s, inp, r, 0.0, 0.1),
                AdapterKind::Sine { omega: 100.0 },
                Matrix::zeros(out, inp),
                vec![0.0; out],
            )?;
            let start = Instant::now();
            let mut sink = 0.0;
            for _ in 0..reps.max(1) {
                sink += adapter_forward(&ap, &x)?[0];
            }
            std::hint::black_box(sink);
            Ok((r, start.elapsed().as_nanos() as f64 / reps.max(1) as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        let c = forward_cost(1, 1, 1).unwrap();
        assert_eq!((c.base_ops, c.lowrank_ops, c.sine_ops, c.total_forward_ops), (1, 2, 1, 4));
        assert_eq!(lora_param_count(1, 1, 1).unwrap(), 2);
        assert_eq!(backward_extra_cost(1, 1, 1).unwrap(), 2);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(backward_extra_cost(4, 4, 0).is_err());
        assert!(forward_cost(0, 4, 1).is_err());
        assert!(attention_ratio(4, 0).is_err());
    }

    #[test]
    fn backward_extra_at_reference_dims() {
        assert_eq!(backward_extra_cost(4096, 11008, 4).unwrap(), 5 * 45_088_768);
        assert_eq!(backward_extra_cost(4096, 11008, 4).unwrap(), 225_443_840);
    }

    #[test]
    fn square_half_rank_ratio_is_one() {
        for d in [2u64, 8, 64, 1024] {
            assert_eq!(overhead_ratio(d, d, d / 2).unwrap(), 1.0);
        }
    }

    #[test]
    fn attention_ratio_identities() {
        assert_eq!(attention_ratio(11008, 1).unwrap(), 11008.0);
        assert_eq!(attention_ratio(64 * 64, 64).unwrap(), 1.0);
    }

    #[test]
    fn sine_ops_rank_independent() {
        let t = rank_table(4096, 11008, &[4, 8, 16, 32]).unwrap();
        assert!(t.iter().all(|c| c.sine_ops == t[0].sine_ops));
    }

    #[test]
    fn wide_counts_do_not_overflow() {
        let c = forward_cost(1 << 20, 1 << 20, 1 << 16).unwrap();
        assert_eq!(c.backward_extra_ops, (1u128 << 40) * ((1 << 16) + 1));
        assert_eq!(c.param_count, (1u128 << 21) << 16);
    }
}
