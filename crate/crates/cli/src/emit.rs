//! Run artifacts.
//!
//! * `scalars.csv`: `iter,loss_retain,loss_forget,logit_norm_mean,margin_mean,guard_flag`
//! * `norms.csv`: `iter,layer_id,component,metric,value`, sorted by the first four
//! * `grad_norm.csv`: `iter,grad_norm_total,margin_violations`
//! * `summary.json`: config echo, config hash, seeds, outcome, reports,
//!   explosion events
//! * `timing.json`: wall-clock seconds, the only non-deterministic file
//!
//! CSV floats use the shortest string that parses back to the same `f64`
//! (`NaN`, `inf`, `-inf` for non-finite values); JSON floats likewise, with
//! non-finite values written as `null`.

use crate::config::{to_canonical_json, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::ExperimentOutput;
use bpu_core::diagnostics::TraceRecord;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

pub const SCALARS_HEADER: &str = "iter,loss_retain,loss_forget,logit_norm_mean,margin_mean,guard_flag";
pub const NORMS_HEADER: &str = "iter,layer_id,component,metric,value";
pub const GRAD_HEADER: &str = "iter,grad_norm_total,margin_violations";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Git-style blob hash: SHA-256 over `"blob <len>\0" + bytes`, hex encoded.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hash of the canonical config with the seed zeroed, so runs that differ
/// only in seed share a hash.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.train.seed = 0;
    blob_hash(to_canonical_json(&c).as_bytes())
}

pub fn scalars_csv(history: &[TraceRecord]) -> String {
    let mut s = String::from(SCALARS_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iter,
            fmt_f64(r.loss_retain),
            fmt_f64(r.loss_forget),
            fmt_f64(r.logit_norm_mean),
            fmt_f64(r.margin_mean),
            u8::from(r.guard_flag)
        );
    }
    s
}

pub fn norms_csv(history: &[TraceRecord]) -> String {
    let mut s = String::from(NORMS_HEADER);
    s.push('\n');
    for r in history {
        let mut rows: Vec<_> = r.norms.iter().collect();
        rows.sort_by(|a, b| (a.layer_id, a.component, a.metric).cmp(&(b.layer_id, b.component, b.metric)));
        for e in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iter,
                e.layer_id,
                e.component.as_str(),
                e.metric.as_str(),
                fmt_f64(e.value)
            );
        }
    }
    s
}

pub fn grad_csv(history: &[TraceRecord]) -> String {
    let mut s = String::from(GRAD_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.iter, fmt_f64(r.grad_norm_total), r.margin_violations);
    }
    s
}

pub fn summary(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Value {
    let h = &out.run.history;
    let assumptions = h.iter().rev().find(|r| !r.assumptions.is_empty()).map(|r| {
        json!({
            "iter": r.iter,
            "reports": r.assumptions,
        })
    });
    json!({
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg.train.seed,
        "derived_seeds": out.seeds,
        "outcome": out.run.outcome,
        "iterations_run": h.len(),
        "original_report": out.original_report,
        "final_report": out.final_report,
        "explosion_events": out.explosions,
        "margin_violations_total": h.iter().map(|r| r.margin_violations).sum::<usize>(),
        "guard_flags_total": h.iter().filter(|r| r.guard_flag).count(),
        "latest_assumption_checks": assumptions,
        "split_sizes": {
            "retain": out.splits.retain.len(),
            "forget": out.splits.forget.len(),
            "holdout": out.splits.holdout.len(),
        },
        "wall_clock": "timing.json",
    })
}

pub fn to_json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes every artifact of one run into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput, seconds: f64) -> CliResult<()> {
    ensure_dir(dir)?;
    let h = &out.run.history;
    write_file(&dir.join("scalars.csv"), &scalars_csv(h))?;
    if cfg.output.emit_norms {
        write_file(&dir.join("norms.csv"), &norms_csv(h))?;
    }
    write_file(&dir.join("grad_norm.csv"), &grad_csv(h))?;
    write_file(&dir.join("summary.json"), &to_json_text(&summary(cfg, out)))?;
    write_file(
        &dir.join("timing.json"),
        &to_json_text(&json!({ "wall_clock_seconds": seconds })),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1e-7, 3.0, -2.5e300, 1.0 / 3.0, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }

    #[test]
    fn blob_hash_matches_git_for_empty_and_hello() {
        // `git hash-object --object-format=sha256` values.
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn seed_does_not_change_hash() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.seed = 9;
        assert_eq!(config_hash(&a), config_hash(&b));
        b.adapter.omega = 5.0;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn scalars_header_is_fixed() {
        assert_eq!(scalars_csv(&[]), format!("{SCALARS_HEADER}\n"));
    }
}
