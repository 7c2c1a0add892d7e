use crate::config::{load_config, ExperimentConfig};
use crate::emit::{self, config_hash, ensure_dir, fmt_f64, to_json_text, write_file, write_run};
use crate::error::{CliError, CliResult};
use crate::experiment::{run_experiment, ExperimentOutput};
use bpu_core::complexity::{attention_ratio, bench_adapter_forward, rank_table};
use bpu_core::gradcheck::run_all;
use bpu_core::unlearn::{GuardMode, Outcome};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ENV_DEFAULT_OUT: &str = "BPU_DEFAULT_OUT";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
}

impl Common {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    /// `--out`, then the config's `output.directory`, then the
    /// environment, then `runs`.
    pub fn out_root(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
            .or_else(|| std::env::var_os(ENV_DEFAULT_OUT).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// Exit status of a finished run: 2 when a halting guard stopped it.
fn run_status(cfg: &ExperimentConfig, out: &ExperimentOutput) -> CliResult<()> {
    match out.run.outcome {
        Outcome::GuardHalt { iter } => Err(CliError::GuardHalt { iter }),
        Outcome::Diverged { iter, .. } if cfg.diagnostics.guard.mode == GuardMode::Halt => {
            Err(CliError::GuardHalt { iter })
        }
        _ => Ok(()),
    }
}

pub fn cmd_gradcheck(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    let start = Instant::now();
    let reports = run_all(cfg.train.seed, cfg.adapter.omega)?;
    let passed = reports.iter().all(|r| r.passed);
    for r in &reports {
        common.note(format!(
            "{:<28} cases {:>3}  max error {:.3e}  tolerance {:.0e}  {}",
            r.name,
            r.cases,
            r.max_error,
            r.tolerance,
            if r.passed { "ok" } else { "FAILED" }
        ));
    }
    let doc = to_json_text(&json!({
        "seed": cfg.train.seed,
        "omega": cfg.adapter.omega,
        "passed": passed,
        "suites": reports,
    }));
    print!("{doc}");
    if let Some(dir) = &common.out {
        ensure_dir(dir)?;
        write_file(&dir.join("gradcheck.json"), &doc)?;
    }
    common.note(format!("gradcheck finished in {:.2}s", start.elapsed().as_secs_f64()));
    if passed {
        Ok(())
    } else {
        Err(bpu_core::Error::Contract("gradient check failed".into()).into())
    }
}

pub fn cmd_unlearn(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    let dir = common.out_root(&cfg);
    common.note(format!("unlearn: config {} seed {} -> {}", &config_hash(&cfg)[..12], cfg.train.seed, dir.display()));
    let start = Instant::now();
    let out = run_experiment(&cfg)?;
    write_run(&dir, &cfg, &out, start.elapsed().as_secs_f64())?;
    let f = &out.final_report;
    common.note(format!(
        "{:?} after {} iterations: forget acc {:.3}, retain acc {:.3}, FQ {:.3e}, MU {:.3}, MA {:.3}",
        out.run.outcome,
        out.run.history.len(),
        f.forget_acc,
        f.retain_acc,
        f.forget_quality_proxy,
        f.model_utility_proxy,
        f.membership_attack_acc
    ));
    run_status(&cfg, &out)
}

/// One sweep cell: the overridden config plus the values that produced it.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub config: ExperimentConfig,
    pub values: Vec<Value>,
}

/// Cartesian product of the sweep lists (keys in sorted order, values in
/// listed order) times the seeds. Every cell is validated before any runs.
pub fn expand_sweep(cfg: &ExperimentConfig) -> CliResult<(Vec<String>, Vec<SweepCell>)> {
    let Some(sweep) = &cfg.sweep else {
        return Err(CliError::Invalid(vec!["sweep section is required for the sweep command".into()]));
    };
    let mut base = cfg.clone();
    base.sweep = None;
    let keys: Vec<String> = sweep.params.keys().cloned().collect();
    let mut errors = Vec::new();
    for (k, vals) in &sweep.params {
        if vals.is_empty() {
            errors.push(format!("sweep.params.{k} must list at least one value"));
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Invalid(errors));
    }
    let mut combos: Vec<Vec<Value>> = vec![Vec::new()];
    for k in &keys {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                sweep.params[k].iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    let seeds = if sweep.seeds.is_empty() {
        vec![cfg.train.seed]
    } else {
        sweep.seeds.clone()
    };
    let mut cells = Vec::new();
    for combo in &combos {
        let mut c = base.clone();
        for (k, v) in keys.iter().zip(combo) {
            c = c.with_override(k, v)?;
        }
        let v = c.violations();
        if !v.is_empty() {
            errors.extend(v.into_iter().map(|m| format!("sweep cell {combo:?}: {m}")));
            continue;
        }
        for &s in &seeds {
            let mut cs = c.clone();
            cs.train.seed = s;
            cells.push(SweepCell {
                config: cs,
                values: combo.clone(),
            });
        }
    }
    if errors.is_empty() {
        Ok((keys, cells))
    } else {
        Err(CliError::Invalid(errors))
    }
}

pub fn cell_dir_name(cfg: &ExperimentConfig) -> String {
    format!("{}-seed{}", &config_hash(cfg)[..12], cfg.train.seed)
}

pub fn cmd_sweep(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    let root = common.out_root(&cfg);
    let (keys, cells) = expand_sweep(&cfg)?;
    common.note(format!("sweep: {} runs -> {}", cells.len(), root.display()));
    ensure_dir(&root)?;
    let results: Vec<CliResult<(String, String, &SweepCell, ExperimentOutput)>> = cells
        .par_iter()
        .map(|cell| {
            let start = Instant::now();
            let out = run_experiment(&cell.config)?;
            let name = cell_dir_name(&cell.config);
            write_run(&root.join(&name), &cell.config, &out, start.elapsed().as_secs_f64())?;
            common.note(format!("  {name}: {:?}", out.run.outcome));
            Ok((config_hash(&cell.config), name, cell, out))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    rows.sort_by(|a, b| (&a.0, a.2.config.train.seed).cmp(&(&b.0, b.2.config.train.seed)));
    let mut csv = String::from("config_hash,seed,run_dir");
    for k in &keys {
        let _ = write!(csv, ",{k}");
    }
    csv.push_str(",outcome,forget_quality_proxy,model_utility_proxy,membership_attack_acc,retain_acc,forget_acc\n");
    for (hash, name, cell, out) in &rows {
        let _ = write!(csv, "{hash},{},{name}", cell.config.train.seed);
        for v in &cell.values {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = write!(csv, ",{}", csv_field(&text));
        }
        let f = &out.final_report;
        let outcome = match &out.run.outcome {
            Outcome::Completed => "completed".to_string(),
            Outcome::GuardHalt { iter } => format!("guard_halt@{iter}"),
            Outcome::Diverged { iter, .. } => format!("diverged@{iter}"),
        };
        let _ = writeln!(
            csv,
            ",{outcome},{},{},{},{},{}",
            fmt_f64(f.forget_quality_proxy),
            fmt_f64(f.model_utility_proxy),
            fmt_f64(f.membership_attack_acc),
            fmt_f64(f.retain_acc),
            fmt_f64(f.forget_acc)
        );
    }
    write_file(&root.join("index.csv"), &csv)?;
    rows.iter().try_for_each(|(_, _, cell, out)| run_status(&cell.config, out))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ComplexityArgs {
    pub d: u64,
    pub k: u64,
    pub ranks: Vec<u64>,
    pub seq_len: u64,
    pub bench: bool,
}

impl Default for ComplexityArgs {
    fn default() -> Self {
        Self {
            d: 4096,
            k: 11008,
            ranks: vec![4, 8, 16, 32],
            seq_len: 512,
            bench: false,
        }
    }
}

pub fn complexity_table(args: &ComplexityArgs) -> CliResult<String> {
    let rows = rank_table(args.d, args.k, &args.ranks)?;
    let mut s = String::new();
    let _ = writeln!(s, "d = {}, k = {}", args.d, args.k);
    let _ = writeln!(
        s,
        "{:>6} {:>14} {:>16} {:>14} {:>18} {:>18} {:>10}",
        "rank", "params", "lowrank_ops", "sine_ops", "total_fwd_ops", "backward_extra", "overhead"
    );
    for c in &rows {
        let _ = writeln!(
            s,
            "{:>6} {:>14} {:>16} {:>14} {:>18} {:>18} {:>10.1}",
            c.r, c.param_count, c.lowrank_ops, c.sine_ops, c.total_forward_ops, c.backward_extra_ops, c.overhead_ratio
        );
    }
    let _ = writeln!(
        s,
        "sine / attention work at n = {}: {:.4}",
        args.seq_len,
        attention_ratio(args.k, args.seq_len)?
    );
    Ok(s)
}

pub fn cmd_complexity(common: &Common, args: &ComplexityArgs) -> CliResult<()> {
    print!("{}", complexity_table(args)?);
    if args.bench {
        let ranks: Vec<usize> = args.ranks.iter().map(|&r| r as usize).collect();
        for (r, ns) in bench_adapter_forward(256, 256, &ranks, 50)? {
            println!("bench 256x256 sine forward, rank {r}: {ns:.0} ns");
        }
    }
    common.note("complexity table done");
    Ok(())
}

/// Splits the run's CSV series into two-column `iter value` files under
/// `<run>/plot/`, one per traced metric.
pub fn cmd_report(common: &Common, run_dir: &Path) -> CliResult<()> {
    let plot = run_dir.join("plot");
    ensure_dir(&plot)?;
    let mut written = 0;
    for (file, key_cols) in [("scalars.csv", 0usize), ("grad_norm.csv", 0)] {
        let path = run_dir.join(file);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        for (ci, name) in header.iter().enumerate().skip(key_cols + 1) {
            let mut s = format!("# iter {name}\n");
            for r in &rows {
                let _ = writeln!(s, "{} {}", r[0], r.get(ci).copied().unwrap_or("NaN"));
            }
            write_file(&plot.join(format!("{name}.dat")), &s)?;
            written += 1;
        }
    }
    let norms = run_dir.join("norms.csv");
    if norms.exists() {
        let text = std::fs::read_to_string(&norms).map_err(|e| CliError::io(&norms, e))?;
        let mut series: std::collections::BTreeMap<String, String> = Default::default();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                continue;
            }
            let name = format!("layer{}_{}_{}", f[1], f[2], f[3]);
            let entry = series.entry(name.clone()).or_insert_with(|| format!("# iter {name}\n"));
            let _ = writeln!(entry, "{} {}", f[0], f[4]);
        }
        for (name, body) in &series {
            write_file(&plot.join(format!("{name}.dat")), body)?;
            written += 1;
        }
    }
    common.note(format!("report: {written} series written to {}", plot.display()));
    Ok(())
}

/// Re-exported for callers that want the artifact text without a run dir.
pub use emit::{norms_csv, scalars_csv};
