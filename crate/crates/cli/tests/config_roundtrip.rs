use bpu_cli::config::{load_config, parse_config, to_canonical_json, AdapterKindName, ExperimentConfig, ModelKind};
use bpu_cli::CliError;
use std::path::Path;

fn golden_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_config.json"))
}

#[test]
fn golden_config_round_trips() {
    let first = load_config(golden_path()).unwrap();
    let text = to_canonical_json(&first);
    let second = parse_config(&text).unwrap();
    assert_eq!(first, second);
    assert_eq!(text, to_canonical_json(&second));
}

#[test]
fn golden_config_values_survive_loading() {
    let c = load_config(golden_path()).unwrap();
    assert_eq!(c.model.kind, ModelKind::Mlp);
    assert_eq!(c.model.widths, vec![32, 16]);
    assert_eq!(c.adapter.kind, AdapterKindName::Clip);
    assert_eq!(c.adapter.targets.as_deref(), Some(&["fc2".to_string(), "fc3".to_string()][..]));
    assert_eq!(c.train.seed, 11);
    assert_eq!(c.train.batch_size, 16);
    assert_eq!(c.pretrain.weight_decay, 1e-4);
    assert_eq!(c.diagnostics.explosion_window, 3);
    assert_eq!(c.sweep.as_ref().unwrap().seeds, vec![0, 1]);
}

#[test]
fn empty_object_round_trips_to_defaults() {
    let c = parse_config("{}").unwrap();
    assert_eq!(c, ExperimentConfig::default());
    assert_eq!(parse_config(&to_canonical_json(&c)).unwrap(), c);
}

#[test]
fn every_violation_is_listed() {
    let err = parse_config(r#"{"adapter":{"omega":-1,"rank":0},"data":{"n":0}}"#).unwrap_err();
    let CliError::Invalid(v) = err else { panic!("expected validation error, got {err}") };
    assert!(v.iter().any(|m| m.contains("adapter.omega")), "{v:?}");
    assert!(v.iter().any(|m| m.contains("adapter.rank")), "{v:?}");
    assert!(v.iter().any(|m| m.contains("data.n")), "{v:?}");
}

#[test]
fn typo_in_nested_key_reports_position() {
    let err = parse_config("{\n  \"train\": {\"iteratons\": 5}\n}").unwrap_err();
    let CliError::Parse { line, .. } = err else { panic!("expected parse error, got {err}") };
    assert_eq!(line, 2);
    assert_eq!(err.exit_code(), 1);
}
