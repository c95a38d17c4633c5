//! End-to-end CLI behavior: exit codes, output schema, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cfx() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfx"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/assets")
        .join(name)
}

fn stdout_json(output: &Output) -> Value {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

/// Minimal structural validator for the subset of JSON Schema the shipped
/// schema uses: type, properties, required, items, $ref into definitions.
fn validate_schema(schema: &Value, root: &Value, value: &Value, path: &str) {
    let schema = match schema.get("$ref").and_then(Value::as_str) {
        Some(reference) => {
            let key = reference.trim_start_matches("#/definitions/");
            &root["definitions"][key]
        }
        None => schema,
    };
    if let Some(expected) = schema.get("type").and_then(Value::as_str) {
        let ok = match expected {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            other => panic!("unsupported schema type {other}"),
        };
        assert!(ok, "{path}: expected {expected}, got {value}");
    }
    if let Some(required) = schema.get("required").and_then(Value::as_array) {
        for key in required {
            let key = key.as_str().unwrap();
            assert!(
                value.get(key).is_some(),
                "{path}: missing required field '{key}'"
            );
        }
    }
    if let Some(properties) = schema.get("properties").and_then(Value::as_object) {
        for (key, sub) in properties {
            if let Some(field) = value.get(key) {
                validate_schema(sub, root, field, &format!("{path}.{key}"));
            }
        }
    }
    if let Some(items) = schema.get("items") {
        if let Some(array) = value.as_array() {
            for (i, item) in array.iter().enumerate() {
                validate_schema(items, root, item, &format!("{path}[{i}]"));
            }
        }
    }
}

#[test]
fn replay_reports_the_recorded_totals() {
    for (name, total) in [
        ("trajectory_factual.txt", "183.2"),
        ("trajectory_cf_pickup.txt", "199.0"),
        ("trajectory_cf_planner.txt", "209.0"),
    ] {
        let out = cfx()
            .args(["replay", fixture(name).to_str().unwrap(), "--through-model"])
            .output()
            .unwrap();
        let doc = stdout_json(&out);
        assert_eq!(doc["total"], total, "{name}");
        assert_eq!(doc["model_matches_fixture"], true, "{name}");
    }
}

#[test]
fn corrupted_fixture_exits_nonzero() {
    let text = std::fs::read_to_string(fixture("trajectory_factual.txt")).unwrap();
    let corrupted = text.replace("Total Reward: 183.2", "Total Reward: 184.2");
    let dir = std::env::temp_dir().join("cfx_cli_io_corrupt");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.txt");
    std::fs::write(&path, corrupted).unwrap();
    let out = cfx().args(["replay", path.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2() {
    let out = cfx()
        .args(["decompose", "--env", "nosuch", "--query", "pickup"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = cfx()
        .args(["decompose", "--env", "gridworld"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "missing query spec");
}

#[test]
fn oracle_cap_exceeded_exits_4() {
    let out = cfx()
        .args([
            "oracle",
            "--env",
            "gridworld",
            "--query",
            "pickup",
            "--oracle-cap",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn decompose_report_validates_against_the_shipped_schema() {
    let schema: Value = serde_json::from_str(include_str!("../assets/report.schema.json")).unwrap();
    let out = cfx()
        .args([
            "decompose",
            "--env",
            "gridworld",
            "--query",
            "pickup",
            "--seed",
            "1",
            "--samples",
            "50",
            "--h1",
            "30",
            "--h2",
            "10",
            "--oracle",
        ])
        .output()
        .unwrap();
    let doc = stdout_json(&out);
    validate_schema(&schema, &schema, &doc, "$");
    assert!(doc["shapley"].is_object());
    assert!(doc["icc"].is_object());
    assert!(doc["oracle"].is_object());
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let run = |workers: &str| -> Value {
        let out = cfx()
            .args([
                "decompose",
                "--env",
                "gridworld",
                "--query",
                "pickup",
                "--seed",
                "3",
                "--samples",
                "60",
                "--h1",
                "20",
                "--h2",
                "8",
                "--workers",
                workers,
            ])
            .output()
            .unwrap();
        let mut doc = stdout_json(&out);
        doc.as_object_mut().unwrap().remove("generated_unix_ms");
        doc
    };
    let a = run("1");
    let b = run("4");
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn seed_env_var_is_the_fallback() {
    let run = |envseed: Option<&str>, flag: Option<&str>| -> Value {
        let mut cmd = cfx();
        cmd.args([
            "effects",
            "--env",
            "gridworld",
            "--query",
            "pickup",
            "--samples",
            "30",
        ]);
        cmd.env_remove("CFX_SEED");
        if let Some(s) = envseed {
            cmd.env("CFX_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let mut doc = stdout_json(&cmd.output().unwrap());
        doc.as_object_mut().unwrap().remove("generated_unix_ms");
        doc
    };
    let via_env = run(Some("9"), None);
    let via_flag = run(None, Some("9"));
    assert_eq!(via_env["seed"], 9);
    assert_eq!(
        serde_json::to_string(&via_env).unwrap(),
        serde_json::to_string(&via_flag).unwrap()
    );
}

#[test]
fn single_point_sweep_matches_decompose() {
    let sweep = cfx()
        .args([
            "sweep",
            "--env",
            "sepsis",
            "--rounds",
            "4",
            "--query",
            "clinician",
            "--grid",
            "mu=0.5",
            "--seed",
            "5",
            "--samples",
            "100",
        ])
        .output()
        .unwrap();
    assert!(sweep.status.success());
    let text = String::from_utf8(sweep.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("mu,tcfe"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let tcfe_sweep: f64 = row[1].parse().unwrap();

    let dec = cfx()
        .args([
            "decompose",
            "--env",
            "sepsis",
            "--rounds",
            "4",
            "--mu",
            "0.5",
            "--query",
            "clinician",
            "--seed",
            "5",
            "--samples",
            "100",
            "--h1",
            "10",
            "--h2",
            "4",
        ])
        .output()
        .unwrap();
    let doc = stdout_json(&dec);
    let tcfe_dec = doc["effects"]["tcfe"]["mean"].as_f64().unwrap();
    assert!((tcfe_sweep - tcfe_dec).abs() < 1e-12);
}

#[test]
fn validate_passes_on_presets_and_fails_on_corrupt_models() {
    let out = cfx()
        .args(["validate", "--env", "gridworld", "--samples", "2000"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc = stdout_json(&out);
    assert_eq!(doc["noise_monotone"], true);
    assert_eq!(doc["consistency"]["passed"], true);

    // A model whose policy disagrees with the file's policy table.
    let dir = std::env::temp_dir().join("cfx_cli_io_validate");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    std::fs::write(
        &path,
        r#"{
            "kind": "mmdp",
            "states": ["a", "b"], "agents": 1,
            "actions": [["x"]], "horizon": 1,
            "initial": {"a": 1.0},
            "transition": [
                {"s": "a", "a": ["x"], "p": {"a": 0.5, "b": 0.5}},
                {"s": "b", "a": ["x"], "p": {"b": 1.0}}
            ],
            "policies": [{"agent": 1, "rows": [
                {"s": "a", "p": {"x": 1.0}},
                {"s": "b", "p": {"x": 1.0}}
            ]}]
        }"#,
    )
    .unwrap();
    let out = cfx()
        .args(["validate", "--model", path.to_str().unwrap(), "--samples", "1000"])
        .output()
        .unwrap();
    assert!(out.status.success(), "well-formed model validates");
}

#[test]
fn model_file_decompose_round_trip() {
    // A hand-written two-agent model exercised end to end through files.
    let dir = std::env::temp_dir().join("cfx_cli_io_model");
    std::fs::create_dir_all(&dir).unwrap();
    let model_path = dir.join("toy.json");
    std::fs::write(
        &model_path,
        r#"{
            "kind": "mmdp",
            "states": ["lo", "hi"], "agents": 2,
            "actions": [["go", "stay"], ["push", "wait"]], "horizon": 2,
            "initial": {"lo": 1.0},
            "transition": [
                {"s": "lo", "a": ["go", "push"], "p": {"hi": 1.0}},
                {"s": "lo", "a": ["go", "wait"], "p": {"lo": "0.4", "hi": "0.6"}},
                {"s": "lo", "a": ["stay", "push"], "p": {"lo": "0.7", "hi": "0.3"}},
                {"s": "lo", "a": ["stay", "wait"], "p": {"lo": 1.0}},
                {"s": "hi", "a": ["go", "push"], "p": {"hi": 1.0}},
                {"s": "hi", "a": ["go", "wait"], "p": {"hi": 1.0}},
                {"s": "hi", "a": ["stay", "push"], "p": {"hi": 1.0}},
                {"s": "hi", "a": ["stay", "wait"], "p": {"lo": "0.2", "hi": "0.8"}}
            ],
            "policies": [
                {"agent": 1, "rows": [
                    {"s": "lo", "p": {"go": "0.5", "stay": "0.5"}},
                    {"s": "hi", "p": {"stay": 1.0}}
                ]},
                {"agent": 2, "rows": [
                    {"s": "lo", "p": {"wait": 1.0}},
                    {"s": "hi", "p": {"push": "0.5", "wait": "0.5"}}
                ]}
            ],
            "values": {"hi": 1.0}
        }"#,
    )
    .unwrap();
    let out = cfx()
        .args([
            "decompose",
            "--model",
            model_path.to_str().unwrap(),
            "--tau-seed",
            "4",
            "--agent",
            "1",
            "--time",
            "0",
            "--action",
            "go",
            "--response",
            "state:S2",
            "--seed",
            "2",
            "--samples",
            "80",
            "--h1",
            "20",
            "--h2",
            "8",
            "--oracle",
        ])
        .output()
        .unwrap();
    let doc = stdout_json(&out);
    // The identity holds and the oracle agrees with the estimates.
    assert!(doc["effects"]["identity_residual"].as_f64().unwrap() <= 1e-9);
    let exact = doc["oracle"]["tcfe"].as_f64().unwrap();
    let mc = doc["effects"]["tcfe"]["mean"].as_f64().unwrap();
    let se = doc["effects"]["tcfe"]["std_error"].as_f64().unwrap();
    assert!((mc - exact).abs() <= 3.0 * se + 1e-9);
}

#[test]
fn ordering_override_sweep_preserves_the_trend() {
    // Five random total orderings of the state domains: the clinician's
    // attribution still vanishes monotonically as trust rises, and is
    // exactly zero at full trust. Shares of the total are not compared
    // because alternative orderings can shrink the total toward zero.
    for ordering_seed in 1..=5u64 {
        let out = cfx()
            .args([
                "sweep",
                "--env",
                "sepsis",
                "--rounds",
                "4",
                "--ordering-seed",
                &ordering_seed.to_string(),
                "--query",
                "clinician",
                "--grid",
                "mu=0,0.5,1",
                "--seed",
                "17",
                "--samples",
                "200",
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let phi_cl_col = header.iter().position(|h| *h == "phi_2").unwrap();
        let phi: Vec<f64> = lines
            .map(|l| l.split(',').nth(phi_cl_col).unwrap().parse().unwrap())
            .collect();
        assert_eq!(phi.len(), 3);
        for w in phi.windows(2) {
            assert!(
                w[0].abs() >= w[1].abs() - 1e-9,
                "ordering {ordering_seed}: attribution not vanishing: {phi:?}"
            );
        }
        assert_eq!(phi[2], 0.0, "ordering {ordering_seed}: nonzero at full trust");
    }
}
