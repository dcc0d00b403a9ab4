//! Drives the `icegen` binary through its subcommands.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
run.seed = 3
run.synth_length = 3000
model.d_model = 16
model.n_heads = 2
model.n_layers = 1
model.d_ff = 32
model.dropout = 0.0
model.context_steps = 8
decode.horizon = 4
decode.scenarios = 8
train.epochs = 1
train.batch_size = 8
train.window_stride = 8
eval.window_stride = 16
";

fn icegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icegen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn defaults_round_trip_through_check() {
    let dir = tempfile::tempdir().unwrap();
    let defaults = ok(&icegen(&["config", "--defaults"]));
    assert!(defaults.contains("loss.lambda_cap"));
    let path = dir.path().join("defaults.cfg");
    fs::write(&path, &defaults).unwrap();
    assert_eq!(ok(&icegen(&["config", "--check", s(&path)])), defaults);
}

#[test]
fn invalid_settings_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let neg = dir.path().join("neg.cfg");
    fs::write(&neg, "loss.lambda_cap = -1\n").unwrap();
    assert_eq!(
        icegen(&["config", "--check", s(&neg)]).status.code(),
        Some(2)
    );
    // rejected before any stage writes output
    let out = dir.path().join("run");
    assert_eq!(
        icegen(&["run", "--config", s(&neg), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert!(!out.join("data.csv").exists());

    let unknown = dir.path().join("unknown.cfg");
    fs::write(&unknown, "model.width = 3\n").unwrap();
    let o = icegen(&["config", "--check", s(&unknown)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.width"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = icegen(&[
        "ingest",
        "--input",
        s(&dir.path().join("absent.csv")),
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn staged_commands_produce_scenarios_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    fs::write(p("tiny.cfg"), TINY).unwrap();
    let cfg = p("tiny.cfg");

    ok(&icegen(&[
        "synth",
        "--config",
        s(&cfg),
        "--out",
        s(&p("data.csv")),
    ]));
    ok(&icegen(&[
        "fit-curve",
        "--config",
        s(&cfg),
        "--data",
        s(&p("data.csv")),
        "--out",
        s(&p("envelope.json")),
    ]));
    ok(&icegen(&[
        "fit-spec",
        "--config",
        s(&cfg),
        "--data",
        s(&p("data.csv")),
        "--out",
        s(&p("spec.json")),
    ]));
    ok(&icegen(&[
        "tokenize",
        "--data",
        s(&p("data.csv")),
        "--spec",
        s(&p("spec.json")),
        "--out",
        s(&p("tokens.bin")),
    ]));
    let tokens = fs::read(p("tokens.bin")).unwrap();
    assert!(tokens.len() > 3000 * 2);
    ok(&icegen(&[
        "train",
        "--config",
        s(&cfg),
        "--tokens",
        s(&p("tokens.bin")),
        "--spec",
        s(&p("spec.json")),
        "--envelope",
        s(&p("envelope.json")),
        "--out",
        s(&p("model.ckpt")),
    ]));

    // rated-power comment, header, 8 context steps, then the 4 observed steps
    let data = fs::read_to_string(p("data.csv")).unwrap();
    let lines: Vec<&str> = data.lines().collect();
    fs::write(p("context.csv"), lines[..2 + 12].join("\n") + "\n").unwrap();
    let generate = |mode: &str, out: &str| {
        ok(&icegen(&[
            "generate",
            "--config",
            s(&cfg),
            "--model",
            s(&p("model.ckpt")),
            "--context",
            s(&p("context.csv")),
            "--spec",
            s(&p("spec.json")),
            "--envelope",
            s(&p("envelope.json")),
            "--mode",
            mode,
            "--out",
            s(&p(out)),
        ]))
    };
    generate("default", "a.csv");
    generate("default", "b.csv");
    assert_eq!(fs::read(p("a.csv")).unwrap(), fs::read(p("b.csv")).unwrap());
    let csv = fs::read_to_string(p("a.csv")).unwrap();
    assert!(csv.starts_with("# mode=default"));
    assert_eq!(csv.lines().count(), 2 + 8 * 4);

    ok(&icegen(&[
        "evaluate",
        "--scenarios",
        s(&p("a.csv")),
        "--truth",
        s(&p("context.csv")),
        "--envelope",
        s(&p("envelope.json")),
        "--out",
        s(&p("report.json")),
    ]));
    let report = fs::read_to_string(p("report.json")).unwrap();
    assert!(report.contains("\"vr_relaxed\": 0.0"), "{report}");

    ok(&icegen(&[
        "generate",
        "--config",
        s(&cfg),
        "--model",
        s(&p("model.ckpt")),
        "--context",
        s(&p("context.csv")),
        "--spec",
        s(&p("spec.json")),
        "--envelope",
        s(&p("envelope.json")),
        "--conditioning",
        "persistence",
        "--out",
        s(&p("persist.csv")),
    ]));
    assert_eq!(
        fs::read_to_string(p("persist.csv"))
            .unwrap()
            .lines()
            .count(),
        2 + 8 * 4
    );

    let bad = icegen(&[
        "generate",
        "--model",
        s(&p("model.ckpt")),
        "--context",
        s(&p("context.csv")),
        "--spec",
        s(&p("spec.json")),
        "--envelope",
        s(&p("envelope.json")),
        "--mode",
        "nonexistent",
        "--out",
        s(&p("c.csv")),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
