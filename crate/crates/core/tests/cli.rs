use std::path::Path;
use std::process::{Command, Output};

fn malgraph(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malgraph"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = malgraph(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    malgraph(dir, args).status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["no-such-command"]), 1);
    assert_eq!(code(d, &["prune", "--method", "leaf"]), 1);
    assert_eq!(code(d, &["stats", "--in", "missing.jsonl"]), 2);

    std::fs::write(d.join("bad.jsonl"), "{\"graph_id\": \"g\", \"nodes\": [}\n").unwrap();
    assert_eq!(code(d, &["stats", "--in", "bad.jsonl"]), 2);

    ok(d, &["gen-synth", "--out", "data", "--per-class", "4"]);
    let args = [
        "prune",
        "--method",
        "comp",
        "--u",
        "1.5",
        "--in",
        "data/graphs.jsonl",
        "--out",
        "o.jsonl",
        "--report",
        "r.csv",
    ];
    assert_eq!(code(d, &args), 1);
    let args = [
        "train",
        "--in",
        "data/graphs.jsonl",
        "--out",
        "m.json",
        "--epochs",
        "3",
        "--lr",
        "1e308",
        "--dropout",
        "0",
    ];
    assert_eq!(code(d, &args), 3);
}

#[test]
fn prune_and_stats_are_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for run in ["a", "b"] {
        ok(
            d,
            &[
                "gen-synth",
                "--out",
                &format!("{run}/data"),
                "--per-class",
                "10",
                "--seed",
                "4",
            ],
        );
        for method in ["leaf", "comp", "kcore", "wis"] {
            ok(
                d,
                &[
                    "prune",
                    "--method",
                    method,
                    "--k",
                    "2",
                    "--in",
                    &format!("{run}/data/graphs.jsonl"),
                    "--out",
                    &format!("{run}/{method}.jsonl"),
                    "--report",
                    &format!("{run}/{method}.csv"),
                ],
            );
        }
        ok(
            d,
            &[
                "stats",
                "--in",
                &format!("{run}/data/graphs.jsonl"),
                "--out",
                &format!("{run}/stats.csv"),
            ],
        );
    }
    for name in [
        "data/graphs.jsonl",
        "leaf.csv",
        "comp.csv",
        "kcore.csv",
        "wis.csv",
        "wis.jsonl",
        "stats.csv",
    ] {
        assert_eq!(
            read(&d.join("a"), name),
            read(&d.join("b"), name),
            "{name} differs"
        );
    }
}

#[test]
fn encode_and_embed_produce_feature_payloads() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen-synth", "--out", "cfg", "--per-class", "3"]);
    ok(
        d,
        &["encode", "--in", "cfg/graphs.jsonl", "--out", "enc.jsonl"],
    );
    let text = String::from_utf8(read(d, "enc.jsonl")).unwrap();
    let g = malgraph::graph::parse_graph_line(text.lines().next().unwrap(), 1).unwrap();
    assert!(g
        .nodes()
        .iter()
        .all(|n| matches!(&n.payload, malgraph::Payload::Features(v) if v.len() == 406)));

    ok(
        d,
        &[
            "gen-synth",
            "--out",
            "fcg",
            "--per-class",
            "3",
            "--kind",
            "fcg",
        ],
    );
    ok(
        d,
        &[
            "embed-fne",
            "--in",
            "fcg/graphs.jsonl",
            "--out",
            "fne.jsonl",
        ],
    );
    let text = String::from_utf8(read(d, "fne.jsonl")).unwrap();
    let g = malgraph::graph::parse_graph_line(text.lines().next().unwrap(), 1).unwrap();
    assert!(g
        .nodes()
        .iter()
        .all(|n| matches!(&n.payload, malgraph::Payload::Features(v) if v.len() == 384)));
}

const CONFIG: &str = r#"
seed = 3
out_dir = "run"
embedding = "raw"
p_grid = [0.25, 0.5, 1.0]

[data]
source = "synthetic"
[data.spec]
per_class = 15

[reduction]
method = "leaf_prune"

[gcn]
epochs = 25

[explain]
epochs = 20
"#;

#[test]
fn run_is_deterministic_and_matches_manual_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();
    ok(d, &["run", "--config", "run.toml"]);
    let first: Vec<Vec<u8>> = [
        "reduction_report.csv",
        "metrics.csv",
        "explainer_accuracy.csv",
    ]
    .iter()
    .map(|f| read(&d.join("run"), f))
    .collect();
    ok(d, &["--jobs", "2", "run", "--config", "run.toml"]);
    for (i, f) in [
        "reduction_report.csv",
        "metrics.csv",
        "explainer_accuracy.csv",
    ]
    .iter()
    .enumerate()
    {
        assert_eq!(
            first[i],
            read(&d.join("run"), f),
            "{f} differs between runs"
        );
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&d.join("run"), "run_manifest.json")).unwrap();
    let seed = |name: &str| manifest["seeds"][name].as_u64().unwrap().to_string();

    ok(
        d,
        &[
            "gen-synth",
            "--out",
            "m",
            "--per-class",
            "15",
            "--seed",
            &seed("data"),
        ],
    );
    for part in ["train", "test"] {
        ok(
            d,
            &[
                "prune",
                "--method",
                "leaf",
                "--in",
                &format!("m/{part}.jsonl"),
                "--out",
                &format!("m/{part}_pruned.jsonl"),
                "--report",
                &format!("m/{part}_report.csv"),
            ],
        );
    }
    ok(
        d,
        &[
            "train",
            "--in",
            "m/train_pruned.jsonl",
            "--features",
            "raw",
            "--epochs",
            "25",
            "--seed",
            &seed("gcn"),
            "--out",
            "m/gcn.json",
        ],
    );
    ok(
        d,
        &[
            "eval",
            "--model",
            "m/gcn.json",
            "--in",
            "m/test_pruned.jsonl",
            "--metrics",
            "m/metrics.csv",
        ],
    );
    ok(
        d,
        &[
            "explain",
            "--model",
            "m/gcn.json",
            "--in",
            "m/test_pruned.jsonl",
            "--out",
            "m/ex",
            "--epochs",
            "20",
            "--seed",
            &seed("explain"),
            "--p-grid",
            "0.25,0.5,1.0",
        ],
    );
    assert_eq!(read(d, "m/metrics.csv"), first[1]);
    assert_eq!(read(d, "m/ex/explainer_accuracy.csv"), first[2]);
    assert!(d.join("m/ex/explanations.csv").exists());
}
