//! Black-box tests of the graft binary: exit codes, artifact layout,
//! determinism, and config/flag precedence.

use std::path::Path;
use std::process::{Command, Output};

fn graft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graft"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

/// Small planted grid that trains in well under a second per model.
fn write_config(dir: &Path) -> String {
    let path = dir.join("graft.toml");
    std::fs::write(
        &path,
        r#"
dataset = "planted"
out = "out"
architectures = ["gcn", "sage"]
seeds = [0, 1]
workers = 4

[planted]
node_count = 60
class_count = 3
feature_dim = 24
planted_per_class = 2
intra_edge_prob = 0.2
inter_edge_prob = 0.04
feature_flip_noise = 0.1
seed = 7

[train]
hidden_dim = 16
epochs = 120

[explain]
k = 3
steps = 8
top_k = 10

[metrics]
tau = 2

[rules]
offline = true
dataset_context = "A synthetic planted-feature graph."
class_names = ["alpha", "beta"]
"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline_completes_with_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());

    let out = graft(tmp.path(), &["--config", &config, "run"]);
    assert!(out.status.success(), "{}", stderr(&out));

    for arch in ["gcn", "sage"] {
        for seed in ["0", "1"] {
            let dir = tmp.path().join("out/planted").join(arch).join(seed);
            for f in ["checkpoint.bin", "model.json", "fidelity.json", "transfer.json"] {
                assert!(dir.join(f).exists(), "{arch}/{seed}/{f} missing");
            }
            for c in 0..3 {
                assert!(dir.join(format!("profile_class_{c}.json")).exists());
            }
        }
        assert!(tmp.path().join("out/planted").join(arch).join("stability.json").exists());
    }
    let summary = std::fs::read_to_string(tmp.path().join("out/planted/summary.tsv")).unwrap();
    assert!(summary.starts_with("# config: "));
    assert_eq!(summary.lines().count(), 6, "header plus one row per run");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let args = ["--config", config.as_str(), "--arch", "gcn", "--seeds", "0", "run"];

    let out = graft(tmp.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    let read = |name: &str| std::fs::read(tmp.path().join("out/planted/gcn/0").join(name)).unwrap();
    let first: Vec<Vec<u8>> = ["checkpoint.bin", "profile_class_0.json", "fidelity.json"]
        .iter()
        .map(|f| read(f))
        .collect();

    let out = graft(tmp.path(), &args);
    assert!(out.status.success(), "{}", stderr(&out));
    for (f, bytes) in ["checkpoint.bin", "profile_class_0.json", "fidelity.json"]
        .iter()
        .zip(&first)
    {
        assert_eq!(&read(f), bytes, "{f} changed across reruns");
    }
}

#[test]
fn explain_without_checkpoint_names_the_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out = graft(tmp.path(), &["--config", &config, "explain"]);
    assert_eq!(out.status.code(), Some(2), "missing artifact is a runtime error");
    let msg = stderr(&out);
    assert!(msg.contains("checkpoint.bin"), "{msg}");
    assert!(msg.contains("run `graft train` first"), "{msg}");
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();

    let out = graft(tmp.path(), &["--aggregation", "sum", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("explain.aggregation"), "{}", stderr(&out));

    let out = graft(tmp.path(), &["--seeds", "1,1", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("seeds must be distinct"));

    let out = graft(tmp.path(), &["--k", "0", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("explain.k must be positive"));

    let out = graft(tmp.path(), &["--no-such-flag", "train"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(tmp.path().join("bad.toml"), "dataset = \"planted\"\nnonsense = 1\n").unwrap();
    let out = graft(tmp.path(), &["--config", "bad.toml", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nonsense"), "{}", stderr(&out));

    let out = graft(tmp.path(), &["--dataset", "no/such/bundle", "train"]);
    assert_eq!(out.status.code(), Some(2), "unreadable dataset is a runtime error");
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = graft(tmp.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn flags_override_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let args = [
        "--config", config.as_str(), "--arch", "gcn", "--seeds", "0", "--k", "2",
    ];

    let out = graft(tmp.path(), &[&args[..], &["train"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let out = graft(tmp.path(), &[&args[..], &["explain"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));

    let text =
        std::fs::read_to_string(tmp.path().join("out/planted/gcn/0/profile_class_0.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(
        v["exemplars"].as_array().unwrap().len(),
        2,
        "--k must override the config file's k = 3"
    );
}

#[test]
fn audit_and_consensus_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let base = ["--config", config.as_str()];

    let out = graft(tmp.path(), &[&base[..], &["run"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    // tau = 2 with two architectures: consensus is defined.
    let out = graft(tmp.path(), &[&base[..], &["consensus"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    for seed in ["0", "1"] {
        let path = tmp.path().join(format!("out/planted/consensus_{seed}.json"));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert!(v["report"]["mean"].as_f64().unwrap() >= 0.0);
    }

    let out = graft(
        tmp.path(),
        &[&base[..], &["--seeds", "0", "--sigma", "0.05", "--target-class", "1", "audit"]].concat(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    for arch in ["gcn", "sage"] {
        let path = tmp.path().join(format!("out/planted/{arch}/0/audit.json"));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["report"]["target_class"].as_u64(), Some(1));
        assert!(v["report"]["detected"].is_boolean());
    }
}

#[test]
fn offline_rules_dump_prompts_with_class_names() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let base = ["--config", config.as_str(), "--arch", "gcn", "--seeds", "0"];

    for cmd in ["train", "explain", "rules"] {
        let out = graft(tmp.path(), &[&base[..], &[cmd]].concat());
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    let dir = tmp.path().join("out/planted/gcn/0/rules");
    let prompt = std::fs::read_to_string(dir.join("class_0_generate.prompt.txt")).unwrap();
    assert!(prompt.contains("class \"alpha\""), "named class used in prompt");
    assert!(prompt.contains("A synthetic planted-feature graph."));
    // Class 2 has no configured name and falls back to its id.
    let prompt = std::fs::read_to_string(dir.join("class_2_generate.prompt.txt")).unwrap();
    assert!(prompt.contains("class \"class_2\""));

    let rules: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("rules.json")).unwrap()).unwrap();
    assert_eq!(rules["rules"].as_array().unwrap().len(), 3);
    assert_eq!(rules["rules"][0]["pending"].as_bool(), Some(true));
}

#[test]
fn ablation_tables_have_config_header_and_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let base = ["--config", config.as_str(), "--arch", "gcn", "--seeds", "0"];

    for cmd in ["train", "ablate"] {
        let out = graft(tmp.path(), &[&base[..], &[cmd]].concat());
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    let dir = tmp.path().join("out/planted/gcn/0");
    for (file, rows) in [
        ("ablation_k.tsv", 3),
        ("ablation_method.tsv", 2),
        ("ablation_aggregation.tsv", 3),
        ("ablation_exemplars.tsv", 2),
    ] {
        let text = std::fs::read_to_string(dir.join(file)).unwrap();
        assert!(text.starts_with("# config: "), "{file}");
        assert_eq!(text.lines().count(), rows + 2, "{file}: comment + header + rows");
    }
}
