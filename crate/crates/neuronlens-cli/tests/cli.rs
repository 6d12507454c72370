//! End-to-end tests driving the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn neuronlens(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_neuronlens"));
    cmd.args(args);
    cmd.env_remove("NEURONLENS_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_data(dir: &Path, seed: &str) {
    let out = neuronlens(
        &[
            "gen-data",
            "--concepts",
            "3",
            "--vocab",
            "12",
            "--seq-len",
            "8",
            "--samples",
            "40",
            "--sep",
            "1.0",
            "--seed",
            seed,
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "gen-data");
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_data(&a, "7");
    gen_data(&b, "7");
    for file in ["train.jsonl", "eval.jsonl", "spec.json"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn seed_falls_back_to_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let flagged = tmp.path().join("flagged");
    let from_env = tmp.path().join("env");
    gen_data(&flagged, "99");
    let out = neuronlens(
        &[
            "gen-data",
            "--concepts",
            "3",
            "--vocab",
            "12",
            "--seq-len",
            "8",
            "--samples",
            "40",
            "--sep",
            "1.0",
            "--out",
            from_env.to_str().unwrap(),
        ],
        &[("NEURONLENS_SEED", "99")],
    );
    assert_success(&out, "gen-data with env seed");
    assert_eq!(
        std::fs::read(flagged.join("train.jsonl")).unwrap(),
        std::fs::read(from_env.join("train.jsonl")).unwrap()
    );
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Invalid separation: library validation -> usage class -> exit 2.
    let out = neuronlens(
        &[
            "gen-data",
            "--sep",
            "1.5",
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "invalid flag value");

    // Unknown flag: clap usage error -> exit 2.
    let out = neuronlens(&["gen-data", "--no-such-flag"], &[]);
    assert_eq!(out.status.code(), Some(2), "unknown flag");

    // Missing checkpoint file -> data error -> exit 3.
    let out = neuronlens(
        &[
            "record",
            "--model",
            tmp.path().join("missing.nlck").to_str().unwrap(),
            "--data",
            tmp.path().to_str().unwrap(),
            "--layers",
            "1",
            "--out",
            tmp.path().join("acts.nlas").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "missing model file");
}

#[test]
fn full_pipeline_produces_consistent_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, "11");

    let model = tmp.path().join("model.nlck");
    let out = neuronlens(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--layers",
            "2",
            "--hidden-dim",
            "16",
            "--heads",
            "2",
            "--epochs",
            "4",
            "--batch-size",
            "16",
            "--seed",
            "11",
            "--out",
            model.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "train");

    let acts = tmp.path().join("train_acts.nlas");
    let out = neuronlens(
        &[
            "record",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--split",
            "train",
            "--layers",
            "1,2",
            "--out",
            acts.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "record");

    let ranking = tmp.path().join("rank.json");
    let out = neuronlens(
        &[
            "rank",
            "--activations",
            acts.to_str().unwrap(),
            "--method",
            "max",
            "--concept",
            "1",
            "--layer",
            "1",
            "--out",
            ranking.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "rank");
    let rank_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ranking).unwrap()).unwrap();
    for key in ["method", "concept", "order", "scores"] {
        assert!(rank_json.get(key).is_some(), "rank JSON missing {key}");
    }

    let stats_csv = tmp.path().join("stats.csv");
    let out = neuronlens(
        &[
            "stats",
            "--activations",
            acts.to_str().unwrap(),
            "--layer",
            "1",
            "--out",
            stats_csv.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "stats");
    let csv = std::fs::read_to_string(&stats_csv).unwrap();
    assert!(csv.starts_with("layer,neuron,concept,mu,sigma,n,skew,kurt,ks,normal"));

    let policy = tmp.path().join("policy.json");
    let out = neuronlens(
        &[
            "ranges",
            "--activations",
            acts.to_str().unwrap(),
            "--method",
            "max",
            "--concept",
            "1",
            "--layer",
            "1",
            "--fraction",
            "0.3",
            "--tau",
            "2.5",
            "--scope",
            "range",
            "--function",
            "zero",
            "--out",
            policy.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "ranges");
    let policy_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
    for key in ["scope", "function", "tau", "concept", "neurons"] {
        assert!(policy_json.get(key).is_some(), "policy JSON missing {key}");
    }

    let report = tmp.path().join("report.json");
    let out = neuronlens(
        &[
            "erase",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--policy",
            policy.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "erase");
    let report_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for block in ["baseline_summary", "post_summary", "delta"] {
        for metric in ["acc", "conf", "cacc", "cconf"] {
            assert!(
                report_json[block].get(metric).is_some(),
                "report missing {block}.{metric}"
            );
        }
    }

    // Baseline inside the erase report must match an independent report run.
    let baseline = tmp.path().join("baseline.json");
    let out = neuronlens(
        &[
            "report",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--baseline",
            "--out",
            baseline.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "report");
    let baseline_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&baseline).unwrap()).unwrap();
    let target = report_json["target"].as_u64().unwrap() as usize;
    assert_eq!(
        report_json["baseline"][target]["acc"],
        baseline_json[target]["acc"]
    );
    assert_eq!(
        report_json["baseline"][target]["conf"],
        baseline_json[target]["conf"]
    );

    // Sweeps and the distribution export run off the same artifacts.
    let sweep = tmp.path().join("sweep_tau.json");
    let sweep_csv = tmp.path().join("sweep_tau.csv");
    let out = neuronlens(
        &[
            "sweep-tau",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--activations",
            acts.to_str().unwrap(),
            "--method",
            "max",
            "--concept",
            "1",
            "--layer",
            "2",
            "--fraction",
            "1.0",
            "--scope",
            "range",
            "--function",
            "zero",
            "--taus",
            "1.0,2.5",
            "--out",
            sweep.to_str().unwrap(),
            "--csv",
            sweep_csv.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "sweep-tau");
    let sweep_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sweep).unwrap()).unwrap();
    assert_eq!(sweep_json["variable"], "tau");
    assert_eq!(sweep_json["points"].as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(&sweep_csv).unwrap();
    assert!(csv.starts_with("tau,target,base_acc,base_conf,base_cacc,base_cconf"));

    let fractions = tmp.path().join("sweep_fraction.json");
    let out = neuronlens(
        &[
            "sweep-fraction",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--activations",
            acts.to_str().unwrap(),
            "--method",
            "max",
            "--concept",
            "1",
            "--layer",
            "2",
            "--tau",
            "2.5",
            "--scope",
            "neuron",
            "--function",
            "zero",
            "--fractions",
            "0,0.5,1.0",
            "--out",
            fractions.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "sweep-fraction");

    let layers_sweep = tmp.path().join("sweep_layer.json");
    let out = neuronlens(
        &[
            "sweep-layer",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--activations",
            acts.to_str().unwrap(),
            "--method",
            "max",
            "--concept",
            "1",
            "--fraction",
            "0.3",
            "--tau",
            "2.5",
            "--scope",
            "range",
            "--function",
            "zero",
            "--layers",
            "1,2",
            "--out",
            layers_sweep.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "sweep-layer");
    let layer_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&layers_sweep).unwrap()).unwrap();
    assert_eq!(layer_json["default_layer"], 2);

    // JSONL recording interoperates with the binary path.
    let acts_jsonl = tmp.path().join("train_acts.jsonl");
    let out = neuronlens(
        &[
            "record",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--split",
            "train",
            "--layers",
            "2",
            "--format",
            "jsonl",
            "--out",
            acts_jsonl.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "record jsonl");
    let first_line = std::fs::read_to_string(&acts_jsonl)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let manifest: serde_json::Value = serde_json::from_str(&first_line).unwrap();
    assert_eq!(manifest["split"], "train");
    let out = neuronlens(
        &[
            "rank",
            "--activations",
            acts_jsonl.to_str().unwrap(),
            "--method",
            "probeless",
            "--concept",
            "0",
            "--layer",
            "2",
            "--out",
            tmp.path().join("rank2.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "rank over jsonl activations");

    let dist = tmp.path().join("dist.json");
    let out = neuronlens(
        &[
            "export-dist",
            "--activations",
            acts.to_str().unwrap(),
            "--layer",
            "2",
            "--neuron",
            "3",
            "--concepts",
            "0,1",
            "--bins",
            "16",
            "--out",
            dist.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "export-dist");
    let dist_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&dist).unwrap()).unwrap();
    let entries = dist_json.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for entry in entries {
        assert_eq!(entry["counts"].as_array().unwrap().len(), 16);
    }
}

#[test]
fn divergent_training_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, "13");
    let out = neuronlens(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--layers",
            "2",
            "--hidden-dim",
            "16",
            "--heads",
            "2",
            "--epochs",
            "2",
            "--lr",
            "1e9",
            "--seed",
            "13",
            "--out",
            tmp.path().join("model.nlck").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(4), "numerical failure exit code");
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn erase_rejects_conflicting_policy_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let out = neuronlens(
        &[
            "erase",
            "--model",
            tmp.path().join("m.nlck").to_str().unwrap(),
            "--data",
            tmp.path().to_str().unwrap(),
            "--policy",
            tmp.path().join("p.json").to_str().unwrap(),
            "--method",
            "max",
            "--out",
            tmp.path().join("r.json").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflicts"));
}

#[test]
fn damp_and_adaptive_defaults_are_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_data(&data, "17");
    let model = tmp.path().join("model.nlck");
    let out = neuronlens(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--layers",
            "2",
            "--hidden-dim",
            "16",
            "--heads",
            "2",
            "--epochs",
            "2",
            "--seed",
            "17",
            "--out",
            model.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "train");
    let acts = tmp.path().join("acts.nlas");
    let out = neuronlens(
        &[
            "record",
            "--model",
            model.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--split",
            "train",
            "--layers",
            "2",
            "--out",
            acts.to_str().unwrap(),
        ],
        &[],
    );
    assert_success(&out, "record");

    for (function, key, expected) in [("damp", "alpha", 0.125), ("adaptive", "beta", 0.5)] {
        let policy = tmp.path().join(format!("policy_{function}.json"));
        let out = neuronlens(
            &[
                "ranges",
                "--activations",
                acts.to_str().unwrap(),
                "--method",
                "max",
                "--concept",
                "0",
                "--layer",
                "2",
                "--fraction",
                "0.5",
                "--tau",
                "2.5",
                "--scope",
                "range",
                "--function",
                function,
                "--out",
                policy.to_str().unwrap(),
            ],
            &[],
        );
        assert_success(&out, &format!("ranges with {function}"));
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&policy).unwrap()).unwrap();
        assert_eq!(json[key].as_f64().unwrap(), expected, "{function} default");
    }
}
