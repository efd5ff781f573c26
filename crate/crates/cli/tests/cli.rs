use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use dualspace::experiment::read_metrics;
use dualspace::HyperParams;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dualspace"));
    c.env_remove("DUALSPACE_OUTPUT_ROOT").env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: [&str; 10] = [
    "--c-total", "4", "--known", "3", "--per-class", "40", "--test-per-class", "10", "--dim", "8",
];

const TINY_NET: [&str; 14] = [
    "--epochs", "4", "--warmup", "2", "--neighbors", "10", "--batch-size", "32", "--hidden", "16",
    "--proj-hidden", "16", "--proj-dim", "8",
];

fn synth(dir: &Path, extra: &[&str]) -> Output {
    run(bin().arg("synth").args(SMALL).args(extra).arg("--out").arg(dir))
}

fn digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n.to_string_lossy().into_owned(), Sha256::digest(&bytes).to_vec())
        })
        .collect()
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&synth(&tmp.path().join("a"), &["--seed", "3"]));
    ok(&synth(&tmp.path().join("b"), &["--seed", "3"]));
    ok(&synth(&tmp.path().join("c"), &["--seed", "4"]));
    let a = digest(&tmp.path().join("a"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, digest(&tmp.path().join("b")));
    assert_ne!(a, digest(&tmp.path().join("c")));
}

#[test]
fn closed_world_synth_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["synth", "--c-total", "3", "--known", "3", "--per-class", "30", "--test-per-class", "10", "--dim", "8"])
        .arg("--out")
        .arg(tmp.path().join("d")));
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("undefined"));
}

#[test]
fn train_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let runs = tmp.path().join("runs");
    ok(&synth(&data, &[]));
    let out = run(bin()
        .env("DUALSPACE_OUTPUT_ROOT", &runs)
        .arg("train")
        .arg("--dataset")
        .arg(&data)
        .args(["--out", "r1", "--checkpoint-every", "2"])
        .args(TINY_NET));
    let stdout = ok(&out);
    assert!(stdout.contains("\"auroc\""));
    let run_dir = runs.join("r1");
    let config = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(config.contains("total_epochs = 4") && config.contains("neighbors = 10"), "{config}");

    let metrics = read_metrics(&run_dir.join("metrics.jsonl")).unwrap();
    let eval = ok(&run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoints/final.json"))
        .arg("--dataset")
        .arg(&data)));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let last = serde_json::to_value(&metrics[3].test).unwrap();
    for key in ["accuracy", "auroc", "fpr95", "mean_score_known", "mean_score_open", "score"] {
        assert_eq!(v[key], last[key], "{key}");
    }

    ok(&run(bin().arg("report").arg(&run_dir)));
    for f in ["accuracy.svg", "auroc.svg", "selection.svg", "summary.md"] {
        assert!(run_dir.join("report").join(f).exists(), "{f}");
    }
    let md = fs::read_to_string(run_dir.join("report/summary.md")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    assert!(md.contains(&format!("| final.auroc | {} |", summary["final"]["auroc"])));
    assert!(md.contains(&format!("| final.accuracy | {} |", summary["final"]["accuracy"])));

    // resuming a finished run is a no-op that keeps the log intact
    let before = fs::read(run_dir.join("metrics.jsonl")).unwrap();
    ok(&run(bin()
        .env("DUALSPACE_OUTPUT_ROOT", &runs)
        .arg("train")
        .arg("--dataset")
        .arg(&data)
        .args(["--out", "r1", "--checkpoint-every", "2", "--resume"])
        .args(TINY_NET)));
    assert_eq!(fs::read(run_dir.join("metrics.jsonl")).unwrap(), before);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&synth(&data, &[]));
    let cfg = tmp.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "dataset = {:?}\nwarmup_epochs = 1\ntotal_epochs = 2\nneighbors = 5\nbatch_size = 32\nhidden = [8]\nproj_hidden = 8\nproj_dim = 4\nenable_pu = false\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    ok(&run(bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&out_dir).args(["--seed", "9"])));
    let echoed = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 9") && echoed.contains("enable_pu = false"), "{echoed}");
    assert_eq!(read_metrics(&out_dir.join("metrics.jsonl")).unwrap().len(), 2);
}

#[test]
fn closed_world_eval_has_null_ood_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&run(bin()
        .args(["synth", "--c-total", "3", "--known", "3", "--per-class", "30", "--test-per-class", "10", "--dim", "8"])
        .arg("--out")
        .arg(&data)));
    let run_dir = tmp.path().join("run");
    ok(&run(bin().arg("train").arg("--dataset").arg(&data).arg("--out").arg(&run_dir).args(TINY_NET)));
    let eval = ok(&run(bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(run_dir.join("checkpoints/final.json"))
        .arg("--dataset")
        .arg(&data)));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(v["accuracy"].is_number());
    assert!(v["auroc"].is_null() && v["fpr95"].is_null());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&synth(&data, &[]));

    let missing = run(bin().arg("report").arg(tmp.path().join("nope")));
    assert_eq!(missing.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&missing.stderr);
    assert!(msg.contains(&tmp.path().join("nope/metrics.jsonl").display().to_string()), "{msg}");

    let bad = run(bin().arg("train").arg("--dataset").arg(&data).args(["--alpha-id", "1.5"]));
    assert_eq!(bad.status.code(), Some(2));

    let no_data = run(bin().arg("train").arg("--dataset").arg(tmp.path().join("void")));
    assert_eq!(no_data.status.code(), Some(2));

    let diverge = run(bin()
        .arg("train")
        .arg("--dataset")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("nan"))
        .args(TINY_NET)
        .args(["--lr", "1e200", "--momentum", "0"]));
    assert_eq!(diverge.status.code(), Some(3));
    assert!(tmp.path().join("nan/nan-dump.json").exists());

    let usage = run(bin().arg("synth").args(["--noise", "pairflip"]));
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn help_defaults_match_hyper_parameters() {
    let help = ok(&run(bin().args(["train", "--help"])));
    let flat: String = help.split_whitespace().collect::<Vec<_>>().join(" ");
    let d = HyperParams::default();
    let expected = [
        ("--epochs", d.total_epochs.to_string()),
        ("--warmup", d.warmup_epochs.to_string()),
        ("--tau", d.tau.to_string()),
        ("--sharpen-t", d.sharpen_t.to_string()),
        ("--top-k", d.top_k.to_string()),
        ("--neighbors", d.neighbors.to_string()),
        ("--mixup-alpha", d.mixup_alpha.to_string()),
        ("--alpha-id", d.alpha_id.to_string()),
        ("--alpha-ood", d.alpha_ood.to_string()),
        ("--lambda-con", d.lambda_con.to_string()),
        ("--lambda-bcl", d.lambda_bcl.to_string()),
        ("--batch-size", d.batch_size.to_string()),
        ("--lr", d.lr.to_string()),
        ("--momentum", d.momentum.to_string()),
        ("--weight-decay", d.weight_decay.to_string()),
    ];
    for (flag, value) in expected {
        let at = flat.find(&format!("{flag} <")).unwrap_or_else(|| panic!("{flag} missing from help"));
        let tail = &flat[at..];
        let end = tail[2..].find(" --").map_or(tail.len(), |i| i + 2);
        assert!(tail[..end].contains(&format!("[default: {value}]")), "{flag}: {}", &tail[..end]);
    }
}
