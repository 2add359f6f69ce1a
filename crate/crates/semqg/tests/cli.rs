use std::path::Path;
use std::process::{Command, Output};

use semqg::cli::{reward_cycle, RewardArg};
use semqg_core::augment::SyntheticExample;
use semqg_core::reward::RewardKind;
use semqg_core::trainer::cycle_kind;

fn semqg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semqg"))
        .args(args)
        .env_remove("SEMQG_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = semqg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "train-qg": {"model": {"word_dim": 8, "answer_dim": 2, "pos_dim": 2, "ner_dim": 2, "hidden": 8, "layers": 1},
               "train": {"max_epochs": 1}, "rl_epochs": 1},
  "train-qa": {"model": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}},
  "train-qa-semi": {"model": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}},
  "train-qpc": {"model": {"word_dim": 8, "hidden": 8, "layers": 1, "mlp_hidden": 8, "max_epochs": 1}},
  "qa-based-eval": {"qa": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}}
}"#;

#[test]
fn exit_codes() {
    assert_eq!(semqg(&["--help"]).status.code(), Some(0));
    assert_eq!(semqg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        semqg(&["train-qg", "--reward", "bogus", "--train", "x", "--out", "y"])
            .status
            .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = semqg(&[
        "eval-qa",
        "--data",
        p(&missing),
        "--predictions",
        p(&missing),
        "--out",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "data");
    let out = semqg(&["--threads", "0", "grad-check", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check", "--seeds", "2"]);
    assert!(out.contains("0 failed"), "{out}");
}

#[test]
fn alt_rate_three_to_one_schedules_three_qpp_per_qap() {
    let cycle = reward_cycle(RewardArg::QppQap, (3, 1));
    let kinds: Vec<_> = (0..8).map(|i| cycle_kind(&cycle, i).unwrap()).collect();
    use RewardKind::{Qap, Qpp};
    assert_eq!(kinds, vec![Qpp, Qpp, Qpp, Qap, Qpp, Qpp, Qpp, Qap]);
    assert_eq!(
        reward_cycle(RewardArg::QppQap, (0, 2))
            .iter()
            .map(|c| c.1)
            .sum::<usize>(),
        2
    );
}

#[test]
fn make_toy_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = [
        "--seed",
        "9",
        "make-toy-data",
        "--out",
        p(&out),
        "--train",
        "20",
        "--dev",
        "5",
        "--unlabeled",
        "5",
        "--pairs",
        "10",
    ];
    ok(&args);
    let first = std::fs::read(out.join("train.jsonl")).unwrap();
    let spec = std::fs::read_to_string(out.join("toy.spec")).unwrap();
    assert!(spec.starts_with("seed = 9\n"));
    std::fs::remove_dir_all(&out).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(out.join("train.jsonl")).unwrap(), first);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "make-toy-data");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 6);
}

/// The documented pipeline end to end at toy size, plus the filter identity.
#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let data = d.join("data");
    ok(&[
        "make-toy-data",
        "--out",
        p(&data),
        "--train",
        "30",
        "--dev",
        "10",
        "--unlabeled",
        "10",
        "--pairs",
        "40",
    ]);
    let (train, dev, unl) = (
        data.join("train.jsonl"),
        data.join("dev.jsonl"),
        data.join("unlabeled.jsonl"),
    );
    let c = ["--config", p(&cfg), "--toy-spec"];
    let spec = data.join("toy.spec");
    let (qg, qa, qpc) = (d.join("qg.ckpt"), d.join("qa.ckpt"), d.join("qpc.ckpt"));
    ok(&[
        &c[..],
        &[
            p(&spec),
            "train-qg",
            "--train",
            p(&train),
            "--dev",
            p(&dev),
            "--out",
            p(&qg),
        ],
    ]
    .concat());
    ok(&[
        &c[..],
        &[
            p(&spec),
            "train-qa",
            "--train",
            p(&train),
            "--dev",
            p(&dev),
            "--out",
            p(&qa),
        ],
    ]
    .concat());
    ok(&[
        &c[..],
        &[
            p(&spec),
            "train-qpc",
            "--pairs",
            p(&data.join("pairs.jsonl")),
            "--out",
            p(&qpc),
        ],
    ]
    .concat());
    let rl = d.join("qg_rl.ckpt");
    ok(&[
        &c[..],
        &[
            p(&spec),
            "train-qg",
            "--train",
            p(&train),
            "--dev",
            p(&dev),
            "--init",
            p(&qg),
            "--out",
            p(&rl),
        ],
        &[
            "--reward",
            "qpp+qap",
            "--qpc",
            p(&qpc),
            "--qa",
            p(&qa),
            "--alt-rate",
            "3:1",
        ],
    ]
    .concat());
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("qg_rl.ckpt.report.json")).unwrap()).unwrap();
    assert_eq!(
        report["schedule"],
        serde_json::json!(["qpp", "qpp", "qpp", "qap", "qpp", "qpp", "qpp", "qap"])
    );

    let syn = d.join("syn.jsonl");
    ok(&[
        "generate",
        "--qg",
        p(&rl),
        "--input",
        p(&unl),
        "--source",
        "new",
        "--out",
        p(&syn),
        "--qa",
        p(&qa),
        "--beam",
        "3",
    ]);
    let ex = d.join("existing.jsonl");
    ok(&[
        "generate",
        "--qg",
        p(&rl),
        "--input",
        p(&train),
        "--source",
        "existing",
        "--out",
        p(&ex),
        "--beam",
        "2",
        "--diverse",
    ]);

    let same = d.join("same.jsonl");
    ok(&[
        "filter",
        "--input",
        p(&syn),
        "--out",
        p(&same),
        "--epsilon",
        "0",
        "--no-dedup",
    ]);
    assert_eq!(std::fs::read(&same).unwrap(), std::fs::read(&syn).unwrap());
    let sw = d.join("sweep");
    ok(&["filter", "--input", p(&syn), "--out", p(&sw), "--sweep"]);
    let kept: Vec<SyntheticExample> = semqg::jsonl::load_jsonl(&sw.join("eps_0.4.jsonl")).unwrap();
    assert!(kept.iter().all(|s| s.qap_score.unwrap() >= 0.4));

    let semi = d.join("qa_semi.ckpt");
    ok(&[
        &c[..],
        &[
            p(&spec),
            "train-qa-semi",
            "--train",
            p(&train),
            "--synthetic",
            p(&syn),
            "--dev",
            p(&dev),
            "--out",
            p(&semi),
        ],
    ]
    .concat());
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("qa_semi.ckpt.report.json")).unwrap())
            .unwrap();
    assert_eq!(r["mixing"]["rule_violations"], 0);
    assert_eq!(r["mixing"]["coverage_violations"], 0);

    let ev = d.join("eval_qg.json");
    let out = ok(&[
        "eval-qg",
        "--qg",
        p(&rl),
        "--data",
        p(&dev),
        "--qpc",
        p(&qpc),
        "--qa",
        p(&qa),
        "--out",
        p(&ev),
        "--beam",
        "2",
    ]);
    assert!(out.contains("BLEU4") && out.contains("QAP"), "{out}");
    ok(&[
        "eval-qa",
        "--qa",
        p(&semi),
        "--data",
        p(&dev),
        "--out",
        p(&d.join("eval_qa.json")),
    ]);
    ok(&[
        &c[..],
        &[
            p(&spec),
            "qa-based-eval",
            "--qg",
            p(&rl),
            "--unlabeled",
            p(&unl),
            "--dev",
            p(&dev),
            "--out",
            p(&d.join("qbe.json")),
            "--beam",
            "2",
        ],
    ]
    .concat());
    for f in [
        "qg.ckpt.manifest.json",
        "syn.jsonl.manifest.json",
        "sweep/manifest.json",
        "qbe.json.manifest.json",
    ] {
        assert!(d.join(f).exists(), "{f}");
    }
}
