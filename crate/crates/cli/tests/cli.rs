use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emb2emb::autoencoder::Autoencoder;
use emb2emb::checkpoint::Container;
use emb2emb::mapping::Mapping;
use emb2emb::objectives::{LatentClassifier, StyleClassifier};
use emb2emb::pipeline::Pipeline;
use emb2emb::text::read_lines;
use tempfile::TempDir;

const SENTENCES: [&str; 6] = [
    "the cat sat",
    "a dog ran fast",
    "the bird sang",
    "a fish swam far",
    "good food here",
    "bad food there",
];

fn emb2emb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emb2emb"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run emb2emb")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
    let p = dir.join(name);
    let mut s = lines.join("\n");
    if !lines.is_empty() {
        s.push('\n');
    }
    fs::write(&p, s).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small autoencoder memorizing `SENTENCES`; returns the run directory.
fn pretrain(tmp: &Path, name: &str, lines: &[&str], seed: u64) -> (PathBuf, Output) {
    let text = write(tmp, &format!("{name}.txt"), lines);
    let out = tmp.join(name);
    let o = emb2emb(&[
        "pretrain",
        "--out",
        s(&out),
        "--set",
        &format!("train_text={}", s(&text)),
        "--set",
        "dim=16",
        "--set",
        "emb_dim=16",
        "--set",
        "ae_epochs=300",
        "--set",
        "ae_batch_size=6",
        "--set",
        "ae_lr=0.01",
        "--set",
        "p_drop=0",
        "--set",
        "tf_prob=1",
        "--set",
        &format!("seed={seed}"),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (out, o)
}

fn ae_flag(dir: &Path) -> String {
    format!("autoencoder={}", s(&dir.join("autoencoder.bin")))
}

#[test]
fn missing_corpus_exits_2() {
    let tmp = TempDir::new().unwrap();
    let o = emb2emb(&[
        "pretrain",
        "--out",
        s(tmp.path()),
        "--set",
        "train_text=/nonexistent/corpus.txt",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonexistent"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = s(tmp.path());
    for args in [
        vec!["train", "--out", out, "--set", "lambda_adv=10.5"],
        vec!["train", "--out", out, "--set", "lambda_adv=-1"],
        vec!["train", "--out", out, "--set", "no_such_key=1"],
        vec!["train", "--out", out, "--set", "epochs"],
        vec!["frobnicate", "--out", out],
        vec!["train"],
    ] {
        assert_eq!(code(&emb2emb(&args)), 2, "{args:?}");
    }
}

#[test]
fn config_file_overrides_and_resolved_copy() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "lambda_adv = 0.5\nseed = 4\n").unwrap();
    let out = tmp.path().join("out");
    // the config resolves, then fails on the missing autoencoder path
    let o = emb2emb(&["train", "-c", s(&cfg), "--set", "lambda_adv=0.032", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let resolved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(resolved.contains("lambda_adv = 0.032\n"));
    assert!(resolved.contains("seed = 4\n"));
    let o = emb2emb(&["train", "-c", s(&cfg), "--set", "lambda_adv=11", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn pretrain_is_deterministic_and_infer_with_identity_reproduces_input() {
    let tmp = TempDir::new().unwrap();
    let (a, oa) = pretrain(tmp.path(), "a", &SENTENCES, 3);
    let (_, ob) = pretrain(tmp.path(), "b", &SENTENCES, 3);
    let hash = |o: &Output| {
        stdout(o)
            .lines()
            .find(|l| l.starts_with("autoencoder "))
            .unwrap()
            .split(' ')
            .nth(1)
            .unwrap()
            .to_string()
    };
    assert_eq!(hash(&oa), hash(&ob));
    assert!(
        stdout(&oa).contains("validation reconstruction accuracy 1.0000"),
        "{}",
        stdout(&oa)
    );
    assert!(a.join("pretrain_log.csv").exists());
    assert!(a.join("config.txt").exists());

    // mean offset with alpha 0 is the identity map
    let src = write(tmp.path(), "src.txt", &SENTENCES);
    let m = tmp.path().join("m");
    let o = emb2emb(&[
        "train",
        "--out",
        s(&m),
        "--set",
        &ae_flag(&a),
        "--set",
        "dim=16",
        "--set",
        "mapping=meanoffset",
        "--set",
        "alpha=0",
        "--set",
        &format!("train_source={}", s(&src)),
        "--set",
        &format!("train_target={}", s(&src)),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let inf = tmp.path().join("inf");
    let o = emb2emb(&[
        "infer",
        "--out",
        s(&inf),
        "--input",
        s(&src),
        "--mapping",
        s(&m.join("mapping.bin")),
        "--set",
        &ae_flag(&a),
        "--set",
        "dim=16",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_lines(&inf.join("outputs.txt")).unwrap(), SENTENCES);
    let dump = fs::read_to_string(inf.join("dump.tsv")).unwrap();
    assert_eq!(dump.lines().next(), Some("the cat sat\tthe cat sat"));

    let empty = write(tmp.path(), "empty.txt", &[]);
    let inf2 = tmp.path().join("inf2");
    let o = emb2emb(&[
        "infer",
        "--out",
        s(&inf2),
        "--input",
        s(&empty),
        "--mapping",
        s(&m.join("mapping.bin")),
        "--set",
        &ae_flag(&a),
        "--set",
        "dim=16",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(inf2.join("outputs.txt")).unwrap(), "");

    // a different corpus gives a different vocabulary
    let (c, _) = pretrain(tmp.path(), "c", &["one two three", "four five six"], 3);
    let o = emb2emb(&[
        "infer",
        "--out",
        s(&tmp.path().join("inf3")),
        "--input",
        s(&src),
        "--mapping",
        s(&m.join("mapping.bin")),
        "--set",
        &ae_flag(&c),
        "--set",
        "dim=16",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary"));
}

#[test]
fn train_checks_dimensions_classifier_and_logs_bleu() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = pretrain(tmp.path(), "a", &SENTENCES, 1);
    let src = write(tmp.path(), "src.txt", &SENTENCES[..3]);
    let tgt = write(tmp.path(), "tgt.txt", &SENTENCES[3..]);
    let data = [
        format!("train_source={}", s(&src)),
        format!("train_target={}", s(&tgt)),
        ae_flag(&a),
    ];
    let run = |extra: &[&str]| {
        let out = tmp.path().join("t");
        let mut args = vec!["train", "--out", s(&out)];
        for d in &data {
            args.extend(["--set", d.as_str()]);
        }
        for e in extra {
            args.extend(["--set", e]);
        }
        (emb2emb(&args), out)
    };
    let (o, _) = run(&["dim=32"]);
    assert_eq!(code(&o), 2, "dimension mismatch");
    let (o, _) = run(&["dim=16", "mode=unsupervised"]);
    assert_eq!(code(&o), 2, "unsupervised without classifier");
    assert!(String::from_utf8_lossy(&o.stderr).contains("classifier"));

    let (o, out) = run(&["dim=16", "epochs=3", "batch_size=3", "lambda_adv=0.016"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("epoch_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,task_loss,adv_loss,disc_loss,valid_metric"));
    assert_eq!(lines.count(), 3);
    let c = Container::load(&out.join("mapping.bin")).unwrap();
    assert!(c.has_section("mapping") && c.has_section("discriminator"));
}

#[test]
fn eval_of_gold_targets_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let refs = write(tmp.path(), "refs.txt", &SENTENCES);
    let out = tmp.path().join("e");
    let o = emb2emb(&[
        "eval",
        "--out",
        s(&out),
        "--hyp",
        s(&refs),
        "--reference",
        s(&refs),
        "--source",
        s(&refs),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("bleu 1.000000"), "{text}");
    assert!(text.contains("self_bleu 1.000000"), "{text}");
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 3);
    assert_eq!(reports[0]["per_sentence"].as_array().unwrap().len(), SENTENCES.len());

    let o = emb2emb(&["eval", "--out", s(&out), "--hyp", s(&refs)]);
    assert_eq!(code(&o), 2, "nothing to evaluate");
}

#[test]
fn sweep_writes_one_row_per_grid_value() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = pretrain(tmp.path(), "a", &SENTENCES, 2);
    let src = write(tmp.path(), "src.txt", &SENTENCES[..3]);
    let tgt = write(tmp.path(), "tgt.txt", &SENTENCES[3..]);
    let out = tmp.path().join("sw");
    let sets = [
        ae_flag(&a),
        "dim=16".into(),
        "epochs=2".into(),
        "batch_size=3".into(),
        "sweep_param=lambda_adv".into(),
        "lambda_adv_grid=0,0.008,0.016".into(),
        format!("train_source={}", s(&src)),
        format!("train_target={}", s(&tgt)),
        format!("test_source={}", s(&src)),
        format!("test_target={}", s(&tgt)),
    ];
    let mut args = vec!["sweep", "--out", s(&out)];
    for x in &sets {
        args.extend(["--set", x.as_str()]);
    }
    let o = emb2emb(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("sweep_param,value,accuracy,self_bleu,bleu,sari,seconds,checkpoint_hash")
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn fgim_changes_only_low_confidence_outputs() {
    let tmp = TempDir::new().unwrap();
    let (a, _) = pretrain(tmp.path(), "a", &SENTENCES, 5);
    let labeled: Vec<String> = SENTENCES
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}\t{t}", i % 2))
        .collect();
    let labeled: Vec<&str> = labeled.iter().map(String::as_str).collect();
    let tsv = write(tmp.path(), "labeled.tsv", &labeled);
    let clf_out = tmp.path().join("clf");
    let o = emb2emb(&[
        "train-classifier",
        "--out",
        s(&clf_out),
        "--set",
        &ae_flag(&a),
        "--set",
        "dim=16",
        "--set",
        &format!("labeled={}", s(&tsv)),
        "--set",
        "clf_heldout=0",
        "--set",
        "clf_epochs=200",
        "--set",
        "clf_lr=0.01",
        "--set",
        "clf_batch_size=6",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let src = write(tmp.path(), "src.txt", &SENTENCES);
    let m = tmp.path().join("m");
    let o = emb2emb(&[
        "train",
        "--out",
        s(&m),
        "--set",
        &ae_flag(&a),
        "--set",
        "dim=16",
        "--set",
        "mapping=meanoffset",
        "--set",
        "alpha=0",
        "--set",
        &format!("train_source={}", s(&src)),
        "--set",
        &format!("train_target={}", s(&src)),
    ]);
    assert_eq!(code(&o), 0);
    let threshold = 0.5;
    let infer = |name: &str, fgim: bool| {
        let out = tmp.path().join(name);
        let classifier = format!("classifier={}", s(&clf_out.join("classifier.bin")));
        let t = threshold.to_string();
        let mapping = m.join("mapping.bin");
        let mut args = vec!["infer", "--out", s(&out), "--input", s(&src), "--mapping", s(&mapping)];
        let ae = ae_flag(&a);
        args.extend(["--set", ae.as_str(), "--set", "dim=16", "--set", classifier.as_str()]);
        if fgim {
            args.extend(["--fgim", "--fgim-threshold", t.as_str()]);
        }
        let o = emb2emb(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        read_lines(&out.join("outputs.txt")).unwrap()
    };
    let plain = infer("plain", false);
    let refined = infer("refined", true);

    let ae = Autoencoder::load(&a.join("autoencoder.bin")).unwrap();
    let c = Container::load(&m.join("mapping.bin")).unwrap();
    let mapping = Mapping::from_section(c.section("mapping").unwrap()).unwrap();
    let clf = StyleClassifier::from_section(
        Container::load(&clf_out.join("classifier.bin"))
            .unwrap()
            .section("classifier")
            .unwrap(),
    )
    .unwrap();
    let (_, pred) = Pipeline::new(&ae, &mapping).unwrap().embed(&SENTENCES).unwrap();
    let conf = clf.probs(&pred).unwrap();
    assert!(
        conf.iter().any(|&p| p <= threshold) && conf.iter().any(|&p| p > threshold),
        "{conf:?}"
    );
    let mut changed = 0;
    for ((p, r), c) in plain.iter().zip(&refined).zip(&conf) {
        if *c > threshold {
            assert_eq!(p, r);
        } else if p != r {
            changed += 1;
        }
    }
    assert!(changed > 0, "FGIM changed no low-confidence output");
}
