use std::path::Path;
use std::process::{Command, Output};

use qns_core::nn::{load_checkpoint, save_checkpoint};

fn qns(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qns"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("QNS_THREADS", t);
    }
    cmd.output().expect("run qns")
}

fn ok(args: &[&str]) -> Output {
    let out = qns(args, None);
    assert!(out.status.success(), "qns {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_args<'a>(out: &'a str, count: &'a str) -> Vec<&'a str> {
    vec![
        "gen", "--family", "lorentzian", "--count", count, "--seed", "5", "--t2-window", "120e-6,600e-6",
        "--sequence", "hahn", "--out", out,
    ]
}

#[test]
fn gen_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut blobs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("g{i}.jsonl"));
        let o = qns(&gen_args(p(&out), "12"), Some(threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        blobs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(blobs[0], blobs[1]);
    assert_eq!(blobs[0], blobs[2]);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.jsonl");
    let noisy = d.join("noisy.jsonl");
    let splits = d.join("split");
    let ckpt = d.join("net.json");
    let pred = d.join("pred.jsonl");
    let delta = d.join("delta.jsonl");
    let report = d.join("report");

    ok(&gen_args(p(&corpus), "20"));
    ok(&["noise", "--in", p(&corpus), "--seed", "1", "--out", p(&noisy)]);
    ok(&["split", "--in", p(&noisy), "--ratios", "0.8,0.1,0.1", "--seed", "2", "--out-dir", p(&splits)]);
    for task in ["spectrum", "denoise"] {
        ok(&[
            "train", "--task", task, "--data", p(&splits), "--hidden", "4", "--epochs", "2", "--max-lr", "1e-3",
            "--seed", "3", "--ckpt", p(&ckpt),
        ]);
        assert!(ckpt.exists() && d.join("net.json.bin").exists());
        ok(&["infer", "--ckpt", p(&ckpt), "--in", p(&splits.join("test.jsonl")), "--out", p(&pred)]);
        let metric = if task == "spectrum" { "spectrum" } else { "logc" };
        let out = ok(&[
            "eval", "--pred", p(&pred), "--truth", p(&splits.join("test.jsonl")), "--metric", metric, "--report",
            p(&report),
        ]);
        assert!(String::from_utf8_lossy(&out.stdout).contains("lorentzian"));
        for f in ["errors.csv", "summary.csv", "histogram.csv"] {
            assert!(report.join(f).exists());
        }
    }

    ok(&["invert", "--method", "delta", "--in", p(&corpus), "--out", p(&delta)]);
    let out = ok(&[
        "eval", "--pred", p(&delta), "--truth", p(&corpus), "--metric", "spectrum", "--report", p(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean="));

    let few = d.join("few.jsonl");
    ok(&gen_args(p(&few), "2"));
    let opt = d.join("opt.jsonl");
    ok(&["optimize", "--spectrum", p(&few), "--n", "8", "--t", "100e-6", "--tau-pi", "1e-7", "--out", p(&opt)]);
    let lines = std::fs::read_to_string(&opt).unwrap();
    assert_eq!(lines.lines().count(), 2);
    let csv = std::fs::read_to_string(d.join("opt.jsonl.bins.csv")).unwrap();
    assert!(csv.starts_with("initial_coherence_bin,mean_enh_udd,mean_enh_opt,count"));
}

#[test]
fn alvarez_suter_inversion_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let out = dir.path().join("as.jsonl");
    ok(&gen_args(p(&corpus), "2"));
    ok(&["invert", "--method", "as", "--in", p(&corpus), "--as-kmax", "7", "--out", p(&out)]);
    ok(&["eval", "--pred", p(&out), "--truth", p(&corpus), "--metric", "spectrum", "--report", p(&dir.path().join("r"))]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // unknown flag value and invalid window are validation errors
    assert_eq!(qns(&["gen", "--family", "purple"], None).status.code(), Some(2));
    let out = dir.path().join("x.jsonl");
    let bad = qns(
        &["gen", "--family", "lorentzian", "--count", "3", "--seed", "1", "--t2-window", "5e-3,6e-3", "--out", p(&out)],
        None,
    );
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(qns(&["infer", "--ckpt", "/nonexistent", "--in", "/nonexistent", "--out", p(&out)], None).status.code(), Some(2));

    // an overflowing network is a numerical failure
    let corpus = dir.path().join("c.jsonl");
    let splits = dir.path().join("s");
    let ckpt = dir.path().join("n.json");
    ok(&gen_args(p(&corpus), "10"));
    ok(&["split", "--in", p(&corpus), "--seed", "1", "--out-dir", p(&splits)]);
    ok(&["train", "--task", "spectrum", "--data", p(&splits), "--hidden", "3", "--epochs", "1", "--ckpt", p(&ckpt)]);
    let mut net = load_checkpoint(&ckpt).unwrap();
    let lay = net.network.layout();
    net.network.params[lay.b_dense..].iter_mut().for_each(|b| *b = 1000.0);
    save_checkpoint(&net, &ckpt).unwrap();
    let o = qns(&["infer", "--ckpt", p(&ckpt), "--in", p(&corpus), "--out", p(&out)], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
