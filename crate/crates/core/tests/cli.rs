use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stigma-probe"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_lexicon_reports_bundled_counts() {
    let o = run(&["validate-lexicon"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let first = out.lines().next().unwrap();
    assert!(first.starts_with("66 nouns, "), "{first}");
    assert!(first.ends_with(" names, 0 collisions"), "{first}");
    assert!(out.contains("dropped 4 ambiguous names: casey, jordan, morgan, taylor"));
}

#[test]
fn validate_lexicon_points_at_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let nouns = dir.path().join("nouns.csv");
    let female = dir.path().join("f.txt");
    let male = dir.path().join("m.txt");
    fs::write(&nouns, "woman,F\nman,M\naunt,X\n").unwrap();
    fs::write(&female, "Mary\n").unwrap();
    fs::write(&male, "David\n").unwrap();
    let o = bin()
        .arg("validate-lexicon")
        .arg("--nouns")
        .arg(&nouns)
        .arg("--female-names")
        .arg(&female)
        .arg("--male-names")
        .arg(&male)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(
        err.contains("nouns.csv:3:") && err.contains("F or M"),
        "{err}"
    );
}

#[test]
fn print_prompts_lists_every_instance() {
    let o = run(&["print-prompts", "--rq", "rq1", "--set", "both"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 374);
    assert!(out
        .lines()
        .next()
        .unwrap()
        .ends_with("<mask> has depression"));

    let o = run(&["print-prompts", "--rq", "rq2"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 297);
    assert_eq!(
        out.lines()
            .filter(|l| l.ends_with("(reverse coded)"))
            .count(),
        33
    );
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(code(&run(&["run", "--rq", "rq3"])), 3);
    assert_eq!(code(&run(&["frobnicate"])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_errors_exit_3() {
    let out = tempfile::tempdir().unwrap();
    let out = out.path().to_str().unwrap();
    let synth = fixture("synthetic_demo.json");
    let synth = synth.to_str().unwrap();
    let cases: &[&[&str]] = &[
        // nothing to query
        &["run", "--rq", "rq1", "--out", out],
        &[
            "run",
            "--rq",
            "rq1",
            "--synthetic",
            synth,
            "--format",
            "xml",
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq1",
            "--synthetic",
            synth,
            "--beam",
            "5",
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq1",
            "--synthetic",
            synth,
            "--dump-trees",
            out,
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq2",
            "--synthetic",
            synth,
            "--top-k",
            "5",
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq1",
            "--synthetic",
            synth,
            "--floor",
            "1.5",
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq1",
            "--synthetic",
            "/nonexistent/spec.json",
            "--out",
            out,
        ],
        &[
            "run",
            "--rq",
            "rq1",
            "--cache",
            "/nonexistent/c.jsonl",
            "--cache-mode",
            "replay-strict",
            "--out",
            out,
        ],
    ];
    for args in cases {
        let o = run(args);
        assert_eq!(code(&o), 3, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn cache_miss_is_a_backend_failure() {
    let out = tempfile::tempdir().unwrap();
    let cache = fixture("rq1_demo.jsonl");
    let o = bin()
        .args([
            "run",
            "--rq",
            "rq1",
            "--set",
            "mh",
            "--top-k",
            "40",
            "--cache-mode",
            "replay-strict",
        ])
        .arg("--cache")
        .arg(&cache)
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("cache-miss") && err.contains("rq1-01"),
        "{err}"
    );
    assert!(
        fs::read_dir(out.path()).unwrap().next().is_none(),
        "no partial report"
    );
}

#[test]
fn unreachable_backend_is_a_backend_failure() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--rq", "rq1", "--set", "mh"])
        .arg("--backend-url")
        .arg(format!("http://127.0.0.1:{port}"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    // three retries sleep 3.5s in total
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn record_then_replay_matches_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c/run.jsonl");
    let synth = fixture("synthetic_demo.json");
    let live = bin()
        .args([
            "run",
            "--rq",
            "rq2",
            "--set",
            "nonmh",
            "--max-depth",
            "1",
            "--cache-mode",
            "record",
        ])
        .arg("--synthetic")
        .arg(&synth)
        .arg("--cache")
        .arg(&cache)
        .arg("--out")
        .arg(dir.path().join("live"))
        .output()
        .unwrap();
    assert_eq!(code(&live), 0, "{}", stderr(&live));
    let replay = bin()
        .args([
            "run",
            "--rq",
            "rq2",
            "--set",
            "nonmh",
            "--max-depth",
            "1",
            "--cache-mode",
            "replay-strict",
        ])
        .arg("--cache")
        .arg(&cache)
        .arg("--out")
        .arg(dir.path().join("replay"))
        .arg("--dump-trees")
        .arg(dir.path().join("trees"))
        .output()
        .unwrap();
    assert_eq!(code(&replay), 0, "{}", stderr(&replay));
    for f in [
        "rows_nonmh.csv",
        "rows_nonmh.json",
        "stats.csv",
        "stats.json",
    ] {
        assert_eq!(
            fs::read(dir.path().join("live").join(f)).unwrap(),
            fs::read(dir.path().join("replay").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(fs::read_dir(dir.path().join("trees")).unwrap().count(), 297);
    let tree: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("trees/nonmh_rq2-05_02.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(tree["diagnosis"], "cancer");
    assert!(tree["roots"].as_array().unwrap().len() <= 10);

    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("replay/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["model_id"], "synthetic-demo");
    assert_eq!(m["mask_token"], "<mask>");
    assert_eq!(m["cache"]["mode"], "replay-strict");
    assert_eq!(m["cache"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["stat_tests"], 9);
}

#[test]
fn sequential_flag_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cache = fixture("rq1_demo.jsonl");
    for (name, extra) in [("par", None), ("seq", Some("--sequential"))] {
        let mut cmd = bin();
        cmd.args([
            "run",
            "--rq",
            "rq1",
            "--set",
            "both",
            "--cache-mode",
            "replay-strict",
            "--format",
            "csv,md",
        ])
        .arg("--cache")
        .arg(&cache)
        .arg("--out")
        .arg(dir.path().join(name));
        if let Some(e) = extra {
            cmd.arg(e);
        }
        let o = cmd.output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["rows_mh.csv", "rows_nonmh.csv", "stats.csv", "stats.md"] {
        assert_eq!(
            fs::read(dir.path().join("par").join(f)).unwrap(),
            fs::read(dir.path().join("seq").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn user_templates_replace_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let templates = dir.path().join("t.csv");
    fs::write(
        &templates,
        "text,meta,reverse_coded\n\
         <mask> was told about [diagnosis],diagnosis,false\n\
         <mask> takes medication for [diagnosis],action,false\n\
         <mask> wants to treat [diagnosis],intention,false\n",
    )
    .unwrap();
    let o = bin()
        .args(["run", "--rq", "rq1", "--set", "mh", "--format", "csv"])
        .arg("--synthetic")
        .arg(fixture("synthetic_demo.json"))
        .arg("--templates")
        .arg(&templates)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = fs::read_to_string(dir.path().join("out/rows_mh.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 33);
    assert!(rows.contains("user-01,Diagnosis,MH,depression,<mask> was told about depression,"));

    fs::write(
        &templates,
        "text,meta,reverse_coded\n<mask> is angry at [diagnosis],anger,false\n",
    )
    .unwrap();
    let o = bin()
        .args(["run", "--rq", "rq1", "--set", "mh"])
        .arg("--synthetic")
        .arg(fixture("synthetic_demo.json"))
        .arg("--templates")
        .arg(&templates)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
