use mimic_core::planner::parse_plan_str;
use mimic_core::recognizer::{builtin_actions, parse_actions, parse_timeline_str};
use std::path::Path;
use std::process::{Command, Output};

fn mimic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimic"))
        .current_dir(dir)
        .env_remove("MIMIC_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_corpus(dir: &Path) {
    ok(&mimic(dir, &["gen", "--out", "corpus", "--count", "6", "--seed", "4"]));
}

#[test]
fn gen_then_report_csv() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path());
    let csv = ok(&mimic(tmp.path(), &["report", "--corpus", "corpus", "--format", "csv"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("table,row,column,successes,total,rate"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for row in rows {
        let rate = row.rsplit(',').next().unwrap();
        assert_eq!(rate, "1.0000", "{row}");
    }
}

#[test]
fn noise_grid_multiplies_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&mimic(
        tmp.path(),
        &["gen", "--out", "c", "--count", "3", "--dropout", "0,0.05", "--jitter", "0,1,2"],
    ));
    assert!(out.contains("wrote 18 traces"), "{out}");
    assert!(tmp.path().join("c/0017.trace.jsonl").exists());
}

#[test]
fn recognize_writes_default_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path());
    let stdout = ok(&mimic(
        tmp.path(),
        &["recognize", "--trace", "corpus/0000.trace.jsonl", "--trace-constraints", "truth.jsonl"],
    ));
    assert!(stdout.contains("Pick"));
    let timeline = parse_timeline_str(&std::fs::read_to_string(tmp.path().join("corpus/0000.timeline.jsonl")).unwrap()).unwrap();
    assert_eq!(timeline.trace, "0000");
    let labels = parse_timeline_str(&std::fs::read_to_string(tmp.path().join("corpus/0000.labels.jsonl")).unwrap()).unwrap();
    assert_eq!(timeline.instances.len(), labels.instances.len());
    let plan = parse_plan_str(&std::fs::read_to_string(tmp.path().join("corpus/0000.plan.jsonl")).unwrap()).unwrap();
    assert_eq!(plan.source, "0000");
    assert!(!plan.commands.is_empty());
    let truth = std::fs::read_to_string(tmp.path().join("truth.jsonl")).unwrap();
    assert!(truth.lines().count() > 100);
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    small_corpus(tmp.path());
    std::fs::write(tmp.path().join("mimic.toml"), "[thresholds]\nth_n = 4\n").unwrap();
    let th_n = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mimic"));
        cmd.current_dir(tmp.path()).env_remove("MIMIC_CONFIG");
        if let Some(cfg) = env {
            cmd.env("MIMIC_CONFIG", cfg);
        }
        let base = ["recognize", "--trace", "corpus/0000.trace.jsonl", "--out-timeline", "t.jsonl"];
        ok(&cmd.args(base).args(args).output().unwrap());
        parse_timeline_str(&std::fs::read_to_string(tmp.path().join("t.jsonl")).unwrap()).unwrap().thresholds.th_n
    };
    let default = th_n(&[], None);
    assert_eq!(th_n(&["--config", "mimic.toml"], None), 4);
    assert_eq!(th_n(&[], Some("mimic.toml")), 4);
    assert_eq!(th_n(&["--config", "mimic.toml", "--th-n", "7"], None), 7);
    assert_ne!(default, 4);
}

#[test]
fn missing_input_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mimic(tmp.path(), &["recognize", "--trace", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_inputs_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.dsl"), "action Pick(o: active {").unwrap();
    std::fs::write(tmp.path().join("bad.jsonl"), "{\"image_size\": [640, 480]}\n{not json\n").unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[thresholds]\nth_q = 1\n").unwrap();
    for args in [
        &["--actions", "bad.dsl", "actions"][..],
        &["validate", "--trace", "bad.jsonl"],
        &["--config", "bad.toml", "actions"],
        &["report", "--corpus", "nowhere"],
        &["--th-d", "-3", "gen", "--out", "x", "--count", "1"],
    ] {
        let out = mimic(tmp.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn dumped_actions_parse_back() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = ok(&mimic(tmp.path(), &["actions", "--dump"]));
    assert_eq!(parse_actions(&dump).unwrap(), builtin_actions(false));
    let strict = ok(&mimic(tmp.path(), &["--strict-pour", "actions", "--dump"]));
    assert_eq!(parse_actions(&strict).unwrap(), builtin_actions(true));
}
