use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use intentguard::formspec::{bank_transfer, parse_spec};
use intentguard::server::net::request;
use intentguard::server::wire::Message;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intentguard"))
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_forms_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["gen-forms", "--seed", "7", "--count", "100", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 100);
    let mut sizes = std::collections::BTreeSet::new();
    for n in &names {
        let (x, y) = (fs::read_to_string(a.join(n)).unwrap(), fs::read_to_string(b.join(n)).unwrap());
        assert_eq!(x, y);
        let spec = parse_spec(&x).unwrap();
        assert!((4..=9).contains(&spec.elements.len()));
        sizes.insert(spec.elements.len());
    }
    assert_eq!(sizes.len(), 6, "every size from 4 to 9 appears");
}

#[test]
fn gen_forms_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    assert_eq!(code(&run(&["gen-forms", "--seed", "1", "--count", "0", "--out", empty.to_str().unwrap()])), 0);
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 0);

    // A regular file where the directory should be.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["gen-forms", "--seed", "1", "--count", "3", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    // The seed is mandatory.
    assert_eq!(code(&run(&["gen-forms", "--out", empty.to_str().unwrap()])), 2);
}

#[test]
fn bundled_ui_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = assets().join("configs/ui-verification.cfg");
    let o = run(&["run-campaign", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("100.00%") && out.contains("thresholds: met"), "{out}");
    let csv = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
}

#[test]
fn bundled_b2_detects_everything() {
    let cfg = assets().join("configs/b2.cfg");
    let o = run(&["run-campaign", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o).lines().find(|l| l.starts_with("b2 ")).unwrap().to_string();
    let cols: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(&cols[..4], ["b2", "100", "100", "100"], "{line}");
}

#[test]
fn missed_thresholds_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("strict.cfg");
    // The engine cannot detect A1, so demanding detections must fail.
    fs::write(&cfg, "runs = 5\nattack = \"a1\"\nseed = 1\n[thresholds]\nmin_detected = 0.5\n").unwrap();
    let o = run(&["run-campaign", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("threshold missed: detected"));
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    for text in ["runs = \"many\"", "runs = 3\nattack = \"none\"\nseed = 1\npose = \"sideways\"\n"] {
        fs::write(&cfg, text).unwrap();
        assert_eq!(code(&run(&["run-campaign", "--config", cfg.to_str().unwrap()])), 2, "{text}");
    }
    assert_eq!(code(&run(&["run-campaign", "--config", dir.path().join("absent.cfg").to_str().unwrap()])), 2);
    let good = assets().join("configs/b2.cfg");
    assert_eq!(code(&run(&["run-campaign", "--config", good.to_str().unwrap(), "--runs", "0"])), 2);
    assert_eq!(code(&run(&["run-campaign", "--config", good.to_str().unwrap(), "--noise", "nowhere.toml"])), 2);
}

#[test]
fn campaign_overrides_and_reproducible_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = assets().join("configs/mixed.cfg");
    let mut csvs = Vec::new();
    for sub in ["x", "y"] {
        let out = dir.path().join(sub);
        let o = run(&[
            "run-campaign", "--config", cfg.to_str().unwrap(), "--runs", "21", "--seed", "5",
            "--pose", "inclined:45", "--noise", "calibrated", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("runs=21 attack=mixed noise=calibrated pose=inclined:45 seed=5"));
        csvs.push(fs::read(out.join("runs.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn replay_golden_trace() {
    let trace = assets().join("golden/b1.trace");
    let text = fs::read_to_string(&trace).unwrap();
    let expected: Vec<&str> = text.lines().filter_map(|l| l.strip_prefix("# expect: ")).collect();
    assert!(!expected.is_empty());
    let o = run(&["replay", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let alarms: Vec<&str> = out.lines().take_while(|l| !l.starts_with("outcome")).collect();
    assert_eq!(alarms, expected);
    assert!(alarms[0].split(' ').nth(1) == Some("IllegalChange"));
    assert!(out.contains("outcome EngineDetected"));
    assert_eq!(out, stdout(&run(&["replay", trace.to_str().unwrap()])));
}

#[test]
fn replay_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.trace");
    fs::write(&empty, "# nothing happened\n").unwrap();
    let o = run(&["replay", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "outcome NoAttackClean\nverdict Accept\n");

    let truncated = dir.path().join("truncated.trace");
    fs::write(&truncated, "300 user focus IBAN_value -\n600 user keypress IBAN_value\n").unwrap();
    let o = run(&["replay", truncated.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let unknown = dir.path().join("unknown.trace");
    fs::write(&unknown, "300 user focus nowhere -\n").unwrap();
    assert_eq!(code(&run(&["replay", unknown.to_str().unwrap()])), 2);
}

#[test]
fn verify_spec_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, intentguard::formspec::to_document(&bank_transfer())).unwrap();
    let o = run(&["verify-spec", good.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(": ok ("), "{}", stdout(&o));

    let overlapping = dir.path().join("overlap.json");
    let doc = intentguard::formspec::to_document(&bank_transfer());
    let mut v: serde_json::Value = serde_json::from_str(&doc).unwrap();
    let elems = v["elements"].as_array_mut().unwrap();
    for key in ["x_position", "y_position"] {
        let v0 = elems[0][key].clone();
        elems[1][key] = v0;
    }
    fs::write(&overlapping, serde_json::to_string(&v).unwrap()).unwrap();
    let o = run(&["verify-spec", good.to_str().unwrap(), overlapping.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{").unwrap();
    assert_eq!(code(&run(&["verify-spec", garbage.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["verify-spec", dir.path().join("missing.json").to_str().unwrap()])), 2);
}

#[test]
fn serve_answers_and_shuts_down_on_signal() {
    let mut child = bin()
        .args(["serve", "--port", "0", "--device-key", &"ab".repeat(32)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    match request(addr.as_str(), &Message::SpecReq { page_id: "Bank Transfer".into() }).unwrap() {
        Message::SpecResp { document } => assert_eq!(parse_spec(&document).unwrap(), bank_transfer()),
        other => panic!("{other:?}"),
    }
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert_eq!(child.wait().unwrap().code(), Some(0));
}

#[test]
fn serve_bind_failure_exits_two() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    assert_eq!(code(&run(&["serve", "--port", &port])), 2);
    assert_eq!(code(&run(&["serve", "--port", "0", "--device-key", "xyz"])), 2);
}
