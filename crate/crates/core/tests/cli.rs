//! End-to-end checks of the `etrust` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn etrust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etrust"))
        .args(args)
        .output()
        .expect("spawn etrust")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    store: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let store = root.join("store");
        Self {
            _dir: dir,
            root,
            store,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn keygen(&self, name: &str) -> (PathBuf, PathBuf) {
        let o = etrust(&["keygen", "--out", p(&self.path(name))]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (self.path(&format!("{name}.key")), self.path(&format!("{name}.pub")))
    }

    /// Write a body and its manifest; returns (manifest, body).
    fn describe(&self, code_id: &str, owner: &str, body: &str) -> (PathBuf, PathBuf) {
        let body_path = self.path(&format!("{code_id}.body"));
        fs::write(&body_path, body).unwrap();
        let manifest = self.path(&format!("{code_id}.manifest"));
        let o = etrust(&[
            "manifest",
            "--code-id",
            code_id,
            "--owner",
            owner,
            "--body",
            p(&body_path),
            "--out",
            p(&manifest),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (manifest, body_path)
    }

    fn sign(&self, manifest: &Path, key: &Path) -> PathBuf {
        let sig = manifest.with_extension("sig");
        let o = etrust(&["sign", "--manifest", p(manifest), "--key", p(key), "--out", p(&sig)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        sig
    }

    fn install(&self, manifest: &Path, body: &Path, sig: Option<&Path>, owner_pub: &Path, trust: &str) -> Output {
        let mut args = vec![
            "install",
            "--manifest",
            p(manifest),
            "--body",
            p(body),
            "--store",
            p(&self.store),
            "--owner-key",
            p(owner_pub),
            "--owner-trust",
            trust,
        ];
        if let Some(sig) = sig {
            args.extend(["--sig", p(sig)]);
        }
        etrust(&args)
    }

    fn run(&self, code_id: &str) -> Output {
        etrust(&["run", "--code-id", code_id, "--store", p(&self.store)])
    }
}

fn json(line: &str) -> Value {
    serde_json::from_str(line.trim()).unwrap()
}

#[test]
fn analyze_reports_secured_metrics() {
    let o = etrust(&["analyze", "--n", "100", "--k", "2", "--l", "10,10,10,10"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for field in ["perf_base=200", "sec_base=0.995", "perf_secured=280", "sec_secured_raw=0.795"] {
        assert!(out.split_whitespace().any(|f| f == field), "missing {field} in {out}");
    }
    assert!(stderr(&o).contains("below the baseline"));
}

#[test]
fn analyze_json_matches_text() {
    let o = etrust(&["analyze", "--n", "100", "--k", "2", "--l", "1,1,1,1", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&stdout(&o));
    assert_eq!(v["perf_secured"].as_f64(), Some(1000.0));
    assert!((v["sec_secured_raw"].as_f64().unwrap() - 0.975).abs() < 1e-12);
}

#[test]
fn analyze_rejects_tiny_programs() {
    let o = etrust(&["analyze", "--n", "1", "--k", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("DomainError"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(etrust(&["analyze", "--k", "2"]).status.code(), Some(2));
    assert_eq!(etrust(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(etrust(&["analyze", "--n", "10", "--k", "2", "--l", "1,2"]).status.code(), Some(2));
    assert_eq!(etrust(&["--help"]).status.code(), Some(0));
}

#[test]
fn identical_invocations_give_identical_output() {
    let args = ["analyze", "--n", "37", "--k", "3.5", "--o", "0.25", "--l", "2,4,8,16"];
    let a = etrust(&args);
    let b = etrust(&args);
    assert_eq!(a.stdout, b.stdout);
    assert!(!a.stdout.is_empty());
}

#[test]
fn sweep_writes_csv() {
    let ws = Workspace::new();
    let csv = ws.path("sweep.csv");
    let o = etrust(&["sweep", "--n", "10:50:10", "--k", "2", "--l", "10,10,10,10", "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], explicit_trust::analysis::SWEEP_HEADER);
    assert_eq!(lines.len(), 1 + 5);
    assert!(lines[1].starts_with("10,20,"));
    assert!(!text.contains('\r'));
}

#[test]
fn sign_install_run_and_inspect() {
    let ws = Workspace::new();
    let (key, public) = ws.keygen("acme");
    let (manifest, body) = ws.describe("indexer", "acme", "READ user docs\nCOMPUTE 3\nWRITE user index\nEXIT success\n");
    let sig = ws.sign(&manifest, &key);

    let o = ws.install(&manifest, &body, Some(&sig), &public, "0.5");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&stdout(&o))["effective_level"], "verifiable");

    let trace = ws.path("trace.txt");
    let o = etrust(&["run", "--code-id", "indexer", "--store", p(&ws.store), "--trace", p(&trace)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&stdout(&o));
    assert_eq!(report["verdict"]["decision"], "EXECUTE");
    assert_eq!(report["outcome"], "Success");
    assert!(fs::read_to_string(&trace).unwrap().contains("index"));

    let o = etrust(&["trust", "--code-id", "indexer", "--store", p(&ws.store)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&stdout(&o))["code_id"], "indexer");

    ws.run("indexer");
    let o = etrust(&["history", "--code-id", "indexer", "--store", p(&ws.store), "--limit", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(json(&lines[0])["seq"], 2);

    let o = etrust(&["trust", "--code-id", "missing", "--store", p(&ws.store)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnknownCode"));
}

#[test]
fn duplicate_install_is_a_domain_error() {
    let ws = Workspace::new();
    let (key, public) = ws.keygen("acme");
    let (manifest, body) = ws.describe("tool", "acme", "EXIT success\n");
    let sig = ws.sign(&manifest, &key);
    assert_eq!(ws.install(&manifest, &body, Some(&sig), &public, "0.5").status.code(), Some(0));
    let o = ws.install(&manifest, &body, Some(&sig), &public, "0.5");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("DuplicateCode"), "{}", stderr(&o));
}

#[test]
fn denied_code_gets_a_deny_report() {
    let ws = Workspace::new();
    let (_, public) = ws.keygen("anon");
    let (manifest, body) = ws.describe("crasher", "anon", "COMPUTE 1\nRAISE_UNHANDLED\n");
    let o = ws.install(&manifest, &body, None, &public, "0.5");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&stdout(&o))["effective_level"], "untrustable");

    for _ in 0..10 {
        assert_eq!(ws.run("crasher").status.code(), Some(0));
    }
    let o = etrust(&["trust", "--code-id", "crasher", "--store", p(&ws.store)]);
    assert_eq!(json(&stdout(&o))["effective_level"], "denied");

    let history = ws.store.join(explicit_trust::store::HISTORY_FILE);
    let before = fs::read(&history).unwrap();
    let o = ws.run("crasher");
    assert_eq!(o.status.code(), Some(0));
    let report = json(&stdout(&o));
    assert_eq!(report["verdict"]["decision"], "DENY");
    assert!(report["outcome"].is_null());
    assert_eq!(fs::read(&history).unwrap(), before);
}

#[test]
fn foreign_update_is_rejected() {
    let ws = Workspace::new();
    let (acme_key, acme_pub) = ws.keygen("acme");
    let (mallory_key, _) = ws.keygen("mallory");
    let (manifest, body) = ws.describe("driver", "acme", "WRITE system dev\nEXIT success\n");
    let sig = ws.sign(&manifest, &acme_key);
    let o = etrust(&[
        "install",
        "--manifest",
        p(&manifest),
        "--body",
        p(&body),
        "--sig",
        p(&sig),
        "--store",
        p(&ws.store),
        "--as-system",
        "--owner-key",
        p(&acme_pub),
        "--owner-trust",
        "0.9",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let (update, update_body) = ws.describe("driver", "acme", "WRITE system dev\nWRITE system backdoor\nEXIT success\n");
    let bad_sig = ws.sign(&update, &mallory_key);
    let update_args = |sig: &Path| {
        etrust(&[
            "update",
            "--code-id",
            "driver",
            "--manifest",
            p(&update),
            "--body",
            p(&update_body),
            "--sig",
            p(sig),
            "--store",
            p(&ws.store),
        ])
    };
    let o = update_args(&bad_sig);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&stdout(&o))["accepted"], false);

    let good_sig = ws.sign(&update, &acme_key);
    let o = update_args(&good_sig);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&stdout(&o))["accepted"], true);
}

#[test]
fn scenarios_from_the_command_line() {
    let o = etrust(&["scenario", "--name", "data-theft"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("PASS"));
    assert!(!stderr(&o).contains("FAIL"));

    let o = etrust(&["scenario", "--name", "no-such-attack"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnknownScenario"));
}
