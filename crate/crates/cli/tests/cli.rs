use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use cloudroid::harness::builders;
use cloudroid::harness::report::{AGGREGATES_FILE, TRACE_FILE};
use cloudroid::harness::{run_scenario, Deployment, Scenario};
use cloudroid::samples;
use cloudroid::stubgen::generate_stub;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cloudroid"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn shipped_scenarios_match_builders() {
    let cases = [
        ("fig8", builders::fig8(42)),
        ("fig8_outage", builders::fig8_outage(42)),
        ("flat", builders::flat(42, 100)),
        ("outage", builders::outage(42, 100)),
        ("sd_native", builders::sd_native(42)),
        ("sd_cloud", builders::sd_cloud(42)),
    ];
    for (name, sc) in cases {
        assert_eq!(
            Scenario::load(&repo(&format!("scenarios/{name}.json"))).unwrap(),
            sc,
            "{name}"
        );
    }
}

#[test]
fn run_scenario_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(bin()
        .args(["run-scenario"])
        .arg(repo("scenarios/fig8.json"))
        .args(["--seed", "42", "--out"])
        .arg(dir.path())
        .output()
        .unwrap());
    assert!(out.contains("fraction_within_t_max"));
    let csv = std::fs::read(dir.path().join(TRACE_FILE)).unwrap();
    let want = run_scenario(&builders::fig8(42), &Deployment::samples()).unwrap();
    assert_eq!(csv, want.csv());
    assert_eq!(
        csv,
        std::fs::read(repo("crates/core/tests/golden/fig8_seed42.csv")).unwrap()
    );
    assert!(dir.path().join(AGGREGATES_FILE).exists());

    let rep = ok(bin().arg("report").arg(dir.path()).output().unwrap());
    assert!(rep.contains("start_local at"));
    assert!(rep.contains("26 77 112"), "{rep}");
}

#[test]
fn seed_flag_overrides_file() {
    let a = tempfile::tempdir().unwrap();
    ok(bin()
        .arg("run-scenario")
        .arg(repo("scenarios/sd_native.json"))
        .args(["--seed", "3", "--out"])
        .arg(a.path())
        .output()
        .unwrap());
    let want = run_scenario(&builders::sd_native(3), &Deployment::samples()).unwrap();
    assert_eq!(
        std::fs::read(a.path().join(TRACE_FILE)).unwrap(),
        want.csv()
    );
}

#[test]
fn realtime_flag_runs_live_stub() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builders::flat(1, 5);
    sc.workload_timeline[0].period_ms = 100.0;
    let file = dir.path().join("short.json");
    std::fs::write(&file, sc.to_json()).unwrap();
    let out = ok(bin()
        .arg("run-scenario")
        .arg(&file)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("--realtime")
        .output()
        .unwrap());
    assert!(out.contains("realtime"));
    let agg: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("out").join(AGGREGATES_FILE)).unwrap(),
    )
    .unwrap();
    assert_eq!(agg["realtime"], true);
    assert_eq!(agg["completed"], 5);
}

#[test]
fn bad_scenario_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    std::fs::write(&file, "{}").unwrap();
    let out = bin()
        .arg("run-scenario")
        .arg(&file)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario file"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_deploy_and_fetch_stub() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("portal.toml");
    std::fs::write(
        &cfg,
        format!(
            "listen = \"127.0.0.1:0\"\ntoken = \"t0k\"\ndictionary = \"{}\"\nnode_pool = \"{}\"\n",
            repo("config/sla.json").display(),
            repo("config/nodes.json").display()
        ),
    )
    .unwrap();
    let mut child = bin()
        .arg("serve")
        .arg("--config")
        .arg(&cfg)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let _server = Server(child);
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect(&line)
        .to_string();
    let portal = format!("http://{addr}");

    let deployed = ok(bin()
        .arg("deploy")
        .arg(repo("packages/detector.json"))
        .args(["--portal", &portal, "--token", "t0k"])
        .output()
        .unwrap());
    assert!(deployed.contains("created"), "{deployed}");

    let unauthorized = bin()
        .arg("deploy")
        .arg(repo("packages/detector.json"))
        .args(["--portal", &portal])
        .env("CLOUDROID_TOKEN", "wrong")
        .output()
        .unwrap();
    assert!(!unauthorized.status.success());
    assert!(String::from_utf8_lossy(&unauthorized.stderr).contains("401"));

    let stub_file = dir.path().join("detect.json");
    ok(bin()
        .args([
            "stub", "fetch", "detect", "--portal", &portal, "--token", "t0k", "--out",
        ])
        .arg(&stub_file)
        .output()
        .unwrap());
    let want = generate_stub(&samples::detector(), &format!("ws://{addr}/ws")).to_bytes();
    assert_eq!(std::fs::read(&stub_file).unwrap(), want);

    let missing = bin()
        .args([
            "stub", "fetch", "ghost", "--portal", &portal, "--token", "t0k",
        ])
        .output()
        .unwrap();
    assert!(!missing.status.success());
}

#[test]
fn shipped_config_loads() {
    let cfg = cloudroid_portal::PortalConfig::load(&repo("config/portal.toml")).unwrap();
    let p = cfg.build_portal("ws://x/ws").unwrap();
    assert_eq!(p.services().len(), 2);
    assert_eq!(p.nodes().len(), 2);
}
