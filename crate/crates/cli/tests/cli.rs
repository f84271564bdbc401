use std::path::Path;
use std::process::{Command, Output};

fn risd2d(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risd2d"))
        .args(args)
        .current_dir(dir)
        .env("RISD2D_RANDOMIZATIONS", "8")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("system.toml");
    std::fs::write(&path, format!("antennas = 2\nusers = 1\npairs = 1\nelements = 6\n{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_then_summarize_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("runs.csv");
    let o = risd2d(
        &["run", "--config", &cfg, "--sweep", "power", "--values", "20,30", "--methods", "AO,IC,ICAO", "--trials", "2", "--seed", "5", "--out", out.to_str().unwrap(), "--format", "csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,sweep_value,trial,min_sinr_db,outer_iterations,sdp_solves,wall_ms,status");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));

    let s = risd2d(&["summarize", "--in", out.to_str().unwrap()], dir.path());
    assert!(s.status.success());
    let summary = String::from_utf8(s.stdout).unwrap();
    assert!(summary.starts_with("method,sweep_value,count,failed,mean_min_sinr_db"));
    assert_eq!(summary.lines().count(), 1 + 6);
}

#[test]
fn json_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\n");
    let strip = |p: &Path| -> Vec<serde_json::Value> {
        let mut v: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        for r in &mut v {
            r["wall_ms"] = serde_json::Value::Null;
        }
        v
    };
    let mut runs = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let o = risd2d(
            &["run", "--config", &cfg, "--sweep", "iters", "--values", "1,3", "--methods", "ICAO", "--trials", "1", "--out", out.to_str().unwrap(), "--format", "json"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(strip(&out));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].len(), 2);
    assert_eq!(runs[0][0]["method"], "ICAO");
    assert!(runs[0][0]["per_link_sinrs_db"].as_array().unwrap().len() == 2);
}

#[test]
fn unavailable_ic_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, "antennas = 2\nusers = 2\npairs = 2\nelements = 3\n").unwrap();
    let o = risd2d(
        &["run", "--config", path.to_str().unwrap(), "--sweep", "power", "--values", "30", "--methods", "IC", "--trials", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().nth(1).unwrap().ends_with(",ic_unavailable"));
}

#[test]
fn bad_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = risd2d(&["run", "--methods", "AO,BOGUS", "--trials", "1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_risd2d"))
        .args(["run", "--trials", "1", "--methods", "IC"])
        .env("RISD2D_SDP_TOL_GAP", "tight")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("RISD2D_SDP_TOL_GAP"));
    let o = risd2d(&["summarize", "--in", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
