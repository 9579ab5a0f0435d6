use std::process::{Command, Output};

fn sdgrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdgrid")).args(args).output().unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.lines().last().unwrap_or("")).unwrap()
}

#[test]
fn usage_errors_exit_2_with_json() {
    let o = sdgrid(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");
    let o = sdgrid(&["run-dos", "--scale", "huge"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_topology_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[topology]\nfile = \"absent/topo.toml\"\n").unwrap();
    let o = sdgrid(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let j = stderr_json(&o);
    assert_eq!(j["error"], "config");
    assert!(j["message"].as_str().unwrap().contains("absent/topo.toml"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "replications = 2\nflux_capacitor = true\n").unwrap();
    let o = sdgrid(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("flux_capacitor"));
}

#[test]
fn pingpong_writes_latency_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[bench.pingpong]\ncount = 20\n").unwrap();
    let out = dir.path().join("out");
    let o = sdgrid(&["bench", "pingpong", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lat = std::fs::read_to_string(out.join("latency.csv")).unwrap();
    assert_eq!(lat.lines().count(), 1 + 4 * 20);
    assert!(lat.starts_with("seq,rtt_us,one_way_us,mode,transport"));
    let echo = std::fs::read_to_string(out.join("config_echo.toml")).unwrap();
    assert!(echo.contains("seeds = [3]"));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[bench.sweep]\nswitch_counts = [3, 12]\nduration_s = 0.2\n").unwrap();
    let o = sdgrid(&["bench", "sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}
