use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lnspdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lnspdc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn replication() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_replication.toml")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn help_lists_defaults() {
    let help = stdout(&lnspdc(&["--help"]));
    for line in ["matching.linewidth_ghz = 0.3", "coincidence.window_ps = 800", "seed = 1"] {
        assert!(help.contains(line), "missing `{line}` in --help");
    }
    for line in stdout(&lnspdc(&["defaults"])).lines() {
        assert!(help.contains(line), "`defaults` line `{line}` missing from --help");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lnspdc(&["scan", "--band", "1700:1500"]).status.code(), Some(2));
    assert_eq!(lnspdc(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(lnspdc(&["simulate"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3_with_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "seed = 4\n\n[coincidence]\nwindow_ps = -5.0\n");
    let out = lnspdc(&["--config", bad.to_str().unwrap(), "spectrum"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("coincidence.window_ps") && msg.contains("line 4"), "{msg}");

    let unknown = write(dir.path(), "unknown.toml", "[source]\npump_power = 3.0\n");
    let out = lnspdc(&["--config", unknown.to_str().unwrap(), "spectrum"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("source.pump_power"));

    let missing = dir.path().join("absent.toml");
    assert_eq!(lnspdc(&["--config", missing.to_str().unwrap(), "modes"]).status.code(), Some(3));
}

#[test]
fn replication_families_reproduce_fsrs() {
    let csv = stdout(&lnspdc(&["--config", replication().to_str().unwrap(), "families"]));
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|c| c.starts_with("fsr")).expect("fsr column");
    let fsr = |id: &str| -> f64 {
        let row = csv.lines().find(|l| l.starts_with(&format!("{id},"))).unwrap();
        row.split(',').nth(col).unwrap().parse().unwrap()
    };
    assert!((fsr("te0") - 3.89).abs() < 0.004);
    assert!((fsr("tm0") - 3.67).abs() < 0.004);
}

#[test]
fn simulate_then_coinc_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("run.ttps");
    let csv = dir.path().join("run.csv");
    for path in [&bin, &csv] {
        let out = lnspdc(&["--seed", "5", "--out", path.to_str().unwrap(), "simulate", "--power", "2", "--duration", "0.05"]);
        stdout(&out);
    }
    let bytes = std::fs::read(&bin).unwrap();
    assert_eq!(&bytes[..4], b"TTPS");
    assert_eq!((bytes.len() - 16) % 9, 0);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("channel,timestamp_ps\n"));

    let from_bin = stdout(&lnspdc(&["coinc", "--input", bin.to_str().unwrap(), "--window-ps", "800"]));
    let from_csv = stdout(&lnspdc(&["coinc", "--input", csv.to_str().unwrap(), "--window-ps", "800"]));
    assert_eq!(from_bin, from_csv);
    assert!(from_bin.starts_with("n1,n2,n12,"));
}

#[test]
fn identical_seeds_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, par: &str| {
        let path = dir.path().join(name);
        let args = ["--seed", "9", "--parallelism", par, "--out", path.to_str().unwrap(), "simulate", "--duration", "0.02"];
        stdout(&lnspdc(&args));
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.ttps", "1"), run("b.ttps", "3"));
    assert_ne!(run("a.ttps", "1"), {
        let path = dir.path().join("c.ttps");
        stdout(&lnspdc(&["--seed", "10", "--out", path.to_str().unwrap(), "simulate", "--duration", "0.02"]));
        std::fs::read(path).unwrap()
    });
}

#[test]
fn json_and_csv_carry_the_same_table() {
    let cfg = replication();
    let cfg = cfg.to_str().unwrap();
    let csv = stdout(&lnspdc(&["--config", cfg, "--format", "csv", "spectrum"]));
    let json = stdout(&lnspdc(&["--config", cfg, "--format", "json", "spectrum"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let columns: Vec<&str> = v["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    let rows = v["rows"].as_array().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), columns.join(","));
    for (line, row) in lines.zip(rows) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], row[0].to_string());
        let counts: f64 = cells[6].parse().unwrap();
        assert_eq!(counts, row[6].as_f64().unwrap());
    }
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn empty_power_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "[power_sweep]\npowers_uw = []\n");
    let out = stdout(&lnspdc(&["--config", cfg.to_str().unwrap(), "power-sweep"]));
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("power_uw,"));
}

#[test]
fn sweep_rows_follow_value_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.toml",
        "experiment = \"spectrum\"\n\n[sweep]\nvariable = \"source.pump_power_uw\"\nvalues = [10.0, 20.0]\n",
    );
    let out = stdout(&lnspdc(&["--config", cfg.to_str().unwrap(), "sweep"]));
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("point,source.pump_power_uw,channel"));
    let points: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert!(points.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(points.first(), Some(&"0"));
    assert_eq!(points.last(), Some(&"1"));
}

#[test]
fn trace_accepts_negative_delta_m() {
    let out = stdout(&lnspdc(&["trace", "--delta-m", "-1", "--turns", "2", "--stride", "512"]));
    assert!(out.starts_with("theta_rad,intensity\n"));
    // Header, θ = 0, then one row per stride up to and including the last grid point.
    assert_eq!(out.lines().count(), 2 + 2 * 4096 / 512);
}
