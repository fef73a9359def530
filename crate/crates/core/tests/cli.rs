use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str = "seed,episode,cumulative_regret,algorithm,privacy,epsilon";

fn privheavy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privheavy")).args(args).output().expect("binary runs")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn writes_the_regret_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = privheavy(&["--env", "jdp-hard", "--episodes", "5", "--seeds", "2", "--base-seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some(HEADER));
    let rows = rows(&out);
    assert_eq!(rows.len(), 10);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (9 + i / 5).to_string());
        assert_eq!(row[1], (1 + i % 5).to_string());
        assert!(row[2].parse::<f64>().unwrap() >= -1e-9);
        assert_eq!(&row[3..], ["vi", "none", "inf"]);
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("final cumulative regret"));
}

#[test]
fn runs_are_reproducible_and_record_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = privheavy(&[
            "--env", "riverswim", "--agent", "po", "--privacy", "ldp", "--epsilon", "0.5", "--episodes", "4",
            "--horizon", "5", "--seeds", "3", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(rows(&a).iter().all(|r| r[3] == "po" && r[4] == "ldp" && r[5].parse::<f64>() == Ok(0.5)));
    assert_eq!(rows(&a)[0][5], "0.5000000000");
}

#[test]
fn riverswim_jdp_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let o = privheavy(&[
        "--env", "riverswim", "--agent", "vi", "--privacy", "jdp", "--epsilon", "1", "--episodes", "200",
        "--horizon", "20", "--seeds", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(rows(&out).len(), 400);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.csv");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "episodes = 3\n[env]\nname = \"mab-hard\"\narms = 3\n[agent]\nprivacy = \"jdp\"\n").unwrap();
    let o = privheavy(&["--episodes", "50", "--privacy", "ldp", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rows(&out);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][4], "jdp");
}

#[test]
fn noise_log_is_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.csv");
    let log = dir.path().join("n.jsonl");
    let o = privheavy(&[
        "--env", "jdp-hard", "--privacy", "jdp", "--episodes", "2", "--out", out.to_str().unwrap(), "--noise-log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&log).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["scale"].as_f64().unwrap() >= 0.0);
        assert!(v["episode"].as_u64().unwrap() <= 2);
    }
}

#[test]
fn bad_configuration_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["--privacy", "jdp", "--epsilon", "-1", "--episodes", "3", "--out", out],
        &["--episodes", "3"],
        &["--episodes", "0", "--out", out],
        &["--no-such-flag"],
        &["--config", "/definitely/missing.toml", "--out", out],
    ];
    for args in cases {
        let o = privheavy(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert!(!Path::new(out).exists());
}

#[test]
fn unwritable_output_exits_1() {
    let o = privheavy(&["--env", "mab-hard", "--episodes", "2", "--out", "/definitely/missing/dir/r.csv"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
