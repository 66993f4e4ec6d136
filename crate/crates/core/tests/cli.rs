use std::process::{Command, Output};

fn pnes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnes"))
        .args(args)
        .output()
        .expect("run pnes")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn parse_csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

/// Kernel dump rows as `(s, values)`.
fn parse_kernel(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("s,"))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

const SMALL_SWEEP: &[&str] = &[
    "sweep-energy",
    "--mean",
    "log:0.5:8:5",
    "--eta",
    "0.5,0.9",
    "--noise-stat",
    "both",
];

#[test]
fn sweeps_are_byte_identical_across_runs_and_thread_counts() {
    let mut a = SMALL_SWEEP.to_vec();
    a.extend(["--jobs", "1"]);
    let mut b = SMALL_SWEEP.to_vec();
    b.extend(["--jobs", "4"]);
    let first = pnes(&a);
    assert!(first.status.success());
    assert_eq!(first.stdout, pnes(&a).stdout);
    assert_eq!(first.stdout, pnes(&b).stdout);
    let text = stdout(&first);
    assert!(text.starts_with(
        "family,signal_mean,eta,noise_mean,noise_stat,capacity_bits,optimal_T,tail_mass\n"
    ));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2 * 5);
}

#[test]
fn sweep_writes_json_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.json");
    let mut args = SMALL_SWEEP.to_vec();
    args.extend(["--format", "json", "--out", out.to_str().unwrap()]);
    let o = pnes(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["meta"]["tool"], "pnes-capacity");
    assert_eq!(v["meta"]["tol"], 1e-10);
    assert_eq!(v["meta"]["fixed_noise_mean"], 0.2);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 40);
    assert_eq!(rows[0]["family"], "twb");
    assert_eq!(rows[0]["noise_stat"], "poisson");
    assert!(rows
        .iter()
        .all(|r| r["tail_mass"].as_f64().unwrap() <= 1e-10));
}

#[test]
fn noise_sweep_at_zero_noise_agrees_with_energy_sweep() {
    let noise = pnes(&[
        "sweep-noise",
        "--noise-mean",
        "0",
        "--eta",
        "0.9",
        "--noise-stat",
        "poisson",
    ]);
    let energy = pnes(&[
        "sweep-energy",
        "--mean",
        "5",
        "--eta",
        "0.9",
        "--noise-mean",
        "0",
        "--noise-stat",
        "poisson",
    ]);
    assert!(noise.status.success() && energy.status.success());
    assert_eq!(noise.stdout, energy.stdout);
}

#[test]
fn perfect_detectors_ignore_noise() {
    let run = |n: &str| {
        let o = pnes(&[
            "capacity",
            "--state",
            "twb",
            "--mean",
            "5",
            "--eta",
            "1",
            "--noise-mean",
            n,
        ]);
        assert!(o.status.success());
        parse_csv(&stdout(&o))[0][5].parse::<f64>().unwrap()
    };
    let noiseless = run("0");
    assert!(noiseless > 0.99 && noiseless < 1.0);
    assert_eq!(run("0.2"), noiseless);
}

#[test]
fn vacuum_carries_no_information() {
    let o = pnes(&[
        "sweep-energy",
        "--state",
        "twb",
        "--mean",
        "0",
        "--eta",
        "1",
    ]);
    assert!(o.status.success());
    for row in parse_csv(&stdout(&o)) {
        assert_eq!(row[5], "0");
    }
}

#[test]
fn fixed_threshold_is_reported() {
    let o = pnes(&[
        "capacity",
        "--state",
        "tmc",
        "--mean",
        "3",
        "--eta",
        "0.7",
        "--threshold",
        "2",
    ]);
    assert!(o.status.success());
    assert_eq!(parse_csv(&stdout(&o))[0][6], "2");
}

#[test]
fn kernel_dump_at_unit_efficiency_is_the_identity() {
    let o = pnes(&[
        "kernel",
        "--eta",
        "1",
        "--noise-mean",
        "0.5",
        "--noise-stat",
        "thermal",
        "--n-max",
        "6",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().starts_with('#'));
    assert!(text.contains("eta=1"));
    assert!(text.contains("noise_stat=thermal"));
    for (s, row) in parse_kernel(&text).iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            assert_eq!(*v, if s == n { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn kernel_dump_without_noise_is_binomial() {
    let o = pnes(&["kernel", "--eta", "0.7", "--n-max", "10"]);
    assert!(o.status.success());
    let rows = parse_kernel(&stdout(&o));
    let binom = |n: u64, k: u64| (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64);
    for (s, row) in rows.iter().enumerate() {
        for (n, v) in row.iter().enumerate() {
            let expected = if s > n {
                0.0
            } else {
                binom(n as u64, s as u64) * 0.7f64.powi(s as i32) * 0.3f64.powi((n - s) as i32)
            };
            // 12 significant digits in the dump
            assert!(
                (v - expected).abs() <= 1e-11 * expected.max(1e-300) + 1e-300,
                "K({s}|{n})"
            );
        }
    }
}

#[test]
fn kernel_dump_columns_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.txt");
    let o = pnes(&[
        "kernel",
        "--eta",
        "0.5",
        "--noise-mean",
        "0.2",
        "--noise-stat",
        "thermal",
        "--n-max",
        "15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = parse_kernel(&std::fs::read_to_string(&out).unwrap());
    for n in 0..=15 {
        let sum: f64 = rows.iter().map(|r| r[n]).sum();
        assert!((sum - 1.0).abs() < 1e-10, "column {n}: {sum}");
    }
}

#[test]
fn validate_passes_and_detects_a_corrupted_sign() {
    let ok = pnes(&["validate"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("all 11 checks passed"));
    let perturbed = pnes(&["validate", "--eta", "0.15,0.45,0.62,0.83,0.97"]);
    assert_eq!(perturbed.status.code(), Some(0), "{}", stdout(&perturbed));
    let mutated = pnes(&["validate", "--mutate-sign"]);
    assert_eq!(mutated.status.code(), Some(1));
    assert!(stdout(&mutated).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let bad_eta = pnes(&["sweep-energy", "--eta", "0.5,1.5"]);
    assert_eq!(bad_eta.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_eta.stderr).contains("outside [0, 1]"));
    let unordered = pnes(&["sweep-noise", "--noise-mean", "1,0.5"]);
    assert_eq!(unordered.status.code(), Some(2));
    let missing = pnes(&["capacity", "--eta", "0.5"]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown = pnes(&["capacity", "--mean", "1", "--noise-stat", "pink"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert_eq!(pnes(&["validate", "--eta", "0,0.5"]).status.code(), Some(2));
}

#[test]
fn io_errors_name_the_path() {
    let o = pnes(&["kernel", "--eta", "0.5", "--out", "/nonexistent-dir/k.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/k.txt"));
    let o = pnes(&["sweep-energy", "--config", "/nonexistent-dir/cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/cfg.toml"));
}

#[test]
fn config_file_feeds_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fig.toml");
    std::fs::write(
        &cfg,
        "state = [\"tmc\"]\nmean = 5\nnoise_mean = \"lin:0:1:3\"\neta = 0.7\nnoise_stat = \"thermal\"\nformat = \"csv\"\n",
    )
    .unwrap();
    let o = pnes(&["sweep-noise", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_csv(&stdout(&o));
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r[0] == "tmc" && r[2] == "0.7" && r[4] == "thermal"));
    assert_eq!(rows[1][3], "0.5");
}
