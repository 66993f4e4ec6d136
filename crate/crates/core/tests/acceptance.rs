//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line per criterion
//! (or per part of a compound criterion) and fails if any part fails.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see the report in order.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use pnes_capacity::channel::{capacity, confusion_matrix, joint_distribution};
use pnes_capacity::detector::{
    build_kernel, count_prob_cancellation_scale, count_prob_closed, count_prob_oracle,
    transfer_amplitude, DetectorModel, NoiseModel, NoiseStatistics,
};
use pnes_capacity::states::{parameter_from_mean, Family, PnesState};
use pnes_capacity::sweep::{run_sweep_energy, run_sweep_noise, SweepConfig, SweepTable};

const ETA_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.7, 0.9, 0.99];
/// Slack for ordering comparisons between computed capacities.
const ORDER_SLACK: f64 = 1e-9;
/// Probabilities below this fraction of `(sum |A|)^2` are exact interference
/// zeros up to rounding and are compared against that scale instead.
const INTERFERENCE_FLOOR: f64 = 1e-12;

struct Report {
    id: &'static str,
    failures: Vec<String>,
}

impl Report {
    fn new(id: &'static str) -> Self {
        Self {
            id,
            failures: Vec::new(),
        }
    }

    fn line(&mut self, name: &str, pass: bool, detail: String) {
        println!(
            "[{}] {} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" },
            self.id
        );
        if !pass {
            self.failures.push(format!("{name}: {detail}"));
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "{} failed:\n{}",
            self.id,
            self.failures.join("\n")
        );
    }
}

#[test]
fn ac1_closed_form_matches_amplitude_oracle() {
    let mut r = Report::new("AC1");
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for eta in ETA_GRID {
        for n in 0..=12 {
            for p in 0..=12 {
                for s in 0..=12 {
                    let closed = count_prob_closed(n, p, s, eta).unwrap();
                    let oracle = count_prob_oracle(n, p, s, eta).unwrap();
                    let scale = count_prob_cancellation_scale(n, p, s, eta).unwrap();
                    let denom = oracle.abs().max(INTERFERENCE_FLOOR * scale);
                    let rel = if denom == 0.0 {
                        (closed - oracle).abs()
                    } else {
                        (closed - oracle).abs() / denom
                    };
                    if !(rel <= worst.0) {
                        worst = (rel, format!("n={n} p={p} s={s} eta={eta}"));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    r.line(
        "closed form vs oracle",
        worst.0 <= 1e-10,
        format!(
            "max relative error {:.3e} at {} (tol 1e-10)",
            worst.0, worst.1
        ),
    );
    r.line(
        "runtime",
        elapsed < Duration::from_secs(60),
        format!("{:.2} s (limit 60 s)", elapsed.as_secs_f64()),
    );
    r.finish();
}

#[test]
fn ac2_transfer_amplitudes_are_unitary() {
    let mut r = Report::new("AC2");
    let mut worst = (0.0f64, String::new());
    for eta in ETA_GRID.iter().copied().chain([0.0, 1.0]) {
        for n1 in 0..=10usize {
            for n2 in 0..=10usize {
                let mut total = 0.0;
                for s in 0..=n1 + n2 {
                    let amp: f64 = (s.saturating_sub(n2)..=s.min(n1))
                        .map(|k1| transfer_amplitude(n1, n2, k1, s - k1, eta).unwrap())
                        .sum();
                    total += amp * amp;
                }
                let dev = (total - 1.0).abs();
                if !(dev <= worst.0) {
                    worst = (dev, format!("n1={n1} n2={n2} eta={eta}"));
                }
            }
        }
    }
    r.line(
        "sum of squared output amplitudes",
        worst.0 <= 1e-10,
        format!("max |sum - 1| {:.3e} at {} (tol 1e-10)", worst.0, worst.1),
    );
    r.finish();
}

#[test]
fn ac3_kernel_limits() {
    let mut r = Report::new("AC3");
    let noises = [
        NoiseModel::vacuum(),
        NoiseModel::poisson(0.2).unwrap(),
        NoiseModel::thermal(0.2).unwrap(),
        NoiseModel::poisson(2.0).unwrap(),
        NoiseModel::thermal(2.0).unwrap(),
    ];

    let mut worst = 0.0f64;
    for noise in noises {
        let k = build_kernel(&DetectorModel::new(1.0, noise).unwrap(), 40, 1e-10).unwrap();
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                worst = worst.max((k.get(s, n) - if s == n { 1.0 } else { 0.0 }).abs());
            }
        }
    }
    r.line(
        "eta=1 kernel is the identity",
        worst == 0.0,
        format!("max deviation {worst:.3e} (exact)"),
    );

    let mut worst = 0.0f64;
    for noise in noises {
        let k = build_kernel(&DetectorModel::new(0.0, noise).unwrap(), 40, 1e-10).unwrap();
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                let nu = if noise.mean() == 0.0 {
                    if s == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    match noise.statistics() {
                        NoiseStatistics::Poisson => {
                            (-noise.mean() + s as f64 * noise.mean().ln() - ln_factorial(s)).exp()
                        }
                        NoiseStatistics::Thermal => {
                            let m = noise.mean();
                            (s as f64 * m.ln() - (s as f64 + 1.0) * m.ln_1p()).exp()
                        }
                    }
                };
                worst = worst.max((k.get(s, n) - nu).abs());
            }
        }
    }
    r.line(
        "eta=0 columns equal the noise distribution",
        worst <= 1e-15,
        format!("max deviation {worst:.3e} (tol 1e-15)"),
    );

    let mut worst = 0.0f64;
    for eta in [0.3, 0.5, 0.7, 0.9] {
        let k = build_kernel(
            &DetectorModel::new(eta, NoiseModel::vacuum()).unwrap(),
            60,
            1e-10,
        )
        .unwrap();
        for n in 0..=k.n_max() {
            for s in 0..=k.s_max() {
                let expected = if s > n {
                    0.0
                } else {
                    (ln_factorial(n) - ln_factorial(s) - ln_factorial(n - s)
                        + s as f64 * eta.ln()
                        + (n - s) as f64 * (1.0 - eta).ln())
                    .exp()
                };
                worst = worst.max((k.get(s, n) - expected).abs());
            }
        }
    }
    r.line(
        "N=0 kernel is binomial loss",
        worst <= 1e-10,
        format!("max deviation {worst:.3e} (tol 1e-10)"),
    );
    r.finish();
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

#[test]
fn ac4_threshold_partition_is_normalized() {
    let mut r = Report::new("AC4");
    let tol = 1e-10;
    let mut worst_total = 0.0f64;
    let mut worst_cross = 0.0f64;
    let mut configs = 0;
    for family in Family::ALL {
        for mean in [0.5, 1.0, 5.0, 10.0] {
            let st = PnesState::with_mean(family, mean, tol / 2.0).unwrap();
            for eta in [0.5, 0.7, 0.9, 1.0] {
                for stat in NoiseStatistics::ALL {
                    for noise_mean in [0.0, 0.2, 1.0, 2.0] {
                        let det =
                            DetectorModel::new(eta, NoiseModel::new(stat, noise_mean).unwrap())
                                .unwrap();
                        let k = build_kernel(&det, st.n_max(), tol).unwrap();
                        let joint = joint_distribution(&st, &k).unwrap();
                        configs += 1;
                        for t in 0..=joint.s_max() + 1 {
                            let cm = confusion_matrix(&joint, t);
                            worst_total = worst_total.max((cm.total() - 1.0).abs());
                            if eta == 1.0 && noise_mean == 0.0 {
                                worst_cross = worst_cross.max(cm.p01.abs()).max(cm.p10.abs());
                            }
                        }
                    }
                }
            }
        }
    }
    r.line(
        "p00+p01+p10+p11 = 1 at every threshold",
        worst_total <= 1e-9,
        format!("max deviation {worst_total:.3e} over {configs} configurations (tol 1e-9)"),
    );
    r.line(
        "perfect noiseless detection has p01 = p10 = 0",
        worst_cross == 0.0,
        format!("max off-diagonal {worst_cross:.3e}"),
    );
    r.finish();
}

fn binary_entropy(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        0.0
    } else {
        -q * q.log2() - (1.0 - q) * (1.0 - q).log2()
    }
}

/// `max_T H2(F(T))` from a CDF built directly from the state's defining series.
fn entropy_of_cdf_oracle(family: Family, mean: f64) -> f64 {
    let weights: Vec<f64> = match family {
        Family::Twb => {
            let r = mean / (1.0 + mean);
            (0..2000).map(|n| (1.0 - r) * r.powi(n)).collect()
        }
        Family::Tmc => {
            let lambda = parameter_from_mean(Family::Tmc, mean).unwrap();
            let mut w = vec![1.0f64];
            for n in 1..300usize {
                let next = w[n - 1] * lambda * lambda / (n * n) as f64;
                w.push(next);
            }
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        }
    };
    let mut cdf = 0.0;
    weights
        .iter()
        .map(|w| {
            cdf += w;
            binary_entropy(cdf)
        })
        .fold(0.0, f64::max)
}

#[test]
fn ac5_perfect_channel_capacity() {
    let mut r = Report::new("AC5");
    for family in Family::ALL {
        for mean in [0.5, 1.0, 5.0] {
            let tol = 1e-10;
            let st = PnesState::with_mean(family, mean, tol / 2.0).unwrap();
            let k = build_kernel(
                &DetectorModel::new(1.0, NoiseModel::vacuum()).unwrap(),
                st.n_max(),
                tol,
            )
            .unwrap();
            let got = capacity(&st, &k).unwrap().capacity;
            let oracle = entropy_of_cdf_oracle(family, mean);
            let dev = (got - oracle).abs();
            r.line(
                &format!("{family} mean {mean}"),
                dev <= 1e-9,
                format!("capacity {got:.12} vs oracle {oracle:.12}, |diff| {dev:.3e} (tol 1e-9)"),
            );
        }
    }
    r.finish();
}

type CurveKey = (Family, NoiseStatistics, u64);

/// `(family, statistics, eta bits) -> [(axis value, capacity)]` in axis order.
fn curves(table: &SweepTable, axis_is_signal: bool) -> BTreeMap<CurveKey, Vec<(f64, f64)>> {
    let mut out: BTreeMap<CurveKey, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &table.rows {
        let x = if axis_is_signal {
            row.signal_mean
        } else {
            row.noise_mean
        };
        out.entry((row.family, row.noise_stat, row.eta.to_bits()))
            .or_default()
            .push((x, row.capacity_bits));
    }
    out
}

/// Points where `upper` falls below `lower` by more than `slack`, pairing by
/// grid position.
fn ordering_violations(upper: &[(f64, f64)], lower: &[(f64, f64)], slack: f64) -> Vec<(f64, f64)> {
    upper
        .iter()
        .zip(lower)
        .filter(|(u, l)| u.1 < l.1 - slack)
        .map(|(u, l)| (u.0, l.1 - u.1))
        .collect()
}

fn describe(violations: &[(f64, f64)], total: usize, what: &str) -> String {
    match violations.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
        None => format!("holds at all {total} points"),
        Some(w) => format!(
            "violated at {} of {total} points; worst deficit {:.4} bits at {what} {}",
            violations.len(),
            w.1,
            w.0
        ),
    }
}

#[test]
fn ac6_energy_sweep_reproduces_capacity_trends() {
    let mut r = Report::new("AC6");
    let start = Instant::now();
    let cfg = SweepConfig::energy_default();
    let table = run_sweep_energy(&cfg).unwrap();
    let elapsed = start.elapsed();
    let c = curves(&table, true);
    let points = cfg.axis_grid.len();

    // strictly increasing in eta at every point
    let mut viol = Vec::new();
    let mut count = 0;
    for family in Family::ALL {
        for stat in NoiseStatistics::ALL {
            for pair in cfg.eta_list.windows(2) {
                let lo = &c[&(family, stat, pair[0].to_bits())];
                let hi = &c[&(family, stat, pair[1].to_bits())];
                count += points;
                viol.extend(
                    hi.iter()
                        .zip(lo)
                        .filter(|(h, l)| !(h.1 > l.1))
                        .map(|(h, l)| (h.0, l.1 - h.1)),
                );
            }
        }
    }
    r.line(
        "capacity strictly ordered by eta",
        viol.is_empty(),
        describe(&viol, count, "mean"),
    );

    let mut lines = Vec::new();
    let mut all = 0;
    let mut total_viol = 0;
    for stat in NoiseStatistics::ALL {
        for &eta in &cfg.eta_list {
            let twb = &c[&(Family::Twb, stat, eta.to_bits())];
            let tmc = &c[&(Family::Tmc, stat, eta.to_bits())];
            let v = ordering_violations(twb, tmc, ORDER_SLACK);
            all += points;
            total_viol += v.len();
            if !v.is_empty() {
                lines.push(format!(
                    "{stat} eta={eta}: {}",
                    describe(&v, points, "mean")
                ));
            }
        }
    }
    r.line(
        "TWB capacity >= TMC capacity at equal mean",
        total_viol == 0,
        if total_viol == 0 {
            format!("holds at all {all} points")
        } else {
            format!(
                "violated at {total_viol} of {all} points [{}]",
                lines.join("; ")
            )
        },
    );

    let mut worst = (0.0f64, String::new());
    for family in Family::ALL {
        for &eta in &cfg.eta_list {
            let p = &c[&(family, NoiseStatistics::Poisson, eta.to_bits())];
            let t = &c[&(family, NoiseStatistics::Thermal, eta.to_bits())];
            for (a, b) in p.iter().zip(t) {
                let d = (a.1 - b.1).abs();
                if d > worst.0 {
                    worst = (d, format!("{family} eta={eta} mean={}", a.0));
                }
            }
        }
    }
    r.line(
        "Poisson and thermal curves within 0.02 bits",
        worst.0 < 0.02,
        format!("max difference {:.4} bits at {}", worst.0, worst.1),
    );
    r.line(
        "runtime",
        elapsed < Duration::from_secs(600),
        format!("{:.2} s (limit 600 s)", elapsed.as_secs_f64()),
    );
    r.finish();
}

#[test]
fn ac7_noise_sweep_reproduces_capacity_trends() {
    let mut r = Report::new("AC7");
    let cfg = SweepConfig::noise_default();
    let table = run_sweep_noise(&cfg).unwrap();
    let c = curves(&table, false);
    let points = cfg.axis_grid.len();

    let mut rises = Vec::new();
    for (key, curve) in &c {
        for w in curve.windows(2) {
            if w[1].1 > w[0].1 + ORDER_SLACK {
                rises.push(format!(
                    "{} {} eta={} at N={}",
                    key.0,
                    key.1,
                    f64::from_bits(key.2),
                    w[1].0
                ));
            }
        }
    }
    r.line(
        "capacity non-increasing in noise mean",
        rises.is_empty(),
        if rises.is_empty() {
            format!("holds on all {} curves", c.len())
        } else {
            format!("rises at {} steps: {}", rises.len(), rises.join(", "))
        },
    );

    let mut viol = Vec::new();
    let mut all = 0;
    for stat in NoiseStatistics::ALL {
        for &eta in &cfg.eta_list {
            let v = ordering_violations(
                &c[&(Family::Twb, stat, eta.to_bits())],
                &c[&(Family::Tmc, stat, eta.to_bits())],
                ORDER_SLACK,
            );
            all += points;
            viol.extend(v);
        }
    }
    r.line(
        "TWB capacity >= TMC capacity",
        viol.is_empty(),
        describe(&viol, all, "N"),
    );

    let mut lines = Vec::new();
    let mut all = 0;
    let mut total_viol = 0;
    for &eta in &cfg.eta_list {
        let high = |curve: &Vec<(f64, f64)>| {
            curve
                .iter()
                .copied()
                .filter(|p| p.0 >= 1.0)
                .collect::<Vec<_>>()
        };
        let poisson = high(&c[&(Family::Tmc, NoiseStatistics::Poisson, eta.to_bits())]);
        let thermal = high(&c[&(Family::Tmc, NoiseStatistics::Thermal, eta.to_bits())]);
        // thermal <= poisson is poisson >= thermal
        let v = ordering_violations(&poisson, &thermal, ORDER_SLACK);
        all += poisson.len();
        total_viol += v.len();
        if !v.is_empty() {
            lines.push(format!("eta={eta}: {}", describe(&v, poisson.len(), "N")));
        }
    }
    r.line(
        "TMC thermal capacity <= Poisson capacity for N >= 1",
        total_viol == 0,
        if total_viol == 0 {
            format!("holds at all {all} points")
        } else {
            format!(
                "violated at {total_viol} of {all} points [{}]",
                lines.join("; ")
            )
        },
    );
    r.finish();
}

#[test]
fn ac8_photon_statistics_signs() {
    let mut r = Report::new("AC8");
    let tol = 1e-15;
    let lambdas: Vec<f64> = (0..=19).map(|i| 0.5 + 0.5 * i as f64).collect();
    let worst_tmc = lambdas
        .iter()
        .map(|&l| {
            PnesState::new(Family::Tmc, l, tol)
                .unwrap()
                .fano_factor()
                .unwrap()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    r.line(
        "TMC sub-Poisson for lambda in [0.5, 10]",
        worst_tmc < 1.0,
        format!(
            "largest Fano factor {worst_tmc:.6} over {} values",
            lambdas.len()
        ),
    );

    let xs: Vec<f64> = (1..=19).map(|i| 0.05 * i as f64).collect();
    let mut min_twb = f64::INFINITY;
    let mut worst_dev = 0.0f64;
    for &x in &xs {
        let fano = PnesState::new(Family::Twb, x, tol)
            .unwrap()
            .fano_factor()
            .unwrap();
        let x2 = x * x;
        min_twb = min_twb.min(fano);
        worst_dev = worst_dev.max((fano - (1.0 + x2 / (1.0 - x2))).abs());
    }
    r.line(
        "TWB super-Poisson for x in [0.05, 0.95]",
        min_twb > 1.0,
        format!("smallest Fano factor {min_twb:.6} over {} values", xs.len()),
    );
    r.line(
        "TWB Fano factor equals 1 + x^2/(1-x^2)",
        worst_dev <= 1e-9,
        format!("max deviation {worst_dev:.3e} (tol 1e-9)"),
    );
    r.finish();
}

#[test]
fn ac9_energy_sweep_is_deterministic() {
    let mut r = Report::new("AC9");
    let run = |extra: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_pnes"))
            .arg("sweep-energy")
            .args(extra)
            .output()
            .expect("run pnes");
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let first = run(&[]);
    let second = run(&[]);
    let serial = run(&["--jobs", "1"]);
    let parallel = run(&["--jobs", "8"]);
    r.line(
        "repeated runs byte-identical",
        first == second,
        format!(
            "{} bytes, {} rows",
            first.len(),
            first.iter().filter(|&&b| b == b'\n').count() - 1
        ),
    );
    r.line(
        "identical across worker counts",
        serial == parallel && serial == first,
        "--jobs 1 vs --jobs 8 vs default".into(),
    );
    r.finish();
}
