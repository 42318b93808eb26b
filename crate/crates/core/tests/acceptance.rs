//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nullfreq::density::{log_log_slope, residual_check, solve_density, DensityGrid};
use nullfreq::inference::{censor, default_window, extrapolation_report, fit_power_law, EmpiricalCdf, FitOptions};
use nullfreq::process::{campbell_moments, simulate, ProcessConfig, PulseType, DEFAULT_EPS};
use nullfreq::shapes::PulseShape;
use nullfreq::stats::{ks_critical, ks_one_sample, moment_summary};
use nullfreq::transform::{laplace_checks, WeightedDuration};

const N: usize = 100_000;
const ALPHAS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

fn pure(c: f64, a: f64, q: f64) -> PulseType {
    PulseType::new(PulseShape::pure_exp(c, a).unwrap(), q).unwrap()
}

fn gamma(c: f64, a: f64, d: f64, q: f64) -> PulseType {
    PulseType::new(PulseShape::gamma_exp(c, a, d).unwrap(), q).unwrap()
}

fn dickman(seed: u64) -> ProcessConfig {
    ProcessConfig::new(vec![pure(1.0, 1.0, 1.0)], DEFAULT_EPS, seed).unwrap()
}

fn two_type(seed: u64) -> ProcessConfig {
    ProcessConfig::new(vec![pure(1.0, 1.0, 1.0), pure(1.0, 2.0, 1.0)], DEFAULT_EPS, seed).unwrap()
}

fn mixed(seed: u64) -> ProcessConfig {
    ProcessConfig::new(vec![gamma(2.0, 1.0, 3.0, 1.0), pure(1.0, 2.0, 0.5)], DEFAULT_EPS, seed).unwrap()
}

/// `(name, config, h, A_max)` with grids fine enough for the residual bound.
fn solver_cases() -> Vec<(&'static str, ProcessConfig, f64, f64)> {
    vec![
        ("dickman", dickman(0), 2e-3, 12.0),
        ("two-type", two_type(0), 2e-3, 15.0),
        ("gamma+pure", mixed(0), 2.5e-3, 14.0),
    ]
}

/// Total mass of the Dickman function, `int_0^inf rho(u) du`, from the delay
/// equation `u rho'(u) = -rho(u - 1)`, `rho = 1` on `[0, 1]`, integrated with
/// the trapezoid rule on a grid aligned with the delay.
fn dickman_total(per_unit: usize) -> f64 {
    let h = 1.0 / per_unit as f64;
    let steps = 25 * per_unit;
    let mut rho = vec![1.0; per_unit + 1];
    rho.reserve(steps);
    for k in per_unit..steps {
        let (u0, u1) = (k as f64 * h, (k + 1) as f64 * h);
        let next = rho[k] - 0.5 * h * (rho[k - per_unit] / u0 + rho[k + 1 - per_unit] / u1);
        rho.push(next);
    }
    let integral: f64 = rho.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
    integral
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, title: &str, check: impl FnOnce() -> Outcome, failures: &mut Vec<u32>) {
    let t = Instant::now();
    let out = check();
    let verdict = if out.pass { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion {id} ({title}): {} [{:.1}s]",
        out.detail,
        t.elapsed().as_secs_f64()
    );
    if !out.pass {
        failures.push(id);
    }
}

fn laplace_identity() -> Outcome {
    let t = Instant::now();
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for cfg in &[dickman(101), two_type(102), mixed(103)] {
        let samples = simulate(cfg, N).unwrap();
        for c in laplace_checks(cfg, &samples, &ALPHAS).unwrap() {
            if c.sigma_ratio() <= 3.0 {
                within += 1;
            }
            worst = worst.max(c.sigma_ratio());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: within >= 13 && secs <= 60.0,
        detail: format!("{within}/15 cells within 3 standard errors (largest ratio {worst:.2}), {secs:.1}s <= 60s"),
    }
}

fn exponent_recovery() -> Outcome {
    let t = Instant::now();
    let q = 1.5;
    let (x0, x_hi) = (0.05, 0.5);
    let mut within = 0;
    let mut covered = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let samples = simulate(&two_type(1000 + seed), N).unwrap();
        let ecdf = EmpiricalCdf::new(&samples).unwrap();
        let view = censor(&ecdf, x0).unwrap();
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        let fit = fit_power_law(&view, x0, x_hi, &opts).unwrap();
        let err = (fit.q_hat - q).abs() / q;
        worst = worst.max(err);
        if err <= 0.1 {
            within += 1;
        }
        if let Some((lo, hi)) = fit.ci_q {
            if lo <= q && q <= hi {
                covered += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: within == 20 && covered >= 18 && secs <= 120.0,
        detail: format!(
            "Q_hat within 10% in {within}/20 (worst {:.2}%), CI covers 1.5 in {covered}/20, {secs:.1}s <= 120s",
            100.0 * worst
        ),
    }
}

fn grid_cdf(grid: &DensityGrid, x: f64) -> f64 {
    if x <= 0.0 {
        grid.zero_atom()
    } else if x >= grid.a_max() {
        1.0
    } else {
        grid.cdf(x).unwrap()
    }
}

fn dickman_oracle() -> Outcome {
    let total = dickman_total(20_000);
    let total_coarse = dickman_total(10_000);
    let oracle = 1.0 / total;
    let cfg = dickman(7);
    let grid = solve_density(&cfg, 2e-3, 12.0).unwrap();
    let g1 = grid.cdf(1.0).unwrap();
    let rel = (g1 - oracle).abs() / oracle;

    let samples = simulate(&cfg, N).unwrap();
    let mut sorted = samples.amplitudes().to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = ks_one_sample(&sorted, |x| grid_cdf(&grid, x));
    let crit = ks_critical(0.01, N as f64);
    Outcome {
        pass: rel <= 0.005 && d < crit,
        detail: format!(
            "oracle G(1) = {oracle:.8} (grid halving changes it by {:.1e}), solver {g1:.8}, rel err {:.2e} <= 5e-3; KS {d:.5} < {crit:.5}",
            (1.0 / total_coarse - oracle).abs(),
            rel
        ),
    }
}

fn power_law_head() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, cfg, h, a_max) in solver_cases() {
        let wd = WeightedDuration::new(&cfg);
        let q = wd.q_constant();
        let grid = solve_density(&cfg, h, a_max).unwrap();
        let slope = log_log_slope(&grid, 10.0 * cfg.eps(), 0.1 * wd.min_peak(), 50).unwrap();
        let err = (slope / q - 1.0).abs();
        pass &= err <= 0.02;
        parts.push(format!("{name} {slope:.4} vs {q} ({:.2}%)", 100.0 * err));
    }
    Outcome {
        pass,
        detail: format!("{} (tolerance 2%)", parts.join("; ")),
    }
}

fn censored_extrapolation() -> Outcome {
    let x0 = 0.1;
    let probes = [0.05, 0.02, 0.01];
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let samples = simulate(&dickman(2000 + seed), N).unwrap();
        let ecdf = EmpiricalCdf::new(&samples).unwrap();
        let window = default_window(&ecdf, x0, None).unwrap();
        let opts = FitOptions {
            seed,
            resamples: 0,
            ..FitOptions::default()
        };
        let (_, rows) = extrapolation_report(&samples, x0, window, &probes, &opts).unwrap();
        let max_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
        worst = worst.max(max_err);
        if max_err <= 0.15 {
            good += 1;
        }
    }
    Outcome {
        pass: good >= 18,
        detail: format!(
            "all three probes within 15% in {good}/20 seeds (largest error {:.2}%)",
            100.0 * worst
        ),
    }
}

fn campbell() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    let cases = [
        ("dickman", dickman(301)),
        ("two-type", two_type(302)),
        ("gamma+pure", mixed(303)),
        ("demo", nullfreq::cli::demo_config(304).unwrap()),
    ];
    for (name, cfg) in cases {
        let (mean, var) = campbell_moments(&cfg);
        let m = moment_summary(simulate(&cfg, N).unwrap().amplitudes());
        let zm = (m.mean - mean).abs() / m.mean_se;
        let zv = (m.var - var).abs() / m.var_se;
        pass &= zm <= 3.0 && zv <= 3.0;
        parts.push(format!("{name} mean {zm:.2}se var {zv:.2}se"));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

const DETERMINISM_CONFIG: &str = r#"
[process]
seed = 77
n_runs = 20000

[[pulse]]
family = "gamma_exp"
C = 2.0
a = 1.0
d = 3.0
q = 1.0

[[pulse]]
family = "pure_exp"
C = 1.0
a = 2.0
q = 0.5

[inference]
x0 = 0.1
resamples = 50

[density]
h = 0.01
a_max = 14.0
"#;

const OUTPUTS: [&str; 8] = [
    "samples.csv",
    "laplace.csv",
    "density.csv",
    "fit_points.csv",
    "fit_summary.csv",
    "extrapolation.csv",
    "lnG_vs_lnx.csv",
    "demo_summary.csv",
];

fn run_cli(config: &Path, out: &Path, threads: usize) -> bool {
    let bin = env!("CARGO_BIN_EXE_nullfreq");
    let mut ok = true;
    for cmd in ["simulate", "verify", "density", "fit", "extrapolate"] {
        let status = Command::new(bin)
            .args(["--threads", &threads.to_string(), cmd, "--config"])
            .arg(config)
            .arg("--out")
            .arg(out)
            .output()
            .expect("run binary");
        ok &= status.status.success();
    }
    let status = Command::new(bin)
        .args(["--threads", &threads.to_string(), "paper-demo", "--seed", "5", "--out"])
        .arg(out)
        .output()
        .expect("run binary");
    ok && status.status.success()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let runs = [("a", 1), ("b", 1), ("c", 8)];
    for (name, threads) in runs {
        if !run_cli(&config, &dir.path().join(name), threads) {
            return Outcome {
                pass: false,
                detail: format!("command failed in run {name}"),
            };
        }
    }
    let mut mismatches = Vec::new();
    for file in OUTPUTS {
        let read = |run: &str| std::fs::read(dir.path().join(run).join(file)).unwrap();
        let base = read("a");
        for other in ["b", "c"] {
            if read(other) != base {
                mismatches.push(format!("{file} ({other})"));
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: if mismatches.is_empty() {
            format!("{} files identical across two 1-thread runs and an 8-thread run", OUTPUTS.len())
        } else {
            format!("differing: {}", mismatches.join(", "))
        },
    }
}

fn convergence() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, cfg, h, a_max) in solver_cases() {
        let coarse = solve_density(&cfg, h, a_max).unwrap();
        let fine = solve_density(&cfg, h / 2.0, a_max).unwrap();
        let (mean, var) = campbell_moments(&cfg);
        let hi = mean + 2.0 * var.sqrt();
        let change = (0..10)
            .map(|k| {
                let x = 0.05 * (hi / 0.05f64).powf(k as f64 / 9.0);
                let (gc, gf) = (coarse.cdf(x).unwrap(), fine.cdf(x).unwrap());
                (gc - gf).abs() / gf
            })
            .fold(0.0, f64::max);
        let r = residual_check(&coarse, &cfg).max(residual_check(&fine, &cfg));
        pass &= change <= 0.005 && r <= 1e-3;
        parts.push(format!("{name} dG {:.2e}, residual {r:.2e}", change));
    }
    Outcome {
        pass,
        detail: format!("{} (limits 5e-3, 1e-3)", parts.join("; ")),
    }
}

fn main() {
    let mut failures = Vec::new();
    run(1, "Laplace identity", laplace_identity, &mut failures);
    run(2, "exponent recovery", exponent_recovery, &mut failures);
    run(3, "Dickman oracle", dickman_oracle, &mut failures);
    run(4, "power-law head", power_law_head, &mut failures);
    run(5, "censored extrapolation", censored_extrapolation, &mut failures);
    run(6, "Campbell moments", campbell, &mut failures);
    run(7, "determinism", determinism, &mut failures);
    run(8, "solver convergence", convergence, &mut failures);
    if failures.is_empty() {
        println!("acceptance: all 8 criteria pass");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
