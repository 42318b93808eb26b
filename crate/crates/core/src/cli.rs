//! Command-line front end: configuration files, subcommands and CSV output.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! out_dir = "out"
//!
//! [process]
//! seed = 7
//! n_runs = 100000
//! eps = 1e-8            # relative tail truncation
//!
//! [[pulse]]
//! family = "gamma_exp"
//! C = 2.0
//! a = 1.0
//! d = 3.0
//! q = 1.0
//!
//! [inference]
//! x0 = 0.1
//! probes = [0.05, 0.02, 0.01]
//! ```

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::density::{residual_check, solve_density, DensityGrid};
use crate::inference::{
    censor, default_window, extrapolation_report, fit_power_law, geometric_grid, EmpiricalCdf,
    ExtrapolationRow, FitOptions, PowerLawFit,
};
use crate::process::{campbell_moments, simulate, ProcessConfig, PulseType, SampleSet, Sampler, DEFAULT_EPS};
use crate::shapes::{Family, PulseShape};
use crate::stats::ols;
use crate::transform::{laplace_checks, LaplaceCheck, WeightedDuration};

/// Problems with a configuration file, anchored to a line and column.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: `{key}` {reason}")]
    Invalid {
        line: usize,
        column: usize,
        key: String,
        reason: String,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error(transparent)]
    Numeric(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numeric(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    out_dir: Option<String>,
    process: RawProcess,
    pulse: Vec<RawPulse>,
    #[serde(default)]
    inference: RawInference,
    #[serde(default)]
    density: RawDensity,
    #[serde(default)]
    verify: RawVerify,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcess {
    #[serde(default)]
    seed: u64,
    n_runs: Option<Spanned<i64>>,
    eps: Option<Spanned<f64>>,
    half_window: Option<Spanned<f64>>,
    #[serde(default)]
    sampler: Sampler,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    family: Spanned<Family>,
    #[serde(rename = "C")]
    c: Spanned<f64>,
    a: Spanned<f64>,
    d: Option<Spanned<f64>>,
    q: Spanned<f64>,
    b: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInference {
    x0: Option<Spanned<f64>>,
    fit_lo: Option<Spanned<f64>>,
    fit_hi: Option<Spanned<f64>>,
    fit_cap: Option<Spanned<f64>>,
    n_grid: Option<Spanned<i64>>,
    resamples: Option<Spanned<i64>>,
    probes: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    h: Option<Spanned<f64>>,
    a_max: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    alphas: Option<Spanned<Vec<f64>>>,
}

/// Fit window: explicit bounds, or the default quantile window with an
/// optional upper cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowSpec {
    Explicit(f64, f64),
    Default { cap: Option<f64> },
}

/// Validated contents of a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub process: ProcessConfig,
    pub n_runs: usize,
    pub x0: f64,
    pub window: WindowSpec,
    pub fit: FitOptions,
    pub probes: Vec<f64>,
    /// `None` picks a grid from the Campbell moments.
    pub density_h: Option<f64>,
    pub density_a_max: Option<f64>,
    pub alphas: Vec<f64>,
    pub out_dir: PathBuf,
}

pub const DEFAULT_RUNS: usize = 10_000;
pub const DEFAULT_X0: f64 = 0.1;
pub const DEFAULT_ALPHAS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    fn position(&self, offset: usize) -> (usize, usize) {
        let before = &self.text[..offset.min(self.text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
        (line, column)
    }

    fn invalid(&self, span: Range<usize>, key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
        let (line, column) = self.position(span.start);
        ConfigError::Invalid {
            line,
            column,
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn positive(&self, v: &Spanned<f64>, key: &str) -> std::result::Result<f64, ConfigError> {
        let x = *v.get_ref();
        if x.is_finite() && x > 0.0 {
            Ok(x)
        } else {
            Err(self.invalid(v.span(), key, format!("must be positive, got {x}")))
        }
    }

    fn count(&self, v: &Spanned<i64>, key: &str, min: i64) -> std::result::Result<usize, ConfigError> {
        let x = *v.get_ref();
        if x >= min {
            Ok(x as usize)
        } else {
            Err(self.invalid(v.span(), key, format!("must be at least {min}, got {x}")))
        }
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, ConfigError> {
    let loc = Locator { text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = loc.position(e.span().map_or(0, |s| s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    if raw.pulse.is_empty() {
        return Err(loc.invalid(0..0, "pulse", "at least one [[pulse]] table is required"));
    }
    let mut types = Vec::with_capacity(raw.pulse.len());
    for (i, p) in raw.pulse.iter().enumerate() {
        let key = |k: &str| format!("pulse[{i}].{k}");
        let c = loc.positive(&p.c, &key("C"))?;
        let a = loc.positive(&p.a, &key("a"))?;
        let q = loc.positive(&p.q, &key("q"))?;
        let shape = match (*p.family.get_ref(), &p.d) {
            (Family::GammaExp, Some(d)) => PulseShape::gamma_exp(c, a, loc.positive(d, &key("d"))?),
            (Family::GammaExp, None) => {
                return Err(loc.invalid(p.family.span(), key("d"), "is required for family gamma_exp"))
            }
            (Family::PureExp, Some(d)) => {
                return Err(loc.invalid(d.span(), key("d"), "is not used by family pure_exp"))
            }
            (Family::PureExp, None) => PulseShape::pure_exp(c, a),
        }
        .map_err(|e| loc.invalid(p.c.span(), key("C"), e.to_string()))?;
        let shape = match &p.b {
            Some(b) => {
                let v = *b.get_ref();
                shape
                    .with_onset(v)
                    .map_err(|_| loc.invalid(b.span(), key("b"), format!("must be nonnegative, got {v}")))?
            }
            None => shape,
        };
        types.push(PulseType::new(shape, q).map_err(|e| loc.invalid(p.q.span(), key("q"), e.to_string()))?);
    }

    let pr = &raw.process;
    let eps_span = pr.eps.as_ref().map_or(0..0, |e| e.span());
    let eps = match &pr.eps {
        Some(e) => {
            let v = *e.get_ref();
            if !(v > 0.0 && v < 1.0) {
                return Err(loc.invalid(e.span(), "process.eps", format!("must lie in (0, 1), got {v}")));
            }
            v
        }
        None => DEFAULT_EPS,
    };
    let mut process = ProcessConfig::new(types, eps, pr.seed)
        .map_err(|e| loc.invalid(eps_span, "process.eps", e.to_string()))?
        .with_sampler(pr.sampler);
    if let Some(t) = &pr.half_window {
        let v = loc.positive(t, "process.half_window")?;
        process = process
            .with_half_window(v)
            .map_err(|e| loc.invalid(t.span(), "process.half_window", e.to_string()))?;
    }
    let n_runs = match &pr.n_runs {
        Some(n) => loc.count(n, "process.n_runs", 1)?,
        None => DEFAULT_RUNS,
    };

    let inf = &raw.inference;
    let x0 = match &inf.x0 {
        Some(x) => loc.positive(x, "inference.x0")?,
        None => DEFAULT_X0,
    };
    let window = match (&inf.fit_lo, &inf.fit_hi) {
        (Some(lo), Some(hi)) => {
            let l = loc.positive(lo, "inference.fit_lo")?;
            let h = loc.positive(hi, "inference.fit_hi")?;
            if l < x0 {
                return Err(loc.invalid(lo.span(), "inference.fit_lo", format!("must be at least x0 = {x0}")));
            }
            if h <= l {
                return Err(loc.invalid(hi.span(), "inference.fit_hi", "must exceed fit_lo"));
            }
            if inf.fit_cap.is_some() {
                return Err(loc.invalid(hi.span(), "inference.fit_cap", "conflicts with fit_lo/fit_hi"));
            }
            WindowSpec::Explicit(l, h)
        }
        (None, None) => WindowSpec::Default {
            cap: inf.fit_cap.as_ref().map(|c| loc.positive(c, "inference.fit_cap")).transpose()?,
        },
        (Some(s), None) | (None, Some(s)) => {
            return Err(loc.invalid(s.span(), "inference.fit_lo", "fit_lo and fit_hi must be given together"))
        }
    };
    let mut fit = FitOptions {
        seed: pr.seed,
        ..FitOptions::default()
    };
    if let Some(n) = &inf.n_grid {
        fit.n_grid = loc.count(n, "inference.n_grid", 5)?;
    }
    if let Some(n) = &inf.resamples {
        fit.resamples = loc.count(n, "inference.resamples", 0)?;
    }
    let probes = match &inf.probes {
        Some(p) => {
            if let Some(bad) = p.get_ref().iter().find(|&&v| !(v > 0.0 && v < x0)) {
                return Err(loc.invalid(p.span(), "inference.probes", format!("must lie in (0, x0), got {bad}")));
            }
            p.get_ref().clone()
        }
        None => vec![x0 / 2.0, x0 / 5.0, x0 / 10.0],
    };

    let density_h = raw.density.h.as_ref().map(|h| loc.positive(h, "density.h")).transpose()?;
    let density_a_max = raw
        .density
        .a_max
        .as_ref()
        .map(|a| loc.positive(a, "density.a_max"))
        .transpose()?;
    let alphas = match &raw.verify.alphas {
        Some(a) => {
            if a.get_ref().is_empty() || a.get_ref().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(loc.invalid(a.span(), "verify.alphas", "must be a nonempty list of positive numbers"));
            }
            a.get_ref().clone()
        }
        None => DEFAULT_ALPHAS.to_vec(),
    };

    Ok(RunConfig {
        process,
        n_runs,
        x0,
        window,
        fit,
        probes,
        density_h,
        density_a_max,
        alphas,
        out_dir: PathBuf::from(raw.out_dir.unwrap_or_else(|| "out".into())),
    })
}

#[derive(Debug, Parser)]
#[command(name = "nullfreq", version, about = "Null-measurement frequencies of threshold-limited shot noise")]
pub struct Cli {
    /// Worker threads for sampling (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw amplitudes and write samples.csv.
    Simulate(Common),
    /// Compare sampled and model Laplace transforms; writes laplace.csv.
    Verify(Common),
    /// Solve for the amplitude density; writes density.csv.
    Density(Common),
    /// Fit ln G against ln x above the threshold; writes fit_points.csv and fit_summary.csv.
    Fit(WithSamples),
    /// Extrapolate below the threshold and compare with the full data; writes extrapolation.csv.
    Extrapolate(WithSamples),
    /// Ten random GammaExp pulse types in the spirit of the original experiment.
    PaperDemo(Demo),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub x0: Option<f64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WithSamples {
    #[command(flatten)]
    pub common: Common,
    /// Read amplitudes from a samples.csv instead of simulating.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Demo {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Loads the config file and applies flag overrides.
pub fn load(common: &Common) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(&common.config).map_err(io_err(format!("reading {}", common.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.process = cfg.process.with_seed(seed);
        cfg.fit.seed = seed;
    }
    if let Some(n) = common.runs {
        if n == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        cfg.n_runs = n;
    }
    if let Some(x0) = common.x0 {
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(CliError::Usage(format!("--x0 must be positive, got {x0}")));
        }
        if let WindowSpec::Explicit(lo, _) = cfg.window {
            if lo < x0 {
                return Err(CliError::Usage(format!("--x0 {x0} lies above the configured fit_lo {lo}")));
            }
        }
        cfg.x0 = x0;
        if cfg.probes.iter().any(|&p| p >= x0) {
            cfg.probes = vec![x0 / 2.0, x0 / 5.0, x0 / 10.0];
        }
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(io_err(format!("creating {}", path.display())))
}

fn write_lines(dir: &Path, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let ctx = format!("writing {}", path.display());
    let mut out = create(dir, name)?;
    writeln!(out, "{header}").map_err(io_err(ctx.clone()))?;
    for row in rows {
        writeln!(out, "{row}").map_err(io_err(ctx.clone()))?;
    }
    out.flush().map_err(io_err(ctx))?;
    Ok(path)
}

fn samples_for(cfg: &RunConfig, path: Option<&Path>) -> Result<SampleSet, CliError> {
    match path {
        Some(p) => {
            let f = File::open(p).map_err(io_err(format!("opening {}", p.display())))?;
            SampleSet::read_csv(BufReader::new(f), &cfg.process.digest()).map_err(io_err(format!("reading {}", p.display())))
        }
        None => Ok(simulate(&cfg.process, cfg.n_runs)?),
    }
}

fn resolve_window(cfg: &RunConfig, ecdf: &EmpiricalCdf) -> Result<(f64, f64), CliError> {
    Ok(match cfg.window {
        WindowSpec::Explicit(lo, hi) => (lo, hi),
        WindowSpec::Default { cap } => default_window(ecdf, cfg.x0, cap)?,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let samples = simulate(&cfg.process, cfg.n_runs)?;
    let path = cfg.out_dir.join("samples.csv");
    let out = create(&cfg.out_dir, "samples.csv")?;
    samples.write_csv(out).map_err(io_err(format!("writing {}", path.display())))?;
    Ok(path)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<(PathBuf, Vec<LaplaceCheck>), CliError> {
    let samples = simulate(&cfg.process, cfg.n_runs)?;
    let checks = laplace_checks(&cfg.process, &samples, &cfg.alphas)?;
    let path = write_lines(&cfg.out_dir, "laplace.csv", LaplaceCheck::CSV_HEADER, checks.iter().map(|c| c.csv_row()))?;
    Ok((path, checks))
}

/// Grid used when the config leaves `[density]` unset: `A_max` fifteen
/// standard deviations above the mean and 4000 steps.
pub fn default_density_grid(process: &ProcessConfig) -> (f64, f64) {
    let (mean, var) = campbell_moments(process);
    let peak = WeightedDuration::new(process).max_peak();
    let a_max = (mean + 15.0 * var.sqrt()).max(2.0 * peak).ceil();
    (a_max / 4000.0, a_max)
}

pub fn cmd_density(cfg: &RunConfig) -> Result<(PathBuf, DensityGrid, f64), CliError> {
    let (h0, a0) = default_density_grid(&cfg.process);
    let a_max = cfg.density_a_max.unwrap_or(a0);
    let h = cfg.density_h.unwrap_or(if cfg.density_a_max.is_some() { a_max / 4000.0 } else { h0 });
    let grid = solve_density(&cfg.process, h, a_max)?;
    let residual = residual_check(&grid, &cfg.process);
    let path = cfg.out_dir.join("density.csv");
    let out = create(&cfg.out_dir, "density.csv")?;
    grid.write_csv(out).map_err(io_err(format!("writing {}", path.display())))?;
    Ok((path, grid, residual))
}

pub fn cmd_fit(cfg: &RunConfig, samples_path: Option<&Path>) -> Result<PowerLawFit, CliError> {
    let samples = samples_for(cfg, samples_path)?;
    let ecdf = EmpiricalCdf::new(&samples)?;
    let view = censor(&ecdf, cfg.x0)?;
    let (lo, hi) = resolve_window(cfg, &ecdf)?;
    let fit = fit_power_law(&view, lo, hi, &cfg.fit)?;
    write_lines(
        &cfg.out_dir,
        "fit_points.csv",
        "ln_x,ln_G",
        fit.points.iter().map(|(x, g)| format!("{x:?},{g:?}")),
    )?;
    write_lines(&cfg.out_dir, "fit_summary.csv", PowerLawFit::SUMMARY_HEADER, [fit.summary_row()])?;
    Ok(fit)
}

pub fn cmd_extrapolate(
    cfg: &RunConfig,
    samples_path: Option<&Path>,
) -> Result<(PowerLawFit, Vec<ExtrapolationRow>), CliError> {
    let samples = samples_for(cfg, samples_path)?;
    let ecdf = EmpiricalCdf::new(&samples)?;
    let window = resolve_window(cfg, &ecdf)?;
    let (fit, rows) = extrapolation_report(&samples, cfg.x0, window, &cfg.probes, &cfg.fit)?;
    write_lines(&cfg.out_dir, "extrapolation.csv", ExtrapolationRow::CSV_HEADER, rows.iter().map(|r| r.csv_row()))?;
    write_lines(&cfg.out_dir, "fit_summary.csv", PowerLawFit::SUMMARY_HEADER, [fit.summary_row()])?;
    Ok((fit, rows))
}

/// Sample sizes of the demo.
pub const DEMO_RUNS: [usize; 2] = [1_000, 100_000];
const DEMO_TYPES: usize = 10;
const DEMO_HORIZON: f64 = 10.0;
const DEMO_CURVE_POINTS: usize = 60;
const DEMO_MIN_COUNT: f64 = 100.0;
const DEMO_SLOPE_SPAN: usize = 3;

/// The demo scenario for `seed`: ten GammaExp types with `C ~ U(1, 5)`,
/// `a ~ U(1, 3)`, `d ~ U(1, 5)` and `q = 1`, drawn once. The truncation
/// level is chosen so that every support ends by `tau = 10`.
pub fn demo_config(seed: u64) -> crate::Result<ProcessConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let shapes = (0..DEMO_TYPES)
        .map(|_| {
            let c = rng.random_range(1.0..5.0);
            let a = rng.random_range(1.0..3.0);
            let d = rng.random_range(1.0..5.0);
            PulseShape::gamma_exp(c, a, d)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let eps = shapes
        .iter()
        .map(|s| s.eval(DEMO_HORIZON) / s.peak().level)
        .fold(0.0, f64::max);
    let types = shapes
        .into_iter()
        .map(|s| PulseType::new(s, 1.0))
        .collect::<crate::Result<Vec<_>>>()?;
    ProcessConfig::new(types, eps, seed)
}

/// Longest stretch of `ln x` on which the local slope of an `(ln x, ln G)`
/// curve stays within 15% of its smallest value. The local slope at point `i`
/// is the least-squares slope over points `i - k ..= i + k`; the stretch is
/// measured between the outermost centres.
pub fn linear_window(curve: &[(f64, f64)], k: usize) -> f64 {
    if curve.len() < 2 * k + 2 {
        return 0.0;
    }
    let centres: Vec<(f64, f64)> = (k..curve.len() - k)
        .map(|i| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = curve[i - k..=i + k].iter().copied().unzip();
            (curve[i].0, ols(&xs, &ys).map_or(f64::NAN, |l| l.slope))
        })
        .collect();
    let mut best: f64 = 0.0;
    for i in 0..centres.len() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in i..centres.len() {
            lo = lo.min(centres[j].1);
            hi = hi.max(centres[j].1);
            if !(lo > 0.0 && hi <= 1.15 * lo) {
                break;
            }
            best = best.max(centres[j].0 - centres[i].0);
        }
    }
    best
}

/// Summary of one demo sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub n_runs: usize,
    pub fit: PowerLawFit,
    pub q_theory: f64,
    pub linear_window: f64,
}

impl DemoRow {
    pub const CSV_HEADER: &'static str = "n_runs,Q_hat,lnC_hat,ci_lo,ci_hi,rms,Q_theory,rel_err,linear_window";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?}",
            self.n_runs,
            self.fit.summary_row(),
            self.q_theory,
            (self.fit.q_hat - self.q_theory).abs() / self.q_theory,
            self.linear_window
        )
    }
}

/// Runs the demo and writes `demo_pulses.csv`, `lnG_vs_lnx.csv` and
/// `demo_summary.csv` into `out`.
pub fn cmd_paper_demo(seed: u64, out: &Path) -> Result<Vec<DemoRow>, CliError> {
    let config = demo_config(seed)?;
    let q_theory = WeightedDuration::new(&config).q_constant();
    write_lines(
        out,
        "demo_pulses.csv",
        "C,a,d,q",
        config.types().iter().map(|t| {
            let s = &t.shape;
            format!("{:?},{:?},{:?},{:?}", s.amp_scale(), s.decay_rate(), s.rise_rate().unwrap_or(f64::NAN), t.rate)
        }),
    )?;
    let mut curve_rows = Vec::new();
    let mut summary = Vec::new();
    for n in DEMO_RUNS {
        let samples = simulate(&config, n)?;
        let ecdf = EmpiricalCdf::new(&samples)?;
        let positive = ecdf.positive();
        let (Some(&first), Some(&last)) = (positive.first(), positive.last()) else {
            return Err(crate::Error::NoMassInWindow.into());
        };
        let curve: Vec<(f64, f64)> = geometric_grid(first, last, DEMO_CURVE_POINTS)
            .into_iter()
            .map(|x| (x.ln(), ecdf.g(x).ln()))
            .collect();
        curve_rows.extend(curve.iter().map(|(x, g)| format!("{n},{x:?},{g:?}")));
        let n_pos = positive.len() as f64;
        let well_counted: Vec<(f64, f64)> = curve
            .iter()
            .copied()
            .filter(|&(_, g)| g.exp() * n as f64 >= DEMO_MIN_COUNT)
            .collect();
        // Fit from the point reaching DEMO_MIN_COUNT samples (at most the
        // lowest 1%, at least ten samples) up to the 5% quantile.
        let p_lo = (DEMO_MIN_COUNT / n_pos).min(0.01).max(10.0 / n_pos);
        let x_lo = ecdf.positive_quantile(p_lo).ok_or(crate::Error::NoMassInWindow)?;
        let x_hi = ecdf.positive_quantile(0.05_f64.max(2.0 * p_lo)).ok_or(crate::Error::NoMassInWindow)?;
        let view = censor(&ecdf, x_lo)?;
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        let fit = fit_power_law(&view, x_lo, x_hi, &opts)?;
        summary.push(DemoRow {
            n_runs: n,
            fit,
            q_theory,
            linear_window: linear_window(&well_counted, DEMO_SLOPE_SPAN),
        });
    }
    write_lines(out, "lnG_vs_lnx.csv", "n_runs,ln_x,ln_G", curve_rows)?;
    write_lines(out, "demo_summary.csv", DemoRow::CSV_HEADER, summary.iter().map(|r| r.csv_row()))?;
    Ok(summary)
}

fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(c) => {
            let cfg = load(c)?;
            for w in cfg.process.warnings() {
                eprintln!("warning: {w}");
            }
            let path = cmd_simulate(&cfg)?;
            println!("wrote {} ({} runs)", path.display(), cfg.n_runs);
        }
        Command::Verify(c) => {
            let cfg = load(c)?;
            let (path, checks) = cmd_verify(&cfg)?;
            let within = checks.iter().filter(|c| c.sigma_ratio() <= 3.0).count();
            println!("wrote {}; {within}/{} alphas within 3 standard errors", path.display(), checks.len());
        }
        Command::Density(c) => {
            let cfg = load(c)?;
            let (path, grid, residual) = cmd_density(&cfg)?;
            println!(
                "wrote {} (h = {}, A_max = {}, max relative residual {residual:.3e})",
                path.display(),
                grid.step(),
                grid.a_max()
            );
        }
        Command::Fit(w) => {
            let cfg = load(&w.common)?;
            let fit = cmd_fit(&cfg, w.samples.as_deref())?;
            println!("{}\n{}", PowerLawFit::SUMMARY_HEADER, fit.summary_row());
        }
        Command::Extrapolate(w) => {
            let cfg = load(&w.common)?;
            let (_, rows) = cmd_extrapolate(&cfg, w.samples.as_deref())?;
            println!("{}", ExtrapolationRow::CSV_HEADER);
            for r in rows {
                println!("{}", r.csv_row());
            }
        }
        Command::PaperDemo(d) => {
            let rows = cmd_paper_demo(d.seed, &d.out)?;
            println!("{}", DemoRow::CSV_HEADER);
            for r in rows {
                println!("{}", r.csv_row());
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line, on a dedicated pool when `--threads` is set.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(|| execute(&cli.command)),
        None => execute(&cli.command),
    }
}

/// Entry point used by the binary: 0 on success, 1 for usage and
/// configuration problems, 2 for numerical failures.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
