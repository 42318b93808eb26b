//! Measurement-side pipeline: null frequencies `G(x)`, censoring at the
//! detection threshold `x0`, log-log fitting above it and power-law
//! extrapolation below it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::SampleSet;
use crate::stats::{ols, quantile_sorted};

/// Null frequency `G(x) = (n_zero + #{0 < A_i <= x}) / n_total`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    positive: Vec<f64>,
    n_total: usize,
    n_zero: usize,
}

impl EmpiricalCdf {
    pub fn new(samples: &SampleSet) -> Result<Self> {
        Self::from_amplitudes(samples.amplitudes())
    }

    pub fn from_amplitudes(amplitudes: &[f64]) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut positive: Vec<f64> = amplitudes.iter().copied().filter(|&a| a > 0.0).collect();
        positive.sort_by(f64::total_cmp);
        Ok(Self {
            n_zero: amplitudes.len() - positive.len(),
            n_total: amplitudes.len(),
            positive,
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
    pub fn n_zero(&self) -> usize {
        self.n_zero
    }
    /// Positive amplitudes, ascending.
    pub fn positive(&self) -> &[f64] {
        &self.positive
    }

    /// Number of measurements `<= x`.
    pub fn count_le(&self, x: f64) -> usize {
        if x < 0.0 {
            return 0;
        }
        self.n_zero + self.positive.partition_point(|&a| a <= x)
    }

    pub fn g(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.n_total as f64
    }

    /// Quantile `p` of the positive amplitudes.
    pub fn positive_quantile(&self, p: f64) -> Option<f64> {
        (!self.positive.is_empty()).then(|| quantile_sorted(&self.positive, p))
    }
}

/// Read-only access to `G(x)` for `x >= x0` only.
#[derive(Debug, Clone, Copy)]
pub struct CensoredView<'a> {
    ecdf: &'a EmpiricalCdf,
    x0: f64,
}

pub fn censor(ecdf: &EmpiricalCdf, x0: f64) -> Result<CensoredView<'_>> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::invalid("x0", format!("threshold must be positive, got {x0}")));
    }
    Ok(CensoredView { ecdf, x0 })
}

impl<'a> CensoredView<'a> {
    pub fn threshold(&self) -> f64 {
        self.x0
    }

    pub fn g(&self, x: f64) -> Result<f64> {
        if x < self.x0 {
            return Err(Error::BelowThreshold { x, x0: self.x0 });
        }
        Ok(self.ecdf.g(x))
    }

    /// Resampling pool behind the view. Only the bootstrap uses it, and only
    /// through counts at abscissae `>= x0`.
    fn source(&self) -> &'a EmpiricalCdf {
        self.ecdf
    }
}

/// Settings for [`fit_power_law`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Number of geometric grid points in the window.
    pub n_grid: usize,
    /// Bootstrap resamples; 0 disables the confidence interval.
    pub resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_grid: 25,
            resamples: 200,
            seed: 0,
        }
    }
}

/// Straight line `ln G = ln C + Q ln x` fitted over `[x_lo, x_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub q_hat: f64,
    pub ln_c_hat: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_points: usize,
    pub rms_residual: f64,
    /// 95% percentile bootstrap interval for `Q`.
    pub ci_q: Option<(f64, f64)>,
    /// `(ln x_k, ln G(x_k))` used in the fit.
    pub points: Vec<(f64, f64)>,
}

impl PowerLawFit {
    pub const SUMMARY_HEADER: &'static str = "Q_hat,lnC_hat,ci_lo,ci_hi,rms";

    pub fn summary_row(&self) -> String {
        let (lo, hi) = self.ci_q.unwrap_or((f64::NAN, f64::NAN));
        format!(
            "{:?},{:?},{:?},{:?},{:?}",
            self.q_hat, self.ln_c_hat, lo, hi, self.rms_residual
        )
    }
}

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                lo
            } else if k == n - 1 {
                hi
            } else {
                (a + (b - a) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Least-squares fit of `ln G(x_k)` on `ln x_k` over a geometric grid spanning
/// the window, with a percentile bootstrap over the underlying measurements.
pub fn fit_power_law(view: &CensoredView<'_>, x_lo: f64, x_hi: f64, opts: &FitOptions) -> Result<PowerLawFit> {
    if !(x_lo >= view.x0) {
        return Err(Error::BelowThreshold { x: x_lo, x0: view.x0 });
    }
    if !(x_hi > x_lo && x_hi.is_finite()) {
        return Err(Error::invalid("fit_hi", format!("need x_lo < x_hi, got [{x_lo}, {x_hi}]")));
    }
    if opts.n_grid < 5 {
        return Err(Error::invalid("n_grid", format!("need at least 5 points, got {}", opts.n_grid)));
    }
    let xs = geometric_grid(x_lo, x_hi, opts.n_grid);
    let gs = xs.iter().map(|&x| view.g(x)).collect::<Result<Vec<_>>>()?;
    if gs[0] == 0.0 {
        return Err(Error::NoMassInWindow);
    }
    if gs.iter().all(|&g| g == gs[0]) {
        return Err(Error::FlatWindow);
    }
    let ln_x: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ln_g: Vec<f64> = gs.iter().map(|g| g.ln()).collect();
    let line = ols(&ln_x, &ln_g).ok_or(Error::FlatWindow)?;
    let ci_q = if opts.resamples > 0 {
        bootstrap_ci(view.source(), &xs, &ln_x, opts)
    } else {
        None
    };
    Ok(PowerLawFit {
        q_hat: line.slope,
        ln_c_hat: line.intercept,
        x_lo,
        x_hi,
        n_points: xs.len(),
        rms_residual: line.rms,
        ci_q,
        points: ln_x.into_iter().zip(ln_g).collect(),
    })
}

/// Percentile interval of the slope over resamples drawn with replacement
/// from all measurements. Resample `b` uses ChaCha stream `b` of the seed.
/// Resamples with an empty lowest bin are dropped.
fn bootstrap_ci(ecdf: &EmpiricalCdf, xs: &[f64], ln_x: &[f64], opts: &FitOptions) -> Option<(f64, f64)> {
    let n = ecdf.n_total();
    // Pool order is zeros then ascending positives, so a draw r lies below
    // x_k exactly when r < cut[k].
    let cuts: Vec<usize> = xs.iter().map(|&x| ecdf.count_le(x)).collect();
    let mut slopes: Vec<f64> = (0..opts.resamples as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b);
            let mut bins = vec![0usize; cuts.len() + 1];
            for _ in 0..n {
                let r = rng.random_range(0..n);
                bins[cuts.partition_point(|&c| c <= r)] += 1;
            }
            let mut acc = 0usize;
            let mut ln_g = Vec::with_capacity(cuts.len());
            for &count in &bins[..cuts.len()] {
                acc += count;
                if acc == 0 {
                    return None;
                }
                ln_g.push((acc as f64 / n as f64).ln());
            }
            ols(ln_x, &ln_g).map(|l| l.slope)
        })
        .collect();
    if slopes.is_empty() {
        return None;
    }
    slopes.sort_by(f64::total_cmp);
    Some((quantile_sorted(&slopes, 0.025), quantile_sorted(&slopes, 0.975)))
}

/// `G(x) = C x^Q` from the fitted line, clamped to `[0, 1]`.
pub fn extrapolate(fit: &PowerLawFit, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveLevel(x));
    }
    Ok((fit.ln_c_hat + fit.q_hat * x.ln()).exp().clamp(0.0, 1.0))
}

/// Default window `[x0, q25]`, with `q25` the 0.25 quantile of the positive
/// amplitudes, optionally capped at `cap` (e.g. the smallest pulse peak).
pub fn default_window(ecdf: &EmpiricalCdf, x0: f64, cap: Option<f64>) -> Result<(f64, f64)> {
    let q25 = ecdf.positive_quantile(0.25).ok_or(Error::NoMassInWindow)?;
    let hi = cap.map_or(q25, |c| q25.min(c));
    if hi <= x0 {
        return Err(Error::invalid(
            "fit_hi",
            format!("default window upper end {hi} does not exceed x0 = {x0}; set fit_lo/fit_hi"),
        ));
    }
    Ok((x0, hi))
}

/// One probe of the hold-out comparison below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolationRow {
    pub x: f64,
    pub g_extrapolated: f64,
    pub g_true: f64,
    pub rel_err: f64,
}

impl ExtrapolationRow {
    pub const CSV_HEADER: &'static str = "x,G_extrapolated,G_true,rel_err";

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?}",
            self.x, self.g_extrapolated, self.g_true, self.rel_err
        )
    }
}

/// Censors `samples` at `x0`, fits on `window`, extrapolates to each probe
/// and compares with the uncensored empirical frequency.
pub fn extrapolation_report(
    samples: &SampleSet,
    x0: f64,
    window: (f64, f64),
    probes: &[f64],
    opts: &FitOptions,
) -> Result<(PowerLawFit, Vec<ExtrapolationRow>)> {
    if let Some(&bad) = probes.iter().find(|&&p| !(p > 0.0 && p < x0)) {
        return Err(Error::invalid(
            "probe",
            format!("probes must lie in (0, x0 = {x0}), got {bad}"),
        ));
    }
    let ecdf = EmpiricalCdf::new(samples)?;
    let view = censor(&ecdf, x0)?;
    let fit = fit_power_law(&view, window.0, window.1, opts)?;
    let rows = probes
        .iter()
        .map(|&x| {
            let g_extrapolated = extrapolate(&fit, x)?;
            let g_true = ecdf.g(x);
            Ok(ExtrapolationRow {
                x,
                g_extrapolated,
                g_true,
                rel_err: (g_extrapolated - g_true).abs() / g_true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fit, rows))
}
