//! Weighted level duration `tau(F) = sum_l q_l dtau_l(F)`, the kernel
//! `Q(F) = -F tau'(F)`, and both sides of the generating-function identity
//!
//! ```text
//! E[e^{-alpha A}] = exp int_0^inf (1 - e^{-alpha F}) tau'(F) dF.
//! ```

use crate::error::{Error, Result};
use crate::process::{ProcessConfig, SampleSet};
use crate::quad;
use crate::shapes::Family;

/// Relative finite-difference step for `tau'`.
pub const FD_STEP: f64 = 1e-6;

const PEAK_GAP: f64 = 1e-7;

/// Absolute tolerance on the exponent integral of the Laplace transform.
pub const LAPLACE_TOL: f64 = 1e-9;

/// Rate-weighted level duration of a process configuration.
#[derive(Debug, Clone, Copy)]
pub struct WeightedDuration<'a> {
    config: &'a ProcessConfig,
}

impl<'a> WeightedDuration<'a> {
    pub fn new(config: &'a ProcessConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &'a ProcessConfig {
        self.config
    }

    /// `tau(F)` for the untruncated pulses.
    pub fn tau(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::NonPositiveLevel(level));
        }
        Ok(self.tau_unchecked(level))
    }

    fn tau_unchecked(&self, level: f64) -> f64 {
        self.config
            .types()
            .iter()
            .map(|t| t.rate * t.shape.level_duration(level).unwrap_or(0.0))
            .sum()
    }

    /// `tau(F)` for the truncated pulses actually sampled by the process: the
    /// time inside each support with `F(t) >= level`. Bounded as `F -> 0`.
    pub fn tau_truncated(&self, level: f64) -> f64 {
        self.config
            .types()
            .iter()
            .zip(self.config.supports())
            .map(|(t, &(lo, hi))| match t.shape.crossings(level) {
                Some((l, r)) => t.rate * (r.min(hi) - l.max(lo)).max(0.0),
                None => 0.0,
            })
            .sum()
    }

    /// Largest pulse peak; `tau` vanishes above it.
    pub fn max_peak(&self) -> f64 {
        self.peaks().fold(0.0, f64::max)
    }

    /// Smallest pulse peak.
    pub fn min_peak(&self) -> f64 {
        self.peaks().fold(f64::INFINITY, f64::min)
    }

    fn peaks(&self) -> impl Iterator<Item = f64> + 'a {
        self.config.types().iter().map(|t| t.shape.peak().level)
    }

    /// `Q(F) = -F tau'(F)`. Closed form for `PureExp`; for `GammaExp` the
    /// derivative of each crossing time is `1 / F'(t)` at that crossing, so
    /// `Q_l(F) = q_l F (1 / F'(t_left) - 1 / F'(t_right))`.
    pub fn q_kernel(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::NonPositiveLevel(level));
        }
        let mut total = 0.0;
        for t in self.config.types() {
            let s = &t.shape;
            let Some((l, r)) = s.crossings(level) else { continue };
            total += t.rate
                * match s.family() {
                    Family::PureExp => 1.0 / s.decay_rate(),
                    Family::GammaExp => {
                        let (sl, sr) = (s.slope(l), s.slope(r));
                        if sl > 0.0 && sr < 0.0 {
                            level * (1.0 / sl - 1.0 / sr)
                        } else {
                            // At the peak itself the kernel is infinite.
                            f64::INFINITY
                        }
                    }
                };
        }
        Ok(total)
    }

    /// `Q(F)` from central differences of `tau` with step `1e-6 F`, falling
    /// back to a backward difference when `F + h` would cross a pulse peak.
    pub fn q_kernel_fd(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::NonPositiveLevel(level));
        }
        let mut total = 0.0;
        for t in self.config.types() {
            let s = &t.shape;
            let peak = s.peak().level;
            if level > peak {
                continue;
            }
            let h = FD_STEP * level;
            let below = s.level_duration(level - h)?;
            let deriv = if level + h <= peak {
                (s.level_duration(level + h)? - below) / (2.0 * h)
            } else {
                (s.level_duration(level)? - below) / h
            };
            total -= t.rate * level * deriv;
        }
        Ok(total)
    }

    /// `Q = sum_l q_l / a_l`, the small-`F` limit of the kernel.
    pub fn q_constant(&self) -> f64 {
        self.config
            .types()
            .iter()
            .map(|t| t.rate / t.shape.decay_rate())
            .sum()
    }

    /// `int_lo^hi Q(F) dF`, computed without differentiating `tau`:
    /// `lo tau(lo) - hi tau(hi) + int_lo^hi tau(F) dF`.
    pub fn kernel_mass(&self, lo: f64, hi: f64) -> f64 {
        debug_assert!(0.0 <= lo && lo <= hi);
        if hi <= lo {
            return 0.0;
        }
        let tau = |f: f64| if f > 0.0 { self.tau_unchecked(f) } else { 0.0 };
        let boundary = if lo > 0.0 { lo * tau(lo) } else { 0.0 } - hi * tau(hi);
        let mut pts = vec![lo];
        let mut kinked = lo == 0.0;
        for p in self.peaks() {
            if p > lo && p < hi {
                pts.push(p);
            }
            kinked |= p >= lo * (1.0 - 1e-9) && p <= hi * (1.0 + 1e-9);
        }
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        let integral = if kinked || hi - lo > 0.1 * lo {
            // Log singularity at 0, square-root kinks at GammaExp peaks.
            quad::integrate_with_breaks(tau, &pts, 1e-15 * (hi - lo), 1e-13).value
        } else {
            quad::gauss_legendre4(tau, lo, hi)
        };
        boundary + integral
    }
}

/// Breakpoints in level space where the truncated duration has kinks.
fn level_breaks(config: &ProcessConfig, alpha: f64) -> Vec<f64> {
    let wd = WeightedDuration::new(config);
    let top = wd.max_peak();
    let mut pts = vec![0.0, top];
    for (i, t) in config.types().iter().enumerate() {
        pts.push(t.shape.peak().level);
        pts.push(config.truncation_level(i));
    }
    for k in [1.0, 10.0, 100.0] {
        let f = k / alpha;
        if f < top {
            pts.push(f);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Model side of the identity for the truncated process:
/// `w(alpha) = exp(-alpha int_0^inf e^{-alpha F} tau_trunc(F) dF)`, the
/// integrated-by-parts form of `exp int (1 - e^{-alpha F}) tau'(F) dF`.
pub fn analytic_laplace(config: &ProcessConfig, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha", format!("must be nonnegative, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let wd = WeightedDuration::new(config);
    let pts = level_breaks(config, alpha);
    let exponent = quad::integrate_with_breaks(
        |f| alpha * (-alpha * f).exp() * wd.tau_truncated(f),
        &pts,
        LAPLACE_TOL,
        1e-12,
    )
    .value;
    Ok((-exponent).exp())
}

/// The same transform computed directly from the kernel,
/// `exp(-int (1 - e^{-alpha F}) Q(F) / F dF)`, integrated in `u = ln F` from
/// each type's truncation level up to its peak. Independent of
/// [`analytic_laplace`] up to truncation effects of order `alpha * eps`.
pub fn analytic_laplace_kernel_form(config: &ProcessConfig, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha", format!("must be nonnegative, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    let mut exponent = 0.0;
    for (i, t) in config.types().iter().enumerate() {
        let single = ProcessConfig::new(vec![*t], config.eps(), 0)?;
        let wd = WeightedDuration::new(&single);
        let peak = t.shape.peak().level;
        let lo = config.truncation_level(i).ln();
        // The GammaExp kernel has an inverse square-root singularity at the
        // peak. Over the last relative PEAK_GAP of levels the weight
        // 1 - e^{-alpha F} is constant to O(PEAK_GAP), leaving an exact
        // integral of -dtau.
        let top = match t.shape.family() {
            Family::PureExp => peak,
            Family::GammaExp => {
                let top = peak * (1.0 - PEAK_GAP);
                exponent -= (-alpha * peak).exp_m1() * t.rate * t.shape.level_duration(top)?;
                top
            }
        };
        let hi = top.ln();
        let mut pts = vec![lo, hi];
        let pivot = -alpha.ln();
        if pivot > lo && pivot < hi {
            pts.insert(1, pivot);
        }
        exponent += quad::integrate_with_breaks(
            |u| {
                let f = u.exp();
                -(-alpha * f).exp_m1() * wd.q_kernel(f).unwrap_or(0.0)
            },
            &pts,
            LAPLACE_TOL,
            1e-12,
        )
        .value;
    }
    Ok((-exponent).exp())
}

/// Sample mean of `e^{-alpha A}` and its standard error.
pub fn mc_laplace(samples: &SampleSet, alpha: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = samples.len() as f64;
    let vals: Vec<f64> = samples.amplitudes().iter().map(|a| (-alpha * a).exp()).collect();
    let mean = vals.iter().sum::<f64>() / n;
    if samples.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// One row of the `verify` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceCheck {
    pub alpha: f64,
    pub w_mc: f64,
    pub w_mc_stderr: f64,
    pub w_analytic: f64,
}

impl LaplaceCheck {
    pub fn abs_diff(&self) -> f64 {
        (self.w_mc - self.w_analytic).abs()
    }

    /// `|diff| / stderr` (infinite when the stderr vanishes but the values
    /// differ, zero when both vanish).
    pub fn sigma_ratio(&self) -> f64 {
        let d = self.abs_diff();
        if d == 0.0 {
            0.0
        } else {
            d / self.w_mc_stderr
        }
    }

    pub const CSV_HEADER: &'static str = "alpha,w_mc,w_mc_stderr,w_analytic,abs_diff,sigma_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            self.alpha,
            self.w_mc,
            self.w_mc_stderr,
            self.w_analytic,
            self.abs_diff(),
            self.sigma_ratio()
        )
    }
}

/// Compares the sampled and model transforms at each `alpha`.
pub fn laplace_checks(config: &ProcessConfig, samples: &SampleSet, alphas: &[f64]) -> Result<Vec<LaplaceCheck>> {
    alphas
        .iter()
        .map(|&alpha| {
            let (w_mc, w_mc_stderr) = mc_laplace(samples, alpha)?;
            Ok(LaplaceCheck {
                alpha,
                w_mc,
                w_mc_stderr,
                w_analytic: analytic_laplace(config, alpha)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{PulseType, DEFAULT_EPS};
    use crate::shapes::PulseShape;
    use rand::{Rng, SeedableRng};

    fn config(types: &[(PulseShape, f64)]) -> ProcessConfig {
        let types = types
            .iter()
            .map(|&(s, q)| PulseType::new(s, q).unwrap())
            .collect();
        ProcessConfig::new(types, DEFAULT_EPS, 1).unwrap()
    }

    fn pexp(c: f64, a: f64) -> PulseShape {
        PulseShape::pure_exp(c, a).unwrap()
    }
    fn gexp(c: f64, a: f64, d: f64) -> PulseShape {
        PulseShape::gamma_exp(c, a, d).unwrap()
    }

    #[test]
    fn tau_examples() {
        let cfg = config(&[(pexp(1.0, 1.0), 2.0)]);
        let wd = WeightedDuration::new(&cfg);
        assert!((wd.tau((-1.0f64).exp()).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(wd.tau(1.5).unwrap(), 0.0);
        assert!(wd.tau(0.0).is_err());

        let cfg = config(&[(pexp(1.0, 1.0), 1.0), (pexp(1.0, 2.0), 1.0)]);
        let wd = WeightedDuration::new(&cfg);
        let f = (-2.0f64).exp();
        assert!((wd.tau(f).unwrap() - 3.0).abs() < 1e-14);
        // Indicator quadrature of each pulse, summed.
        let dt = 1e-5;
        let grid: f64 = (0..1_000_000)
            .map(|i| {
                let t = (i as f64 + 0.5) * dt;
                [1.0, 2.0].iter().filter(|&&a| (-a * t).exp() >= f).count() as f64
            })
            .sum::<f64>()
            * dt;
        assert!((grid - 3.0).abs() < 1e-4);
    }

    #[test]
    fn q_kernel_examples() {
        let cfg = config(&[(pexp(1.0, 1.0), 1.0)]);
        let wd = WeightedDuration::new(&cfg);
        assert_eq!(wd.q_kernel(0.5).unwrap(), 1.0);
        assert_eq!(wd.q_kernel(2.0).unwrap(), 0.0);

        let cfg = config(&[(gexp(2.0, 1.0, 1.0), 1.0)]);
        let wd = WeightedDuration::new(&cfg);
        assert!((wd.q_kernel(0.001).unwrap() - 1.0).abs() < 0.05);
        assert!((wd.q_kernel_fd(0.001).unwrap() - 1.0).abs() < 0.05);
        assert_eq!(wd.q_kernel(1.0).unwrap(), 0.0);
        // Just below the peak the backward difference is used and stays finite.
        let peak = cfg.types()[0].shape.peak().level;
        assert!(wd.q_kernel_fd(peak * (1.0 - 1e-7)).unwrap().is_finite());
    }

    #[test]
    fn q_kernel_closed_form_and_fd() {
        // C = 2, a = d = 1: F = 2(x - x^2) with x = e^{-s}, so
        // dtau = ln((1 + r)/(1 - r)), r = sqrt(1 - 2F), and Q(F) = 1/r.
        let cfg = config(&[(gexp(2.0, 1.0, 1.0), 1.0)]);
        let wd = WeightedDuration::new(&cfg);
        for f in [1e-4_f64, 0.01, 0.1, 0.3, 0.45, 0.49, 0.4999] {
            let exact = 1.0 / (1.0 - 2.0 * f).sqrt();
            let q = wd.q_kernel(f).unwrap();
            assert!((q - exact).abs() < 1e-9 * exact, "{f}: {q} vs {exact}");
        }
        // Finite differences agree away from the peak.
        let cfg = config(&[(gexp(3.0, 1.3, 2.2), 1.7), (pexp(0.5, 2.0), 1.0)]);
        let wd = WeightedDuration::new(&cfg);
        for f in [0.001, 0.01, 0.1, 0.4, 0.6] {
            let q = wd.q_kernel(f).unwrap();
            let fd = wd.q_kernel_fd(f).unwrap();
            assert!((q - fd).abs() < 1e-6 * q, "{f}: {q} vs {fd}");
        }
        assert_eq!(wd.q_kernel_fd(2.0).unwrap(), 0.0);
    }

    #[test]
    fn q_constant_examples() {
        let cfg = config(&[(pexp(1.0, 2.0), 1.0)]);
        assert_eq!(WeightedDuration::new(&cfg).q_constant(), 0.5);
        let cfg = config(&[(pexp(1.0, 1.0), 1.0), (pexp(1.0, 4.0), 2.0)]);
        assert_eq!(WeightedDuration::new(&cfg).q_constant(), 1.5);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let types: Vec<_> = (0..10)
            .map(|_| (gexp(rng.random_range(1.0..5.0), rng.random_range(1.0..3.0), rng.random_range(1.0..5.0)), 1.0))
            .collect();
        let cfg = config(&types);
        let wd = WeightedDuration::new(&cfg);
        let formula = wd.q_constant();
        let direct: f64 = cfg.types().iter().map(|t| 1.0 / t.shape.decay_rate()).sum();
        assert!((formula - direct).abs() < 1e-14);
        let limit = wd.q_kernel_fd(1e-6).unwrap();
        assert!((limit - formula).abs() < 0.01 * formula);
        let tiny = 1e-4 * wd.min_peak();
        assert!((wd.q_kernel(tiny).unwrap() - formula).abs() < 0.01 * formula);
    }

    #[test]
    fn kernel_mass_matches_closed_form() {
        // GammaExp(2, 1, 1) has Q(F) = (1 - 2F)^{-1/2} below its peak 1/2;
        // PureExp(0.3, 2) at rate 0.5 adds 1/4 below 0.3.
        let cfg = config(&[(gexp(2.0, 1.0, 1.0), 1.0), (pexp(0.3, 2.0), 0.5)]);
        let wd = WeightedDuration::new(&cfg);
        let exact = |lo: f64, hi: f64| {
            let g = |f: f64| -(1.0 - 2.0 * f.min(0.5)).sqrt();
            g(hi) - g(lo) + 0.25 * (hi.min(0.3) - lo.min(0.3)).max(0.0)
        };
        for (lo, hi) in [(0.0, 1e-4), (0.01, 0.02), (0.1, 0.35), (0.29, 0.31), (0.45, 0.6), (0.499, 0.5)] {
            let m = wd.kernel_mass(lo, hi);
            let e = exact(lo, hi);
            assert!((m - e).abs() < 1e-9 * e, "[{lo},{hi}] {m} vs {e}");
        }
        assert_eq!(wd.kernel_mass(0.7, 0.9), 0.0);
    }

    #[test]
    fn analytic_laplace_limits() {
        let cfg = config(&[(pexp(1.0, 1.0), 1.0)]);
        assert_eq!(analytic_laplace(&cfg, 0.0).unwrap(), 1.0);
        assert!(analytic_laplace(&cfg, -1.0).is_err());
        let big = analytic_laplace(&cfg, 1e12).unwrap();
        assert!((big - cfg.zero_atom()).abs() < 1e-3 * cfg.zero_atom());

        let cfg = config(&[(gexp(2.0, 1.0, 3.0), 1.0), (pexp(1.0, 2.0), 0.5)]);
        let big = analytic_laplace(&cfg, 1e13).unwrap();
        assert!((big - cfg.zero_atom()).abs() < 1e-3 * cfg.zero_atom());
    }

    #[test]
    fn analytic_laplace_pure_exp_closed_form() {
        // With u = C e^{-a t}: exponent = (q/a) int_eps^C (1 - e^{-alpha u}) / u du.
        let cfg = config(&[(pexp(1.0, 1.0), 1.0)]);
        for alpha in [0.1, 1.0, 5.0] {
            let oracle = quad::integrate(|u| -(-alpha * u).exp_m1() / u, 1e-8, 1.0, 1e-13, 0.0).value;
            let w = analytic_laplace(&cfg, alpha).unwrap();
            assert!((w - (-oracle).exp()).abs() < 1e-9, "{alpha}");
        }
    }

    #[test]
    fn two_routes_agree() {
        let cfgs = [
            config(&[(pexp(1.0, 1.0), 1.0)]),
            config(&[(gexp(2.0, 1.0, 1.0), 1.0)]),
            config(&[(gexp(2.0, 1.0, 3.0), 1.0), (pexp(1.0, 2.0), 0.5)]),
        ];
        for cfg in &cfgs {
            for alpha in [0.1, 0.5, 1.0, 2.0, 5.0] {
                let a = analytic_laplace(cfg, alpha).unwrap();
                let b = analytic_laplace_kernel_form(cfg, alpha).unwrap();
                assert!((a - b).abs() < 1e-6, "alpha {alpha}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn analytic_laplace_nonincreasing() {
        let cfg = config(&[(gexp(2.0, 1.0, 3.0), 1.0), (pexp(1.0, 2.0), 0.5)]);
        let mut prev = 1.0;
        for k in 0..30 {
            let alpha = 0.05 * 1.5f64.powi(k);
            let w = analytic_laplace(&cfg, alpha).unwrap();
            assert!(w > 0.0 && w <= prev);
            prev = w;
        }
    }

    #[test]
    fn mc_laplace_edge_cases() {
        let s = SampleSet::new(vec![0.0; 5], "z").unwrap();
        assert_eq!(mc_laplace(&s, 3.0).unwrap(), (1.0, 0.0));
        let s = SampleSet::new(vec![0.5, 1.0, 2.0], "z").unwrap();
        assert_eq!(mc_laplace(&s, 0.0).unwrap(), (1.0, 0.0));
        let empty = SampleSet::new(vec![], "z").unwrap();
        assert_eq!(mc_laplace(&empty, 1.0), Err(Error::EmptySamples));
    }

    #[test]
    fn mc_matches_analytic_dickman() {
        let cfg = config(&[(pexp(1.0, 1.0), 1.0)]);
        let s = crate::process::simulate(&cfg, 100_000).unwrap();
        let (w, se) = mc_laplace(&s, 1.0).unwrap();
        let exact = analytic_laplace(&cfg, 1.0).unwrap();
        assert!((w - exact).abs() <= 3.0 * se, "{w} +- {se} vs {exact}");
    }

    #[test]
    fn monotone_tau_and_support() {
        let cfg = config(&[(gexp(2.0, 1.0, 3.0), 1.0), (pexp(1.0, 2.0), 0.5)]);
        let wd = WeightedDuration::new(&cfg);
        let mut prev = f64::INFINITY;
        for k in 1..400 {
            let f = 1e-6 * 1.05f64.powi(k);
            let t = wd.tau(f).unwrap();
            assert!(t <= prev);
            prev = t;
        }
        assert_eq!(wd.tau(wd.max_peak() * 1.0001).unwrap(), 0.0);
    }
}
