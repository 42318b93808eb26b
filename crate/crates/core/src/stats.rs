//! Small statistics toolbox: moments, least squares, quantiles, KS distances.

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Mean and variance with their standard errors. The variance error uses the
/// large-sample form `sqrt((m4 - s^4) / n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
}

pub fn moment_summary(xs: &[f64]) -> MomentSummary {
    let n = xs.len() as f64;
    let (mean, var) = mean_var(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    MomentSummary {
        mean,
        mean_se: (var / n).sqrt(),
        var,
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Returns `None` when the abscissae are all equal.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Some(LineFit {
        slope,
        intercept,
        rms: (ss / n).sqrt(),
    })
}

/// Linear-interpolation quantile of an ascending slice (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Two-sample Kolmogorov-Smirnov distance between ascending slices.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS distance between the ECDF of an ascending slice and a CDF
/// that is continuous on `(0, inf)` but may carry an atom at zero (its left
/// limit at 0 is taken to be 0).
pub fn ks_one_sample<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let below = i as f64 / n;
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
        let at = i as f64 / n;
        let f = cdf(v);
        let f_left = if v <= 0.0 { 0.0 } else { f };
        d = d.max((at - f).abs()).max((below - f_left).abs());
    }
    d
}

/// Asymptotic KS critical value `c(alpha) * sqrt(1/n_eff)`,
/// `c(alpha) = sqrt(-ln(alpha/2)/2)`.
pub fn ks_critical(alpha: f64, n_eff: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / n_eff.sqrt()
}

/// Effective sample size for the two-sample test.
pub fn ks_two_sample_n(n: usize, m: usize) -> f64 {
    (n as f64 * m as f64) / (n + m) as f64
}
