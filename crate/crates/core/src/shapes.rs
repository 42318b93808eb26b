//! Pulse profiles.
//!
//! A pulse is nonzero from its onset at `tau = -b` onwards. With `s = tau + b`
//! the elapsed time since onset, the two built-in families are
//!
//! - `GammaExp`: `F(s) = C e^{-a s} (1 - e^{-d s})`
//! - `PureExp`:  `F(s) = C e^{-a s}`
//!
//! Both decay as `C e^{-a s}`, which is all the small-amplitude law needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GammaExp,
    PureExp,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::GammaExp => f.write_str("gamma_exp"),
            Family::PureExp => f.write_str("pure_exp"),
        }
    }
}

/// Immutable, validated pulse profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseShape {
    family: Family,
    amp_scale: f64,
    decay_rate: f64,
    rise_rate: f64,
    onset: f64,
}

/// Location and height of the pulse maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time: f64,
    pub level: f64,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
    }
}

impl PulseShape {
    pub fn gamma_exp(amp_scale: f64, decay_rate: f64, rise_rate: f64) -> Result<Self> {
        Ok(Self {
            family: Family::GammaExp,
            amp_scale: positive("amp_scale", amp_scale)?,
            decay_rate: positive("decay_rate", decay_rate)?,
            rise_rate: positive("rise_rate", rise_rate)?,
            onset: 0.0,
        })
    }

    pub fn pure_exp(amp_scale: f64, decay_rate: f64) -> Result<Self> {
        Ok(Self {
            family: Family::PureExp,
            amp_scale: positive("amp_scale", amp_scale)?,
            decay_rate: positive("decay_rate", decay_rate)?,
            rise_rate: f64::INFINITY,
            onset: 0.0,
        })
    }

    /// Moves the onset to `tau = -onset`.
    pub fn with_onset(mut self, onset: f64) -> Result<Self> {
        if !(onset.is_finite() && onset >= 0.0) {
            return Err(Error::invalid("onset", format!("must be nonnegative, got {onset}")));
        }
        self.onset = onset;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn amp_scale(&self) -> f64 {
        self.amp_scale
    }
    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }
    /// `None` for `PureExp`, which rises instantaneously.
    pub fn rise_rate(&self) -> Option<f64> {
        match self.family {
            Family::GammaExp => Some(self.rise_rate),
            Family::PureExp => None,
        }
    }
    pub fn onset(&self) -> f64 {
        self.onset
    }

    /// Profile value at elapsed time `s` since onset (0 for `s < 0`).
    #[inline]
    fn profile(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        let tail = self.amp_scale * (-self.decay_rate * s).exp();
        match self.family {
            Family::PureExp => tail,
            Family::GammaExp => tail * -(-self.rise_rate * s).exp_m1(),
        }
    }

    /// `dF/dtau`; zero before the onset.
    pub fn slope(&self, tau: f64) -> f64 {
        let s = tau + self.onset;
        if s < 0.0 {
            return 0.0;
        }
        let (c, a) = (self.amp_scale, self.decay_rate);
        let tail = c * (-a * s).exp();
        match self.family {
            Family::PureExp => -a * tail,
            Family::GammaExp => {
                let d = self.rise_rate;
                tail * (-a + (a + d) * (-d * s).exp())
            }
        }
    }

    /// `F(tau)`; zero before the onset.
    #[inline]
    pub fn eval(&self, tau: f64) -> f64 {
        self.profile(tau + self.onset)
    }

    pub fn peak(&self) -> Peak {
        match self.family {
            Family::PureExp => Peak {
                time: -self.onset,
                level: self.amp_scale,
            },
            Family::GammaExp => {
                let s = (self.rise_rate / self.decay_rate).ln_1p() / self.rise_rate;
                Peak {
                    time: s - self.onset,
                    level: self.profile(s),
                }
            }
        }
    }

    /// Times `(t_left, t_right)` bounding `{tau : F(tau) >= level}`, or `None`
    /// when `level` exceeds the peak. Requires `level > 0`.
    pub fn crossings(&self, level: f64) -> Option<(f64, f64)> {
        debug_assert!(level > 0.0);
        let c = self.amp_scale;
        let a = self.decay_rate;
        match self.family {
            Family::PureExp => {
                if level > c {
                    return None;
                }
                Some((-self.onset, (c / level).ln() / a - self.onset))
            }
            Family::GammaExp => {
                let peak = self.peak();
                if level > peak.level {
                    return None;
                }
                let s_peak = peak.time + self.onset;
                if level == peak.level {
                    return Some((peak.time, peak.time));
                }
                let left = bisect(|s| self.profile(s) >= level, 0.0, s_peak);
                // F(s) <= C e^{-a s}, so F drops below `level` by ln(C/level)/a.
                let s_hi = ((c / level).ln() / a).max(s_peak);
                let right = bisect(|s| self.profile(s) < level, s_peak, s_hi);
                Some((left - self.onset, right - self.onset))
            }
        }
    }

    /// Total time with `F(tau) >= level`.
    pub fn level_duration(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::NonPositiveLevel(level));
        }
        Ok(self.crossings(level).map_or(0.0, |(l, r)| (r - l).max(0.0)))
    }

    /// Exponential-tail approximation `-b - ln(F/C)/a` of the level duration.
    pub fn asymptotic_duration(&self, level: f64) -> f64 {
        -self.onset - (level / self.amp_scale).ln() / self.decay_rate
    }

    /// Interval outside which `F < eps`: from the onset to the last time the
    /// decaying tail is at `eps`.
    pub fn effective_support(&self, eps: f64) -> Result<(f64, f64)> {
        if !(eps > 0.0) {
            return Err(Error::NonPositiveLevel(eps));
        }
        let peak = self.peak().level;
        if eps >= peak {
            return Err(Error::TruncationAbovePeak { eps, peak });
        }
        let (_, t_hi) = self.crossings(eps).expect("eps below peak");
        Ok((-self.onset, t_hi))
    }
}

/// Smallest `x` in `(lo, hi]` with `pred(x)` true, assuming `pred` is false at
/// `lo`, true at `hi`, and switches once. Runs to floating-point resolution.
pub(crate) fn bisect<P: Fn(f64) -> bool>(pred: P, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
