//! Steady-state sampling of the superposed pulse amplitude at `t = 0`.
//!
//! Each pulse type `l` arrives as a Poisson stream of rate `q_l`. Pulse tails
//! are cut where the profile falls to `eps * peak_l`, which leaves each type
//! with a finite support of length `L_l` and gives the amplitude an atom at
//! zero of mass `p0 = exp(-sum_l q_l L_l)`.
//!
//! Every run draws from its own ChaCha stream (`stream = run index`) keyed by
//! the master seed, so results do not depend on how runs are scheduled.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad;
use crate::shapes::PulseShape;

/// One pulse family together with its arrival rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseType {
    pub shape: PulseShape,
    pub rate: f64,
}

impl PulseType {
    pub fn new(shape: PulseShape, rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid("q", format!("rate must be positive, got {rate}")));
        }
        Ok(Self { shape, rate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Places all `Poisson(2 T q)` pulses uniformly on `(-T, T)`.
    Naive,
    /// Places only the `Poisson(q L)` pulses whose support covers `t = 0`.
    #[default]
    Reduced,
}

/// Default relative truncation level (fraction of each pulse's peak).
pub const DEFAULT_EPS: f64 = 1e-8;

/// Validated model of the pulse superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessConfig {
    types: Vec<PulseType>,
    half_window: f64,
    eps: f64,
    seed: u64,
    sampler: Sampler,
    supports: Vec<(f64, f64)>,
}

impl ProcessConfig {
    /// Builds a config with the smallest admissible half window. `eps` is
    /// relative: type `l` is truncated at `eps * peak_l`.
    pub fn new(types: Vec<PulseType>, eps: f64, seed: u64) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("pulse", "at least one pulse type is required"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::invalid("eps", format!("must lie in (0, 1), got {eps}")));
        }
        let supports = types
            .iter()
            .map(|t| t.shape.effective_support(eps * t.shape.peak().level))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = Self {
            types,
            half_window: 0.0,
            eps,
            seed,
            sampler: Sampler::default(),
            supports,
        };
        cfg.half_window = cfg.min_half_window() * (1.0 + 1e-9);
        Ok(cfg)
    }

    /// Every pulse that can touch `t = 0` must start and end inside `(-T, T)`.
    pub fn min_half_window(&self) -> f64 {
        self.supports
            .iter()
            .map(|&(lo, hi)| hi.max(-lo))
            .fold(0.0, f64::max)
    }

    pub fn with_half_window(mut self, t: f64) -> Result<Self> {
        let need = self.min_half_window();
        if !(t.is_finite() && t > need) {
            return Err(Error::invalid(
                "half_window",
                format!("must exceed the longest pulse support {need}, got {t}"),
            ));
        }
        self.half_window = t;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn types(&self) -> &[PulseType] {
        &self.types
    }
    pub fn half_window(&self) -> f64 {
        self.half_window
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn sampler(&self) -> Sampler {
        self.sampler
    }

    /// `(t_lo, t_hi)` of each type's truncated support.
    pub fn supports(&self) -> &[(f64, f64)] {
        &self.supports
    }

    /// Absolute truncation level of type `i`.
    pub fn truncation_level(&self, i: usize) -> f64 {
        self.eps * self.types[i].shape.peak().level
    }

    /// Probability that no truncated pulse covers the observation time.
    pub fn zero_atom(&self) -> f64 {
        (-self.expected_covering()).exp()
    }

    /// Mean number of pulses covering `t = 0`, `sum_l q_l L_l`.
    pub fn expected_covering(&self) -> f64 {
        self.types
            .iter()
            .zip(&self.supports)
            .map(|(t, (lo, hi))| t.rate * (hi - lo))
            .sum()
    }

    /// Non-fatal problems with the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let p0 = self.zero_atom();
        if p0 >= 0.01 {
            vec![format!(
                "zero-atom probability {p0:.4} >= 0.01; lower eps to reduce truncation mass"
            )]
        } else {
            Vec::new()
        }
    }

    /// Stable identifier of the model parameters (FNV-1a over their bits).
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for t in &self.types {
            let s = t.shape;
            feed(s.family() as u64);
            feed(s.amp_scale().to_bits());
            feed(s.decay_rate().to_bits());
            feed(s.rise_rate().unwrap_or(0.0).to_bits());
            feed(s.onset().to_bits());
            feed(t.rate.to_bits());
        }
        feed(self.half_window.to_bits());
        feed(self.eps.to_bits());
        feed(self.seed);
        feed(self.sampler as u64);
        format!("{h:016x}")
    }

    /// Per-run generator: ChaCha keyed by the master seed, stream = run index.
    pub fn run_rng(&self, run: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(run);
        rng
    }
}

/// `Poisson(2 T q)` pulse count on the window `(-T, T)`.
pub fn sample_pulse_count<R: Rng + ?Sized>(rate: f64, half_window: f64, rng: &mut R) -> u64 {
    poisson(2.0 * half_window * rate, rng)
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive Poisson mean");
    let draw: f64 = dist.sample(rng);
    draw as u64
}

/// One draw of the total amplitude at `t = 0`, using the config's sampler.
pub fn sample_amplitude<R: Rng + ?Sized>(config: &ProcessConfig, rng: &mut R) -> f64 {
    match config.sampler {
        Sampler::Naive => sample_amplitude_naive(config, rng),
        Sampler::Reduced => sample_amplitude_reduced(config, rng),
    }
}

/// Direct construction: every pulse in `(-T, T)` is placed, and a pulse placed
/// at `tau` contributes `F(-tau)` when `-tau` lies in its truncated support.
pub fn sample_amplitude_naive<R: Rng + ?Sized>(config: &ProcessConfig, rng: &mut R) -> f64 {
    let t = config.half_window;
    let mut total = 0.0;
    for (ty, &(lo, hi)) in config.types.iter().zip(&config.supports) {
        let count = sample_pulse_count(ty.rate, t, rng);
        for _ in 0..count {
            let elapsed = -rng.random_range(-t..t);
            if (lo..=hi).contains(&elapsed) {
                total += ty.shape.eval(elapsed);
            }
        }
    }
    total
}

/// Thinned construction: only pulses covering `t = 0` are drawn.
pub fn sample_amplitude_reduced<R: Rng + ?Sized>(config: &ProcessConfig, rng: &mut R) -> f64 {
    let mut total = 0.0;
    for (ty, &(lo, hi)) in config.types.iter().zip(&config.supports) {
        let count = poisson(ty.rate * (hi - lo), rng);
        for _ in 0..count {
            total += ty.shape.eval(rng.random_range(lo..hi));
        }
    }
    total
}

/// Amplitudes from repeated independent observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    amplitudes: Vec<f64>,
    n_zero: usize,
    config_digest: String,
}

impl SampleSet {
    pub fn new(amplitudes: Vec<f64>, config_digest: impl Into<String>) -> Result<Self> {
        if let Some(bad) = amplitudes.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::invalid(
                "amplitude",
                format!("amplitudes must be finite and nonnegative, got {bad}"),
            ));
        }
        let n_zero = amplitudes.iter().filter(|&&a| a == 0.0).count();
        Ok(Self {
            amplitudes,
            n_zero,
            config_digest: config_digest.into(),
        })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
    pub fn n_zero(&self) -> usize {
        self.n_zero
    }
    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    /// Writes `run_index,amplitude` rows; amplitudes use the shortest decimal
    /// form that round-trips exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "run_index,amplitude")?;
        for (i, a) in self.amplitudes.iter().enumerate() {
            writeln!(out, "{i},{a:?}")?;
        }
        out.flush()
    }

    /// Reads the format produced by [`SampleSet::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, config_digest: &str) -> io::Result<Self> {
        let bad = |line: usize, msg: &str| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"))
        };
        let mut lines = input.lines();
        match lines.next().transpose()? {
            Some(h) if h.trim() == "run_index,amplitude" => {}
            _ => return Err(bad(1, "expected header `run_index,amplitude`")),
        }
        let mut amps = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (_, v) = line
                .split_once(',')
                .ok_or_else(|| bad(i + 2, "expected two fields"))?;
            amps.push(v.trim().parse::<f64>().map_err(|e| bad(i + 2, &e.to_string()))?);
        }
        Self::new(amps, config_digest).map_err(|e| bad(0, &e.to_string()))
    }
}

/// `n_runs` independent amplitude draws, run in parallel on the current rayon
/// pool. Bit-identical for a fixed seed whatever the thread count.
pub fn simulate(config: &ProcessConfig, n_runs: usize) -> Result<SampleSet> {
    if n_runs == 0 {
        return Err(Error::invalid("n_runs", "must be at least 1"));
    }
    let amplitudes: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|run| sample_amplitude(config, &mut config.run_rng(run)))
        .collect();
    SampleSet::new(amplitudes, config.digest())
}

/// Campbell moments of the truncated process: mean `sum q int F` and variance
/// `sum q int F^2`, integrated numerically over each support.
pub fn campbell_moments(config: &ProcessConfig) -> (f64, f64) {
    let mut mean = 0.0;
    let mut var = 0.0;
    for (ty, &(lo, hi)) in config.types.iter().zip(&config.supports) {
        let peak = ty.shape.peak().time.clamp(lo, hi);
        let pts = [lo, peak, hi];
        let s = ty.shape;
        mean += ty.rate * quad::integrate_with_breaks(|t| s.eval(t), &pts, 1e-13, 1e-12).value;
        var += ty.rate * quad::integrate_with_breaks(|t| s.eval(t).powi(2), &pts, 1e-13, 1e-12).value;
    }
    (mean, var)
}
