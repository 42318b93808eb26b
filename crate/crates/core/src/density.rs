//! Forward solver for the amplitude density.
//!
//! The continuous part of the law of `A` satisfies
//!
//! ```text
//! A rho(A) = int_0^A Q(F) rho(A - F) dF,
//! ```
//!
//! which is homogeneous near `A = 0`: with `Q(F) -> Q` the only admissible
//! head is `rho(A) = K A^{Q-1}`, i.e. `G(x) ~ x^Q`. The solver seeds that head
//! on `(0, 10 h]`, marches forward on a uniform grid, and fixes `K` at the end
//! so that the zero atom plus the continuous mass equals one.
//!
//! Quadrature: `rho` is sampled at the nodes and the kernel enters through its
//! exact mass over each half cell, `int Q dF = [-F tau] + int tau dF`, so the
//! kernel's jumps and square-root peaks never need to be sampled pointwise.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::ProcessConfig;
use crate::transform::WeightedDuration;

/// Number of grid steps covered by the analytic head.
pub const SEED_NODES: usize = 10;

/// Largest admissible fraction of the mass in the last 1% of the grid.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Numerical density on `A_j = j h`, `j = 1..=N`, with an analytic head
/// `K A^{Q-1}` on `(0, A_seed]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    step: f64,
    /// `rho[j - 1]` is the density at `A_j`.
    rho: Vec<f64>,
    head_exponent: f64,
    head_coefficient: f64,
    zero_atom: f64,
    /// `cum[j - 1]` is the CDF at `A_j`.
    cum: Vec<f64>,
}

impl DensityGrid {
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn len(&self) -> usize {
        self.rho.len()
    }
    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
    pub fn a_max(&self) -> f64 {
        self.rho.len() as f64 * self.step
    }
    pub fn a_seed(&self) -> f64 {
        SEED_NODES as f64 * self.step
    }
    pub fn head_exponent(&self) -> f64 {
        self.head_exponent
    }
    pub fn head_coefficient(&self) -> f64 {
        self.head_coefficient
    }
    pub fn zero_atom(&self) -> f64 {
        self.zero_atom
    }

    /// Density at node `j` (1-based).
    pub fn rho_at(&self, j: usize) -> f64 {
        self.rho[j - 1]
    }

    /// `(A_j, rho_j)` pairs.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rho
            .iter()
            .enumerate()
            .map(move |(i, &r)| ((i + 1) as f64 * self.step, r))
    }

    fn head_mass(&self, x: f64) -> f64 {
        self.head_coefficient * x.powf(self.head_exponent) / self.head_exponent
    }

    /// Total probability captured on `[0, A_max]`, atom included.
    pub fn total_mass(&self) -> f64 {
        *self.cum.last().expect("nonempty grid")
    }

    /// `G(x) = p0 + int_0^x rho`, using the analytic head below `A_seed` and
    /// the trapezoid rule above it.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        let a_max = self.a_max();
        if !(x > 0.0) || x > a_max * (1.0 + 1e-12) {
            return Err(Error::OutsideGrid { x, a_max });
        }
        let seed = self.a_seed();
        if x <= seed {
            return Ok(self.zero_atom + self.head_mass(x));
        }
        let pos = (x / self.step).min(self.rho.len() as f64);
        let j = (pos.floor() as usize).clamp(SEED_NODES, self.rho.len());
        let base = self.cum[j - 1];
        if j == self.rho.len() {
            return Ok(base);
        }
        let dx = x - j as f64 * self.step;
        let r0 = self.rho[j - 1];
        let slope = (self.rho[j] - r0) / self.step;
        Ok(base + dx * (r0 + 0.5 * slope * dx))
    }

    /// Writes `A,rho,G` rows for every node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "A,rho,G")?;
        for (j, (a, r)) in self.nodes().enumerate() {
            writeln!(out, "{a:?},{r:?},{:?}", self.cum[j])?;
        }
        out.flush()
    }
}

/// Masses of the kernel over consecutive cells of width `width` starting at 0.
fn kernel_cell_masses(wd: &WeightedDuration<'_>, width: f64, count: usize) -> Vec<f64> {
    (0..count)
        .into_par_iter()
        .map(|i| wd.kernel_mass(i as f64 * width, (i + 1) as f64 * width))
        .collect()
}

/// Contribution of the analytic head `K u^{Q-1}` on `(0, A_seed]` to the
/// convolution at `A = n * cell`, where the head is split into cells of width
/// `cell` and `masses[i]` is the kernel mass on `[i cell, (i+1) cell]`.
fn head_convolution(n: usize, cells_in_head: usize, cell: f64, q: f64, masses: &[f64]) -> f64 {
    (0..cells_in_head)
        .map(|i| {
            let u0 = i as f64 * cell;
            let u1 = u0 + cell;
            // F = A - u runs over [(n - i - 1) cell, (n - i) cell].
            let q_avg = masses[n - i - 1] / cell;
            q_avg * (u1.powf(q) - u0.powf(q)) / q
        })
        .sum()
}

/// Solves for the density on `(0, a_max]` with grid step `h`.
pub fn solve_density(config: &ProcessConfig, h: f64, a_max: f64) -> Result<DensityGrid> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", format!("must be positive, got {h}")));
    }
    if !(a_max.is_finite() && h <= a_max / 1000.0 * (1.0 + 1e-12)) {
        return Err(Error::invalid(
            "a_max",
            format!("need h <= a_max / 1000 (h = {h}, a_max = {a_max})"),
        ));
    }
    let n = (a_max / h).round() as usize;
    let wd = WeightedDuration::new(config);
    let q = wd.q_constant();
    let m = SEED_NODES;

    // half[i] = kernel mass on [i h/2, (i+1) h/2]
    let half = kernel_cell_masses(&wd, 0.5 * h, 2 * n);
    let full: Vec<f64> = half.chunks(2).map(|c| c[0] + c[1]).collect();

    // Provisional K = 1.
    let mut rho = vec![0.0; n];
    for j in 1..=m.min(n) {
        rho[j - 1] = (j as f64 * h).powf(q - 1.0);
    }
    let implicit = half[0];
    for j in (m + 1)..=n {
        let a = j as f64 * h;
        let mut s = head_convolution(j, m, h, q, &full);
        // Node m: half cell [u_m, u_m + h/2] <-> F in [(j-m) h - h/2, (j-m) h].
        s += half[2 * (j - m) - 1] * rho[m - 1];
        for i in (m + 1)..j {
            let k = j - i;
            s += (half[2 * k - 1] + half[2 * k]) * rho[i - 1];
        }
        rho[j - 1] = s / (a - implicit);
    }

    let mut grid = DensityGrid {
        step: h,
        rho,
        head_exponent: q,
        head_coefficient: 1.0,
        zero_atom: config.zero_atom(),
        cum: Vec::new(),
    };
    let continuous = cumulative(&grid);
    let total = *continuous.last().expect("n >= 1000");
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Nonconvergence(format!("continuous mass is {total}")));
    }
    let tail_start = n - n / 100;
    let tail = total - continuous[tail_start - 1];
    if tail > TAIL_TOLERANCE * total {
        return Err(Error::Nonconvergence(format!(
            "{:.3e} of the mass lies in the last 1% of [0, {}]",
            tail / total,
            grid.a_max()
        )));
    }
    let scale = (1.0 - grid.zero_atom) / total;
    grid.head_coefficient = scale;
    grid.rho.iter_mut().for_each(|r| *r *= scale);
    grid.cum = continuous.iter().map(|c| grid.zero_atom + c * scale).collect();
    Ok(grid)
}

/// Continuous mass up to each node, without the atom.
fn cumulative(grid: &DensityGrid) -> Vec<f64> {
    let h = grid.step;
    let m = SEED_NODES.min(grid.rho.len());
    let mut cum = Vec::with_capacity(grid.rho.len());
    for j in 1..=m {
        cum.push(grid.head_mass(j as f64 * h));
    }
    for j in (m + 1)..=grid.rho.len() {
        let prev = cum[j - 2];
        cum.push(prev + 0.5 * h * (grid.rho[j - 2] + grid.rho[j - 1]));
    }
    cum
}

/// Relative defect of the density equation at every marched node,
/// `|A_j rho_j - conv_j| / (A_j rho_j + 1e-12)`, where `conv_j` is evaluated
/// independently of the solver on a mesh of width `h/2` (linear interpolation
/// of `rho`, kernel masses over quarter cells).
pub fn residuals(grid: &DensityGrid, config: &ProcessConfig) -> Vec<f64> {
    let h = grid.step;
    let n = grid.rho.len();
    let m = SEED_NODES;
    let fine = 0.5 * h;
    let wd = WeightedDuration::new(config);
    let q = grid.head_exponent;
    // quarter[i] = kernel mass on [i h/4, (i+1) h/4]
    let quarter = kernel_cell_masses(&wd, 0.25 * h, 4 * n);
    let fine_cells: Vec<f64> = quarter.chunks(2).map(|c| c[0] + c[1]).collect();
    // rho on the fine mesh v_p = p h/2, p = 2m..=2n
    let rho_fine = |p: usize| -> f64 {
        if p % 2 == 0 {
            grid.rho[p / 2 - 1]
        } else {
            0.5 * (grid.rho[p / 2 - 1] + grid.rho[p / 2])
        }
    };
    ((m + 1)..=n)
        .into_par_iter()
        .map(|j| {
            let a = j as f64 * h;
            let pj = 2 * j;
            let pm = 2 * m;
            let mut conv = grid.head_coefficient * head_convolution(pj, pm, fine, q, &fine_cells);
            // End nodes carry half of their fine cell.
            conv += quarter[2 * (pj - pm) - 1] * rho_fine(pm);
            conv += quarter[0] * rho_fine(pj);
            for p in (pm + 1)..pj {
                let k = pj - p;
                conv += (quarter[2 * k - 1] + quarter[2 * k]) * rho_fine(p);
            }
            let lhs = a * grid.rho[j - 1];
            (lhs - conv).abs() / (lhs + 1e-12)
        })
        .collect()
}

/// Largest relative defect over the marched nodes.
pub fn residual_check(grid: &DensityGrid, config: &ProcessConfig) -> f64 {
    residuals(grid, config).into_iter().fold(0.0, f64::max)
}

/// Least-squares slope of `ln G` against `ln x` on a geometric grid of
/// `points` abscissae spanning `[lo, hi]`.
pub fn log_log_slope(grid: &DensityGrid, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let xs: Vec<f64> = (0..points)
        .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (points - 1) as f64).exp())
        .collect();
    let ln_g = xs.iter().map(|&x| grid.cdf(x).map(f64::ln)).collect::<Result<Vec<_>>>()?;
    let ln_x: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    crate::stats::ols(&ln_x, &ln_g)
        .map(|f| f.slope)
        .ok_or(Error::FlatWindow)
}
