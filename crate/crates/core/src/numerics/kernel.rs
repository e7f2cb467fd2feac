use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::censoring::SendPolicy;
use crate::error::{Error, Result};
use crate::model::{DistributionPair, Regime};
use crate::numerics::tables::{DensityTables, LrDirection};
use crate::numerics::Grid;

/// Discretized transition operator of the Shiryaev-Roberts statistic
/// `R' = (1 + R) L` on `[0, A)`, with mass at or above `A` absorbed.
///
/// Entry `(i, j)` is the probability of landing in cell `j` from the node of
/// cell `i` under the censored-observation law of the given regime: a
/// deterministic no-send atom plus the continuous push-forward of the
/// send-region density.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Grid,
    regime: Regime,
    entries: Vec<f64>,
    absorbed: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_parts(
        grid: Grid,
        regime: Regime,
        entries: Vec<f64>,
        absorbed: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.len();
        if entries.len() != n * n || absorbed.len() != n {
            return Err(Error::InvalidInput(format!(
                "kernel dimensions do not match the grid: {} entries for n = {n}",
                entries.len()
            )));
        }
        if entries.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidInput("kernel entries must be non-negative".into()));
        }
        let km = Self { grid, regime, entries, absorbed };
        for i in 0..n {
            let sum: f64 = km.row(i).iter().sum();
            if sum > 1.0 + 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "row {i} carries mass {sum} > 1"
                )));
            }
        }
        Ok(km)
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.entries[i * n..(i + 1) * n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Mass escaping at or above the threshold from each node.
    pub fn absorbed(&self, i: usize) -> f64 {
        self.absorbed[i]
    }

    /// Left multiplication `w = v K`, deterministic under any thread count.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(v.len(), n);
        const CHUNK: usize = 1024;
        let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                let end = (start + CHUNK).min(n);
                let mut acc = vec![0.0; n];
                for (i, &vi) in v[start..end].iter().enumerate() {
                    if vi != 0.0 {
                        for (a, k) in acc.iter_mut().zip(self.row(start + i)) {
                            *a += vi * k;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; n];
        for part in partials {
            for (o, p) in out.iter_mut().zip(part) {
                *o += p;
            }
        }
        out
    }

    /// Text dump for debugging: grid metadata header, then one line per row
    /// holding the row entries followed by the absorbed mass.
    pub fn write_text(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# srp transition kernel")?;
        writeln!(
            out,
            "# regime = {}",
            match self.regime {
                Regime::PreChange => "pre-change",
                Regime::PostChange => "post-change",
            }
        )?;
        writeln!(
            out,
            "# lo = {} hi = {} step = {} n = {}",
            self.grid.lo,
            self.grid.hi,
            self.grid.step,
            self.n()
        )?;
        writeln!(out, "# row-major; last column is the absorbed mass")?;
        for i in 0..self.n() {
            for v in self.row(i) {
                write!(out, "{v} ")?;
            }
            writeln!(out, "{}", self.absorbed[i])?;
        }
        Ok(())
    }
}

/// Builds the transition kernel of the censored Shiryaev-Roberts recursion.
///
/// The observation model must have a monotone likelihood ratio so the
/// preimage of every statistic cell is an interval; non-monotone ratios are
/// rejected.
pub fn build_srp_kernel(
    pair: &DistributionPair,
    policy: &SendPolicy,
    threshold_a: f64,
    grid_step: f64,
    regime: Regime,
) -> Result<KernelMatrix> {
    let tables = DensityTables::build(pair)?;
    build_srp_kernel_with_tables(pair, &tables, policy, threshold_a, grid_step, regime)
}

pub(crate) fn build_srp_kernel_with_tables(
    pair: &DistributionPair,
    tables: &DensityTables,
    policy: &SendPolicy,
    threshold_a: f64,
    grid_step: f64,
    regime: Regime,
) -> Result<KernelMatrix> {
    if !(threshold_a > 0.0) {
        return Err(Error::InvalidParameter {
            name: "threshold_a",
            reason: format!("must be positive, got {threshold_a}"),
        });
    }
    let grid = Grid::with_step(0.0, threshold_a, grid_step)?;
    let n = grid.len();
    let post = regime == Regime::PostChange;

    let total = if post { tables.total1() } else { tables.total0() };
    let cdf = |x: f64| if post { tables.cdf1(x) } else { tables.cdf0(x) } / total;

    // No-send atom: probability under this regime and the destination factor
    // exp(censored log-LR of the no-send symbol).
    let (atom_prob, atom_factor) = match policy {
        SendPolicy::Interval(p) => {
            let lo = p.no_send_lo;
            let hi = p.no_send_hi;
            let mass = cdf(hi) - cdf(lo);
            if mass > 0.0 {
                (mass, policy.no_send_log_lr()?.exp())
            } else {
                (0.0, 1.0)
            }
        }
        SendPolicy::Random(p) => (1.0 - p.epsilon, 1.0),
    };

    // Cumulative send mass below x, normalized so each row carries unit mass.
    let send_cdf = |x: f64| -> f64 {
        match policy {
            SendPolicy::Interval(p) => {
                let clamped = x.clamp(p.no_send_lo, p.no_send_hi);
                cdf(x) - (cdf(clamped) - cdf(p.no_send_lo))
            }
            SendPolicy::Random(p) => p.epsilon * cdf(x),
        }
    };

    let support_hi = pair.support_hi();
    let increasing = tables.direction() == LrDirection::Increasing;
    let mut entries = vec![0.0; n * n];
    let mut absorbed = vec![0.0; n];

    entries
        .par_chunks_mut(n)
        .zip(absorbed.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, abs_mass))| {
            let m = 1.0 + grid.midpoint(i);
            // Observation-space boundaries of the statistic cells: cell j is
            // reached from ratios in [c_j/m, c_{j+1}/m).
            let boundary = |j: usize| -> f64 {
                if j == 0 {
                    if increasing {
                        return pair.support_lo();
                    }
                    return support_hi;
                }
                let c = grid.step * j as f64;
                tables.ell_inverse((c / m).ln())
            };

            let mut acc = 0.0;
            let mut prev = send_cdf(boundary(0));
            for (j, slot) in row.iter_mut().enumerate() {
                let next = send_cdf(boundary(j + 1));
                let mass = if increasing { next - prev } else { prev - next };
                *slot = mass.max(0.0);
                acc += *slot;
                prev = next;
            }
            let send_total = send_cdf(support_hi);
            let mut escaped = (send_total - acc).max(0.0);

            if atom_prob > 0.0 {
                let dest = m * atom_factor;
                match grid.cell_of(dest) {
                    Some(cell) => row[cell] += atom_prob,
                    None => escaped += atom_prob,
                }
            }
            *abs_mass = escaped;
        });

    KernelMatrix::from_parts(grid, regime, entries, absorbed)
}
