//! Quadrature, discretization grids and the integral-equation machinery for
//! evaluating Shiryaev-Roberts-Pollak run lengths without Monte Carlo.

mod kernel;
mod solve;
mod tables;

pub use kernel::{build_srp_kernel, KernelMatrix};
pub use solve::{
    calibrate_srp_threshold, quasi_stationary, quasi_stationary_full, solve_add, solve_arl,
    srp_performance, QuasiStationary, SrpSolution,
};
pub use tables::DensityTables;

use crate::error::{Error, Result};

/// Composite Simpson estimate of `∫_lo^hi f`.
///
/// `panels` must be even and at least 2; the error is O(step^4) for smooth
/// integrands.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize) -> Result<f64> {
    if panels < 2 || !panels.is_multiple_of(2) {
        return Err(Error::InvalidParameter {
            name: "panels",
            reason: format!("must be even and >= 2, got {panels}"),
        });
    }
    if !(hi > lo) {
        // Zero-width (or inverted) intervals integrate to zero by convention.
        if hi == lo {
            return Ok(0.0);
        }
        return Err(Error::InvalidParameter {
            name: "hi",
            reason: format!("integration range [{lo}, {hi}] is inverted"),
        });
    }
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..panels {
        let x = lo + h * i as f64;
        acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    Ok(acc * h / 3.0)
}

/// Default panel count used by the divergence and region-mass quadratures.
pub const DEFAULT_PANELS: usize = 10_000;

/// A uniform discretization of `[lo, hi]` into `count` cells.
///
/// `points[j] = lo + j * step` anchors cell `[points[j], points[j] + step)`,
/// so the first point sits exactly at `lo`; transition kernels collocate
/// from the cell midpoints (`midpoint(j)`), which keeps the discretization
/// error second order in the step.
#[derive(Debug, Clone)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub points: Vec<f64>,
}

impl Grid {
    /// Builds a grid over `[lo, hi]` with spacing as close as possible to
    /// `requested_step` while keeping `hi` an exact cell boundary.
    pub fn with_step(lo: f64, hi: f64, requested_step: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidParameter {
                name: "hi",
                reason: format!("grid range [{lo}, {hi}] is empty"),
            });
        }
        if !(requested_step > 0.0) {
            return Err(Error::InvalidParameter {
                name: "step",
                reason: format!("grid step must be positive, got {requested_step}"),
            });
        }
        let count = (((hi - lo) / requested_step).round() as usize).max(1);
        let step = (hi - lo) / count as f64;
        let points = (0..count).map(|j| lo + step * j as f64).collect();
        Ok(Self { lo, hi, step, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Representative (collocation) value of cell `j`.
    pub fn midpoint(&self, j: usize) -> f64 {
        self.points[j] + 0.5 * self.step
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.midpoint(j)).collect()
    }

    /// Cell masses as a distribution supported on the cell midpoints.
    pub fn distribution(&self, pmf: Vec<f64>) -> Result<DiscreteDistribution> {
        DiscreteDistribution::new(self.midpoints(), pmf)
    }

    /// Index of the cell containing `x`, or `None` when `x >= hi` (absorbed)
    /// Values below `lo` clamp into the first cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x >= self.hi {
            return None;
        }
        let idx = ((x - self.lo) / self.step).floor();
        Some((idx.max(0.0) as usize).min(self.len() - 1))
    }
}

/// A probability mass function over a set of real support points.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution {
    pub points: Vec<f64>,
    pub pmf: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Vec<f64>, pmf: Vec<f64>) -> Result<Self> {
        if points.len() != pmf.len() || points.is_empty() {
            return Err(Error::InvalidDistribution(format!(
                "support ({}) and pmf ({}) sizes must match and be non-empty",
                points.len(),
                pmf.len()
            )));
        }
        if pmf.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDistribution(
                "pmf entries must be finite and non-negative".into(),
            ));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!(
                "pmf sums to {total}, expected 1 within 1e-6"
            )));
        }
        Ok(Self { points, pmf })
    }

    /// Inverse-cdf draw on the support points.
    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
        let u: f64 = rand::Rng::gen(rng);
        let mut acc = 0.0;
        for (x, p) in self.points.iter().zip(&self.pmf) {
            acc += p;
            if u <= acc {
                return *x;
            }
        }
        *self.points.last().expect("non-empty support")
    }

    /// Debug dump: `point mass` per line under a size header.
    pub fn write_text(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# discrete distribution, {} support points", self.points.len())?;
        for (x, p) in self.points.iter().zip(&self.pmf) {
            writeln!(out, "{x} {p}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};

    #[test]
    fn simpson_exact_for_cubic() {
        let v = simpson(|x| x * x * x, 0.0, 1.0, 2).unwrap();
        assert!((v - 0.25).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn simpson_constant_one() {
        let v = simpson(|_| 1.0, 0.0, 1.0, 10).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simpson_normal_mass_matches_erf_oracle() {
        let n = Normal::new(0.0, 1.0).unwrap();
        let v = simpson(|x| n.pdf(x), -3.5, 3.5, 10_000).unwrap();
        let oracle = n.cdf(3.5) - n.cdf(-3.5);
        assert!((v - oracle).abs() < 1e-6, "simpson {v} vs oracle {oracle}");
        assert!((v - 0.99953).abs() < 5e-6, "mass {v}");
    }

    #[test]
    fn simpson_rejects_odd_panel_count() {
        assert!(simpson(|x| x, 0.0, 1.0, 3).is_err());
        assert!(simpson(|x| x, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn grid_spacing_is_uniform_and_hits_bounds() {
        let g = Grid::with_step(0.0, 100.0, 0.3).unwrap();
        assert_eq!(g.len(), 333);
        assert!((g.step - 100.0 / 333.0).abs() < 1e-12);
        assert_eq!(g.points[0], 0.0);
        let last = *g.points.last().unwrap();
        assert!((last + g.step - 100.0).abs() < 1e-9);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(Grid::with_step(1.0, 1.0, 0.1).is_err());
        assert!(Grid::with_step(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_cell_lookup() {
        let g = Grid::with_step(0.0, 10.0, 0.1).unwrap();
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(0.95), Some(9));
        assert_eq!(g.cell_of(9.999), Some(99));
        assert_eq!(g.cell_of(10.0), None);
        assert_eq!(g.cell_of(-0.5), Some(0));
    }

    #[test]
    fn discrete_distribution_validates_normalization() {
        assert!(DiscreteDistribution::new(vec![0.0, 1.0], vec![0.6, 0.6]).is_err());
        assert!(DiscreteDistribution::new(vec![0.0], vec![f64::NAN]).is_err());
        assert!(DiscreteDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_ok());
    }
}
