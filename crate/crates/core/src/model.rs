//! Observation models: densities, samplers, log-likelihood ratios and the
//! Kullback-Leibler divergence of the raw (uncensored) observation.

use std::cell::Cell;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{simpson, DEFAULT_PANELS};

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;
type LogLrFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which side of the change point observations are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    PreChange,
    PostChange,
}

/// Pre- and post-change observation model on a truncated real support.
///
/// Both densities must be mutually absolutely continuous on
/// `[support_lo, support_hi]` and the truncation must capture essentially all
/// mass (each total at least `1 - 1e-3`). The pair is immutable and can be
/// shared freely across threads; samplers take an explicit rng handle.
#[derive(Clone)]
pub struct DistributionPair {
    f0: DensityFn,
    f1: DensityFn,
    sampler0: SamplerFn,
    sampler1: SamplerFn,
    support_lo: f64,
    support_hi: f64,
    log_lr_exact: Option<LogLrFn>,
}

impl std::fmt::Debug for DistributionPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistributionPair")
            .field("support_lo", &self.support_lo)
            .field("support_hi", &self.support_hi)
            .field("closed_form_lr", &self.log_lr_exact.is_some())
            .finish()
    }
}

impl DistributionPair {
    /// Builds a pair from densities and samplers, checking the truncation
    /// invariants.
    pub fn new(
        f0: DensityFn,
        f1: DensityFn,
        sampler0: SamplerFn,
        sampler1: SamplerFn,
        support_lo: f64,
        support_hi: f64,
    ) -> Result<Self> {
        if !(support_hi > support_lo) {
            return Err(Error::InvalidParameter {
                name: "support",
                reason: format!("[{support_lo}, {support_hi}] is empty"),
            });
        }
        let pair = Self {
            f0,
            f1,
            sampler0,
            sampler1,
            support_lo,
            support_hi,
            log_lr_exact: None,
        };
        pair.validate_mass()?;
        Ok(pair)
    }

    /// Builds a pair from densities alone; samplers are derived by
    /// inverse-cdf lookup on a fine cumulative table.
    pub fn from_densities(f0: DensityFn, f1: DensityFn, lo: f64, hi: f64) -> Result<Self> {
        let s0 = table_sampler(&f0, lo, hi);
        let s1 = table_sampler(&f1, lo, hi);
        Self::new(f0, f1, s0, s1, lo, hi)
    }

    /// Gaussian mean-shift model: `N(mu0, sigma^2)` before the change and
    /// `N(mu1, sigma^2)` after. The support is truncated 3.5 standard
    /// deviations beyond the two means, which leaves each tail below 1e-3
    /// (the unit-shift case gives `[-3.5, 4.5]`).
    pub fn gaussian_mean_shift(mu0: f64, mu1: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("standard deviation must be positive, got {sigma}"),
            });
        }
        let lo = mu0.min(mu1) - 3.5 * sigma;
        let hi = mu0.max(mu1) + 3.5 * sigma;
        let norm0 = Normal::new(mu0, sigma).expect("validated sigma");
        let norm1 = Normal::new(mu1, sigma).expect("validated sigma");
        let inv_two_var = 1.0 / (2.0 * sigma * sigma);
        let scale = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let f0: DensityFn =
            Arc::new(move |x| scale * (-(x - mu0) * (x - mu0) * inv_two_var).exp());
        let f1: DensityFn =
            Arc::new(move |x| scale * (-(x - mu1) * (x - mu1) * inv_two_var).exp());
        let sampler0: SamplerFn = Arc::new(move |rng| norm0.sample(rng));
        let sampler1: SamplerFn = Arc::new(move |rng| norm1.sample(rng));
        // ln(f1/f0) collapses to a linear function for equal variances.
        let log_lr: LogLrFn =
            Arc::new(move |x| (mu1 - mu0) * (2.0 * x - mu0 - mu1) * inv_two_var);
        let mut pair = Self::new(f0, f1, sampler0, sampler1, lo, hi)?;
        pair.log_lr_exact = Some(log_lr);
        Ok(pair)
    }

    fn validate_mass(&self) -> Result<()> {
        let f0 = Arc::clone(&self.f0);
        let f1 = Arc::clone(&self.f1);
        let m0 = simpson(|x| f0(x), self.support_lo, self.support_hi, DEFAULT_PANELS)?;
        let m1 = simpson(|x| f1(x), self.support_lo, self.support_hi, DEFAULT_PANELS)?;
        for (name, mass) in [("f0", m0), ("f1", m1)] {
            if !(mass >= 1.0 - 1e-3) {
                return Err(Error::InvalidDistribution(format!(
                    "{name} carries only {mass:.6} mass on the support; \
                     the truncation must capture at least 1 - 1e-3"
                )));
            }
        }
        Ok(())
    }

    pub fn support_lo(&self) -> f64 {
        self.support_lo
    }

    pub fn support_hi(&self) -> f64 {
        self.support_hi
    }

    pub fn f0(&self, x: f64) -> f64 {
        (self.f0)(x)
    }

    pub fn f1(&self, x: f64) -> f64 {
        (self.f1)(x)
    }

    /// Log-likelihood ratio `ln(f1(x)/f0(x))`.
    pub fn log_lr(&self, x: f64) -> Result<f64> {
        if let Some(exact) = &self.log_lr_exact {
            return Ok(exact(x));
        }
        let p0 = self.f0(x);
        let p1 = self.f1(x);
        if p0 <= 0.0 {
            return Err(Error::AbsoluteContinuity { x, which: "pre-change" });
        }
        if p1 <= 0.0 {
            return Err(Error::AbsoluteContinuity { x, which: "post-change" });
        }
        Ok((p1 / p0).ln())
    }

    /// `D(P1 || P_inf)`: divergence of the post-change law from the
    /// pre-change law, by composite Simpson quadrature.
    ///
    /// The quadrature range is the support padded by 60% of its width on
    /// each side: the support captures all but ~1e-4 of the mass, but the
    /// divergence integrand carries enough tail weight that stopping at the
    /// support edge would miss a few parts in a thousand.
    pub fn kl_divergence(&self) -> Result<f64> {
        self.directed_kl(|x| self.f1(x), |x| self.f0(x))
    }

    /// `D(P_inf || P1)`, the reversed divergence (drives the DE-CuSum
    /// increment).
    pub fn reverse_kl_divergence(&self) -> Result<f64> {
        self.directed_kl(|x| self.f0(x), |x| self.f1(x))
    }

    fn directed_kl<P, Q>(&self, p: P, q: Q) -> Result<f64>
    where
        P: Fn(f64) -> f64,
        Q: Fn(f64) -> f64,
    {
        let bad = Cell::new(None);
        let integrand = |x: f64| {
            let px = p(x);
            if px <= 0.0 {
                return 0.0;
            }
            let qx = q(x);
            let v = px * (px / qx).ln();
            if !v.is_finite() && bad.get().is_none() {
                bad.set(Some(x));
            }
            v
        };
        let pad = 0.6 * (self.support_hi - self.support_lo);
        let d = simpson(
            integrand,
            self.support_lo - pad,
            self.support_hi + pad,
            2 * DEFAULT_PANELS,
        )?;
        if let Some(x) = bad.get() {
            return Err(Error::DivergenceInfinite { x });
        }
        Ok(d)
    }

    /// Draws one observation from the regime's density.
    pub fn sample(&self, regime: Regime, rng: &mut dyn RngCore) -> f64 {
        match regime {
            Regime::PreChange => (self.sampler0)(rng),
            Regime::PostChange => (self.sampler1)(rng),
        }
    }
}

/// Uniform draw on [0, 1) from a type-erased rng.
pub(crate) fn uniform01(rng: &mut dyn RngCore) -> f64 {
    rand::distributions::Standard.sample(rng)
}

/// Inverse-cdf sampler backed by a cumulative table of the density.
fn table_sampler(density: &DensityFn, lo: f64, hi: f64) -> SamplerFn {
    const CELLS: usize = 8192;
    let step = (hi - lo) / CELLS as f64;
    let mut cum = Vec::with_capacity(CELLS + 1);
    cum.push(0.0);
    let mut left = density(lo);
    for i in 0..CELLS {
        let xl = lo + step * i as f64;
        let mid = density(xl + 0.5 * step);
        let right = density(xl + step);
        cum.push(cum[i] + step / 6.0 * (left + 4.0 * mid + right));
        left = right;
    }
    let total = *cum.last().unwrap();
    Arc::new(move |rng| {
        let u = uniform01(rng) * total;
        let idx = cum.partition_point(|&c| c < u).max(1);
        let (c0, c1) = (cum[idx - 1], cum[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        lo + step * ((idx - 1) as f64 + frac)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

    fn unit_pair() -> DistributionPair {
        DistributionPair::gaussian_mean_shift(0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(DistributionPair::gaussian_mean_shift(0.0, 1.0, 0.0).is_err());
        assert!(DistributionPair::gaussian_mean_shift(0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn densities_cross_at_the_midpoint() {
        let pair = unit_pair();
        assert!((pair.f0(0.5) - pair.f1(0.5)).abs() < 1e-15);
    }

    #[test]
    fn unit_case_support_and_tail_mass() {
        let pair = unit_pair();
        assert_eq!(pair.support_lo(), -3.5);
        assert_eq!(pair.support_hi(), 4.5);
        // Mass escaping below -3.5 under f0 (equals the mass above 3.5 under
        // f1 by symmetry).
        let n = StatNormal::new(0.0, 1.0).unwrap();
        let tail = n.cdf(-3.5);
        assert!((tail - 2.33e-4).abs() < 1e-5, "tail {tail}");
        assert!(tail < 1e-3);
    }

    #[test]
    fn log_lr_closed_form_and_ratio_path_agree() {
        let pair = unit_pair();
        assert!(pair.log_lr(0.5).unwrap().abs() < 1e-12);
        assert!((pair.log_lr(0.0).unwrap() + 0.5).abs() < 1e-12);
        assert!((pair.log_lr(1.5).unwrap() - 1.0).abs() < 1e-12);
        for &x in &[-3.2, -1.0, 0.0, 0.5, 2.0, 4.4] {
            let direct = (pair.f1(x) / pair.f0(x)).ln();
            assert!((pair.log_lr(x).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn log_lr_is_finite_across_the_support() {
        let pair = unit_pair();
        let mut prev = pair.log_lr(-3.5).unwrap();
        for i in 1..=1000 {
            let x = -3.5 + 8.0 * i as f64 / 1000.0;
            let v = pair.log_lr(x).unwrap();
            assert!(v.is_finite());
            // Unit-shift ratio is 1-Lipschitz, so adjacent samples stay close.
            assert!((v - prev).abs() < 0.01);
            prev = v;
        }
    }

    #[test]
    fn kl_divergence_matches_closed_form() {
        // D(N(mu1,s) || N(mu0,s)) = (mu1-mu0)^2 / (2 s^2).
        for shift in [0.1, 0.5, 1.0, 2.0] {
            let pair = DistributionPair::gaussian_mean_shift(0.0, shift, 1.0).unwrap();
            let exact = shift * shift / 2.0;
            let quad = pair.kl_divergence().unwrap();
            assert!(
                ((quad - exact) / exact).abs() < 1e-6,
                "shift {shift}: quad {quad} vs exact {exact}"
            );
        }
        let pair = DistributionPair::gaussian_mean_shift(0.0, 2.0, 1.0).unwrap();
        assert!((pair.kl_divergence().unwrap() - 2.0).abs() < 2e-6);
    }

    #[test]
    fn degenerate_pair_has_zero_divergence() {
        let pair = DistributionPair::gaussian_mean_shift(0.0, 0.0, 1.0).unwrap();
        let d = pair.kl_divergence().unwrap();
        assert!(d.abs() < 1e-12, "degenerate divergence {d}");
    }

    #[test]
    fn reverse_divergence_is_symmetric_for_equal_variances() {
        let pair = unit_pair();
        assert!((pair.reverse_kl_divergence().unwrap() - 0.5).abs() < 2e-6);
    }

    #[test]
    fn sample_means_match_regimes() {
        let pair = unit_pair();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean0: f64 =
            (0..n).map(|_| pair.sample(Regime::PreChange, &mut rng)).sum::<f64>() / n as f64;
        let mean1: f64 =
            (0..n).map(|_| pair.sample(Regime::PostChange, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean0.abs() < 0.02, "pre-change mean {mean0}");
        assert!((mean1 - 1.0).abs() < 0.02, "post-change mean {mean1}");
    }

    #[test]
    fn sampling_is_deterministic_under_a_fixed_seed() {
        let pair = unit_pair();
        let draw = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..32).map(|_| pair.sample(Regime::PreChange, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn table_sampler_reproduces_the_density() {
        let scale = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let f: DensityFn = Arc::new(move |x: f64| scale * (-0.5 * x * x).exp());
        let pair =
            DistributionPair::from_densities(Arc::clone(&f), f, -3.5, 3.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| pair.sample(Regime::PreChange, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "table-sampler mean {mean}");
    }

    #[test]
    fn vanishing_density_raises_absolute_continuity_error() {
        let scale = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let f0: DensityFn = Arc::new(move |x: f64| scale * (-0.5 * x * x).exp());
        let f1: DensityFn = Arc::new(move |x: f64| {
            if x > 3.4 {
                0.0
            } else {
                scale * (-0.5 * x * x).exp()
            }
        });
        let pair = DistributionPair::from_densities(f0, f1, -3.5, 3.5).unwrap();
        match pair.log_lr(3.45) {
            Err(Error::AbsoluteContinuity { which, .. }) => assert_eq!(which, "post-change"),
            other => panic!("expected absolute-continuity error, got {other:?}"),
        }
    }

    #[test]
    fn infinite_divergence_is_reported() {
        let scale = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let f0: DensityFn = Arc::new(move |x: f64| {
            if x > 3.4 {
                0.0
            } else {
                scale * (-0.5 * x * x).exp()
            }
        });
        let f1: DensityFn = Arc::new(move |x: f64| scale * (-0.5 * x * x).exp());
        let pair = DistributionPair::from_densities(f0, f1, -3.5, 3.5).unwrap();
        match pair.kl_divergence() {
            Err(Error::DivergenceInfinite { x }) => assert!(x > 3.4),
            other => panic!("expected infinite-divergence error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_that_loses_mass_is_rejected() {
        let scale = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let f: DensityFn = Arc::new(move |x: f64| scale * (-0.5 * x * x).exp());
        let r = DistributionPair::from_densities(Arc::clone(&f), f, -1.0, 1.0);
        assert!(matches!(r, Err(Error::InvalidDistribution(_))));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quadrature_divergence_tracks_the_closed_form(
                mu0 in -2.0f64..2.0,
                shift in 0.05f64..2.5,
                sigma in 0.5f64..2.0,
            ) {
                let pair =
                    DistributionPair::gaussian_mean_shift(mu0, mu0 + shift, sigma).unwrap();
                let exact = shift * shift / (2.0 * sigma * sigma);
                let quad = pair.kl_divergence().unwrap();
                prop_assert!(
                    ((quad - exact) / exact).abs() < 1e-6,
                    "quad {} vs exact {}",
                    quad,
                    exact
                );
            }

            #[test]
            fn log_lr_is_finite_on_the_support(
                shift in 0.0f64..2.0,
                t in 0.0f64..1.0,
            ) {
                let pair = DistributionPair::gaussian_mean_shift(0.0, shift, 1.0).unwrap();
                let x = pair.support_lo() + t * (pair.support_hi() - pair.support_lo());
                prop_assert!(pair.log_lr(x).unwrap().is_finite());
            }

            #[test]
            fn divergence_is_non_negative(shift in 0.0f64..2.0) {
                let pair = DistributionPair::gaussian_mean_shift(0.0, shift, 1.0).unwrap();
                prop_assert!(pair.kl_divergence().unwrap() >= -1e-12);
            }
        }
    }
}
