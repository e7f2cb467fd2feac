//! Stopping-rule statistics driven by censored observations.
//!
//! CuSum and the Shiryaev-Roberts recursion are kept in the ratio domain;
//! both states carry an auxiliary log offset so that runs against very large
//! thresholds cannot overflow. The data-efficient CuSum baseline lives in the
//! log domain and skips observations while its statistic is negative.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{DistributionPair, Regime};
use crate::numerics::DiscreteDistribution;

/// Ratio-domain statistics fold excess growth into a log offset past this
/// magnitude.
const OVERFLOW_GUARD: f64 = 1e300;

fn check_ratio(clr: f64) -> Result<()> {
    if !(clr >= 0.0) || !clr.is_finite() {
        return Err(Error::InvalidInput(format!(
            "likelihood ratio must be finite and non-negative, got {clr}"
        )));
    }
    Ok(())
}

fn check_threshold(threshold_a: f64) -> Result<()> {
    if !(threshold_a > 0.0) || !threshold_a.is_finite() {
        return Err(Error::InvalidParameter {
            name: "threshold_a",
            reason: format!("must be positive and finite, got {threshold_a}"),
        });
    }
    Ok(())
}

/// Forms `base * clr * exp(log_scale)` as a (stored value, log offset) pair,
/// moving to the log domain before the product can overflow.
fn scaled_product(base: f64, clr: f64, log_scale: f64) -> (f64, f64) {
    if base <= 0.0 || clr == 0.0 {
        return (0.0, 0.0);
    }
    let product = base * clr;
    if log_scale == 0.0 && product < OVERFLOW_GUARD {
        return (product, 0.0);
    }
    let ln = base.ln() + clr.ln() + log_scale;
    if ln < OVERFLOW_GUARD.ln() {
        (ln.exp(), 0.0)
    } else {
        (1.0, ln)
    }
}

/// CuSum statistic `S_k = max(S_{k-1}, 1) * L_k`, alarm at `S_k >= A`.
#[derive(Debug, Clone, Copy)]
pub struct CusumState {
    s: f64,
    log_scale: f64,
    pub threshold_a: f64,
}

impl CusumState {
    pub fn new(threshold_a: f64) -> Result<Self> {
        check_threshold(threshold_a)?;
        Ok(Self { s: 0.0, log_scale: 0.0, threshold_a })
    }

    /// Advances the recursion by one censored likelihood ratio (not a log).
    pub fn step(&self, clr: f64) -> Result<Self> {
        check_ratio(clr)?;
        let base = if self.log_scale == 0.0 { self.s.max(1.0) } else { self.s };
        let (s, log_scale) = scaled_product(base, clr, self.log_scale);
        Ok(Self { s, log_scale, ..*self })
    }

    /// Current statistic in the ratio domain (may saturate to infinity for
    /// display purposes when the offset is active).
    pub fn value(&self) -> f64 {
        if self.log_scale == 0.0 {
            self.s
        } else {
            (self.s.ln() + self.log_scale).exp()
        }
    }

    /// Current statistic in the log domain; the empty statistic maps to
    /// negative infinity.
    pub fn log_value(&self) -> f64 {
        if self.s <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.s.ln() + self.log_scale
        }
    }

    pub fn crossed(&self) -> bool {
        if self.log_scale == 0.0 {
            self.s >= self.threshold_a
        } else {
            self.log_value() >= self.threshold_a.ln()
        }
    }
}

/// Shiryaev-Roberts recursion `R_k = (1 + R_{k-1}) * L_k` with a random
/// initial point, alarm at `R_k >= A`.
#[derive(Debug, Clone, Copy)]
pub struct SrpState {
    r: f64,
    log_scale: f64,
    pub threshold_a: f64,
}

impl SrpState {
    pub fn new(r0: f64, threshold_a: f64) -> Result<Self> {
        check_threshold(threshold_a)?;
        if !(r0 >= 0.0) || !r0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "initial statistic must be finite and non-negative, got {r0}"
            )));
        }
        Ok(Self { r: r0, log_scale: 0.0, threshold_a })
    }

    pub fn step(&self, clr: f64) -> Result<Self> {
        check_ratio(clr)?;
        // With the offset active the statistic is astronomically large and
        // the +1 is far below representable relative error.
        let base = if self.log_scale == 0.0 { 1.0 + self.r } else { self.r };
        let (r, log_scale) = scaled_product(base, clr, self.log_scale);
        Ok(Self { r, log_scale, ..*self })
    }

    pub fn value(&self) -> f64 {
        if self.log_scale == 0.0 {
            self.r
        } else {
            (self.r.ln() + self.log_scale).exp()
        }
    }

    pub fn crossed(&self) -> bool {
        if self.log_scale == 0.0 {
            self.r >= self.threshold_a
        } else {
            self.r.ln() + self.log_scale >= self.threshold_a.ln()
        }
    }
}

/// Draws the Shiryaev-Roberts starting point from a discretized
/// quasi-stationary distribution by inverse-cdf sampling.
pub fn srp_init(
    qsd: &DiscreteDistribution,
    threshold_a: f64,
    rng: &mut dyn RngCore,
) -> Result<SrpState> {
    SrpState::new(qsd.sample(rng), threshold_a)
}

/// Data-efficient CuSum baseline: log-domain statistic that skips
/// observations while negative, climbing back deterministically by `mu_inc`
/// per skipped step (no lower truncation).
#[derive(Debug, Clone, Copy)]
pub struct DeCusumState {
    pub w: f64,
    pub mu_inc: f64,
    pub threshold_a: f64,
}

impl DeCusumState {
    pub fn new(mu_inc: f64, threshold_a: f64) -> Result<Self> {
        check_threshold(threshold_a)?;
        if !(mu_inc > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mu_inc",
                reason: format!("deterministic increment must be positive, got {mu_inc}"),
            });
        }
        Ok(Self { w: 0.0, mu_inc, threshold_a })
    }

    /// `w >= 0` means the sensor is observing; ties at zero count as
    /// observation mode.
    pub fn taking_observations(&self) -> bool {
        self.w >= 0.0
    }

    /// One time step. In skip mode no observation is drawn and the statistic
    /// climbs by `mu_inc`, capped at zero so observation mode resumes exactly
    /// at the origin. In observation mode the statistic adds the raw
    /// log-likelihood ratio and a negative excursion starts a fresh skip
    /// phase from its full depth.
    pub fn step(
        &self,
        pair: &DistributionPair,
        regime: Regime,
        rng: &mut dyn RngCore,
    ) -> Result<(Self, bool)> {
        if self.w < 0.0 {
            let w = (self.w + self.mu_inc).min(0.0);
            return Ok((Self { w, ..*self }, false));
        }
        let x = pair.sample(regime, rng);
        let w = self.w + pair.log_lr(x)?;
        Ok((Self { w, ..*self }, true))
    }

    pub fn crossed(&self) -> bool {
        self.w >= self.threshold_a.ln()
    }
}

/// Deterministic increment `mu ~= eps/(1-eps) * D(f0 || f1)` that makes the
/// skip/observe duty cycle meet the pre-change energy budget.
pub fn de_cusum_mu(pair: &DistributionPair, epsilon: f64) -> Result<f64> {
    if epsilon >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "a full budget needs no skip phase (division by zero at epsilon = 1)".into(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("energy budget must lie in (0, 1), got {epsilon}"),
        });
    }
    Ok(epsilon / (1.0 - epsilon) * pair.reverse_kl_divergence()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::censoring::{optimize_policy, CensoredObservation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_pair() -> DistributionPair {
        DistributionPair::gaussian_mean_shift(0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cusum_recursion_values() {
        let s0 = CusumState::new(100.0).unwrap();
        let s1 = s0.step(2.0).unwrap();
        assert_eq!(s1.value(), 2.0);
        let s2 = CusumState { s: 3.0, ..s0 }.step(0.5).unwrap();
        assert_eq!(s2.value(), 1.5);
    }

    #[test]
    fn cusum_rejects_negative_ratio() {
        let s = CusumState::new(10.0).unwrap();
        assert!(s.step(-0.1).is_err());
        assert!(s.step(f64::NAN).is_err());
        assert!(CusumState::new(0.0).is_err());
    }

    #[test]
    fn cusum_with_full_send_equals_the_classical_path() {
        let pair = unit_pair();
        let policy = crate::censoring::CensoringPolicy::full_send(&pair);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let xs: Vec<f64> =
            (0..1000).map(|_| pair.sample(Regime::PostChange, &mut rng)).collect();

        let mut censored = CusumState::new(1e12).unwrap();
        let mut classical = 0.0f64;
        for &x in &xs {
            let obs = policy.apply(x);
            let llr = policy.censored_log_lr(&pair, obs).unwrap();
            censored = censored.step(llr.exp()).unwrap();
            classical = classical.max(1.0) * pair.log_lr(x).unwrap().exp();
            assert!(
                (censored.value() - classical).abs() <= 1e-12 * classical.abs().max(1.0),
                "paths diverged: {} vs {classical}",
                censored.value()
            );
        }
    }

    #[test]
    fn cusum_log_value_never_drops_below_the_increment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pair = unit_pair();
        let mut state = CusumState::new(1e9).unwrap();
        for _ in 0..2000 {
            let x = pair.sample(Regime::PreChange, &mut rng);
            let llr = pair.log_lr(x).unwrap();
            state = state.step(llr.exp()).unwrap();
            assert!(state.log_value() >= llr.min(0.0) - 1e-12);
            assert!(state.value() >= 0.0);
        }
    }

    #[test]
    fn consecutive_no_send_steps_multiply_by_the_region_ratio() {
        let pair = unit_pair();
        let policy = optimize_policy(&pair, 0.2, 0.001).unwrap();
        let ratio = policy.no_send_log_lr().unwrap().exp();

        let mut state = CusumState::new(1e12).unwrap().step(5.0).unwrap();
        let mut expected = 5.0f64;
        for _ in 0..20 {
            let llr = policy
                .censored_log_lr(&pair, CensoredObservation::NoSend)
                .unwrap();
            state = state.step(llr.exp()).unwrap();
            expected = expected.max(1.0) * ratio;
            assert!((state.value() - expected).abs() < 1e-9 * expected);
        }
    }

    #[test]
    fn cusum_survives_astronomical_growth() {
        let mut state = CusumState::new(1e12).unwrap();
        for _ in 0..5 {
            state = state.step(1e200).unwrap();
        }
        // True statistic is 1e1000; the log value must stay finite and the
        // threshold must read as crossed.
        assert!((state.log_value() - 1000.0 * std::f64::consts::LN_10).abs() < 1e-6);
        assert!(state.crossed());
    }

    #[test]
    fn srp_recursion_values() {
        let r0 = SrpState::new(0.0, 100.0).unwrap();
        assert_eq!(r0.step(1.0).unwrap().value(), 1.0);
        let r4 = SrpState::new(4.0, 100.0).unwrap();
        assert_eq!(r4.step(0.2).unwrap().value(), 1.0);
    }

    #[test]
    fn srp_grows_linearly_under_unit_ratios() {
        let mut state = SrpState::new(0.0, 1e6).unwrap();
        for k in 1..=50 {
            state = state.step(1.0).unwrap();
            assert_eq!(state.value(), k as f64);
        }
    }

    #[test]
    fn srp_init_point_mass_and_determinism() {
        let point = DiscreteDistribution::new(vec![0.0], vec![1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = srp_init(&point, 10.0, &mut rng).unwrap();
        assert_eq!(state.value(), 0.0);

        let qsd =
            DiscreteDistribution::new(vec![0.0, 1.0, 2.5], vec![0.2, 0.3, 0.5]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..16)
                .map(|_| srp_init(&qsd, 10.0, &mut rng).unwrap().value())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn srp_init_empirical_cdf_matches_the_target() {
        let points = vec![0.0, 0.5, 1.0, 2.0, 3.5];
        let pmf = vec![0.1, 0.2, 0.3, 0.25, 0.15];
        let qsd = DiscreteDistribution::new(points.clone(), pmf.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let mut counts = vec![0usize; points.len()];
        for _ in 0..n {
            let v = srp_init(&qsd, 10.0, &mut rng).unwrap().value();
            let idx = points.iter().position(|&p| p == v).expect("support point");
            counts[idx] += 1;
        }
        // Kolmogorov distance between the empirical and target cdfs; the
        // Dvoretzky-Kiefer-Wolfowitz bound at n = 1e5 is far below 0.01.
        let mut cdf_emp = 0.0;
        let mut cdf_true = 0.0;
        for i in 0..points.len() {
            cdf_emp += counts[i] as f64 / n as f64;
            cdf_true += pmf[i];
            assert!(
                (cdf_emp - cdf_true).abs() < 0.01,
                "cdf gap at {}: {cdf_emp} vs {cdf_true}",
                points[i]
            );
        }
    }

    #[test]
    fn de_cusum_skip_phase_increments_without_observing() {
        let pair = unit_pair();
        let state = DeCusumState { w: -0.1, mu_inc: 0.056, threshold_a: 98.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (next, sent) = state.step(&pair, Regime::PreChange, &mut rng).unwrap();
        assert!(!sent);
        assert!((next.w + 0.044).abs() < 1e-12, "w = {}", next.w);
    }

    #[test]
    fn de_cusum_caps_the_climb_at_zero() {
        let pair = unit_pair();
        let state = DeCusumState { w: -0.03, mu_inc: 0.056, threshold_a: 98.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (next, sent) = state.step(&pair, Regime::PreChange, &mut rng).unwrap();
        assert!(!sent);
        assert_eq!(next.w, 0.0);
        assert!(next.taking_observations());
    }

    #[test]
    fn de_cusum_observes_at_zero() {
        let pair = unit_pair();
        let state = DeCusumState { w: 0.0, mu_inc: 0.056, threshold_a: 98.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (next, sent) = state.step(&pair, Regime::PostChange, &mut rng).unwrap();
        assert!(sent);
        assert!(next.w != 0.0);
    }

    #[test]
    fn de_cusum_duty_cycle_meets_the_budget() {
        let pair = unit_pair();
        let mu = de_cusum_mu(&pair, 0.1).unwrap();
        let mut state = DeCusumState::new(mu, 1e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 100_000;
        let mut sent_count = 0usize;
        for _ in 0..n {
            let (next, sent) = state.step(&pair, Regime::PreChange, &mut rng).unwrap();
            state = next;
            if sent {
                sent_count += 1;
            }
        }
        let rate = sent_count as f64 / n as f64;
        assert!((rate - 0.1).abs() < 0.02, "pre-change duty cycle {rate}");
    }

    #[test]
    fn de_cusum_increment_values() {
        let pair = unit_pair();
        let mu = de_cusum_mu(&pair, 0.1).unwrap();
        assert!((mu - 0.0556).abs() < 6e-4, "mu {mu}");
        let mu_half = de_cusum_mu(&pair, 0.5).unwrap();
        assert!((mu_half - 0.5).abs() < 1e-5, "mu at half budget {mu_half}");
        let degenerate = DistributionPair::gaussian_mean_shift(0.0, 0.0, 1.0).unwrap();
        assert!(de_cusum_mu(&degenerate, 0.3).unwrap().abs() < 1e-9);
        assert!(de_cusum_mu(&pair, 1.0).is_err());
        assert!(de_cusum_mu(&pair, 0.0).is_err());
    }

    #[test]
    fn crossing_is_inclusive_at_the_threshold() {
        let a = 37.5;
        let at = CusumState { s: a, log_scale: 0.0, threshold_a: a };
        assert!(at.crossed());
        let below = CusumState { s: a - 1e-9, log_scale: 0.0, threshold_a: a };
        assert!(!below.crossed());
        let srp = SrpState::new(0.0, a).unwrap();
        assert!(!srp.crossed());
        let de = DeCusumState { w: a.ln(), mu_inc: 0.1, threshold_a: a };
        assert!(de.crossed());
    }
}
