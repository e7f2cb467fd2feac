//! Censoring policies and the search for the energy-feasible no-send region
//! with maximal post-censoring divergence.
//!
//! A censoring policy withholds observations inside a no-send region; the
//! non-transmission itself is a symbol whose likelihood ratio is the ratio of
//! the region masses under the two regimes. The optimizer exploits the two
//! structural facts that make the search one-dimensional: the optimal region
//! uses up the energy budget exactly, and it is a single interval in
//! likelihood ratio (an observation interval whenever the ratio is monotone).

use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{uniform01, DistributionPair};
use crate::numerics::{simpson, DensityTables, DEFAULT_PANELS};

/// Slack applied to the energy-feasibility inequality and the equality
/// constraint of the optimizer.
pub const ENERGY_TOLERANCE: f64 = 1e-6;

/// What the decision maker receives at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensoredObservation {
    Sent(f64),
    NoSend,
}

/// Deterministic interval policy: observations inside the closed interval
/// `[no_send_lo, no_send_hi]` are withheld.
///
/// Region probabilities under both regimes are cached at construction with
/// the same quadrature the rest of the crate uses. Under a continuous
/// observation model the closed-interval boundary convention is
/// observationally null.
#[derive(Debug, Clone)]
pub struct CensoringPolicy {
    pub no_send_lo: f64,
    pub no_send_hi: f64,
    pub epsilon: f64,
    pub p0_region: f64,
    pub p1_region: f64,
}

impl CensoringPolicy {
    pub fn new(pair: &DistributionPair, lo: f64, hi: f64, epsilon: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidParameter {
                name: "no_send_region",
                reason: format!("[{lo}, {hi}] is inverted"),
            });
        }
        validate_epsilon(epsilon)?;
        let p0_region = region_mass(pair, lo, hi, |x| pair.f0(x))?;
        let p1_region = region_mass(pair, lo, hi, |x| pair.f1(x))?;
        if 1.0 - p0_region > epsilon + ENERGY_TOLERANCE {
            return Err(Error::InvalidParameter {
                name: "no_send_region",
                reason: format!(
                    "send probability {:.6} exceeds the energy budget {epsilon}",
                    1.0 - p0_region
                ),
            });
        }
        Ok(Self { no_send_lo: lo, no_send_hi: hi, epsilon, p0_region, p1_region })
    }

    /// The full-send policy: an empty no-send region placed at the lower
    /// support edge.
    pub fn full_send(pair: &DistributionPair) -> Self {
        Self {
            no_send_lo: pair.support_lo(),
            no_send_hi: pair.support_lo(),
            epsilon: 1.0,
            p0_region: 0.0,
            p1_region: 0.0,
        }
    }

    /// NoSend exactly when `no_send_lo <= x <= no_send_hi`.
    pub fn apply(&self, x: f64) -> CensoredObservation {
        if x >= self.no_send_lo && x <= self.no_send_hi {
            CensoredObservation::NoSend
        } else {
            CensoredObservation::Sent(x)
        }
    }

    /// Censored log-likelihood ratio of one received symbol.
    pub fn censored_log_lr(
        &self,
        pair: &DistributionPair,
        obs: CensoredObservation,
    ) -> Result<f64> {
        match obs {
            CensoredObservation::Sent(x) => pair.log_lr(x),
            CensoredObservation::NoSend => self.no_send_log_lr(),
        }
    }

    /// Log-likelihood ratio of the no-send symbol, `ln(p1/p0)`.
    pub fn no_send_log_lr(&self) -> Result<f64> {
        if self.p0_region <= 0.0 {
            return Err(Error::DegeneratePolicy);
        }
        Ok((self.p1_region / self.p0_region).ln())
    }

    /// Post-censoring divergence of the received stream:
    /// `∫_send ln(f1/f0) f1 + p1 ln(p1/p0)`.
    pub fn post_censoring_kl(&self, pair: &DistributionPair) -> Result<f64> {
        let full = pair.kl_divergence()?;
        let region = region_mass(pair, self.no_send_lo, self.no_send_hi, |x| {
            let p1 = pair.f1(x);
            if p1 <= 0.0 {
                0.0
            } else {
                p1 * (p1 / pair.f0(x)).ln()
            }
        })?;
        let atom = if self.p1_region > 0.0 && self.p0_region > 0.0 {
            self.p1_region * (self.p1_region / self.p0_region).ln()
        } else {
            0.0
        };
        Ok(full - region + atom)
    }
}

fn region_mass<F: Fn(f64) -> f64>(
    pair: &DistributionPair,
    lo: f64,
    hi: f64,
    f: F,
) -> Result<f64> {
    let lo = lo.max(pair.support_lo());
    let hi = hi.min(pair.support_hi());
    if hi <= lo {
        return Ok(0.0);
    }
    simpson(f, lo, hi, DEFAULT_PANELS)
}

fn validate_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("energy budget must lie in (0, 1], got {epsilon}"),
        });
    }
    Ok(())
}

/// Transmit each observation independently with probability epsilon; the
/// no-send event is observation-independent and carries no information.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub epsilon: f64,
}

pub fn random_policy(epsilon: f64) -> Result<RandomPolicy> {
    validate_epsilon(epsilon)?;
    Ok(RandomPolicy { epsilon })
}

impl RandomPolicy {
    pub fn apply(&self, x: f64, rng: &mut dyn RngCore) -> CensoredObservation {
        if uniform01(rng) <= self.epsilon {
            CensoredObservation::Sent(x)
        } else {
            CensoredObservation::NoSend
        }
    }

    pub fn censored_log_lr(
        &self,
        pair: &DistributionPair,
        obs: CensoredObservation,
    ) -> Result<f64> {
        match obs {
            CensoredObservation::Sent(x) => pair.log_lr(x),
            CensoredObservation::NoSend => Ok(0.0),
        }
    }
}

/// Either transmission policy, as consumed by the detectors and the kernel
/// builder.
#[derive(Debug, Clone)]
pub enum SendPolicy {
    Interval(CensoringPolicy),
    Random(RandomPolicy),
}

impl SendPolicy {
    pub fn epsilon(&self) -> f64 {
        match self {
            SendPolicy::Interval(p) => p.epsilon,
            SendPolicy::Random(p) => p.epsilon,
        }
    }

    pub fn apply(&self, x: f64, rng: &mut dyn RngCore) -> CensoredObservation {
        match self {
            SendPolicy::Interval(p) => p.apply(x),
            SendPolicy::Random(p) => p.apply(x, rng),
        }
    }

    pub fn censored_log_lr(
        &self,
        pair: &DistributionPair,
        obs: CensoredObservation,
    ) -> Result<f64> {
        match self {
            SendPolicy::Interval(p) => p.censored_log_lr(pair, obs),
            SendPolicy::Random(p) => p.censored_log_lr(pair, obs),
        }
    }

    /// Probability of the no-send event under the given regime densities.
    pub fn no_send_prob(&self, post_change: bool) -> f64 {
        match self {
            SendPolicy::Interval(p) => {
                if post_change {
                    p.p1_region
                } else {
                    p.p0_region
                }
            }
            SendPolicy::Random(p) => 1.0 - p.epsilon,
        }
    }

    pub fn no_send_log_lr(&self) -> Result<f64> {
        match self {
            SendPolicy::Interval(p) => p.no_send_log_lr(),
            SendPolicy::Random(_) => Ok(0.0),
        }
    }

    pub fn post_censoring_kl(&self, pair: &DistributionPair) -> Result<f64> {
        match self {
            SendPolicy::Interval(p) => p.post_censoring_kl(pair),
            SendPolicy::Random(p) => Ok(p.epsilon * pair.kl_divergence()?),
        }
    }

    /// Plain-text key-value record for experiment logs.
    pub fn to_record(&self) -> String {
        match self {
            SendPolicy::Interval(p) => format!(
                "kind = censoring\na = {}\nb = {}\nepsilon = {}\np0_region = {}\np1_region = {}\n",
                p.no_send_lo, p.no_send_hi, p.epsilon, p.p0_region, p.p1_region
            ),
            SendPolicy::Random(p) => format!(
                "kind = random\nepsilon = {}\np0_region = {}\np1_region = {}\n",
                p.epsilon,
                1.0 - p.epsilon,
                1.0 - p.epsilon
            ),
        }
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedRecord(format!("missing `=` in `{line}`")))?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |key: &str| -> Result<f64> {
            fields
                .get(key)
                .ok_or_else(|| Error::MalformedRecord(format!("missing key `{key}`")))?
                .parse::<f64>()
                .map_err(|e| Error::MalformedRecord(format!("bad value for `{key}`: {e}")))
        };
        match fields.get("kind").map(String::as_str) {
            Some("censoring") => Ok(SendPolicy::Interval(CensoringPolicy {
                no_send_lo: get("a")?,
                no_send_hi: get("b")?,
                epsilon: get("epsilon")?,
                p0_region: get("p0_region")?,
                p1_region: get("p1_region")?,
            })),
            Some("random") => Ok(SendPolicy::Random(random_policy(get("epsilon")?)?)),
            Some(other) => Err(Error::MalformedRecord(format!("unknown kind `{other}`"))),
            None => Err(Error::MalformedRecord("missing key `kind`".into())),
        }
    }
}

/// Right endpoint `b` with `∫_a^b f0 = 1 - epsilon`, found by bisection on
/// the cumulative mass. The result satisfies the constraint to 1e-6.
pub fn solve_companion_bound(pair: &DistributionPair, a: f64, epsilon: f64) -> Result<f64> {
    validate_epsilon(epsilon)?;
    let required = 1.0 - epsilon;
    if required <= 0.0 {
        return Ok(a);
    }
    let hi = pair.support_hi();
    let available = region_mass(pair, a, hi, |x| pair.f0(x))?;
    if available < required - ENERGY_TOLERANCE {
        return Err(Error::NoSolution { a, required });
    }
    let mass_to = |b: f64| region_mass(pair, a, b, |x| pair.f0(x));
    let (mut lo_b, mut hi_b) = (a, hi);
    for _ in 0..100 {
        let mid = 0.5 * (lo_b + hi_b);
        if mass_to(mid)? < required {
            lo_b = mid;
        } else {
            hi_b = mid;
        }
        if hi_b - lo_b < 1e-13 * (hi - a).max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo_b + hi_b))
}

/// Sweeps the left endpoint of the no-send interval over the discretized
/// support, pairs each feasible endpoint with its companion bound, and
/// returns the interval with maximal post-censoring divergence.
pub fn optimize_policy(
    pair: &DistributionPair,
    epsilon: f64,
    grid_step: f64,
) -> Result<CensoringPolicy> {
    validate_epsilon(epsilon)?;
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "grid_step",
            reason: format!("must be positive, got {grid_step}"),
        });
    }
    if epsilon >= 1.0 {
        return Ok(CensoringPolicy::full_send(pair));
    }

    let tables = DensityTables::build(pair)?;
    let required = 1.0 - epsilon;
    let full_kl = tables.cum_llr_f1(tables.support_hi());

    let mut best: Option<(f64, f64, f64)> = None; // (kl, a, b)
    let mut a = pair.support_lo();
    while a <= pair.support_hi() {
        let Some(b) = tables.inverse_cdf0_from(a, required) else {
            // The left endpoints are swept in increasing order, so once the
            // remaining mass runs short every later endpoint is infeasible.
            break;
        };
        let p1 = tables.cdf1(b) - tables.cdf1(a);
        let region = tables.cum_llr_f1(b) - tables.cum_llr_f1(a);
        let atom = if p1 > 0.0 { p1 * (p1 / required).ln() } else { 0.0 };
        let kl = full_kl - region + atom;
        if best.is_none_or(|(k, _, _)| kl > k) {
            best = Some((kl, a, b));
        }
        a += grid_step;
    }

    let Some((_, a, _)) = best else {
        return Err(Error::InfeasibleBudget { epsilon });
    };
    // Re-solve the companion bound and recompute the cached probabilities
    // with the crate-wide quadrature so the constructed policy is
    // self-consistent to well below the 1e-6 contract.
    let b = solve_companion_bound(pair, a, epsilon)?;
    CensoringPolicy::new(pair, a, b, epsilon)
}
