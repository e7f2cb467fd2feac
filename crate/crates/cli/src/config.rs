//! Experiment configuration: a single TOML file, schema-checked with error
//! messages that name the offending key.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qcd_core::simulation::{DetectorKind, PolicyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Example1,
    Example2,
    Example3,
    Example4,
    Custom,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Example1 => "example1",
            Experiment::Example2 => "example2",
            Experiment::Example3 => "example3",
            Experiment::Example4 => "example4",
            Experiment::Custom => "custom",
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default)]
    pub custom: CustomSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { mu0: 0.0, mu1: 1.0, sigma: 1.0 }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub target_arl: Option<f64>,
    pub detector: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    /// Budget grid for the sweep experiments.
    pub epsilons: Option<Vec<f64>>,
    /// Single budget for the trace experiment.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub arl_runs: usize,
    pub delay_runs: usize,
    pub optimizer_grid_step: f64,
    pub srp_grid_step: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { arl_runs: 2000, delay_runs: 5000, optimizer_grid_step: 1e-3, srp_grid_step: 0.1 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub nu: u64,
    pub horizon: u64,
    pub threshold_censoring: f64,
    pub threshold_random: f64,
    pub threshold_de_cusum: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        Self {
            nu: 20,
            horizon: 60,
            threshold_censoring: 690.0,
            threshold_random: 101.0,
            threshold_de_cusum: 98.0,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub policies: Option<Vec<String>>,
}

/// Fully resolved experiment description after defaults and validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub experiment: Experiment,
    pub seed: u64,
    pub mu0: f64,
    pub mu1: f64,
    pub sigma: f64,
    pub target_arl: f64,
    pub detector: DetectorKind,
    pub epsilons: Vec<f64>,
    pub epsilon: f64,
    pub arl_runs: usize,
    pub delay_runs: usize,
    pub optimizer_grid_step: f64,
    pub srp_grid_step: f64,
    pub trace_nu: u64,
    pub trace_horizon: u64,
    pub trace_thresholds: (f64, f64, f64),
    pub policies: Vec<PolicyKind>,
}

pub fn parse(text: &str) -> Result<Resolved> {
    let raw: FileConfig = toml::from_str(text).context("failed to parse config")?;
    resolve(raw)
}

fn default_grid(lo_tenths: u32, hi_tenths: u32) -> Vec<f64> {
    (lo_tenths..=hi_tenths).map(|i| i as f64 / 10.0).collect()
}

pub fn resolve(raw: FileConfig) -> Result<Resolved> {
    let experiment = match raw.experiment.as_str() {
        "example1" => Experiment::Example1,
        "example2" => Experiment::Example2,
        "example3" => Experiment::Example3,
        "example4" => Experiment::Example4,
        "custom" => Experiment::Custom,
        other => bail!(
            "experiment must be one of example1|example2|example3|example4|custom, got `{other}`"
        ),
    };

    if !(raw.model.sigma > 0.0) {
        bail!("model.sigma must be positive, got {}", raw.model.sigma);
    }

    let target_arl = raw.detection.target_arl.unwrap_or(match experiment {
        Experiment::Example4 => 1500.0,
        _ => 6500.0,
    });
    if !(target_arl > 1.0) {
        bail!("detection.target_arl must exceed 1, got {target_arl}");
    }

    let detector = match raw.detection.detector.as_deref() {
        None => match experiment {
            Experiment::Example4 => DetectorKind::Srp,
            _ => DetectorKind::Cusum,
        },
        Some("cusum") => DetectorKind::Cusum,
        Some("srp") => DetectorKind::Srp,
        Some(other) => bail!("detection.detector must be cusum or srp, got `{other}`"),
    };

    let epsilons = raw.energy.epsilons.unwrap_or_else(|| match experiment {
        Experiment::Example2 => default_grid(1, 9),
        _ => default_grid(1, 10),
    });
    if epsilons.is_empty() {
        bail!("energy.epsilons must not be empty");
    }
    for &eps in &epsilons {
        if !(eps > 0.0 && eps <= 1.0) {
            bail!("energy.epsilons entries must lie in (0, 1], got {eps}");
        }
    }
    let epsilon = raw.energy.epsilon.unwrap_or(0.1);
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        bail!("energy.epsilon must lie in (0, 1], got {epsilon}");
    }

    let sim = raw.simulation;
    if sim.arl_runs == 0 || sim.delay_runs == 0 {
        bail!("simulation.arl_runs and simulation.delay_runs must be at least 1");
    }
    if !(sim.optimizer_grid_step > 0.0) {
        bail!(
            "simulation.optimizer_grid_step must be positive, got {}",
            sim.optimizer_grid_step
        );
    }
    if !(sim.srp_grid_step > 0.0) {
        bail!("simulation.srp_grid_step must be positive, got {}", sim.srp_grid_step);
    }

    let trace = raw.trace;
    if trace.nu == 0 {
        bail!("trace.nu is a 1-based change time and must be positive");
    }
    if trace.horizon <= trace.nu {
        bail!("trace.horizon must exceed trace.nu, got {}", trace.horizon);
    }
    for (key, v) in [
        ("trace.threshold_censoring", trace.threshold_censoring),
        ("trace.threshold_random", trace.threshold_random),
        ("trace.threshold_de_cusum", trace.threshold_de_cusum),
    ] {
        if !(v > 0.0) {
            bail!("{key} must be positive, got {v}");
        }
    }

    let policies = match &raw.custom.policies {
        None => match experiment {
            Experiment::Example2 => vec![PolicyKind::Censoring, PolicyKind::DeCusum],
            _ => vec![PolicyKind::Censoring, PolicyKind::Random],
        },
        Some(names) => {
            let mut kinds = Vec::new();
            for name in names {
                kinds.push(match name.as_str() {
                    "censoring" => PolicyKind::Censoring,
                    "random" => PolicyKind::Random,
                    "full_send" => PolicyKind::FullSend,
                    "de_cusum" => PolicyKind::DeCusum,
                    other => bail!(
                        "custom.policies entries must be censoring|random|full_send|de_cusum, \
                         got `{other}`"
                    ),
                });
            }
            if kinds.is_empty() {
                bail!("custom.policies must not be empty");
            }
            kinds
        }
    };

    if detector == DetectorKind::Srp && policies.contains(&PolicyKind::DeCusum) {
        bail!("custom.policies: de_cusum is a cusum-type baseline and cannot drive the srp detector");
    }

    Ok(Resolved {
        experiment,
        seed: raw.seed.unwrap_or(20240809),
        mu0: raw.model.mu0,
        mu1: raw.model.mu1,
        sigma: raw.model.sigma,
        target_arl,
        detector,
        epsilons,
        epsilon,
        arl_runs: sim.arl_runs,
        delay_runs: sim.delay_runs,
        optimizer_grid_step: sim.optimizer_grid_step,
        srp_grid_step: sim.srp_grid_step,
        trace_nu: trace.nu,
        trace_horizon: trace.horizon,
        trace_thresholds: (
            trace.threshold_censoring,
            trace.threshold_random,
            trace.threshold_de_cusum,
        ),
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let r = parse("experiment = \"example1\"\n").unwrap();
        assert_eq!(r.experiment, Experiment::Example1);
        assert_eq!(r.target_arl, 6500.0);
        assert_eq!(r.epsilons.len(), 10);
        assert_eq!(r.detector, DetectorKind::Cusum);
        assert_eq!(r.arl_runs, 2000);
        assert_eq!(r.delay_runs, 5000);
    }

    #[test]
    fn example4_defaults_to_srp_at_1500() {
        let r = parse("experiment = \"example4\"\n").unwrap();
        assert_eq!(r.detector, DetectorKind::Srp);
        assert_eq!(r.target_arl, 1500.0);
    }

    #[test]
    fn out_of_range_epsilon_is_named() {
        let err = parse("experiment = \"example3\"\n[energy]\nepsilon = 1.5\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("epsilon"), "message: {err}");
        assert!(err.contains("1.5"), "message: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("experiment = \"example1\"\nbanana = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("banana"));
    }

    #[test]
    fn bad_policy_names_are_rejected() {
        let err = parse(
            "experiment = \"custom\"\n[custom]\npolicies = [\"telepathy\"]\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("telepathy"));
    }
}
