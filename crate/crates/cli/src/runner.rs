//! Experiment orchestration and artifact emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use qcd_core::censoring::{optimize_policy, random_policy, SendPolicy};
use qcd_core::detectors::{de_cusum_mu, CusumState, DeCusumState};
use qcd_core::model::{DistributionPair, Regime};
use qcd_core::simulation::{
    csv_header, run_tradeoff_sweep, ExperimentConfig, PolicyKind, SweepPlan, SweepRow,
};

use crate::config::{Experiment, Resolved};

pub struct RunReport {
    pub degraded: bool,
    pub files: Vec<String>,
}

pub fn execute(
    resolved: &Resolved,
    config_path: &Path,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<RunReport> {
    if let Some(n) = workers {
        // Ignore the error if a global pool already exists (e.g. tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let started = Instant::now();
    let pair = DistributionPair::gaussian_mean_shift(resolved.mu0, resolved.mu1, resolved.sigma)?;

    let mut report = match resolved.experiment {
        Experiment::Example1 => run_sweep_experiment(resolved, &pair, out_dir, "figure2")?,
        Experiment::Example2 => run_sweep_experiment(resolved, &pair, out_dir, "figure3")?,
        Experiment::Example3 => run_trace_experiment(resolved, &pair, out_dir)?,
        Experiment::Example4 => run_sweep_experiment(resolved, &pair, out_dir, "figure5")?,
        Experiment::Custom => run_sweep_experiment(resolved, &pair, out_dir, "results")?,
    };

    let manifest = render_manifest(resolved, config_path, workers, &report, started.elapsed().as_secs_f64());
    let manifest_path = out_dir.join("manifest.toml");
    fs::write(&manifest_path, manifest)?;
    report.files.push("manifest.toml".into());
    Ok(report)
}

fn base_config(resolved: &Resolved, pair: &DistributionPair) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        pair.clone(),
        PolicyKind::Censoring,
        resolved.detector,
        resolved.epsilon,
        resolved.target_arl,
        resolved.seed,
    );
    cfg.optimizer_grid_step = resolved.optimizer_grid_step;
    cfg.srp_grid_step = resolved.srp_grid_step;
    cfg
}

fn run_sweep_experiment(
    resolved: &Resolved,
    pair: &DistributionPair,
    out_dir: &Path,
    stem: &str,
) -> Result<RunReport> {
    let cfg = base_config(resolved, pair);
    let plan = SweepPlan {
        epsilons: resolved.epsilons.clone(),
        policies: resolved.policies.clone(),
        arl_runs: resolved.arl_runs,
        delay_runs: resolved.delay_runs,
    };
    let rows = run_tradeoff_sweep(&cfg, &plan)?;
    let degraded = rows.iter().any(|r| r.degraded);

    let mut csv = String::from(csv_header());
    for row in &rows {
        csv.push('\n');
        csv.push_str(&row.csv_line());
    }
    csv.push('\n');
    let csv_name = format!("{stem}.csv");
    fs::write(out_dir.join(&csv_name), &csv)?;

    let dat_name = format!("{stem}.dat");
    fs::write(out_dir.join(&dat_name), render_sweep_dat(&plan, &rows))?;

    let gp_name = format!("{stem}.gp");
    fs::write(out_dir.join(&gp_name), render_sweep_gp(stem, &plan))?;

    Ok(RunReport { degraded, files: vec![csv_name, dat_name, gp_name] })
}

/// Pivot the sweep rows into gnuplot columns:
/// `eps  <policy1 delay> <policy1 ci>  <policy2 delay> <policy2 ci> ...`
fn render_sweep_dat(plan: &SweepPlan, rows: &[SweepRow]) -> String {
    let mut out = String::from("# delay-vs-energy trade-off\n# eps");
    for p in &plan.policies {
        let _ = write!(out, " {}_delay {}_ci", p.as_str(), p.as_str());
    }
    out.push('\n');
    for &eps in &plan.epsilons {
        let _ = write!(out, "{eps}");
        for &policy in &plan.policies {
            match rows
                .iter()
                .find(|r| r.policy == policy && (r.epsilon - eps).abs() < 1e-12)
            {
                Some(r) => {
                    let _ = write!(out, " {} {}", r.delay_mean, r.delay_ci);
                }
                None => out.push_str(" nan nan"),
            }
        }
        out.push('\n');
    }
    out
}

fn render_sweep_gp(stem: &str, plan: &SweepPlan) -> String {
    let mut plots = Vec::new();
    for (i, p) in plan.policies.iter().enumerate() {
        plots.push(format!(
            "\"{stem}.dat\" using 1:{}:{} with yerrorlines title \"{}\"",
            2 + 2 * i,
            3 + 2 * i,
            p.as_str()
        ));
    }
    format!(
        "set terminal pngcairo size 800,600\n\
         set output \"{stem}.png\"\n\
         set xlabel \"average energy budget per transmission\"\n\
         set ylabel \"worst-case detection delay (time slots)\"\n\
         set key top right\n\
         plot {}\n",
        plots.join(", \\\n     ")
    )
}

/// One sample path of all three schemes on a shared change scenario.
fn run_trace_experiment(
    resolved: &Resolved,
    pair: &DistributionPair,
    out_dir: &Path,
) -> Result<RunReport> {
    let eps = resolved.epsilon;
    let nu = resolved.trace_nu;
    let horizon = resolved.trace_horizon;
    let (a_cen, a_ran, a_de) = resolved.trace_thresholds;

    let censoring = SendPolicy::Interval(optimize_policy(pair, eps, resolved.optimizer_grid_step)?);
    let random = SendPolicy::Random(random_policy(eps)?);
    let mu_inc = de_cusum_mu(pair, eps)?;

    let mut rng_cen = ChaCha8Rng::seed_from_u64(resolved.seed);
    let mut rng_ran = ChaCha8Rng::seed_from_u64(resolved.seed.wrapping_add(1));
    let mut rng_de = ChaCha8Rng::seed_from_u64(resolved.seed.wrapping_add(2));

    let mut cen_state = CusumState::new(a_cen)?;
    let mut ran_state = CusumState::new(a_ran)?;
    let mut de_state = DeCusumState::new(mu_inc, a_de)?;

    let mut dat = String::from(
        "# statistic traces in the log domain; cusum paths are ln(max(S,1))\n\
         # k censoring random de_cusum censoring_sent random_sent de_cusum_sent post_change\n",
    );
    let mut csv = String::from(
        "k,censoring,random,de_cusum,censoring_sent,random_sent,de_cusum_sent,post_change\n",
    );

    let mut push = |k: u64,
                    cen: f64,
                    ran: f64,
                    de: f64,
                    s1: u8,
                    s2: u8,
                    s3: u8,
                    post: u8| {
        let _ = writeln!(dat, "{k} {cen} {ran} {de} {s1} {s2} {s3} {post}");
        let _ = writeln!(csv, "{k},{cen},{ran},{de},{s1},{s2},{s3},{post}");
    };

    push(0, 0.0, 0.0, 0.0, 0, 0, 0, 0);
    let mut crossed = (false, false, false);
    for k in 1..=horizon {
        let regime = if k >= nu { Regime::PostChange } else { Regime::PreChange };
        let post = u8::from(k >= nu);

        let mut cen_sent = 0u8;
        if !crossed.0 {
            let x = pair.sample(regime, &mut rng_cen);
            let obs = censoring.apply(x, &mut rng_cen);
            cen_sent = u8::from(matches!(obs, qcd_core::censoring::CensoredObservation::Sent(_)));
            cen_state = cen_state.step(censoring.censored_log_lr(pair, obs)?.exp())?;
            crossed.0 = cen_state.crossed();
        }
        let mut ran_sent = 0u8;
        if !crossed.1 {
            let x = pair.sample(regime, &mut rng_ran);
            let obs = random.apply(x, &mut rng_ran);
            ran_sent = u8::from(matches!(obs, qcd_core::censoring::CensoredObservation::Sent(_)));
            ran_state = ran_state.step(random.censored_log_lr(pair, obs)?.exp())?;
            crossed.1 = ran_state.crossed();
        }
        let mut de_sent = 0u8;
        if !crossed.2 {
            let (next, sent) = de_state.step(pair, regime, &mut rng_de)?;
            de_state = next;
            de_sent = u8::from(sent);
            crossed.2 = de_state.crossed();
        }

        push(
            k,
            cen_state.log_value().max(0.0),
            ran_state.log_value().max(0.0),
            de_state.w,
            cen_sent,
            ran_sent,
            de_sent,
            post,
        );
    }

    fs::write(out_dir.join("figure4.csv"), &csv)?;
    fs::write(out_dir.join("figure4.dat"), &dat)?;
    let gp = format!(
        "set terminal pngcairo size 800,600\n\
         set output \"figure4.png\"\n\
         set xlabel \"time k\"\n\
         set ylabel \"detection statistic (log domain)\"\n\
         set arrow from {nu}, graph 0 to {nu}, graph 1 nohead dashtype 2\n\
         set key top left\n\
         plot \"figure4.dat\" using 1:2 with lines title \"censoring\", \\\n     \
              \"figure4.dat\" using 1:3 with lines title \"random\", \\\n     \
              \"figure4.dat\" using 1:4 with lines title \"de-cusum\", \\\n     \
              {:.6} with lines dashtype 3 title \"censoring threshold\", \\\n     \
              {:.6} with lines dashtype 3 title \"random threshold\", \\\n     \
              {:.6} with lines dashtype 3 title \"de-cusum threshold\"\n",
        a_cen.ln(),
        a_ran.ln(),
        a_de.ln(),
    );
    fs::write(out_dir.join("figure4.gp"), gp)?;

    Ok(RunReport {
        degraded: false,
        files: vec!["figure4.csv".into(), "figure4.dat".into(), "figure4.gp".into()],
    })
}

fn render_manifest(
    resolved: &Resolved,
    config_path: &Path,
    workers: Option<usize>,
    report: &RunReport,
    wall_secs: f64,
) -> String {
    let config_hash = fs::read(config_path)
        .map(|bytes| format!("{:x}", Sha256::digest(&bytes)))
        .unwrap_or_else(|_| "unavailable".into());
    let mut out = String::new();
    let _ = writeln!(out, "experiment = \"{}\"", resolved.experiment.as_str());
    let _ = writeln!(out, "config_path = {:?}", config_path.display().to_string());
    let _ = writeln!(out, "config_sha256 = \"{config_hash}\"");
    let _ = writeln!(out, "seed = {}", resolved.seed);
    let _ = writeln!(out, "workers = {}", workers.map_or("\"auto\"".into(), |w| w.to_string()));
    let _ = writeln!(out, "package_version = \"{}\"", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "wall_time_secs = {wall_secs}");
    let _ = writeln!(out, "degraded = {}", report.degraded);
    let _ = writeln!(
        out,
        "files = [{}]",
        report.files.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(", ")
    );
    out
}

/// `optimize` subcommand: print the optimal policy record per budget.
pub fn optimize_and_print(
    mu0: f64,
    mu1: f64,
    sigma: f64,
    epsilons: &[f64],
    grid_step: f64,
) -> Result<()> {
    let pair = DistributionPair::gaussian_mean_shift(mu0, mu1, sigma)?;
    let started = Instant::now();
    for &eps in epsilons {
        let policy = optimize_policy(&pair, eps, grid_step)?;
        let kl = policy.post_censoring_kl(&pair)?;
        println!("# eps = {eps}");
        print!("{}", SendPolicy::Interval(policy).to_record());
        println!("post_censoring_kl = {kl}");
        println!();
    }
    let elapsed = started.elapsed();
    println!("total wall time: {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

/// Output directory precedence: explicit flag, then QCD_OUT_DIR, then ./out.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("QCD_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}
