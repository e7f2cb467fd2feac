use rayon::prelude::*;

use crate::censoring::SendPolicy;
use crate::error::{Error, Result};
use crate::model::{DistributionPair, Regime};
use crate::numerics::kernel::{build_srp_kernel_with_tables, KernelMatrix};
use crate::numerics::tables::DensityTables;
use crate::numerics::Grid;

/// Blocked LU factorization with partial pivoting, in place and row-major.
/// The trailing update is parallelized over rows; arithmetic per row is
/// sequential, so the factorization is deterministic under any thread count.
fn lu_factor(a: &mut [f64], n: usize) -> Result<Vec<usize>> {
    const NB: usize = 64;
    let mut piv = vec![0usize; n];
    let mut k0 = 0;
    while k0 < n {
        let kend = (k0 + NB).min(n);
        for k in k0..kend {
            let (mut p, mut best) = (k, a[k * n + k].abs());
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-280) {
                return Err(Error::SolverFailure(format!(
                    "singular system at elimination step {k}"
                )));
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            for i in (k + 1)..n {
                a[i * n + k] /= pivot;
            }
            if k + 1 < kend {
                let row_k = a[k * n + (k + 1)..k * n + kend].to_vec();
                for i in (k + 1)..n {
                    let l = a[i * n + k];
                    if l != 0.0 {
                        let row = &mut a[i * n + (k + 1)..i * n + kend];
                        for (t, rv) in row.iter_mut().zip(&row_k) {
                            *t -= l * rv;
                        }
                    }
                }
            }
        }
        let width = n - kend;
        if width > 0 {
            // Finish the U rows of the panel.
            for k in k0..kend {
                let row_k = a[k * n + kend..(k + 1) * n].to_vec();
                for i in (k + 1)..kend {
                    let l = a[i * n + k];
                    if l != 0.0 {
                        let row = &mut a[i * n + kend..(i + 1) * n];
                        for (t, rv) in row.iter_mut().zip(&row_k) {
                            *t -= l * rv;
                        }
                    }
                }
            }
            // Rank-NB update of the trailing block.
            let nb = kend - k0;
            let mut u_panel = vec![0.0; nb * width];
            for kk in 0..nb {
                u_panel[kk * width..(kk + 1) * width]
                    .copy_from_slice(&a[(k0 + kk) * n + kend..(k0 + kk + 1) * n]);
            }
            let tail = &mut a[kend * n..n * n];
            tail.par_chunks_mut(n).for_each(|row| {
                for kk in 0..nb {
                    let l = row[k0 + kk];
                    if l != 0.0 {
                        let u = &u_panel[kk * width..(kk + 1) * width];
                        for (t, uv) in row[kend..].iter_mut().zip(u) {
                            *t -= l * uv;
                        }
                    }
                }
            });
        }
        k0 = kend;
    }
    Ok(piv)
}

fn lu_solve(a: &[f64], n: usize, piv: &[usize], b: &mut [f64]) {
    for (k, &p) in piv.iter().enumerate() {
        if p != k {
            b.swap(k, p);
        }
    }
    for i in 1..n {
        let mut acc = b[i];
        for j in 0..i {
            acc -= a[i * n + j] * b[j];
        }
        b[i] = acc;
    }
    for i in (0..n).rev() {
        let mut acc = b[i];
        for j in (i + 1)..n {
            acc -= a[i * n + j] * b[j];
        }
        b[i] = acc / a[i * n + i];
    }
}

/// Solves `(I - K) x = 1` for a substochastic kernel.
fn steps_to_absorption(kernel: &KernelMatrix) -> Result<Vec<f64>> {
    let n = kernel.n();
    let mut m = vec![0.0; n * n];
    m.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, (t, k)) in row.iter_mut().zip(kernel.row(i)).enumerate() {
            *t = if i == j { 1.0 - k } else { -k };
        }
    });
    let piv = lu_factor(&mut m, n)?;
    let mut x = vec![1.0; n];
    lu_solve(&m, n, &piv, &mut x);
    if x.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::SolverFailure(
            "expected-steps system produced non-positive values; the kernel's \
             spectral radius is numerically at or above one"
                .into(),
        ));
    }
    Ok(x)
}

/// Expected steps to alarm from each grid node under the pre-change law.
pub fn solve_arl(kernel: &KernelMatrix) -> Result<Vec<f64>> {
    if kernel.regime() != Regime::PreChange {
        return Err(Error::InvalidInput(
            "run-length system must be built from the pre-change kernel".into(),
        ));
    }
    steps_to_absorption(kernel)
}

/// Average detection delay: expected steps to alarm under the post-change
/// law, averaged over the quasi-stationary law of the starting point.
pub fn solve_add(kernel_post: &KernelMatrix, qsd: &[f64]) -> Result<f64> {
    if kernel_post.regime() != Regime::PostChange {
        return Err(Error::InvalidInput(
            "delay system must be built from the post-change kernel".into(),
        ));
    }
    if qsd.len() != kernel_post.n() {
        return Err(Error::InvalidInput(format!(
            "weight vector has {} entries for a {}-node kernel",
            qsd.len(),
            kernel_post.n()
        )));
    }
    let d = steps_to_absorption(kernel_post)?;
    Ok(d.iter().zip(qsd).map(|(di, qi)| di * qi).sum())
}

#[derive(Debug, Clone)]
pub struct QuasiStationary {
    pub pmf: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

/// Normalized left principal eigenvector of the substochastic kernel, by
/// power iteration until successive iterates differ by less than 1e-10 in L1.
pub fn quasi_stationary_full(kernel: &KernelMatrix) -> Result<QuasiStationary> {
    if kernel.regime() != Regime::PreChange {
        return Err(Error::InvalidInput(
            "the quasi-stationary law is defined for the pre-change kernel".into(),
        ));
    }
    let n = kernel.n();
    let mut v = vec![1.0 / n as f64; n];
    for it in 1..=100_000 {
        let mut w = kernel.apply_left(&v);
        let lambda: f64 = w.iter().sum();
        if !(lambda > 0.0) {
            return Err(Error::SolverFailure(
                "kernel annihilated the iterate; no quasi-stationary law".into(),
            ));
        }
        for x in &mut w {
            *x /= lambda;
        }
        let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = w;
        if diff < 1e-10 {
            return Ok(QuasiStationary { pmf: v, lambda, iterations: it });
        }
    }
    Err(Error::SolverFailure(
        "power iteration did not converge within 100000 iterations".into(),
    ))
}

pub fn quasi_stationary(kernel: &KernelMatrix) -> Result<Vec<f64>> {
    Ok(quasi_stationary_full(kernel)?.pmf)
}

/// Integral-equation performance of the censored SRP procedure at one
/// threshold.
#[derive(Debug, Clone)]
pub struct SrpSolution {
    pub threshold_a: f64,
    pub grid: Grid,
    pub qsd: Vec<f64>,
    pub lambda: f64,
    pub arl: f64,
    pub add: f64,
}

/// Builds both regime kernels at the given threshold and solves for the
/// average run length and the stationary average detection delay.
pub fn srp_performance(
    pair: &DistributionPair,
    policy: &SendPolicy,
    threshold_a: f64,
    grid_step: f64,
) -> Result<SrpSolution> {
    let tables = DensityTables::build(pair)?;
    srp_performance_with_tables(pair, &tables, policy, threshold_a, grid_step)
}

fn srp_performance_with_tables(
    pair: &DistributionPair,
    tables: &DensityTables,
    policy: &SendPolicy,
    threshold_a: f64,
    grid_step: f64,
) -> Result<SrpSolution> {
    let (grid, qsd, lambda, arl) = srp_arl_with_tables(pair, tables, policy, threshold_a, grid_step)?;
    let post = build_srp_kernel_with_tables(
        pair,
        tables,
        policy,
        threshold_a,
        grid_step,
        Regime::PostChange,
    )?;
    let add = solve_add(&post, &qsd)?;
    Ok(SrpSolution { threshold_a, grid, qsd, lambda, arl, add })
}

fn srp_arl_with_tables(
    pair: &DistributionPair,
    tables: &DensityTables,
    policy: &SendPolicy,
    threshold_a: f64,
    grid_step: f64,
) -> Result<(Grid, Vec<f64>, f64, f64)> {
    let pre = build_srp_kernel_with_tables(
        pair,
        tables,
        policy,
        threshold_a,
        grid_step,
        Regime::PreChange,
    )?;
    let qs = quasi_stationary_full(&pre)?;
    let steps = solve_arl(&pre)?;
    let arl = steps.iter().zip(&qs.pmf).map(|(s, q)| s * q).sum();
    Ok((pre.grid().clone(), qs.pmf, qs.lambda, arl))
}

/// Finds the threshold whose integral-equation ARL matches the target.
///
/// Bisection runs on a coarse grid first; the returned solution is evaluated
/// at the requested grid step and nudged proportionally if the refinement
/// moved the run length by more than 5 percent.
pub fn calibrate_srp_threshold(
    pair: &DistributionPair,
    policy: &SendPolicy,
    target_arl: f64,
    grid_step: f64,
    coarse_step: f64,
) -> Result<SrpSolution> {
    if !(target_arl > 1.0) {
        return Err(Error::InvalidParameter {
            name: "target_arl",
            reason: format!("must exceed 1, got {target_arl}"),
        });
    }
    let tables = DensityTables::build(pair)?;
    let coarse_arl = |a: f64| -> Result<f64> {
        Ok(srp_arl_with_tables(pair, &tables, policy, a, coarse_step)?.3)
    };

    // Bracket the target on the coarse grid.
    let mut lo = (target_arl * 0.05).max(2.0 * coarse_step);
    let mut hi = target_arl.max(4.0 * coarse_step);
    let mut arl_lo = coarse_arl(lo)?;
    let mut arl_hi = coarse_arl(hi)?;
    let mut guard = 0;
    while arl_lo > target_arl {
        lo *= 0.5;
        arl_lo = coarse_arl(lo)?;
        guard += 1;
        if guard > 60 || lo < coarse_step {
            return Err(Error::CalibrationFailure(format!(
                "no threshold below {lo} reaches down to ARL {target_arl}"
            )));
        }
    }
    while arl_hi < target_arl {
        hi *= 2.0;
        arl_hi = coarse_arl(hi)?;
        guard += 1;
        if guard > 60 || hi > 1e9 {
            return Err(Error::CalibrationFailure(format!(
                "no threshold up to {hi} reaches ARL {target_arl}"
            )));
        }
    }
    for _ in 0..60 {
        let mid = (lo.ln() + hi.ln()).mul_add(0.5, 0.0).exp();
        let arl_mid = coarse_arl(mid)?;
        if (arl_mid - target_arl).abs() <= 0.01 * target_arl {
            lo = mid;
            break;
        }
        if arl_mid < target_arl {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 0.25 * coarse_step {
            break;
        }
    }

    // Refine at the requested step, correcting proportionally (the run
    // length is locally near-linear in the threshold).
    let mut a = 0.5 * (lo + hi);
    for _ in 0..3 {
        let solution = srp_performance_with_tables(pair, &tables, policy, a, grid_step)?;
        if (solution.arl - target_arl).abs() <= 0.05 * target_arl {
            return Ok(solution);
        }
        a *= target_arl / solution.arl;
    }
    Err(Error::CalibrationFailure(format!(
        "threshold refinement did not settle within 5% of ARL {target_arl}"
    )))
}
