//! Projected gradient ascent on `ΔR`, the expansion/compression diagnostics of
//! a single gradient step, and ellipsoid volumes for the sphere experiment.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::feature_model::FeatureStats;
use crate::linalg::{c, hermitize, hpd_inverse, psd_sqrt, rscale, CMat, MatrixJson};
use crate::objective::{delta_r, grad_delta_r, project_power_exact, Mcr2Params, PrecoderSet};
use crate::solver::{relative_change, SolverOptions, SolverReport};

/// Smallest relative step tried by the line search.
pub const STEP_FLOOR: f64 = 1e-12;

/// Gradient ascent with power projection and a backtracking step.
///
/// The step is scale free: a trial point is `P(V + η ‖V‖/‖∇‖ ∇)` with `P` the
/// Euclidean projection onto the power set, where `η`
/// halves until `ΔR` increases and doubles (up to 1) after every
/// accepted step.
pub fn solve_pga(
    v_init: &PrecoderSet,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
    opts: &SolverOptions,
) -> Result<(PrecoderSet, SolverReport)> {
    opts.validate()?;
    v_init.check_shapes(chan, stats)?;
    if !v_init.is_feasible(stats) {
        return Err(Error::InvalidInput("initial precoder violates the power budget".into()));
    }
    let start = Instant::now();
    let mut report = SolverReport::new("pga");
    let mut v = v_init.clone();
    let mut cur = delta_r(&v, chan, stats, params)?;
    report.trace.push(cur);
    if opts.record_history {
        report.history.push(v.clone());
    }
    let mut eta: f64 = 0.1;
    for iter in 1..=opts.max_iters {
        report.iterations = iter;
        let g = grad_delta_r(&v, chan, stats, params)?;
        let gnorm = g.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            report.trace.push(cur);
            report.converged = true;
            break;
        }
        let vnorm = v.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        let scale = if vnorm > 0.0 { vnorm / gnorm } else { 1.0 / gnorm };
        let mut accepted = None;
        while eta >= STEP_FLOOR {
            let trial = project_power_exact(&v.axpy(eta * scale, &g), stats);
            let value = delta_r(&trial, chan, stats, params)?;
            if value > cur {
                accepted = Some((trial, value));
                break;
            }
            eta *= 0.5;
        }
        let Some((next, value)) = accepted else {
            report.trace.push(cur);
            report.converged = true;
            break;
        };
        let prev = cur;
        v = next;
        cur = value;
        report.trace.push(cur);
        if opts.record_history {
            report.history.push(v.clone());
        }
        eta = (2.0 * eta).min(1.0);
        if relative_change(prev, cur) <= opts.tol {
            report.converged = true;
            break;
        }
    }
    report.elapsed = start.elapsed();
    Ok((v, report))
}

/// Single-device view of one gradient-ascent step in the SVD basis of `H`.
#[derive(Clone, Debug)]
pub struct IncrementDiagnostics {
    /// `H = P Λ Q^H` (thin SVD).
    pub p: CMat,
    pub singular_values: Vec<f64>,
    pub q: CMat,
    /// `G = Λ Q^H V Σ^{1/2}` and `G_j = Λ Q^H V Σ_j^{1/2}`.
    pub g: CMat,
    pub g_classes: Vec<CMat>,
    /// `E = (γ I + α G G^H)^{-1}` and `C_j = (γ I + α G_j G_j^H)^{-1}`.
    pub e: CMat,
    pub c_classes: Vec<CMat>,
    /// `η H ∇R(V) Σ^{1/2}`.
    pub expansion: CMat,
    /// `−η H ∇R_c(V) Σ^{1/2}`.
    pub compression: CMat,
    /// `‖η H ∇R Σ^{1/2} − 2ηα P Λ² E G Σ‖` relative to the left side.
    pub expansion_identity_residual: f64,
    /// `‖γ E − Π_G^⊥‖`, with `Π_G^⊥` the projector onto the complement of `range(G)`.
    pub projector_residual: f64,
    pub class_projector_residuals: Vec<f64>,
    /// Spectral norm `‖γ E G‖` and its bound `(γ/α) c ‖G‖` with `c = 1/(σ_min⁺ σ_max)`.
    pub annihilation: f64,
    pub annihilation_bound: f64,
}

fn spectral_norm(m: &CMat) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

fn complement_projector(g: &CMat) -> CMat {
    let m = g.nrows();
    let svd = g.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut proj = CMat::identity(m, m);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 1e-12 * smax.max(f64::MIN_POSITIVE) {
            let col = u.column(i);
            proj -= col * col.adjoint();
        }
    }
    proj
}

/// Expansion and compression terms of the update `V + η ∇ΔR(V)` for a single device.
pub fn diagnose_increments(
    v: &PrecoderSet,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
    eta: f64,
) -> Result<IncrementDiagnostics> {
    if chan.device_count() != 1 {
        return Err(Error::InvalidInput(format!(
            "increment diagnostics are defined for a single device, got {}",
            chan.device_count()
        )));
    }
    v.check_shapes(chan, stats)?;
    let h = chan.stacked();
    let vm = v.assembled();
    let (alpha, gamma) = (params.alpha, params.gamma);
    let svd = h.clone().svd(true, true);
    let p = svd.u.expect("left singular vectors requested");
    let q = svd.v_t.expect("right singular vectors requested").adjoint();
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let lam = CMat::from_diagonal(&svd.singular_values.map(c));
    let sigma_half = psd_sqrt(&stats.cov);
    let basis = &lam * q.adjoint() * &vm;
    let g = &basis * &sigma_half;
    let r = g.nrows();
    let eye = CMat::identity(r, r);
    let e = hpd_inverse(&(&eye * c(gamma) + &g * g.adjoint() * c(alpha)))?;

    let mut g_classes = Vec::new();
    let mut c_classes = Vec::new();
    let mut class_projector_residuals = Vec::new();
    let mut compression = CMat::zeros(h.nrows(), stats.dim());
    let hv = h * &vm;
    let m = hv.nrows();
    for (j, pj) in stats.active_classes() {
        let gj = &basis * psd_sqrt(&stats.covs[j]);
        let cj = hpd_inverse(&(&eye * c(gamma) + &gj * gj.adjoint() * c(alpha)))?;
        class_projector_residuals.push((rscale(&cj, gamma) - complement_projector(&gj)).norm());
        let dj = hpd_inverse(&(CMat::identity(m, m) * c(gamma) + &hv * &stats.covs[j] * hv.adjoint() * c(alpha)))?;
        let grad_rc = h.adjoint() * dj * &hv * &stats.covs[j] * c(2.0 * alpha * pj);
        compression -= h * grad_rc * &sigma_half * c(eta);
        g_classes.push(gj);
        c_classes.push(cj);
    }
    let d = hpd_inverse(&(CMat::identity(m, m) * c(gamma) + &hv * &stats.cov * hv.adjoint() * c(alpha)))?;
    let grad_r = h.adjoint() * d * &hv * &stats.cov * c(2.0 * alpha);
    let expansion = h * grad_r * &sigma_half * c(eta);
    let rhs = &p * &lam * &lam * &e * &g * &stats.cov * c(2.0 * eta * alpha);
    let expansion_identity_residual = (&expansion - rhs).norm() / expansion.norm().max(f64::MIN_POSITIVE);

    let projector_residual = (rscale(&e, gamma) - complement_projector(&g)).norm();
    let gsv = g.clone().singular_values();
    let smax = gsv.iter().copied().fold(0.0, f64::max);
    let smin = gsv
        .iter()
        .copied()
        .filter(|&s| s > 1e-12 * smax.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let annihilation = spectral_norm(&(rscale(&e, gamma) * &g));
    let annihilation_bound = if smin.is_finite() {
        gamma / alpha * smax / (smin * smax)
    } else {
        0.0
    };
    Ok(IncrementDiagnostics {
        p,
        singular_values: sv,
        q,
        g,
        g_classes,
        e: hermitize(&e),
        c_classes,
        expansion,
        compression,
        expansion_identity_residual,
        projector_residual,
        class_projector_residuals,
        annihilation,
        annihilation_bound,
    })
}

/// JSON view of [`IncrementDiagnostics`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncrementDiagnosticsJson {
    pub singular_values: Vec<f64>,
    pub g: MatrixJson,
    pub e: MatrixJson,
    pub expansion: MatrixJson,
    pub compression: MatrixJson,
    pub expansion_identity_residual: f64,
    pub projector_residual: f64,
    pub class_projector_residuals: Vec<f64>,
    pub annihilation: f64,
    pub annihilation_bound: f64,
}

impl From<&IncrementDiagnostics> for IncrementDiagnosticsJson {
    fn from(d: &IncrementDiagnostics) -> Self {
        Self {
            singular_values: d.singular_values.clone(),
            g: (&d.g).into(),
            e: (&d.e).into(),
            expansion: (&d.expansion).into(),
            compression: (&d.compression).into(),
            expansion_identity_residual: d.expansion_identity_residual,
            projector_residual: d.projector_residual,
            class_projector_residuals: d.class_projector_residuals.clone(),
            annihilation: d.annihilation,
            annihilation_bound: d.annihilation_bound,
        }
    }
}

/// Volume `(4π/3) ∏ σ_i(A)` of the ellipsoid `{A x : ‖x‖ ≤ 1}` for a 3x3 matrix.
pub fn ellipsoid_volume(a: &CMat) -> Result<f64> {
    if a.shape() != (3, 3) {
        return Err(crate::error::mismatch("ellipsoid matrix", "(3, 3)", format!("{:?}", a.shape())));
    }
    let prod: f64 = a.clone().singular_values().iter().product();
    Ok(4.0 / 3.0 * std::f64::consts::PI * prod)
}
