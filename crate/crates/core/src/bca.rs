//! Block coordinate ascent on the WMMSE-style reformulation of the precoding
//! problem.
//!
//! With auxiliary `U` and weights `W_0, W_1, ..., W_J`, the surrogate
//!
//! ```text
//! log det W_0 − tr(W_0 F_0(U, V)) + Σ_j p_j (log det W_j − tr(W_j F_j(V)))
//! ```
//!
//! is maximized one block at a time: `U` and `W` in closed form, then each
//! `V_k` as a trust-region-like QCQP whose dual variable is found by bisection.
//! At the optimal `U` and `W` the surrogate equals `ΔR` up to a constant, so
//! the reported `ΔR` trace never decreases.

use std::time::Instant;

use nalgebra::DVector;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::feature_model::FeatureStats;
use crate::linalg::{c, hermitize, hpd_inverse, hpd_solve, inv_sqrt_floored, psd_sqrt, re_inner, trace_re, CMat, HermEigen};
use crate::objective::{block_power, delta_r, Mcr2Params, PrecoderSet};
use crate::solver::{bisect_dual, relative_change, SolverOptions, SolverReport};

/// Allowed absolute decrease of `ΔR` between outer iterations.
pub const MONOTONE_SLACK: f64 = 1e-8;

/// Relative eigenvalue floor used when whitening by `Σ^{(kk)}`.
pub const WHITEN_FLOOR: f64 = 1e-12;

/// All blocks of the reformulated problem.
#[derive(Clone, Debug)]
pub struct BcaState {
    pub u: CMat,
    pub w0: CMat,
    /// `W_j` for classes with probability mass, `None` otherwise.
    pub w: Vec<Option<CMat>>,
    pub v: PrecoderSet,
    pub duals: Vec<f64>,
    /// `Σ^{1/2}`, fixed for the whole solve.
    pub sigma_half: CMat,
    pub jittered: bool,
}

impl BcaState {
    pub fn new(v: PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<Self> {
        v.check_shapes(chan, stats)?;
        let n = stats.dim();
        let m = chan.rx_dim();
        Ok(Self {
            u: CMat::zeros(m, n),
            w0: CMat::identity(n, n),
            w: vec![None; stats.class_count()],
            duals: vec![0.0; v.device_count()],
            v,
            sigma_half: psd_sqrt(&stats.cov),
            jittered: false,
        })
    }

    fn effective(&self, chan: &ChannelRealization) -> CMat {
        chan.stacked() * self.v.assembled()
    }
}

/// `U = (H V Σ V^H H^H + (γ/α) I)^{-1} H V Σ^{1/2}`.
pub fn update_u(state: &BcaState, chan: &ChannelRealization, stats: &FeatureStats, params: &Mcr2Params) -> Result<CMat> {
    let a = state.effective(chan);
    let m = a.nrows();
    let lhs = &a * &stats.cov * a.adjoint() + CMat::identity(m, m) * c(1.0 / params.ratio());
    hpd_solve(&lhs, &(&a * &state.sigma_half))
}

/// `F_0 = (I − U^H H V Σ^{1/2})(·)^H + (γ/α) U^H U`.
pub fn f0(u: &CMat, a: &CMat, sigma_half: &CMat, params: &Mcr2Params) -> CMat {
    let n = sigma_half.nrows();
    let e = CMat::identity(n, n) - u.adjoint() * a * sigma_half;
    hermitize(&(&e * e.adjoint() + u.adjoint() * u * c(1.0 / params.ratio())))
}

/// `F_j = γ I + α H V Σ_j V^H H^H`.
pub fn fj(a: &CMat, cov_j: &CMat, params: &Mcr2Params) -> CMat {
    let m = a.nrows();
    hermitize(&(CMat::identity(m, m) * c(params.gamma) + a * cov_j * a.adjoint() * c(params.alpha)))
}

/// Inverse with a `1e-12 tr(F)/n` jitter when the Cholesky factorization fails.
fn inverse_jittered(f: &CMat) -> (CMat, bool) {
    match hpd_inverse(f) {
        Ok(w) => (w, false),
        Err(_) => {
            let n = f.nrows();
            let jitter = (1e-12 * trace_re(f) / n as f64).max(f64::MIN_POSITIVE);
            let g = f + CMat::identity(n, n) * c(jitter);
            match hpd_inverse(&g) {
                Ok(w) => (w, true),
                Err(_) => (crate::linalg::inv_floored(&g, 1e-14), true),
            }
        }
    }
}

/// `W_0 = F_0^{-1}` and `W_j = F_j^{-1}`; the flag reports a jittered `F_0`.
pub fn update_w(
    state: &BcaState,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
) -> Result<(CMat, Vec<Option<CMat>>, bool)> {
    let a = state.effective(chan);
    let (w0, jittered) = inverse_jittered(&f0(&state.u, &a, &state.sigma_half, params));
    let mut w = vec![None; stats.class_count()];
    for (j, _) in stats.active_classes() {
        w[j] = Some(hpd_inverse(&fj(&a, &stats.covs[j], params))?);
    }
    Ok((w0, w, jittered))
}

/// Whitened per-device subproblem `min −2 Re(t̃^H ṽ) + ṽ^H M̃ ṽ` s.t. `‖ṽ‖² ≤ budget`.
#[derive(Clone, Debug)]
pub struct WhitenedQcqp {
    pub m: CMat,
    pub t: DVector<crate::linalg::C64>,
    pub budget: f64,
}

/// Solution of [`WhitenedQcqp`].
#[derive(Clone, Debug)]
pub struct QcqpSolution {
    pub v: DVector<crate::linalg::C64>,
    pub lambda: f64,
}

impl WhitenedQcqp {
    pub fn objective(&self, v: &DVector<crate::linalg::C64>) -> f64 {
        -2.0 * self.t.dotc(v).re + v.dotc(&(&self.m * v)).re
    }

    /// `ṽ(λ) = (M̃ + λ I)^{-1} t̃` with the smallest feasible `λ ≥ 0`.
    pub fn solve(&self, tol: f64) -> QcqpSolution {
        let n = self.t.len();
        if self.t.iter().all(|x| x.norm_sqr() == 0.0) {
            return QcqpSolution {
                v: DVector::zeros(n),
                lambda: 0.0,
            };
        }
        let eig = HermEigen::new(&self.m);
        let coeff = eig.vectors.adjoint() * &self.t;
        let scale = eig.max().max(0.0);
        let eigs: Vec<f64> = eig.values.iter().map(|&l| if l <= 1e-14 * scale { 0.0 } else { l }).collect();
        let weights: Vec<f64> = coeff.iter().map(|x| x.norm_sqr()).collect();
        let lambda = bisect_dual(&eigs, &weights, self.budget, tol);
        let scaled = DVector::from_iterator(
            n,
            eigs.iter().zip(coeff.iter()).map(|(&e, &x)| {
                let d = e + lambda;
                if d > 0.0 {
                    x / d
                } else {
                    c(0.0)
                }
            }),
        );
        QcqpSolution {
            v: &eig.vectors * scaled,
            lambda,
        }
    }
}

/// Builds the whitened subproblem of device `k` together with the pieces
/// needed to map its solution back.
struct DeviceProblem {
    qcqp: WhitenedQcqp,
    s_inv_half: CMat,
    t: CMat,
    phi: CMat,
    psi: Vec<(f64, CMat, CMat)>,
    s: CMat,
}

impl DeviceProblem {
    /// P4 objective `−2 Re tr(T^H V) + tr(Φ V S V^H) + α Σ_j p_j tr(Ψ_j V S_j V^H)`.
    fn objective(&self, v: &CMat, alpha: f64) -> f64 {
        let mut f = -2.0 * re_inner(&self.t, v) + trace_re(&(&self.phi * v * &self.s * v.adjoint()));
        for (p, psi, s_j) in &self.psi {
            f += alpha * p * trace_re(&(psi * v * s_j * v.adjoint()));
        }
        f
    }
}

fn device_problem(
    k: usize,
    state: &BcaState,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
) -> DeviceProblem {
    let hk = chan.device_block(k);
    let range = stats.range(k);
    let nk = range.len();
    let mut others = state.effective(chan);
    others.columns_mut(range.start, nk).fill(c(0.0));

    let uw0 = &state.u * &state.w0;
    let hk_uw0 = hk.adjoint() * &uw0;
    let sig_cols = state.v.blocks[k].ncols();
    debug_assert_eq!(sig_cols, nk);

    let t1 = &hk_uw0 * stats.rows(&state.sigma_half, k).adjoint();
    let cross = &others * stats.cov.columns(range.start, nk);
    let t2 = &hk_uw0 * state.u.adjoint() * cross;
    let mut t3 = CMat::zeros(hk.ncols(), nk);
    let mut psi = Vec::new();
    for (j, p) in stats.active_classes() {
        let w_j = state.w[j].as_ref().expect("W_j is set for active classes");
        let hk_wj = hk.adjoint() * w_j;
        t3 += &hk_wj * (&others * stats.covs[j].columns(range.start, nk)) * c(params.alpha * p);
        psi.push((p, hermitize(&(&hk_wj * hk)), stats.class_cov_block(j, k, k)));
    }
    let t = t1 - t2 - t3;
    let phi = hermitize(&(&hk_uw0 * state.u.adjoint() * hk));

    let s = stats.cov_block(k, k);
    let (s_inv_half, _) = inv_sqrt_floored(&s, WHITEN_FLOOR);
    let eye = CMat::identity(nk, nk);
    let mut m = eye.kronecker(&phi);
    for (p, psi_j, s_j) in &psi {
        let whitened = &s_inv_half * s_j * &s_inv_half;
        m += whitened.transpose().kronecker(psi_j) * c(params.alpha * p);
    }
    let t_w = &t * &s_inv_half;
    let qcqp = WhitenedQcqp {
        m: hermitize(&m),
        t: DVector::from_column_slice(t_w.as_slice()),
        budget: state.v.budgets[k],
    };
    DeviceProblem {
        qcqp,
        s_inv_half,
        t,
        phi,
        psi,
        s,
    }
}

/// Result of one V-step.
#[derive(Clone, Debug)]
pub struct VStep {
    pub v_k: CMat,
    pub lambda: f64,
    /// False when the bisection point did not improve on the current block and
    /// the current block was kept.
    pub accepted: bool,
}

/// Optimal `V_k` for fixed `U`, `W` and the other precoders.
pub fn update_v_k(
    k: usize,
    state: &BcaState,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
    bisection_tol: f64,
) -> VStep {
    let prob = device_problem(k, state, chan, stats, params);
    let sol = prob.qcqp.solve(bisection_tol);
    let rows = state.v.blocks[k].nrows();
    let cols = state.v.blocks[k].ncols();
    let v_tilde = CMat::from_column_slice(rows, cols, sol.v.as_slice());
    let v_k = v_tilde * &prob.s_inv_half;
    let old = &state.v.blocks[k];
    let (f_new, f_old) = (prob.objective(&v_k, params.alpha), prob.objective(old, params.alpha));
    if f_new <= f_old + 1e-12 * f_old.abs() {
        VStep {
            v_k,
            lambda: sol.lambda,
            accepted: true,
        }
    } else {
        VStep {
            v_k: old.clone(),
            lambda: state.duals[k],
            accepted: false,
        }
    }
}

/// Surrogate value at the current blocks. At the optimal `U` and `W`,
/// `surrogate + T N_r ln γ + D/2 + T N_r Σ_j p_j = ΔR`.
pub fn surrogate(state: &BcaState, chan: &ChannelRealization, stats: &FeatureStats, params: &Mcr2Params) -> Result<f64> {
    let a = state.effective(chan);
    let mut value = crate::linalg::logdet_hpd(&state.w0)? - trace_re(&(&state.w0 * f0(&state.u, &a, &state.sigma_half, params)));
    for (j, p) in stats.active_classes() {
        let w = state.w[j].as_ref().ok_or_else(|| Error::InvalidInput("W_j not initialized".into()))?;
        value += p * (crate::linalg::logdet_hpd(w)? - trace_re(&(w * fj(&a, &stats.covs[j], params))));
    }
    Ok(value)
}

/// The constant linking the surrogate to `ΔR` at the optimal auxiliaries.
pub fn surrogate_offset(chan: &ChannelRealization, stats: &FeatureStats, params: &Mcr2Params) -> f64 {
    let m = chan.rx_dim() as f64;
    let mass: f64 = stats.active_classes().map(|(_, p)| p).sum();
    m * params.gamma.ln() + stats.dim() as f64 + m * mass
}

/// Runs block coordinate ascent from a feasible `v_init`.
pub fn solve_bca(
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
    let mut report = SolverReport::new("bca");
    let mut state = BcaState::new(v_init.clone(), chan, stats)?;
    let mut prev = delta_r(&state.v, chan, stats, params)?;
    report.trace.push(prev);
    if opts.record_history {
        report.history.push(state.v.clone());
    }
    for iter in 1..=opts.max_iters {
        state.u = update_u(&state, chan, stats, params)?;
        let (w0, w, jittered) = update_w(&state, chan, stats, params)?;
        state.w0 = w0;
        state.w = w;
        state.jittered |= jittered;
        for _ in 0..opts.inner_sweeps {
            for k in 0..state.v.device_count() {
                let step = update_v_k(k, &state, chan, stats, params, opts.bisection_tol);
                if step.accepted {
                    let budget = state.v.budgets[k];
                    let power = block_power(&step.v_k, &stats.cov_block(k, k));
                    if step.lambda > 0.0 && budget > 0.0 {
                        report.max_slackness = report.max_slackness.max(((budget - power) / budget).abs());
                    }
                    state.v.blocks[k] = step.v_k;
                    state.duals[k] = step.lambda;
                }
            }
        }
        let cur = delta_r(&state.v, chan, stats, params)?;
        report.trace.push(cur);
        report.iterations = iter;
        if opts.record_history {
            report.history.push(state.v.clone());
        }
        if cur < prev - MONOTONE_SLACK {
            return Err(Error::NonMonotone {
                solver: "bca",
                iteration: iter,
                previous: prev,
                current: cur,
            });
        }
        if relative_change(prev, cur) <= opts.tol {
            report.converged = true;
            break;
        }
        prev = cur;
    }
    report.duals = state.duals.clone();
    report.jittered = state.jittered;
    report.elapsed = start.elapsed();
    Ok((state.v, report))
}

/// Random feasible start: circular Gaussian blocks scaled onto the power boundary.
pub fn random_init(chan: &ChannelRealization, stats: &FeatureStats, budgets: &[f64], seed: u64) -> Result<PrecoderSet> {
    let tx: Vec<usize> = (0..chan.device_count()).map(|k| chan.tx_dim(k)).collect();
    crate::instance::random_feasible(&tx, stats, budgets, &mut crate::seeds::rng(seed))
}
