//! Reference precoders and detectors: LMMSE, iterative water-filling, random
//! and identity precoding, plus digital-transmission latency.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{mismatch, Error, Result};
use crate::feature_model::FeatureStats;
use crate::linalg::{c, gaussian_matrix, hermitize, hpd_inverse, hpd_solve, inv_floored, inv_sqrt_floored, logdet_identity_plus, re_inner, rscale, trace_re, CMat, CVec, HermEigen};
use crate::objective::{block_power, PrecoderSet};
use crate::solver::{bisect_dual, relative_change, SolverOptions, SolverReport};

fn require_noise(chan: &ChannelRealization) -> Result<()> {
    if chan.noise_power > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput("LMMSE quantities need a positive noise power".into()))
    }
}

/// `M = H V Σ V^H H^H + δ₀² I`.
fn received_cov(a: &CMat, stats: &FeatureStats, noise: f64) -> CMat {
    let m = a.nrows();
    hermitize(&(a * &stats.cov * a.adjoint() + CMat::identity(m, m) * c(noise)))
}

/// `ẑ = Σ V^H H^H (H V Σ V^H H^H + δ₀² I)^{-1} y`.
pub fn lmmse_detect(y: &CVec, v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<CVec> {
    require_noise(chan)?;
    v.check_shapes(chan, stats)?;
    let a = chan.stacked() * v.assembled();
    if y.len() != a.nrows() {
        return Err(mismatch("received vector", a.nrows(), y.len()));
    }
    let m = received_cov(&a, stats, chan.noise_power);
    let ym = CMat::from_column_slice(y.len(), 1, y.as_slice());
    let x = hpd_solve(&m, &ym)?;
    Ok((&stats.cov * a.adjoint() * x).column(0).into_owned())
}

/// The LMMSE detector matrix `Σ V^H H^H M^{-1}`.
pub fn lmmse_matrix(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<CMat> {
    require_noise(chan)?;
    let a = chan.stacked() * v.assembled();
    let m = received_cov(&a, stats, chan.noise_power);
    Ok(hpd_solve(&m, &(&a * &stats.cov))?.adjoint())
}

/// `tr Σ − tr(Σ V^H H^H M^{-1} H V Σ)`.
pub fn lmmse_mse(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<f64> {
    require_noise(chan)?;
    v.check_shapes(chan, stats)?;
    let a = chan.stacked() * v.assembled();
    let m = received_cov(&a, stats, chan.noise_power);
    let as_ = &a * &stats.cov;
    let reduction = re_inner(&as_, &hpd_solve(&m, &as_)?);
    Ok((trace_re(&stats.cov) - reduction).max(0.0))
}

/// MSE normalized by `tr Σ`.
pub fn lmmse_nmse(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<f64> {
    Ok(lmmse_mse(v, chan, stats)? / trace_re(&stats.cov))
}

/// Quadratic-transform surrogate `tr Σ − 2 Re tr(R^H A Σ) + tr(R^H M R)`.
fn lmmse_surrogate(r: &CMat, a: &CMat, stats: &FeatureStats, noise: f64) -> f64 {
    let m = received_cov(a, stats, noise);
    trace_re(&stats.cov) - 2.0 * re_inner(r, &(a * &stats.cov)) + trace_re(&(r.adjoint() * m * r))
}

/// Alternating minimization of the LMMSE error over the receive filter `R`
/// and the precoders. The report trace holds the surrogate, non-increasing.
pub fn lmmse_precoder(
    chan: &ChannelRealization,
    stats: &FeatureStats,
    budgets: &[f64],
    opts: &SolverOptions,
) -> Result<(PrecoderSet, SolverReport)> {
    require_noise(chan)?;
    opts.validate()?;
    let start = Instant::now();
    let mut v = crate::bca::random_init(chan, stats, budgets, opts.seed)?;
    v.check_shapes(chan, stats)?;
    let noise = chan.noise_power;
    let h = chan.stacked();
    let mut report = SolverReport::new("lmmse");
    let mut duals = vec![0.0; v.device_count()];
    let mut prev = lmmse_mse(&v, chan, stats)?;
    report.trace.push(prev);
    for iter in 1..=opts.max_iters {
        report.iterations = iter;
        let a = h * v.assembled();
        let r = hpd_solve(&received_cov(&a, stats, noise), &(&a * &stats.cov))?;
        for k in 0..v.device_count() {
            let hk = chan.device_block(k);
            let rows = stats.range(k);
            let mut others = h * v.assembled();
            others.columns_mut(rows.start, rows.len()).fill(c(0.0));
            // J_k = Σ^{(k)} − Σ_{q≠k} Σ^{(kq)} V_q^H H_q^H R
            let jk = stats.rows(&stats.cov, k) - stats.cov.rows(rows.start, rows.len()) * others.adjoint() * &r;
            let s = stats.cov_block(k, k);
            let s_inv = inv_floored(&s, 1e-12);
            let hr = hk.adjoint() * &r;
            let b = hermitize(&(&hr * hr.adjoint()));
            let rhs = &hr * jk.adjoint() * &s_inv;
            let eig = HermEigen::new(&b);
            let coeff = eig.vectors.adjoint() * &rhs;
            let scale = eig.max().max(0.0);
            let eigs: Vec<f64> = eig.values.iter().map(|&l| if l <= 1e-14 * scale { 0.0 } else { l }).collect();
            let weights: Vec<f64> = (coeff.clone() * &s * coeff.adjoint()).diagonal().iter().map(|x| x.re.max(0.0)).collect();
            let mu = bisect_dual(&eigs, &weights, v.budgets[k], opts.bisection_tol);
            let mut scaled = coeff;
            for (i, &e) in eigs.iter().enumerate() {
                let d = e + mu;
                let f = if d > 0.0 { 1.0 / d } else { 0.0 };
                scaled.row_mut(i).iter_mut().for_each(|x| *x *= f);
            }
            let candidate = &eig.vectors * scaled;
            let block_obj = |vk: &CMat| -> f64 {
                -2.0 * re_inner(&(&hr * jk.adjoint()), vk) + trace_re(&(&b * vk * &s * vk.adjoint()))
            };
            if block_obj(&candidate) <= block_obj(&v.blocks[k]) + 1e-12 * block_obj(&v.blocks[k]).abs() {
                if mu > 0.0 {
                    let power = block_power(&candidate, &s);
                    report.max_slackness = report.max_slackness.max(((v.budgets[k] - power) / v.budgets[k]).abs());
                }
                v.blocks[k] = candidate;
                duals[k] = mu;
            }
        }
        let a = h * v.assembled();
        let cur = lmmse_surrogate(&r, &a, stats, noise);
        report.trace.push(cur);
        if cur > prev + 1e-10 * prev.abs().max(1e-300) {
            return Err(Error::NonMonotone {
                solver: "lmmse",
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
    report.duals = duals;
    report.elapsed = start.elapsed();
    Ok((v, report))
}

/// Single-user water-filling: `p_i = max(0, μ − 1/g_i)` with `Σ p_i = budget`.
pub fn water_fill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut out = vec![0.0; gains.len()];
    if budget <= 0.0 || order.is_empty() {
        return out;
    }
    let mut level = 0.0;
    let mut active = 0;
    let mut inv_sum = 0.0;
    for (n, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let mu = (budget + inv_sum) / (n + 1) as f64;
        if mu - 1.0 / gains[i] > 0.0 {
            level = mu;
            active = n + 1;
        } else {
            break;
        }
    }
    for &i in &order[..active] {
        out[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    out
}

/// Transmit covariances from iterative water-filling with their sum-rate trace.
#[derive(Clone, Debug)]
pub struct IwfOutcome {
    pub covariances: Vec<CMat>,
    pub report: SolverReport,
}

/// `log det(I + δ₀^{-2} Σ_k H_k Q_k H_k^H)` in nats.
pub fn sum_rate(chan: &ChannelRealization, q: &[CMat]) -> f64 {
    let m = chan.rx_dim();
    let mut acc = CMat::zeros(m, m);
    for (k, qk) in q.iter().enumerate() {
        let hk = chan.device_block(k);
        acc += hk * qk * hk.adjoint();
    }
    logdet_identity_plus(&hermitize(&rscale(&acc, 1.0 / chan.noise_power)))
}

/// Cyclic water-filling of each device against the others' interference.
pub fn iterative_water_filling(chan: &ChannelRealization, budgets: &[f64], opts: &SolverOptions) -> Result<IwfOutcome> {
    if !(chan.noise_power > 0.0) {
        return Err(Error::InvalidInput("water-filling needs a positive noise power".into()));
    }
    if budgets.len() != chan.device_count() || budgets.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidInput("water-filling needs one positive budget per device".into()));
    }
    opts.validate()?;
    let start = Instant::now();
    let m = chan.rx_dim();
    let mut q: Vec<CMat> = (0..chan.device_count()).map(|k| CMat::zeros(chan.tx_dim(k), chan.tx_dim(k))).collect();
    let mut report = SolverReport::new("iwf");
    let mut prev = sum_rate(chan, &q);
    report.trace.push(prev);
    for iter in 1..=opts.max_iters {
        report.iterations = iter;
        for k in 0..q.len() {
            let mut noise = CMat::identity(m, m) * c(chan.noise_power);
            for (p, qp) in q.iter().enumerate() {
                if p != k {
                    let hp = chan.device_block(p);
                    noise += hp * qp * hp.adjoint();
                }
            }
            let hk = chan.device_block(k);
            let g = hermitize(&(hk.adjoint() * hpd_solve(&noise, hk)?));
            let eig = HermEigen::new(&g);
            let powers = water_fill(&eig.values, budgets[k]);
            let mut scaled = eig.vectors.clone();
            for (i, &p) in powers.iter().enumerate() {
                scaled.column_mut(i).iter_mut().for_each(|x| *x *= p);
            }
            q[k] = hermitize(&(scaled * eig.vectors.adjoint()));
        }
        let cur = sum_rate(chan, &q);
        report.trace.push(cur);
        if cur < prev - 1e-9 * prev.abs().max(1.0) {
            return Err(Error::NonMonotone {
                solver: "iwf",
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
    report.elapsed = start.elapsed();
    Ok(IwfOutcome { covariances: q, report })
}

/// Maps a transmit covariance to a precoder: with `Q = U Λ U^H` and the
/// eigenvectors `E` of `Σ^{(kk)}` sorted by decreasing eigenvalue,
/// `V = U_r Λ_r^{1/2} E_r^H (Σ^{(kk)})^{-1/2}` so that `V Σ^{(kk)} V^H` is the
/// rank-`r` truncation of `Q`.
pub fn covariance_to_precoder(q: &CMat, s: &CMat) -> CMat {
    let n = s.nrows();
    let eq = HermEigen::new(q);
    let es = HermEigen::new(s);
    let (s_inv_half, _) = inv_sqrt_floored(s, 1e-12);
    let qmax = eq.max().max(0.0);
    let modes: Vec<usize> = (0..eq.values.len())
        .rev()
        .filter(|&i| eq.values[i] > 1e-12 * qmax && qmax > 0.0)
        .take(n)
        .collect();
    let mut left = CMat::zeros(q.nrows(), modes.len());
    let mut right = CMat::zeros(n, modes.len());
    for (col, &i) in modes.iter().enumerate() {
        left.set_column(col, &(eq.vectors.column(i) * c(eq.values[i].sqrt())));
        right.set_column(col, &es.vectors.column(n - 1 - col));
    }
    left * right.adjoint() * s_inv_half
}

/// IWF covariances mapped to precoders.
pub fn iwf_precoder(
    chan: &ChannelRealization,
    stats: &FeatureStats,
    budgets: &[f64],
    opts: &SolverOptions,
) -> Result<(PrecoderSet, SolverReport)> {
    let out = iterative_water_filling(chan, budgets, opts)?;
    let blocks = out
        .covariances
        .iter()
        .enumerate()
        .map(|(k, q)| covariance_to_precoder(q, &stats.cov_block(k, k)))
        .collect();
    Ok((PrecoderSet::new(blocks, budgets.to_vec())?, out.report))
}

/// I.i.d. Gaussian blocks scaled to exactly meet each budget.
pub fn random_precoder(tx_dims: &[usize], stats: &FeatureStats, budgets: &[f64], seed: u64) -> Result<PrecoderSet> {
    if tx_dims.len() != stats.device_count() {
        return Err(mismatch("random precoder devices", stats.device_count(), tx_dims.len()));
    }
    let mut rng = crate::seeds::rng(seed);
    let blocks = tx_dims
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let b = gaussian_matrix(t, stats.device_dims[k], stats.field, &mut rng);
            let p = block_power(&b, &stats.cov_block(k, k));
            if p > 0.0 {
                rscale(&b, (budgets[k] / p).sqrt())
            } else {
                b
            }
        })
        .collect();
    PrecoderSet::new(blocks, budgets.to_vec())
}

/// `V_k = √P₀ I`; requires `T N_{t,k} = D_k / 2` (or `D_k` in real mode).
/// The nominal budgets are `P₀`; the covariance-weighted power may exceed
/// them, which [`PrecoderSet::is_feasible`] reports.
pub fn identity_precoder(tx_dims: &[usize], signal_dims: &[usize], p0: f64) -> Result<PrecoderSet> {
    if tx_dims.len() != signal_dims.len() {
        return Err(mismatch("identity precoder devices", signal_dims.len(), tx_dims.len()));
    }
    if !(p0 >= 0.0) {
        return Err(Error::InvalidInput("P0 must be non-negative".into()));
    }
    let mut blocks = Vec::with_capacity(tx_dims.len());
    for (&t, &n) in tx_dims.iter().zip(signal_dims) {
        if t != n {
            return Err(Error::InvalidInput(format!(
                "identity precoding needs as many transmit dimensions as signal dimensions, got {t} x {n}"
            )));
        }
        blocks.push(CMat::identity(t, t) * c(p0.sqrt()));
    }
    let budgets = vec![p0; blocks.len()];
    PrecoderSet::new(blocks, budgets)
}

/// Digital multiple-access scheme for the latency baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Fdma,
    Tdma,
}

/// Latency of a digital transmission; `unreachable` marks a zero-capacity
/// device that has bits to send, in which case `seconds` is infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub seconds: f64,
    pub unreachable: bool,
}

/// Eigenmode capacity `b log2 det(I + H Q H^H / (N0 b))` in bit/s with the
/// water-filled `Q` under `power`.
pub fn eigenmode_capacity(h: &CMat, power: f64, noise_density: f64, bandwidth: f64) -> f64 {
    let noise = noise_density * bandwidth;
    let g = hermitize(&rscale(&(h.adjoint() * h), 1.0 / noise));
    let eig = HermEigen::new(&g);
    let p = water_fill(&eig.values, power);
    let nats: f64 = eig.values.iter().zip(&p).map(|(&l, &pi)| (l.max(0.0) * pi).ln_1p()).sum();
    bandwidth * nats / std::f64::consts::LN_2
}

/// FDMA: `max_k bits_k / C_k` with bandwidth `B/K` each; TDMA: `Σ_k bits_k / C_k`
/// with the full band. Uses the first slot's channel of each device.
pub fn digital_latency(
    chan: &ChannelRealization,
    powers_w: &[f64],
    bits: &[f64],
    scheme: Access,
    bandwidth_hz: f64,
) -> Result<Latency> {
    let k = chan.device_count();
    if powers_w.len() != k || bits.len() != k {
        return Err(mismatch("latency inputs", k, format!("{} powers / {} bit counts", powers_w.len(), bits.len())));
    }
    if bits.iter().any(|&b| !(b >= 0.0)) || !(bandwidth_hz > 0.0) {
        return Err(Error::InvalidInput("bits must be non-negative and bandwidth positive".into()));
    }
    let n0 = chan.noise_power / bandwidth_hz;
    let band = match scheme {
        Access::Fdma => bandwidth_hz / k as f64,
        Access::Tdma => bandwidth_hz,
    };
    let mut total: f64 = 0.0;
    let mut unreachable = false;
    for dev in 0..k {
        if bits[dev] == 0.0 {
            continue;
        }
        let cap = eigenmode_capacity(&chan.per_slot[dev][0], powers_w[dev], n0, band);
        let t = if cap > 0.0 {
            bits[dev] / cap
        } else {
            unreachable = true;
            f64::INFINITY
        };
        total = match scheme {
            Access::Fdma => total.max(t),
            Access::Tdma => total + t,
        };
    }
    Ok(Latency { seconds: total, unreachable })
}

/// Latency `T / B` of the analog scheme.
pub fn proposed_latency(slots: usize, bandwidth_hz: f64) -> f64 {
    slots as f64 / bandwidth_hz
}

/// Covariance of `ẑ − ż` for the LMMSE detector, used by self-checks.
pub fn lmmse_error_cov(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<CMat> {
    require_noise(chan)?;
    let a = chan.stacked() * v.assembled();
    let m = received_cov(&a, stats, chan.noise_power);
    let as_ = &a * &stats.cov;
    Ok(hermitize(&(&stats.cov - as_.adjoint() * hpd_inverse(&m)? * as_)))
}
