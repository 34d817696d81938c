//! The coding-rate-reduction precoding objective, its gradient, and the
//! per-device power constraint.
//!
//! For received features `y = H V ż + n` the objective is
//!
//! ```text
//! ΔR(V) = log det(γ I + α H V Σ V^H H^H) − Σ_j p_j log det(γ I + α H V Σ_j V^H H^H)
//! ```
//!
//! with `α = T N_r / ε²` and `γ = 1 + α δ₀²`. Both terms are evaluated as
//! `n ln γ + log det(I + (α/γ) X)` so that very small or very large `α`
//! never costs relative precision.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{mismatch, Error, Result};
use crate::feature_model::FeatureStats;
use crate::linalg::{block_diag, c, hermitize, rscale, trace_re, CMat, HermEigen, MatrixJson};

/// Relative slack on the per-device power constraint.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Per-device precoders `V_k` (`T N_{t,k} x D_k/2`) with their budgets `T P_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PrecoderJson", try_from = "PrecoderJson")]
pub struct PrecoderSet {
    pub blocks: Vec<CMat>,
    pub budgets: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PrecoderJson {
    budgets: Vec<f64>,
    blocks: Vec<MatrixJson>,
}

impl From<PrecoderSet> for PrecoderJson {
    fn from(p: PrecoderSet) -> Self {
        Self {
            budgets: p.budgets,
            blocks: p.blocks.iter().map(MatrixJson::from).collect(),
        }
    }
}

impl TryFrom<PrecoderJson> for PrecoderSet {
    type Error = Error;

    fn try_from(j: PrecoderJson) -> Result<Self> {
        let blocks = j.blocks.iter().map(CMat::try_from).collect::<Result<_>>()?;
        Self::new(blocks, j.budgets)
    }
}

impl PrecoderSet {
    pub fn new(blocks: Vec<CMat>, budgets: Vec<f64>) -> Result<Self> {
        if blocks.len() != budgets.len() {
            return Err(mismatch("PrecoderSet budgets", blocks.len(), budgets.len()));
        }
        if budgets.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::InvalidInput("power budgets must be non-negative".into()));
        }
        Ok(Self { blocks, budgets })
    }

    pub fn zeros(tx_dims: &[usize], signal_dims: &[usize], budgets: Vec<f64>) -> Result<Self> {
        if tx_dims.len() != signal_dims.len() {
            return Err(mismatch("PrecoderSet devices", tx_dims.len(), signal_dims.len()));
        }
        let blocks = tx_dims.iter().zip(signal_dims).map(|(&t, &n)| CMat::zeros(t, n)).collect();
        Self::new(blocks, budgets)
    }

    pub fn device_count(&self) -> usize {
        self.blocks.len()
    }

    /// Block-diagonal `V = diag{V_1, ..., V_K}`.
    pub fn assembled(&self) -> CMat {
        block_diag(&self.blocks)
    }

    /// `tr(V_k Σ^{(kk)} V_k^H)`.
    pub fn power(&self, k: usize, stats: &FeatureStats) -> f64 {
        block_power(&self.blocks[k], &stats.cov_block(k, k))
    }

    pub fn powers(&self, stats: &FeatureStats) -> Vec<f64> {
        (0..self.device_count()).map(|k| self.power(k, stats)).collect()
    }

    pub fn is_feasible(&self, stats: &FeatureStats) -> bool {
        self.powers(stats)
            .iter()
            .zip(&self.budgets)
            .all(|(&p, &b)| p <= b * (1.0 + FEASIBILITY_TOL))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| rscale(b, s)).collect(),
            budgets: self.budgets.clone(),
        }
    }

    /// `self + step * direction`, block by block.
    pub fn axpy(&self, step: f64, direction: &[CMat]) -> Self {
        Self {
            blocks: self.blocks.iter().zip(direction).map(|(b, d)| b + rscale(d, step)).collect(),
            budgets: self.budgets.clone(),
        }
    }

    /// Checks block shapes against a channel and feature statistics.
    pub fn check_shapes(&self, chan: &ChannelRealization, stats: &FeatureStats) -> Result<()> {
        let k = chan.device_count();
        if self.device_count() != k || stats.device_count() != k {
            return Err(mismatch(
                "device count",
                k,
                format!("{} precoders / {} feature blocks", self.device_count(), stats.device_count()),
            ));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let want = (chan.tx_dim(i), stats.device_dims[i]);
            if b.shape() != want {
                return Err(mismatch("precoder block", format!("{want:?}"), format!("{:?}", b.shape())));
            }
        }
        Ok(())
    }
}

pub fn block_power(v: &CMat, cov_kk: &CMat) -> f64 {
    trace_re(&(v * cov_kk * v.adjoint()))
}

/// `ε`, `α = T N_r / ε²` and `γ = 1 + α δ₀²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mcr2Params {
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Mcr2Params {
    pub fn new(eps: f64, chan: &ChannelRealization) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidInput(format!("coding precision must be positive, got {eps}")));
        }
        let alpha = chan.rx_dim() as f64 / (eps * eps);
        Ok(Self {
            eps,
            alpha,
            gamma: 1.0 + alpha * chan.noise_power,
        })
    }

    /// `α / γ`.
    pub fn ratio(&self) -> f64 {
        self.alpha / self.gamma
    }
}

/// `log det(I + A)` for Hermitian PSD `A`; fails when the spectrum reaches -1.
fn logdet_shifted(a: &CMat, what: &str) -> Result<f64> {
    let eig = HermEigen::new(a);
    let lo = eig.values.first().copied().unwrap_or(0.0);
    if lo <= -1.0 + 1e-12 {
        return Err(Error::NotPositiveDefinite(format!("{what}: inner matrix has eigenvalue {lo} below -1")));
    }
    Ok(eig.values.iter().map(|&l| l.ln_1p()).sum())
}

/// `H V`, the effective channel seen by `ż`.
pub fn effective_channel(v: &PrecoderSet, chan: &ChannelRealization) -> CMat {
    chan.stacked() * v.assembled()
}

/// The objective `ΔR(V_1, ..., V_K)` in nats.
pub fn delta_r(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats, params: &Mcr2Params) -> Result<f64> {
    v.check_shapes(chan, stats)?;
    let a = effective_channel(v, chan);
    let s = params.ratio();
    let n = a.nrows() as f64;
    let mut value = logdet_shifted(&rscale(&(&a * &stats.cov * a.adjoint()), s), "overall term")?;
    let mut mass = 0.0;
    for (j, p) in stats.active_classes() {
        value -= p * logdet_shifted(&rscale(&(&a * &stats.covs[j] * a.adjoint()), s), "class term")?;
        mass += p;
    }
    Ok(value + (1.0 - mass) * n * params.gamma.ln())
}

/// Full gradient `2α H^H D H V Σ − 2α Σ_j p_j H^H D_j H V Σ_j` as a `T N_t x D/2` matrix.
///
/// Satisfies `d/ds ΔR(V + sΔ)|₀ = Re tr(∇^H Δ)` for block-diagonal `Δ`.
pub fn grad_full(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats, params: &Mcr2Params) -> Result<CMat> {
    v.check_shapes(chan, stats)?;
    let h = chan.stacked();
    let a = h * v.assembled();
    let s = params.ratio();
    let eye = CMat::identity(a.nrows(), a.nrows());
    let term = |cov: &CMat| -> Result<CMat> {
        let inner = &eye + rscale(&(&a * cov * a.adjoint()), s);
        let d = crate::linalg::hpd_inverse(&inner)?;
        Ok(h.adjoint() * d * &a * cov)
    };
    let mut g = term(&stats.cov)?;
    for (j, p) in stats.active_classes() {
        g -= term(&stats.covs[j])? * c(p);
    }
    Ok(rscale(&g, 2.0 * s))
}

/// Per-device gradient blocks, the diagonal blocks of [`grad_full`].
pub fn grad_delta_r(
    v: &PrecoderSet,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
) -> Result<Vec<CMat>> {
    let g = grad_full(v, chan, stats, params)?;
    Ok((0..v.device_count())
        .map(|k| {
            let rows = chan.tx_range(k);
            let cols = stats.range(k);
            g.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
        })
        .collect())
}

/// Scales each over-budget block back onto its power boundary.
pub fn project_power(v: &PrecoderSet, stats: &FeatureStats) -> PrecoderSet {
    let blocks = v
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let power = block_power(b, &stats.cov_block(k, k));
            let budget = v.budgets[k];
            if power > budget && power > 0.0 {
                rscale(b, (budget / power).sqrt())
            } else {
                b.clone()
            }
        })
        .collect();
    PrecoderSet {
        blocks,
        budgets: v.budgets.clone(),
    }
}

/// Euclidean projection onto the power set: an over-budget block becomes
/// `V_k (I + μ Σ^{(kk)})^{-1}` with `μ > 0` chosen to meet the budget.
pub fn project_power_exact(v: &PrecoderSet, stats: &FeatureStats) -> PrecoderSet {
    let blocks = v
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let cov_kk = hermitize(&stats.cov_block(k, k));
            let budget = v.budgets[k];
            if block_power(b, &cov_kk) <= budget {
                return b.clone();
            }
            let eig = HermEigen::new(&cov_kk);
            let mut y = b * &eig.vectors;
            let smax = eig.max().max(0.0);
            // s w / (1 + μ s)² = (w / s) / (1/s + μ)²
            let (mut inv, mut weights) = (Vec::new(), Vec::new());
            for (i, &s) in eig.values.iter().enumerate() {
                if s > 1e-14 * smax {
                    inv.push(1.0 / s);
                    weights.push(y.column(i).norm_squared() / s);
                }
            }
            let mu = crate::solver::bisect_dual(&inv, &weights, budget, 1e-13);
            for (i, &s) in eig.values.iter().enumerate() {
                if s > 1e-14 * smax {
                    y.column_mut(i).iter_mut().for_each(|x| *x /= 1.0 + mu * s);
                }
            }
            y * eig.vectors.adjoint()
        })
        .collect();
    PrecoderSet {
        blocks,
        budgets: v.budgets.clone(),
    }
}

/// Projects a per-device gradient onto the feasible cone at `v`: for blocks on
/// the power boundary the outward normal component `V_k Σ^{(kk)}` is removed.
pub fn projected_gradient(v: &PrecoderSet, grad: &[CMat], stats: &FeatureStats, active_tol: f64) -> Vec<CMat> {
    grad.iter()
        .enumerate()
        .map(|(k, g)| {
            let cov_kk = stats.cov_block(k, k);
            let power = block_power(&v.blocks[k], &cov_kk);
            if power < v.budgets[k] * (1.0 - active_tol) {
                return g.clone();
            }
            let normal = &v.blocks[k] * hermitize(&cov_kk);
            let nn = crate::linalg::re_inner(&normal, &normal);
            let gn = crate::linalg::re_inner(g, &normal);
            if nn <= 0.0 || gn <= 0.0 {
                g.clone()
            } else {
                g - rscale(&normal, gn / nn)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelDims, ChannelRealization};
    use crate::linalg::{gaussian_matrix, Field};
    use crate::instance::{random_instance, Instance};
    use approx::assert_relative_eq;

    #[test]
    fn zero_precoder_gives_zero() {
        let Instance { chan, stats, params, v } = random_instance(Field::Complex, 2, 3, 4, 1, 1);
        let zero = v.scaled(0.0);
        assert_relative_eq!(delta_r(&zero, &chan, &stats, &params).unwrap(), 0.0, epsilon = 1e-12);
        let g = grad_delta_r(&zero, &chan, &stats, &params).unwrap();
        assert!(g.iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn single_class_matching_global_is_flat() {
        let Instance { chan, stats, params, v } = random_instance(Field::Complex, 1, 2, 4, 1, 2);
        let flat = FeatureStats::from_class_moments(
            Field::Complex,
            stats.device_dims.clone(),
            vec![1.0],
            vec![stats.mean.clone()],
            vec![stats.cov.clone()],
            vec![stats.relations[0].clone()],
        )
        .unwrap();
        assert_relative_eq!(delta_r(&v, &chan, &flat, &params).unwrap(), 0.0, epsilon = 1e-10);
        let g = grad_delta_r(&v, &chan, &flat, &params).unwrap();
        assert!(g.iter().all(|b| b.norm() < 1e-10));
    }

    #[test]
    fn projection_scaling_law() {
        let Instance { stats, v, .. } = random_instance(Field::Complex, 2, 3, 4, 1, 3);
        let feasible = project_power(&v, &stats);
        assert_eq!(project_power(&feasible, &stats), feasible);
        let big = feasible.scaled(0.0).axpy(1.0, &feasible.blocks).scaled(2.0);
        let back = project_power(&big, &stats);
        for k in 0..2 {
            let p = big.power(k, &stats);
            if p > 0.0 {
                assert_relative_eq!(p, 4.0 * feasible.power(k, &stats), max_relative = 1e-12);
            }
            assert_relative_eq!(back.power(k, &stats), feasible.power(k, &stats), max_relative = 1e-9);
        }
    }

    #[test]
    fn zero_power_block_untouched() {
        let Instance { stats, v, .. } = random_instance(Field::Complex, 2, 3, 4, 1, 4);
        let mut z = v.scaled(0.0);
        z.budgets = vec![1.0, 1.0];
        assert_eq!(project_power(&z, &stats), z);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let Instance { chan, stats, params, .. } = random_instance(Field::Complex, 2, 3, 4, 1, 5);
        let bad = PrecoderSet::new(vec![CMat::zeros(2, 2), CMat::zeros(2, 2)], vec![1.0, 1.0]).unwrap();
        assert!(delta_r(&bad, &chan, &stats, &params).is_err());
    }

    #[test]
    fn unitary_rotation_of_channel_is_invisible() {
        let Instance { chan, stats, params, v } = random_instance(Field::Complex, 2, 3, 4, 1, 6);
        let mut rng = crate::seeds::rng(66);
        let g = gaussian_matrix(chan.rx_dim(), chan.rx_dim(), Field::Complex, &mut rng);
        let q = g.qr().q();
        let rotated: Vec<Vec<CMat>> = chan.per_slot.iter().map(|slots| slots.iter().map(|h| &q * h).collect()).collect();
        let chan2 = ChannelRealization::new(Field::Complex, rotated, chan.noise_power).unwrap();
        let a = delta_r(&v, &chan, &stats, &params).unwrap();
        let b = delta_r(&v, &chan2, &stats, &params).unwrap();
        assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        let _ = ChannelDims::uniform(1, 1, 1, 1);
    }

    #[test]
    fn json_roundtrip() {
        let Instance { v, .. } = random_instance(Field::Complex, 2, 3, 4, 1, 7);
        let text = serde_json::to_string(&v).unwrap();
        let back: PrecoderSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
    }

    fn dense_delta_r(inst: &Instance) -> f64 {
        // log det via LU determinants of γI + α A Σ A^H, no eigen or Cholesky
        let a = inst.chan.stacked() * inst.v.assembled();
        let m = a.nrows();
        let eye = CMat::identity(m, m) * c(inst.params.gamma);
        let logdet = |s: &CMat| (&eye + &a * s * a.adjoint() * c(inst.params.alpha)).determinant().norm().ln();
        let mut out = logdet(&inst.stats.cov);
        for (j, p) in inst.stats.priors.iter().enumerate() {
            out -= p * logdet(&inst.stats.covs[j]);
        }
        out
    }

    #[test]
    fn matches_dense_determinant() {
        for seed in 0..5 {
            let inst = crate::instance::random_instance_with(Field::Complex, 1, 2, 2, 1, 2, 2, seed);
            let got = delta_r(&inst.v, &inst.chan, &inst.stats, &inst.params).unwrap();
            assert_relative_eq!(got, dense_delta_r(&inst), epsilon = 1e-10);
        }
        let inst = random_instance(Field::Real, 2, 2, 3, 2, 9);
        let got = delta_r(&inst.v, &inst.chan, &inst.stats, &inst.params).unwrap();
        assert_relative_eq!(got, dense_delta_r(&inst), epsilon = 1e-10);
    }

    #[test]
    fn noise_level_recomputation() {
        let inst = random_instance(Field::Complex, 2, 2, 3, 1, 4);
        for noise in [0.1, 2.0] {
            let chan = inst.chan.with_noise_power(noise).unwrap();
            let params = Mcr2Params::new(1.0, &chan).unwrap();
            let moved = Instance { chan, params, ..inst.clone() };
            let got = delta_r(&moved.v, &moved.chan, &moved.stats, &moved.params).unwrap();
            assert_relative_eq!(got, dense_delta_r(&moved), epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_projection_is_nearest_feasible_point() {
        let inst = random_instance(Field::Complex, 2, 3, 4, 1, 21);
        let y = inst.v.scaled(2.5);
        let p = project_power_exact(&y, &inst.stats);
        assert!(p.is_feasible(&inst.stats));
        for (k, b) in p.powers(&inst.stats).iter().enumerate() {
            assert_relative_eq!(*b, p.budgets[k], max_relative = 1e-9);
        }
        let mut rng = crate::seeds::rng(5);
        let tx: Vec<usize> = (0..2).map(|k| inst.chan.tx_dim(k)).collect();
        for _ in 0..200 {
            let z = crate::instance::random_feasible(&tx, &inst.stats, &y.budgets, &mut rng).unwrap();
            assert!(y.distance(&p) <= y.distance(&z) + 1e-12);
        }
        assert_eq!(project_power_exact(&inst.v, &inst.stats), inst.v);
    }
}

