//! Numerical self-checks: the log-det variational identities behind the BCA
//! reformulation, and finite-difference verification of the gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::feature_model::FeatureStats;
use crate::linalg::{c, gaussian_matrix, hermitize, hpd_inverse, hpd_solve, logdet_hpd, psd_sqrt, re_inner, trace_re, CMat, Field, HermEigen};
use crate::objective::{delta_r, grad_delta_r, Mcr2Params, PrecoderSet};

fn random_hpd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = gaussian_matrix(n, n, Field::Complex, rng);
    hermitize(&(&g * g.adjoint() + CMat::identity(n, n) * c(0.1)))
}

/// `log det W − tr(W F) + r`, maximized over `W ≻ 0` at `W = F^{-1}`.
pub fn lemma1_surrogate(w: &CMat, f: &CMat) -> Result<f64> {
    Ok(logdet_hpd(w)? - trace_re(&(w * f)) + w.nrows() as f64)
}

/// `K(Ξ) = (I − Ξ^H A B^{1/2})(I − Ξ^H A B^{1/2})^H + Ξ^H Ξ`.
pub fn lemma2_k(xi: &CMat, a: &CMat, b_half: &CMat) -> CMat {
    let l = b_half.nrows();
    let e = CMat::identity(l, l) - xi.adjoint() * a * b_half;
    hermitize(&(&e * e.adjoint() + xi.adjoint() * xi))
}

/// Outcome of one randomized identity check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    /// `|closed form − direct log-det|`.
    pub residual: f64,
    /// Largest surrogate increase seen when perturbing the optimizer (should be ≤ 0).
    pub max_gain: f64,
}

/// `−log det F` against the surrogate at `W = F^{-1}`, then random Hermitian
/// perturbations of `W` that keep it PD.
pub fn lemma1_check<R: Rng + ?Sized>(dim: usize, perturbations: usize, rng: &mut R) -> Result<IdentityCheck> {
    let f = random_hpd(dim, rng);
    let w = hpd_inverse(&f)?;
    let direct = -HermEigen::new(&f).values.iter().map(|l| l.ln()).sum::<f64>();
    let at_opt = lemma1_surrogate(&w, &f)?;
    let wmin = HermEigen::new(&w).values[0];
    let mut max_gain = f64::NEG_INFINITY;
    for _ in 0..perturbations {
        let g = gaussian_matrix(dim, dim, Field::Complex, rng);
        let d = hermitize(&(&g + g.adjoint()));
        let d = d.scale(0.25 * wmin / d.norm());
        for sign in [1.0, -1.0] {
            max_gain = max_gain.max(lemma1_surrogate(&(&w + d.scale(sign)), &f)? - at_opt);
        }
    }
    Ok(IdentityCheck {
        residual: (at_opt - direct).abs(),
        max_gain,
    })
}

/// `log det(I + A B A^H)` against the surrogate at `Ξ⋆, Ω⋆`, plus random
/// perturbations of `Ξ` with `Ω` re-optimized.
pub fn lemma2_check<R: Rng + ?Sized>(s: usize, l: usize, perturbations: usize, rng: &mut R) -> Result<IdentityCheck> {
    let a = gaussian_matrix(s, l, Field::Complex, rng);
    let b = random_hpd(l, rng);
    let b_half = psd_sqrt(&b);
    let inner = hermitize(&(CMat::identity(s, s) + &a * &b * a.adjoint()));
    let direct = inner.clone().determinant().re.ln();
    let xi = hpd_solve(&inner, &(&a * &b_half))?;
    let value = |xi: &CMat| -> Result<f64> {
        let k = lemma2_k(xi, &a, &b_half);
        let omega = hpd_inverse(&k)?;
        Ok(logdet_hpd(&omega)? - re_inner(&omega, &k) + l as f64)
    };
    let at_opt = value(&xi)?;
    let mut max_gain = f64::NEG_INFINITY;
    for _ in 0..perturbations {
        let d = gaussian_matrix(s, l, Field::Complex, rng);
        let d = d.scale(1e-2 * xi.norm().max(1e-3) / d.norm());
        for sign in [1.0, -1.0] {
            max_gain = max_gain.max(value(&(&xi + d.scale(sign)))? - at_opt);
        }
    }
    Ok(IdentityCheck {
        residual: (at_opt - direct).abs(),
        max_gain,
    })
}

/// Worst relative error between `Re tr(∇^H Δ)` and central differences
/// `(ΔR(V + hΔ) − ΔR(V − hΔ)) / 2h` over random unit directions.
pub fn grad_check<R: Rng + ?Sized>(
    v: &PrecoderSet,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    params: &Mcr2Params,
    directions: usize,
    step: f64,
    rng: &mut R,
) -> Result<f64> {
    let grad = grad_delta_r(v, chan, stats, params)?;
    let gnorm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut dir: Vec<CMat> = v
            .blocks
            .iter()
            .map(|b| gaussian_matrix(b.nrows(), b.ncols(), stats.field, rng))
            .collect();
        let norm = dir.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|d| *d /= c(norm));
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| re_inner(g, d)).sum();
        let plus = delta_r(&v.axpy(step, &dir), chan, stats, params)?;
        let minus = delta_r(&v.axpy(-step, &dir), chan, stats, params)?;
        let numeric = (plus - minus) / (2.0 * step);
        let scale = analytic.abs().max(numeric.abs()).max(1e-8 * gnorm).max(f64::MIN_POSITIVE);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::random_instance;
    use crate::seeds;

    #[test]
    fn lemma_one_holds() {
        let mut rng = seeds::rng(11);
        for dim in 1..=8 {
            let r = lemma1_check(dim, 10, &mut rng).unwrap();
            assert!(r.residual < 1e-9, "{r:?}");
            assert!(r.max_gain <= 1e-12, "{r:?}");
        }
    }

    #[test]
    fn lemma_two_holds() {
        let mut rng = seeds::rng(12);
        for (s, l) in [(1, 1), (3, 2), (2, 5), (6, 4)] {
            let r = lemma2_check(s, l, 10, &mut rng).unwrap();
            assert!(r.residual < 1e-9, "{r:?}");
            assert!(r.max_gain <= 1e-12, "{r:?}");
        }
    }

    #[test]
    fn omega_closed_forms_agree() {
        let mut rng = seeds::rng(13);
        let a = gaussian_matrix(3, 2, Field::Complex, &mut rng);
        let b = random_hpd(2, &mut rng);
        let bh = psd_sqrt(&b);
        let inner = hermitize(&(CMat::identity(3, 3) + &a * &b * a.adjoint()));
        let xi = hpd_solve(&inner, &(&a * &bh)).unwrap();
        let from_k = hpd_inverse(&lemma2_k(&xi, &a, &bh)).unwrap();
        let short = (CMat::identity(2, 2) - xi.adjoint() * &a * &bh).try_inverse().unwrap();
        assert!((from_k - short).norm() < 1e-9);
    }

    #[test]
    fn gradient_matches_differences() {
        for field in [Field::Complex, Field::Real] {
            for seed in 0..4 {
                let inst = random_instance(field, 2, 2, 3, 1, seed);
                let mut rng = seeds::rng(seed + 100);
                let err = grad_check(&inst.v, &inst.chan, &inst.stats, &inst.params, 8, 1e-5, &mut rng).unwrap();
                assert!(err < 1e-4, "{field:?} seed {seed}: {err}");
            }
        }
    }
}
