//! MAP classification of received signals under the channel-transformed
//! Gaussian mixture, evaluated in real-composite form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{receive, ChannelRealization};
use crate::error::{mismatch, Error, Result};
use crate::feature_model::{to_signal, FeatureStats, SampleSet};
use crate::linalg::{c, CMat, CVec, Field};
use crate::objective::PrecoderSet;
use crate::seeds;

/// Relative diagonal loading applied when a class covariance is not numerically PD.
pub const JITTER: f64 = 1e-10;

/// Gaussian likelihood of one class over the real-composite received vector.
#[derive(Clone, Debug)]
pub struct AugmentedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub class: usize,
    /// Set when the covariance needed diagonal loading.
    pub jittered: bool,
    chol: Cholesky<f64, Dyn>,
    half_logdet: f64,
}

impl AugmentedGaussian {
    /// Validates `cov` and factors it, loading the diagonal if needed.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, class: usize) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(mismatch("augmented covariance", n, format!("{:?}", cov.shape())));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        let trace = cov.trace();
        if asym > 1e-10 * trace.abs().max(1.0) {
            return Err(Error::InvalidInput(format!("class {class} covariance is not symmetric ({asym:.3e})")));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -1e-8 * trace.abs() {
            return Err(Error::InvalidInput(format!(
                "class {class} covariance is indefinite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        let (chol, jittered) = match Cholesky::new(cov.clone()) {
            Some(ch) if ch.l().diagonal().iter().all(|&d| d > 0.0 && d.is_finite()) => (ch, false),
            _ => {
                if !(trace > 0.0) {
                    return Err(Error::NotPositiveDefinite(format!("class {class} covariance vanishes")));
                }
                let loaded = &cov + DMatrix::identity(n, n) * (JITTER * trace / n as f64);
                let ch = Cholesky::new(loaded)
                    .ok_or_else(|| Error::NotPositiveDefinite(format!("class {class} covariance after jitter")))?;
                (ch, true)
            }
        };
        let half_logdet = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { mean, cov, class, jittered, chol, half_logdet })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `−½ log det(2π C) − ½ (r − m)ᵀ C^{-1} (r − m)`.
    pub fn log_density(&self, r: &DVector<f64>) -> f64 {
        let d = r - &self.mean;
        let w = self.chol.l().solve_lower_triangular(&d).expect("factor has a positive diagonal");
        -0.5 * self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() - self.half_logdet - 0.5 * w.norm_squared()
    }
}

/// `[Re y; Im y]` in complex mode, `Re y` in real mode.
pub fn composite(y: &CVec, field: Field) -> DVector<f64> {
    match field {
        Field::Real => y.map(|x| x.re),
        Field::Complex => {
            let m = y.len();
            DVector::from_fn(2 * m, |i, _| if i < m { y[i].re } else { y[i - m].im })
        }
    }
}

/// Real-composite covariance of a complex vector with covariance `s` and
/// relation `g`.
pub fn composite_cov(s: &CMat, g: &CMat) -> DMatrix<f64> {
    let m = s.nrows();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let (sij, gij) = (s[(i, j)], g[(i, j)]);
            out[(i, j)] = 0.5 * (sij.re + gij.re);
            out[(i + m, j + m)] = 0.5 * (sij.re - gij.re);
            out[(i, j + m)] = 0.5 * (gij.im - sij.im);
            out[(i + m, j)] = 0.5 * (gij.im + sij.im);
        }
    }
    out
}

/// Per-class likelihoods of `y = H V ż + n`: mean `HVμ_j`, covariance
/// `HVΣ_jV^H H^H + δ₀² I` and relation `HVΓ_jVᵀHᵀ`. Classes with zero prior are skipped.
pub fn augment_stats(v: &PrecoderSet, chan: &ChannelRealization, stats: &FeatureStats) -> Result<Vec<AugmentedGaussian>> {
    v.check_shapes(chan, stats)?;
    let a = chan.stacked() * v.assembled();
    let m = a.nrows();
    let noise = CMat::identity(m, m) * c(chan.noise_power);
    let mut out = Vec::new();
    for (j, _) in stats.active_classes() {
        let mean = &a * &stats.means[j];
        let s = &a * &stats.covs[j] * a.adjoint() + &noise;
        let model = match stats.field {
            Field::Real => {
                let cov = s.map(|x| x.re);
                AugmentedGaussian::new(mean.map(|x| x.re), (&cov + cov.transpose()) * 0.5, j)?
            }
            Field::Complex => {
                let g = &a * &stats.relations[j] * a.transpose();
                let cov = composite_cov(&s, &g);
                AugmentedGaussian::new(composite(&mean, Field::Complex), (&cov + cov.transpose()) * 0.5, j)?
            }
        };
        out.push(model);
    }
    Ok(out)
}

/// `argmax_j log p_j + log N(r; m_j, C_j)` with `p_j = priors[model.class]`;
/// ties go to the smaller class index.
pub fn map_classify(r: &DVector<f64>, models: &[AugmentedGaussian], priors: &[f64]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for model in models {
        let p = *priors
            .get(model.class)
            .ok_or_else(|| mismatch("class priors", model.class + 1, priors.len()))?;
        if !(p > 0.0) {
            continue;
        }
        if model.dim() != r.len() {
            return Err(mismatch("received vector", model.dim(), r.len()));
        }
        let score = p.ln() + model.log_density(r);
        let better = match best {
            None => true,
            Some((s, j)) => score > s || (score == s && model.class < j),
        };
        if better {
            best = Some((score, model.class));
        }
    }
    best.map(|(_, j)| j)
        .ok_or_else(|| Error::InvalidInput("no class has a positive prior".into()))
}

/// Monte-Carlo accuracy with a `J × J` confusion matrix (rows: truth, columns: decision).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub trials: usize,
    pub confusion: Vec<Vec<u64>>,
    pub jittered: bool,
}

/// Transmits every test sample `trials_per_sample` times with fresh noise and
/// classifies each reception. Sample `i` uses the noise stream `derive(seed, i)`.
pub fn eval_accuracy(
    v: &PrecoderSet,
    chan: &ChannelRealization,
    stats: &FeatureStats,
    test: &SampleSet,
    trials_per_sample: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    if test.is_empty() || trials_per_sample == 0 {
        return Err(Error::InvalidInput("accuracy needs test samples and at least one trial".into()));
    }
    let feature_dims: Vec<usize> = match stats.field {
        Field::Real => stats.device_dims.clone(),
        Field::Complex => stats.device_dims.iter().map(|d| 2 * d).collect(),
    };
    if feature_dims.iter().sum::<usize>() != test.dim() {
        return Err(mismatch("test feature dimension", feature_dims.iter().sum::<usize>(), test.dim()));
    }
    let models = augment_stats(v, chan, stats)?;
    let a = chan.stacked() * v.assembled();
    let classes = stats.class_count().max(test.class_count());
    let decisions: Vec<Vec<usize>> = (0..test.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<usize>> {
            let z = to_signal(test.features.column(i).as_slice(), &feature_dims, stats.field)?;
            let mut rng = seeds::rng(seeds::derive(seed, i as u64));
            (0..trials_per_sample)
                .map(|_| {
                    let y = receive(&a, &z, chan.noise_power, stats.field, &mut rng);
                    map_classify(&composite(&y, stats.field), &models, &stats.priors)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0u64;
    for (i, ds) in decisions.iter().enumerate() {
        let truth = test.labels[i];
        for &d in ds {
            confusion[truth][d] += 1;
            correct += u64::from(d == truth);
        }
    }
    let trials = test.len() * trials_per_sample;
    Ok(AccuracyReport {
        accuracy: correct as f64 / trials as f64,
        trials,
        confusion,
        jittered: models.iter().any(|m| m.jittered),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_model::GmSpec;
    use crate::instance::random_instance;
    use crate::linalg::{gaussian_matrix, hermitize, C64};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn model(mean: &[f64], cov: DMatrix<f64>, class: usize) -> AugmentedGaussian {
        AugmentedGaussian::new(DVector::from_column_slice(mean), cov, class).unwrap()
    }

    #[test]
    fn circular_split() {
        let s = CMat::identity(3, 3);
        let g = CMat::zeros(3, 3);
        let cov = composite_cov(&s, &g);
        let mut want = DMatrix::identity(6, 6);
        want *= 0.5;
        assert_eq!(cov, want);
    }

    #[test]
    fn zero_precoder_sees_only_noise() {
        let inst = random_instance(Field::Complex, 2, 2, 3, 1, 1);
        let models = augment_stats(&inst.v.scaled(0.0), &inst.chan, &inst.stats).unwrap();
        assert_eq!(models.len(), 3);
        for m in &models {
            assert_eq!(m.mean.norm(), 0.0);
            assert!((&m.cov - DMatrix::identity(6, 6) * (0.5 * inst.chan.noise_power)).norm() < 1e-15);
        }
    }

    #[test]
    fn composite_cov_matches_sampling() {
        // z = L1 a + L2 b with a circular and b real gives Σ = L1L1^H + L2L2^H, Γ = L2L2^T
        let mut rng = seeds::rng(3);
        let l1 = gaussian_matrix(3, 3, Field::Complex, &mut rng);
        let l2 = gaussian_matrix(3, 2, Field::Complex, &mut rng);
        let s = hermitize(&(&l1 * l1.adjoint() + &l2 * l2.adjoint()));
        let g = &l2 * l2.transpose();
        let want = composite_cov(&s, &g);
        let draws = 100_000;
        let mut acc = DMatrix::<f64>::zeros(6, 6);
        for _ in 0..draws {
            let a = gaussian_matrix(3, 1, Field::Complex, &mut rng);
            let b = gaussian_matrix(2, 1, Field::Real, &mut rng);
            let z = (&l1 * a + &l2 * b).column(0).into_owned();
            let r = composite(&z, Field::Complex);
            acc += &r * r.transpose();
        }
        acc /= draws as f64;
        assert!((&acc - &want).norm() < 0.02 * want.norm(), "{}", (&acc - &want).norm() / want.norm());
    }

    #[test]
    fn nearest_mean_and_priors() {
        let eye = DMatrix::identity(2, 2);
        let models = vec![model(&[0.0, 0.0], eye.clone(), 0), model(&[3.0, 0.0], eye.clone(), 1), model(&[0.0, 3.0], eye, 2)];
        let at = DVector::from_vec(vec![0.0, 3.0]);
        assert_eq!(map_classify(&at, &models, &[1.0 / 3.0; 3]).unwrap(), 2);
        assert_eq!(map_classify(&at, &models, &[1.0, 0.0, 0.0]).unwrap(), 0);
        let mid = DVector::from_vec(vec![1.5, 0.0]);
        assert_eq!(map_classify(&mid, &models, &[0.5, 0.5, 0.0]).unwrap(), 0);
        assert!(map_classify(&at, &models, &[0.0; 3]).is_err());
    }

    #[test]
    fn decisions_invariant_to_prior_shift_and_scaling() {
        let inst = random_instance(Field::Complex, 2, 2, 3, 1, 6);
        let models = augment_stats(&inst.v, &inst.chan, &inst.stats).unwrap();
        let mut rng = seeds::rng(1);
        for _ in 0..50 {
            let y = gaussian_matrix(3, 1, Field::Complex, &mut rng).column(0).into_owned();
            let r = composite(&y, Field::Complex);
            let base = map_classify(&r, &models, &inst.stats.priors).unwrap();
            let shifted: Vec<f64> = inst.stats.priors.iter().map(|p| p * 7.5).collect();
            assert_eq!(map_classify(&r, &models, &shifted).unwrap(), base);
            let k = 3.7;
            let scaled: Vec<AugmentedGaussian> = models
                .iter()
                .map(|m| AugmentedGaussian::new(&m.mean * k, &m.cov * (k * k), m.class).unwrap())
                .collect();
            assert_eq!(map_classify(&(&r * k), &scaled, &inst.stats.priors).unwrap(), base);
        }
    }

    #[test]
    fn proper_case_matches_circular_density() {
        let mut rng = seeds::rng(8);
        let l = gaussian_matrix(3, 3, Field::Complex, &mut rng);
        let s = hermitize(&(&l * l.adjoint() + CMat::identity(3, 3) * c(0.1)));
        let mu = gaussian_matrix(3, 1, Field::Complex, &mut rng).column(0).into_owned();
        let m = AugmentedGaussian::new(composite(&mu, Field::Complex), composite_cov(&s, &CMat::zeros(3, 3)), 0).unwrap();
        let s_inv = s.clone().try_inverse().unwrap();
        let logdet = s.determinant().re.ln();
        for _ in 0..10 {
            let y = gaussian_matrix(3, 1, Field::Complex, &mut rng).column(0).into_owned();
            let d = &y - &mu;
            let quad = (d.adjoint() * &s_inv * &d)[(0, 0)].re;
            let circular = -3.0 * std::f64::consts::PI.ln() - logdet - quad;
            assert_relative_eq!(m.log_density(&composite(&y, Field::Complex)), circular, epsilon = 1e-9);
        }
    }

    /// Scalar improper complex Gaussian with variance `v` and relation `rho`.
    fn scalar_log_density(y: C64, mean: C64, v: f64, rho: C64) -> f64 {
        let d = y - mean;
        let det = v * v - rho.norm_sqr();
        -(std::f64::consts::PI.ln() + 0.5 * det.ln()) - (v * d.norm_sqr() - (rho.conj() * d * d).re) / det
    }

    #[test]
    fn scalar_boundary_matches_bisection() {
        let (m0, v0, r0) = (C64::new(0.0, 0.0), 1.0, C64::new(0.3, 0.1));
        let (m1, v1, r1) = (C64::new(2.0, 1.0), 2.0, C64::new(-0.5, 0.4));
        let priors = [0.4_f64, 0.6];
        let one = |x: C64| CMat::from_element(1, 1, x);
        let models = vec![
            AugmentedGaussian::new(composite(&DVector::from_element(1, m0), Field::Complex), composite_cov(&one(c(v0)), &one(r0)), 0).unwrap(),
            AugmentedGaussian::new(composite(&DVector::from_element(1, m1), Field::Complex), composite_cov(&one(c(v1)), &one(r1)), 1).unwrap(),
        ];
        let llr = |t: f64| {
            let y = m0 + (m1 - m0) * t;
            priors[1].ln() + scalar_log_density(y, m1, v1, r1) - priors[0].ln() - scalar_log_density(y, m0, v0, r0)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        assert!(llr(lo) < 0.0 && llr(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if llr(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        for i in 0..10 {
            let t = root + (i as f64 - 4.5) * 1e-3;
            let y = m0 + (m1 - m0) * t;
            let got = map_classify(&composite(&DVector::from_element(1, y), Field::Complex), &models, &priors).unwrap();
            assert_eq!(got, usize::from(t > root), "t = {t}, root = {root}");
        }
    }

    #[test]
    fn indefinite_covariance_rejected_and_singular_jittered() {
        let mut bad = DMatrix::identity(2, 2);
        bad[(1, 1)] = -0.5;
        assert!(AugmentedGaussian::new(DVector::zeros(2), bad, 0).is_err());
        let mut singular = DMatrix::identity(2, 2);
        singular[(1, 1)] = 0.0;
        assert!(AugmentedGaussian::new(DVector::zeros(2), singular, 0).unwrap().jittered);
    }

    fn separable_setup(field: Field) -> (PrecoderSet, ChannelRealization, FeatureStats, SampleSet) {
        let spec = GmSpec::isotropic(vec![vec![3.0, 0.0, 0.0, 0.0], vec![0.0, 3.0, 0.0, 0.0], vec![0.0, 0.0, -3.0, 3.0]], 0.01, false);
        let train = crate::feature_model::sample_gm(&spec, 3000, 1).unwrap();
        let test = crate::feature_model::sample_gm(&spec, 300, 2).unwrap();
        let stats = crate::feature_model::estimate_stats(&train, &[4], field).unwrap();
        let n = stats.dim();
        let h = gaussian_matrix(n, n, field, &mut seeds::rng(3));
        let chan = ChannelRealization::new(field, vec![vec![h]], 1e-9).unwrap();
        let v = PrecoderSet::new(vec![CMat::identity(n, n)], vec![100.0]).unwrap();
        (v, chan, stats, test)
    }

    #[test]
    fn noiseless_separable_classes_are_perfect() {
        for field in [Field::Complex, Field::Real] {
            let (v, chan, stats, test) = separable_setup(field);
            let acc = eval_accuracy(&v, &chan, &stats, &test, 2, 5).unwrap();
            assert_eq!(acc.accuracy, 1.0, "{field:?}");
            assert_eq!(acc.trials, 600);
            assert_eq!(acc.confusion.iter().flatten().sum::<u64>(), 600);
        }
    }

    #[test]
    fn uninformative_channel_is_chance() {
        let (v, chan, stats, test) = separable_setup(Field::Complex);
        let chan = chan.with_noise_power(1.0).unwrap();
        let acc = eval_accuracy(&v.scaled(0.0), &chan, &stats, &test, 1, 5).unwrap();
        let pmax = stats.priors.iter().copied().fold(0.0, f64::max);
        let sigma = (pmax * (1.0 - pmax) / acc.trials as f64).sqrt();
        assert!((acc.accuracy - pmax).abs() <= 3.0 * sigma + 1e-12, "{} vs {pmax}", acc.accuracy);
    }

    #[test]
    fn accuracy_is_deterministic_per_seed() {
        let inst = random_instance(Field::Complex, 1, 2, 2, 1, 2);
        let spec = GmSpec::isotropic(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]], 0.3, false);
        let test = crate::feature_model::sample_gm(&spec, 200, 4).unwrap();
        let a = eval_accuracy(&inst.v, &inst.chan, &inst.stats, &test, 3, 11).unwrap();
        let b = eval_accuracy(&inst.v, &inst.chan, &inst.stats, &test, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(eval_accuracy(&inst.v, &inst.chan, &inst.stats, &test, 0, 11).is_err());
    }
}
