//! Gaussian-mixture feature synthesis, the real-to-complex feature map,
//! empirical feature statistics and the sample-level coding-rate functions.

use std::io::{Read, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::linalg::{c, hermitize, CMat, CVec, Field, C64};
use crate::seeds;

/// Ground-truth Gaussian mixture over real feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmSpec {
    pub priors: Vec<f64>,
    pub class_means: Vec<Vec<f64>>,
    pub class_covs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sphere_project: bool,
}

impl GmSpec {
    pub fn class_count(&self) -> usize {
        self.priors.len()
    }

    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    /// Equal-prior mixture with isotropic class covariances `variance * I`.
    pub fn isotropic(class_means: Vec<Vec<f64>>, variance: f64, sphere_project: bool) -> Self {
        let j = class_means.len();
        let d = class_means.first().map_or(0, Vec::len);
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|r| (0..d).map(|c| if r == c { variance } else { 0.0 }).collect())
            .collect();
        Self {
            priors: vec![1.0 / j as f64; j],
            class_means,
            class_covs: vec![cov; j],
            sphere_project,
        }
    }

    /// Three classes in R^3 around `-e1`, `-e2`, `e3` with covariance `0.02 I`,
    /// projected onto the unit sphere.
    pub fn sphere_three_class() -> Self {
        Self::isotropic(
            vec![vec![-1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 1.0]],
            0.02,
            true,
        )
    }

    /// Random equal-prior mixture standing in for learned features: unit-norm
    /// class means, each class spread along its own random `rank`-dimensional
    /// subspace with total variance `spread`, samples projected onto the sphere.
    pub fn synthetic(classes: usize, dim: usize, rank: usize, spread: f64, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 || rank == 0 {
            return Err(Error::InvalidInput("synthetic mixture needs classes, dim, rank >= 1".into()));
        }
        let mut rng = seeds::rng(seed);
        let mut means = Vec::with_capacity(classes);
        let mut covs = Vec::with_capacity(classes);
        for _ in 0..classes {
            let mu = DVector::<f64>::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let mu = &mu / mu.norm();
            let basis = DMatrix::<f64>::from_fn(dim, rank, |_, _| StandardNormal.sample(&mut rng));
            let mut cov = &basis * basis.transpose();
            let tr = cov.trace();
            cov *= spread / tr;
            means.push(mu.iter().copied().collect());
            covs.push(cov.row_iter().map(|r| r.iter().copied().collect()).collect());
        }
        let spec = Self {
            priors: vec![1.0 / classes as f64; classes],
            class_means: means,
            class_covs: covs,
            sphere_project: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.priors.len();
        if j == 0 {
            return Err(Error::InvalidInput("mixture needs at least one class".into()));
        }
        if self.class_means.len() != j || self.class_covs.len() != j {
            return Err(mismatch("GmSpec classes", j, format!("{} means, {} covs", self.class_means.len(), self.class_covs.len())));
        }
        if self.priors.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput("priors must be finite and non-negative".into()));
        }
        let total: f64 = self.priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("priors sum to {total}, expected 1")));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        for (idx, (mu, cov)) in self.class_means.iter().zip(&self.class_covs).enumerate() {
            if mu.len() != d {
                return Err(mismatch("GmSpec mean", d, mu.len()));
            }
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(mismatch("GmSpec covariance", format!("{d}x{d}"), format!("class {idx}")));
            }
            let m = DMatrix::from_fn(d, d, |r, c| cov[r][c]);
            if (&m - m.transpose()).amax() > 1e-12 {
                return Err(Error::InvalidInput(format!("class {idx} covariance is not symmetric")));
            }
            let min_eig = SymmetricEigen::new(m).eigenvalues.min();
            if min_eig < -1e-10 {
                return Err(Error::InvalidInput(format!("class {idx} covariance has eigenvalue {min_eig}")));
            }
        }
        Ok(())
    }

    fn cov_matrix(&self, j: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| self.class_covs[j][r][c])
    }
}

/// Feature samples as columns, with hard labels and per-sample class membership.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// `D x M`, one sample per column.
    pub features: DMatrix<f64>,
    /// Zero-based class index per sample.
    pub labels: Vec<usize>,
    /// `M x J` row-stochastic membership (the diagonals of the per-class `Π_j`).
    pub membership: DMatrix<f64>,
}

impl SampleSet {
    /// Hard-labelled samples with one-hot membership.
    pub fn from_labels(features: DMatrix<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != features.ncols() {
            return Err(mismatch("SampleSet labels", features.ncols(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} out of range for {classes} classes")));
        }
        let membership = DMatrix::from_fn(labels.len(), classes, |m, j| if labels[m] == j { 1.0 } else { 0.0 });
        Ok(Self { features, labels, membership })
    }

    /// Soft membership; hard labels become the row argmax (first index on ties).
    pub fn from_membership(features: DMatrix<f64>, membership: DMatrix<f64>) -> Result<Self> {
        if membership.nrows() != features.ncols() {
            return Err(mismatch("SampleSet membership rows", features.ncols(), membership.nrows()));
        }
        for (m, row) in membership.row_iter().enumerate() {
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (row.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("membership row {m} is not a probability vector")));
            }
        }
        let labels = membership
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect();
        Ok(Self { features, labels, membership })
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.membership.ncols()
    }

    /// One row per sample: 1-based label, then the `D` feature values.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for (m, col) in self.features.column_iter().enumerate() {
            let mut rec = vec![(self.labels[m] + 1).to_string()];
            rec.extend(col.iter().map(|x| format!("{x:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, classes: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut labels = Vec::new();
        let mut values = Vec::new();
        let mut dim = None;
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("bad CSV value `{s}`: {e}")));
            let label = parse(&rec[0])? as usize;
            if label == 0 {
                return Err(Error::InvalidInput("CSV labels are 1-based".into()));
            }
            labels.push(label - 1);
            let row: Vec<f64> = rec.iter().skip(1).map(parse).collect::<Result<_>>()?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => return Err(mismatch("SampleSet CSV row", d, row.len())),
                _ => {}
            }
            values.extend(row);
        }
        let d = dim.unwrap_or(0);
        let features = DMatrix::from_column_slice(d, labels.len(), &values);
        Self::from_labels(features, labels, classes)
    }
}

/// Draws `m` i.i.d. samples from the mixture, optionally projected onto the unit sphere.
pub fn sample_gm(spec: &GmSpec, m: usize, seed: u64) -> Result<SampleSet> {
    spec.validate()?;
    if m == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let d = spec.dim();
    let factors: Vec<DMatrix<f64>> = (0..spec.class_count())
        .map(|j| {
            let eig = SymmetricEigen::new(spec.cov_matrix(j));
            let mut q = eig.eigenvectors;
            for (k, &l) in eig.eigenvalues.iter().enumerate() {
                q.column_mut(k).scale_mut(l.max(0.0).sqrt());
            }
            q
        })
        .collect();
    let picker = WeightedIndex::new(&spec.priors).map_err(|e| Error::InvalidInput(format!("priors: {e}")))?;
    let mut rng = seeds::rng(seed);
    let mut features = DMatrix::zeros(d, m);
    let mut labels = Vec::with_capacity(m);
    for col in 0..m {
        let j = picker.sample(&mut rng);
        let z = loop {
            let xi = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let z = DVector::from_column_slice(&spec.class_means[j]) + &factors[j] * xi;
            if !spec.sphere_project {
                break z;
            }
            let norm = z.norm();
            if norm > 0.0 {
                break z / norm;
            }
        };
        features.set_column(col, &z);
        labels.push(j);
    }
    SampleSet::from_labels(features, labels, spec.class_count())
}

/// `[z_1..z_{D/2}] + j [z_{D/2+1}..z_D]`.
pub fn real_to_complex(z: &[f64]) -> Result<Vec<C64>> {
    if !z.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("feature length {} is odd", z.len())));
    }
    let h = z.len() / 2;
    Ok((0..h).map(|i| C64::new(z[i], z[i + h])).collect())
}

/// Inverse of [`real_to_complex`].
pub fn complex_to_real(v: &[C64]) -> Vec<f64> {
    v.iter().map(|x| x.re).chain(v.iter().map(|x| x.im)).collect()
}

/// Signal dimension each device sends for a given per-device feature dimension.
pub fn signal_dims(feature_dims: &[usize], field: Field) -> Result<Vec<usize>> {
    feature_dims
        .iter()
        .map(|&d| match field {
            Field::Real => Ok(d),
            Field::Complex if d % 2 == 0 => Ok(d / 2),
            Field::Complex => Err(Error::InvalidInput(format!("device feature dimension {d} is odd"))),
        })
        .collect()
}

/// Maps a concatenated real feature vector to the transmitted signal: the
/// per-device real-to-complex map in complex mode, the identity in real mode.
pub fn to_signal(z: &[f64], feature_dims: &[usize], field: Field) -> Result<CVec> {
    let total: usize = feature_dims.iter().sum();
    if total != z.len() {
        return Err(mismatch("feature vector", total, z.len()));
    }
    match field {
        Field::Real => Ok(CVec::from_iterator(z.len(), z.iter().map(|&x| c(x)))),
        Field::Complex => {
            let mut out = Vec::with_capacity(total / 2);
            let mut start = 0;
            for &d in feature_dims {
                out.extend(real_to_complex(&z[start..start + d])?);
                start += d;
            }
            Ok(CVec::from_vec(out))
        }
    }
}

/// First- and second-order statistics of the transmitted signal `ż`, per class
/// and overall, addressable by device blocks.
#[derive(Clone, Debug)]
pub struct FeatureStats {
    pub field: Field,
    /// Signal dimension per device (`D_k / 2` in complex mode).
    pub device_dims: Vec<usize>,
    pub priors: Vec<f64>,
    /// Classes with no sample mass are kept with zero prior and flagged absent.
    pub present: Vec<bool>,
    pub means: Vec<CVec>,
    pub covs: Vec<CMat>,
    pub relations: Vec<CMat>,
    pub mean: CVec,
    pub cov: CMat,
}

impl FeatureStats {
    /// Assembles stats from per-class moments; the global mean and covariance
    /// follow from the mixture identity.
    pub fn from_class_moments(
        field: Field,
        device_dims: Vec<usize>,
        priors: Vec<f64>,
        means: Vec<CVec>,
        covs: Vec<CMat>,
        relations: Vec<CMat>,
    ) -> Result<Self> {
        let n: usize = device_dims.iter().sum();
        let j = priors.len();
        if means.len() != j || covs.len() != j || relations.len() != j {
            return Err(mismatch("class moments", j, format!("{}/{}/{}", means.len(), covs.len(), relations.len())));
        }
        for ((mu, s), g) in means.iter().zip(&covs).zip(&relations) {
            if mu.len() != n || s.shape() != (n, n) || g.shape() != (n, n) {
                return Err(mismatch("class moment shape", n, format!("{} / {:?} / {:?}", mu.len(), s.shape(), g.shape())));
            }
        }
        let mut mean = CVec::zeros(n);
        for (p, mu) in priors.iter().zip(&means) {
            mean += mu * c(*p);
        }
        let mut cov = CMat::zeros(n, n);
        for ((p, mu), s) in priors.iter().zip(&means).zip(&covs) {
            let dm = mu - &mean;
            cov += (s + &dm * dm.adjoint()) * c(*p);
        }
        Ok(Self {
            field,
            device_dims,
            present: priors.iter().map(|&p| p > 0.0).collect(),
            priors,
            means,
            covs,
            relations,
            mean,
            cov: hermitize(&cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.device_dims.iter().sum()
    }

    pub fn device_count(&self) -> usize {
        self.device_dims.len()
    }

    pub fn class_count(&self) -> usize {
        self.priors.len()
    }

    /// Index range of device `k` inside `ż`.
    pub fn range(&self, k: usize) -> Range<usize> {
        let start: usize = self.device_dims[..k].iter().sum();
        start..start + self.device_dims[k]
    }

    /// The `(p, q)` device block of a `D/2 x D/2` matrix.
    pub fn block(&self, m: &CMat, p: usize, q: usize) -> CMat {
        let (rp, rq) = (self.range(p), self.range(q));
        m.view((rp.start, rq.start), (rp.len(), rq.len())).into_owned()
    }

    /// Rows of device `k` of a matrix with `D/2` rows.
    pub fn rows(&self, m: &CMat, k: usize) -> CMat {
        let r = self.range(k);
        m.rows(r.start, r.len()).into_owned()
    }

    /// `Σ^{(kq)}`.
    pub fn cov_block(&self, k: usize, q: usize) -> CMat {
        self.block(&self.cov, k, q)
    }

    /// `Σ_j^{(kq)}`.
    pub fn class_cov_block(&self, j: usize, k: usize, q: usize) -> CMat {
        self.block(&self.covs[j], k, q)
    }

    /// Iterator over `(j, p_j)` for classes carrying probability mass.
    pub fn active_classes(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.priors.iter().copied().enumerate().filter(|&(j, p)| p > 0.0 && self.present[j])
    }

    /// Residual of the mixture identity `Σ = Σ_j p_j (Σ_j + (μ_j - μ̄)(μ_j - μ̄)^H)`.
    pub fn mixture_identity_residual(&self) -> f64 {
        let mut rebuilt = CMat::zeros(self.dim(), self.dim());
        for (j, p) in self.active_classes() {
            let dm = &self.means[j] - &self.mean;
            rebuilt += (&self.covs[j] + &dm * dm.adjoint()) * c(p);
        }
        (rebuilt - &self.cov).norm()
    }
}

/// Empirical statistics of the transmitted signal, weighted by class membership.
/// `feature_dims` are the real per-device feature dimensions `D_k`.
pub fn estimate_stats(samples: &SampleSet, feature_dims: &[usize], field: Field) -> Result<FeatureStats> {
    let total: usize = feature_dims.iter().sum();
    if total != samples.dim() {
        return Err(mismatch("estimate_stats feature dims", samples.dim(), total));
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let device_dims = signal_dims(feature_dims, field)?;
    let n: usize = device_dims.iter().sum();
    let m = samples.len();
    let signals: Vec<CVec> = samples
        .features
        .column_iter()
        .map(|col| to_signal(col.as_slice(), feature_dims, field))
        .collect::<Result<_>>()?;

    let mut mean = CVec::zeros(n);
    for s in &signals {
        mean += s;
    }
    mean /= c(m as f64);
    let mut cov = CMat::zeros(n, n);
    for s in &signals {
        let d = s - &mean;
        cov += &d * d.adjoint();
    }
    cov /= c(m as f64);

    let classes = samples.class_count();
    let mut priors = Vec::with_capacity(classes);
    let mut present = Vec::with_capacity(classes);
    let mut means = Vec::with_capacity(classes);
    let mut covs = Vec::with_capacity(classes);
    let mut relations = Vec::with_capacity(classes);
    for j in 0..classes {
        let weights = samples.membership.column(j);
        let mass: f64 = weights.sum();
        priors.push(mass / m as f64);
        if mass <= 0.0 {
            present.push(false);
            means.push(CVec::zeros(n));
            covs.push(CMat::zeros(n, n));
            relations.push(CMat::zeros(n, n));
            continue;
        }
        present.push(true);
        let mut mu = CVec::zeros(n);
        for (s, &w) in signals.iter().zip(weights.iter()) {
            mu += s * c(w);
        }
        mu /= c(mass);
        let mut s_j = CMat::zeros(n, n);
        let mut g_j = CMat::zeros(n, n);
        for (s, &w) in signals.iter().zip(weights.iter()) {
            if w == 0.0 {
                continue;
            }
            let d = s - &mu;
            s_j += &d * d.adjoint() * c(w);
            g_j += &d * d.transpose() * c(w);
        }
        means.push(mu);
        covs.push(hermitize(&(s_j / c(mass))));
        let g_j = g_j / c(mass);
        relations.push((&g_j + g_j.transpose()) * c(0.5));
    }

    Ok(FeatureStats {
        field,
        device_dims,
        priors,
        present,
        means,
        covs,
        relations,
        mean,
        cov: hermitize(&cov),
    })
}

fn half_logdet_identity_plus_gram(z: &DMatrix<f64>, scale: f64) -> f64 {
    let gram = if z.nrows() <= z.ncols() { z * z.transpose() } else { z.transpose() * z };
    let eig = SymmetricEigen::new(gram).eigenvalues;
    0.5 * eig.iter().map(|&l| (scale * l.max(0.0)).ln_1p()).sum::<f64>()
}

/// `½ log det(I + D/(M ε²) Z Zᵀ)` in nats.
pub fn coding_rate(z: &DMatrix<f64>, eps: f64) -> Result<f64> {
    if eps <= 0.0 || z.ncols() == 0 {
        return Err(Error::InvalidInput("coding rate needs eps > 0 and at least one sample".into()));
    }
    let (d, m) = z.shape();
    Ok(half_logdet_identity_plus_gram(z, d as f64 / (m as f64 * eps * eps)))
}

/// Coding rate reduction `R(Z) - R_c(Z | Π)` over the sample membership.
pub fn rate_reduction_samples(samples: &SampleSet, eps: f64) -> Result<f64> {
    let total = coding_rate(&samples.features, eps)?;
    let (d, m) = samples.features.shape();
    let mut compressed = 0.0;
    for j in 0..samples.class_count() {
        let w = samples.membership.column(j);
        let tr: f64 = w.sum();
        if tr <= 0.0 {
            continue;
        }
        let mut weighted = samples.features.clone();
        for (mut col, &wi) in weighted.column_iter_mut().zip(w.iter()) {
            col *= wi.sqrt();
        }
        let half = half_logdet_identity_plus_gram(&weighted, d as f64 / (tr * eps * eps));
        compressed += tr / m as f64 * half;
    }
    Ok(total - compressed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_spec_samples_are_unit_norm() {
        let s = sample_gm(&GmSpec::sphere_three_class(), 300, 11).unwrap();
        assert_eq!(s.len(), 300);
        for col in s.features.column_iter() {
            assert_relative_eq!(col.norm(), 1.0, epsilon = 1e-12);
        }
        let counts: Vec<usize> = (0..3).map(|j| s.labels.iter().filter(|&&l| l == j).count()).collect();
        assert!(counts.iter().all(|&n| (70..=130).contains(&n)), "{counts:?}");
    }

    #[test]
    fn degenerate_gaussian_repeats_mean() {
        let spec = GmSpec::isotropic(vec![vec![1.0, 0.0, 0.0]], 0.0, false);
        let s = sample_gm(&spec, 5, 1).unwrap();
        for col in s.features.column_iter() {
            assert_eq!(col.as_slice(), &[1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GmSpec::sphere_three_class();
        assert_eq!(sample_gm(&spec, 50, 9).unwrap(), sample_gm(&spec, 50, 9).unwrap());
        assert_ne!(sample_gm(&spec, 50, 9).unwrap().features, sample_gm(&spec, 50, 10).unwrap().features);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = GmSpec::sphere_three_class();
        spec.priors = vec![0.5, 0.5, 0.5];
        assert!(spec.validate().is_err());
        let mut spec = GmSpec::sphere_three_class();
        spec.class_covs[1][0][0] = -1.0;
        assert!(spec.validate().is_err());
        let mut spec = GmSpec::sphere_three_class();
        spec.class_covs[0][0][1] = 0.3;
        assert!(spec.validate().is_err());
        assert!(sample_gm(&GmSpec::sphere_three_class(), 0, 1).is_err());
    }

    #[test]
    fn complex_map_examples() {
        assert_eq!(real_to_complex(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![C64::new(1.0, 3.0), C64::new(2.0, 4.0)]);
        assert_eq!(real_to_complex(&[0.0, 0.0]).unwrap(), vec![C64::new(0.0, 0.0)]);
        assert!(real_to_complex(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn signal_map_is_per_device() {
        let z = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = to_signal(&z, &[4, 2], Field::Complex).unwrap();
        assert_eq!(s.as_slice(), &[C64::new(1.0, 3.0), C64::new(2.0, 4.0), C64::new(5.0, 6.0)]);
        assert!(to_signal(&z, &[3, 3], Field::Complex).is_err());
        assert_eq!(to_signal(&z, &[6], Field::Real).unwrap().len(), 6);
    }

    #[test]
    fn two_point_stats() {
        let z = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = SampleSet::from_labels(z, vec![0, 0], 1).unwrap();
        let st = estimate_stats(&s, &[2], Field::Complex).unwrap();
        assert_relative_eq!(st.means[0][0].norm(), 0.0);
        assert_relative_eq!(st.covs[0][(0, 0)].re, 1.0);
        assert_relative_eq!(st.relations[0][(0, 0)].re, 1.0);
        assert_relative_eq!(st.cov[(0, 0)].re, 1.0);
    }

    #[test]
    fn empty_class_is_flagged() {
        let z = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = SampleSet::from_labels(z, vec![0, 0], 2).unwrap();
        let st = estimate_stats(&s, &[2], Field::Complex).unwrap();
        assert_eq!(st.present, vec![true, false]);
        assert_eq!(st.priors[1], 0.0);
        assert_eq!(st.active_classes().count(), 1);
        assert!(estimate_stats(&s, &[4], Field::Complex).is_err());
    }

    #[test]
    fn coding_rate_examples() {
        assert_eq!(coding_rate(&DMatrix::zeros(3, 4), 0.5).unwrap(), 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(coding_rate(&one, 1.0).unwrap(), 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert!(coding_rate(&one, 0.0).is_err());
    }

    #[test]
    fn single_class_has_no_reduction() {
        let s = sample_gm(&GmSpec::sphere_three_class(), 40, 2).unwrap();
        let one = SampleSet::from_labels(s.features.clone(), vec![0; 40], 1).unwrap();
        assert_relative_eq!(rate_reduction_samples(&one, 0.3).unwrap(), 0.0, epsilon = 1e-12);
        let zero = SampleSet::from_labels(DMatrix::zeros(3, 40), s.labels.clone(), 3).unwrap();
        assert_eq!(rate_reduction_samples(&zero, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let s = sample_gm(&GmSpec::sphere_three_class(), 12, 4).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.lines().next().unwrap().starts_with(&(s.labels[0] + 1).to_string()));
        let back = SampleSet::read_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn gm_spec_json_roundtrip() {
        let spec = GmSpec::synthetic(4, 6, 2, 0.1, 3).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: GmSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
