//! Dense complex linear-algebra helpers shared by the solvers.
//!
//! Every quantity in the crate is carried as a complex matrix. Real-mode
//! scenarios simply keep the imaginary parts at zero, so conjugate transpose
//! degenerates to transpose without a second code path.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Scalar field a scenario runs over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    #[default]
    Complex,
}

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn rscale(m: &CMat, s: f64) -> CMat {
    m.map(|x| x * s)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(c)
}

pub fn real_part(m: &CMat) -> DMatrix<f64> {
    m.map(|x| x.re)
}

/// `(A + A^H) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()).map(|x| x * 0.5)
}

/// `Re tr(A^H B)`, the real inner product on complex matrices.
pub fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn trace_re(a: &CMat) -> f64 {
    a.diagonal().iter().map(|x| x.re).sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct HermEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermEigen {
    pub fn new(a: &CMat) -> Self {
        let eig = hermitize(a).symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(a.nrows(), order.len(), |r, k| eig.eigenvectors[(r, order[k])]);
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `Q f(Λ) Q^H`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (k, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(k).iter_mut().for_each(|x| *x *= s);
        }
        let out = scaled * self.vectors.adjoint();
        debug_assert_eq!(out.nrows(), n);
        hermitize(&out)
    }
}

/// Hermitian PSD square root; small negative eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(a: &CMat) -> CMat {
    HermEigen::new(a).map(|l| l.max(0.0).sqrt())
}

/// Inverse square root with eigenvalues floored at `rel_floor * λ_max`.
/// Returns the matrix and whether any eigenvalue hit the floor.
pub fn inv_sqrt_floored(a: &CMat, rel_floor: f64) -> (CMat, bool) {
    let eig = HermEigen::new(a);
    let floor = (rel_floor * eig.max()).max(f64::MIN_POSITIVE);
    let floored = eig.values.iter().any(|&l| l < floor);
    (eig.map(|l| 1.0 / l.max(floor).sqrt()), floored)
}

/// Inverse with eigenvalues floored at `rel_floor * λ_max`.
pub fn inv_floored(a: &CMat, rel_floor: f64) -> CMat {
    let eig = HermEigen::new(a);
    let floor = (rel_floor * eig.max()).max(f64::MIN_POSITIVE);
    eig.map(|l| 1.0 / l.max(floor))
}

/// `log det(I + A)` for Hermitian PSD `A`, summed as `ln(1 + λ)` so tiny
/// spectra keep full relative precision.
pub fn logdet_identity_plus(a: &CMat) -> f64 {
    HermEigen::new(a).values.iter().map(|&l| l.max(0.0).ln_1p()).sum()
}

/// `log det A` for Hermitian positive definite `A` via Cholesky.
pub fn logdet_hpd(a: &CMat) -> Result<f64> {
    let chol = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} log-determinant", a.nrows(), a.ncols())))?;
    Ok(chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.re.ln()).sum())
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn hpd_inverse(a: &CMat) -> Result<CMat> {
    let chol = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} inverse", a.nrows(), a.ncols())))?;
    Ok(hermitize(&chol.inverse()))
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub fn hpd_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol = hermitize(a)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} solve", a.nrows(), a.ncols())))?;
    Ok(chol.solve(b))
}

pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r, c0), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn hcat(blocks: &[CMat]) -> CMat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    out
}

/// I.i.d. standard Gaussian entries: unit-variance real in real mode,
/// circularly-symmetric with `E|x|^2 = 1` in complex mode.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, field: Field, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| gaussian_scalar(field, rng))
}

pub fn gaussian_scalar<R: Rng + ?Sized>(field: Field, rng: &mut R) -> C64 {
    match field {
        Field::Real => c(StandardNormal.sample(rng)),
        Field::Complex => {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        }
    }
}

pub fn max_abs_imag(m: &CMat) -> f64 {
    m.iter().map(|x| x.im.abs()).fold(0.0, f64::max)
}

/// Row-major complex matrix with interleaved `[re, im, re, im, ...]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMat> for MatrixJson {
    fn from(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for r in 0..m.nrows() {
            for col in 0..m.ncols() {
                data.push(m[(r, col)].re);
                data.push(m[(r, col)].im);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<&MatrixJson> for CMat {
    type Error = Error;

    fn try_from(j: &MatrixJson) -> Result<Self> {
        if j.data.len() != 2 * j.rows * j.cols {
            return Err(crate::error::mismatch("matrix JSON data", 2 * j.rows * j.cols, j.data.len()));
        }
        Ok(CMat::from_fn(j.rows, j.cols, |r, col| {
            let i = 2 * (r * j.cols + col);
            C64::new(j.data[i], j.data[i + 1])
        }))
    }
}
