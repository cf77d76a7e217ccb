//! Complex dense linear algebra helpers shared by every module.
//!
//! Matrices are `nalgebra` dynamic matrices over `Complex<f64>`. Channel
//! vectors use column-major vectorization, `vec(H)[i + rows * j] = H[(i, j)]`,
//! which is exactly nalgebra's storage order.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Column-major vectorization.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    CMat::from_column_slice(rows, cols, v.as_slice())
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Squared Frobenius norm.
pub fn energy(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_energy(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Replaces `m` by `(m + mᴴ) / 2`.
pub fn hermitize(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; `vectors` column `i` belongs to `values[i]`.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEig {
    pub fn new(m: &CMat) -> Self {
        let mut herm = m.clone();
        hermitize(&mut herm);
        let n = herm.nrows();
        let eig = SymmetricEigen::new(herm);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = CMat::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        HermitianEig { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V diag(f(λ)) Vᴴ`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        let mut out = &scaled * self.vectors.adjoint();
        hermitize(&mut out);
        out
    }
}

/// True when every eigenvalue is at least `-tol * max(1, λ_max)`.
pub fn is_psd(m: &CMat, tol: f64) -> bool {
    if !is_hermitian(m, 1e-9) {
        return false;
    }
    let eig = HermitianEig::new(m);
    eig.min() >= -tol * eig.max().abs().max(1.0)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, `None`
/// when a pivot is not strictly positive. Only the lower triangle is read.
pub fn cholesky_lower(m: &CMat) -> Option<CMat> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "cholesky of a non-square matrix");
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        let d = pivot.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / d;
        }
    }
    Some(l)
}

/// `log det` of a Hermitian positive definite matrix (natural log).
pub fn log_det_hpd(m: &CMat) -> Option<f64> {
    let l = cholesky_lower(m)?;
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

/// Inverse of a lower-triangular matrix (result is lower triangular).
pub fn lower_inverse(l: &CMat) -> CMat {
    let n = l.nrows();
    let mut inv = CMat::identity(n, n);
    let solved = l.solve_lower_triangular_mut(&mut inv);
    debug_assert!(solved, "singular triangular factor");
    inv
}

/// Solves `m x = b` for Hermitian positive definite `m`.
pub fn solve_hpd(m: &CMat, b: &CMat) -> Result<CMat> {
    let l = cholesky_lower(m).ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    l.ad_solve_lower_triangular_mut(&mut x);
    Ok(x)
}

pub fn inverse_hpd(m: &CMat) -> Result<CMat> {
    let mut inv = solve_hpd(m, &identity(m.nrows()))?;
    hermitize(&mut inv);
    Ok(inv)
}

/// A factor `F` with `F Fᴴ = c`. Cholesky when `c` is positive definite,
/// otherwise an eigen-based square root which also covers singular and zero
/// covariances.
pub fn psd_factor(c: &CMat, tol: f64) -> Result<CMat> {
    if let Some(l) = cholesky_lower(c) {
        return Ok(l);
    }
    let eig = HermitianEig::new(c);
    let scale = eig.max().abs().max(1e-300);
    if eig.min() < -tol * scale.max(1.0) {
        return Err(Error::ModelIntegrity(format!(
            "covariance is not positive semidefinite (min eigenvalue {:.3e})",
            eig.min()
        )));
    }
    let n = c.nrows();
    let mut f = eig.vectors.clone();
    for (j, &lam) in eig.values.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

/// Circularly-symmetric complex normal sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Vector of i.i.d. `CN(0, variance)` entries.
pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, variance: f64) -> CVec {
    let s = variance.sqrt();
    CVec::from_fn(n, |_, _| complex_normal(rng) * s)
}

pub fn complex_normal_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    // fill column by column so the draw order matches vectorization
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_normal(rng);
        }
    }
    m
}

/// Thin SVD with singular values in descending order.
pub struct SortedSvd {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    /// `Vᴴ` (rows are right singular vectors, conjugated).
    pub v_t: CMat,
}

pub fn svd(m: &CMat) -> SortedSvd {
    let svd = SVD::new(m.clone(), true, true);
    SortedSvd {
        u: svd.u.expect("U requested"),
        singular_values: svd.singular_values.iter().copied().collect(),
        v_t: svd.v_t.expect("Vᴴ requested"),
    }
}

/// First `r` right singular vectors of `h`, as the columns of a
/// `cols(h) × r` semi-unitary matrix.
pub fn dominant_right_subspace(h: &CMat, r: usize) -> CMat {
    let n = h.ncols();
    assert!(r <= n, "subspace dimension exceeds column count");
    let dec = svd(h);
    let avail = dec.v_t.nrows();
    if r <= avail {
        return dec.v_t.rows(0, r).adjoint();
    }
    // fewer singular vectors than requested: fill from the Gram eigenbasis
    let gram = h.adjoint() * h;
    let eig = HermitianEig::new(&gram);
    eig.vectors.columns(0, r).into_owned()
}

/// Water-filling over parallel channels with power gains `gains`:
/// maximizes `Σ ln(1 + g_i p_i)` subject to `Σ p_i = budget`, `p_i ≥ 0`.
pub fn water_fill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut powers = vec![0.0; gains.len()];
    if order.is_empty() || budget <= 0.0 {
        return powers;
    }
    let mut active = order.len();
    let mut level;
    loop {
        let inv_sum: f64 = order[..active].iter().map(|&i| 1.0 / gains[i]).sum();
        level = (budget + inv_sum) / active as f64;
        let weakest = order[active - 1];
        if level - 1.0 / gains[weakest] > 0.0 || active == 1 {
            break;
        }
        active -= 1;
    }
    for &i in &order[..active] {
        powers[i] = (level - 1.0 / gains[i]).max(0.0);
    }
    powers
}

/// `log₂ det(I + m)` for Hermitian PSD `m`, computed via Cholesky.
pub fn log2_det_identity_plus(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += ONE;
    }
    match log_det_hpd(&shifted) {
        Some(v) => v / std::f64::consts::LN_2,
        None => {
            // slightly indefinite input from round-off: fall back to eigenvalues
            HermitianEig::new(&shifted)
                .values
                .iter()
                .map(|&l| l.max(f64::MIN_POSITIVE).log2())
                .sum()
        }
    }
}

/// Correctly rounded sum of `values` (Shewchuk's exact partials), so the
/// result does not depend on the order of the terms.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // round the partials to nearest, as in Python's math.fsum
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Column-major `(rows, cols)` view helper used by the file formats.
pub fn real_matrix_to_complex(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}
