//! Symmetric matrices, the positive semidefinite cone, and square-root calculus.
//!
//! [`SymMat`] stores the upper triangle of a K×K symmetric matrix. The inner
//! product is the Frobenius one, `a·b = tr(aᵀb)`, so off-diagonal entries count
//! twice. Spectral work goes through a cyclic Jacobi eigensolver, and the
//! differentials of `h ↦ √h` are solved entrywise in the eigenbasis of `h`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_TOL, 0)` are treated as round-off and clamped to zero.
pub const PSD_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted by the square-root differentials.
pub const DEFINITE_TOL: f64 = 1e-10;
/// Below this smallest eigenvalue the condition number is reported as `+∞`.
pub const COND_TOL: f64 = 1e-12;

#[inline]
fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * dim - i + 1) / 2 + (j - i)
}

/// Dense K×K symmetric matrix, upper triangle stored row-major.
#[derive(Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMat{}[", self.dim)?;
        for i in 0..self.dim {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.dim {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6e}", self.get(i, j))?;
            }
        }
        write!(f, "]")
    }
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "SymMat dimension must be positive");
        Self { dim, data: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `c · I_K`.
    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, c);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from the upper-triangle coefficients in row-major order.
    pub fn from_upper(dim: usize, upper: Vec<f64>) -> Result<Self> {
        let expected = dim * (dim + 1) / 2;
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if upper.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: upper.len() });
        }
        Ok(Self { dim, data: upper })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Symmetric part `(a + aᵀ)/2` of a square matrix.
    pub fn sym_part(a: &Mat) -> Self {
        Self::from_fn(a.dim(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[tri_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = tri_index(self.dim, i, j);
        self.data[k] = v;
    }

    pub fn upper(&self) -> &[f64] {
        &self.data
    }

    pub fn to_full(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| self.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius inner product `tr(aᵀb)`.
    pub fn dot(&self, other: &SymMat) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                let p = self.get(i, j) * other.get(i, j);
                s += if i == j { p } else { 2.0 * p };
            }
        }
        s
    }

    /// `a · b` against a general (not necessarily symmetric) matrix.
    pub fn dot_mat(&self, other: &Mat) -> f64 {
        debug_assert_eq!(self.dim, other.dim());
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, c: f64) -> SymMat {
        SymMat { dim: self.dim, data: self.data.iter().map(|v| c * v).collect() }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &SymMat) -> SymMat {
        debug_assert_eq!(self.dim, other.dim);
        SymMat {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect(),
        }
    }

    pub fn matmul(&self, other: &SymMat) -> Mat {
        self.to_full().matmul(&other.to_full())
    }

    /// Coordinates in an orthonormal basis of S^K: diagonal entries as is,
    /// off-diagonal entries scaled by √2. The map is a Frobenius isometry.
    pub fn to_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.dim {
            for j in i..self.dim {
                let v = self.get(i, j);
                out.push(if i == j { v } else { v * std::f64::consts::SQRT_2 });
            }
        }
        out
    }

    pub fn from_coords(dim: usize, coords: &[f64]) -> Result<SymMat> {
        let expected = dim * (dim + 1) / 2;
        if coords.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: coords.len() });
        }
        let mut m = SymMat::zeros(dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                let v = coords[k];
                m.set(i, j, if i == j { v } else { v / std::f64::consts::SQRT_2 });
                k += 1;
            }
        }
        Ok(m)
    }

    /// Orthonormal basis of S^K, ordered like [`SymMat::to_coords`].
    pub fn basis(dim: usize) -> Vec<SymMat> {
        let n = dim * (dim + 1) / 2;
        (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0;
                SymMat::from_coords(dim, &e).expect("basis length")
            })
            .collect()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eig_sym(self)?.eigenvalues[0])
    }

    /// PSD test with the round-off tolerance [`PSD_TOL`].
    pub fn is_psd(&self) -> bool {
        matches!(self.min_eigenvalue(), Ok(l) if l >= -PSD_TOL)
    }

    /// `self ≤ other` in the PSD order.
    pub fn psd_le(&self, other: &SymMat) -> bool {
        (other - self).is_psd()
    }
}

impl Add for &SymMat {
    type Output = SymMat;
    fn add(self, rhs: &SymMat) -> SymMat {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &SymMat {
    type Output = SymMat;
    fn sub(self, rhs: &SymMat) -> SymMat {
        self.axpy(-1.0, rhs)
    }
}

impl Add for SymMat {
    type Output = SymMat;
    fn add(self, rhs: SymMat) -> SymMat {
        &self + &rhs
    }
}

impl Sub for SymMat {
    type Output = SymMat;
    fn sub(self, rhs: SymMat) -> SymMat {
        &self - &rhs
    }
}

impl AddAssign<&SymMat> for SymMat {
    fn add_assign(&mut self, rhs: &SymMat) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&SymMat> for SymMat {
    fn sub_assign(&mut self, rhs: &SymMat) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Mul<f64> for &SymMat {
    type Output = SymMat;
    fn mul(self, c: f64) -> SymMat {
        self.scale(c)
    }
}

impl Mul<f64> for SymMat {
    type Output = SymMat;
    fn mul(self, c: f64) -> SymMat {
        self.scale(c)
    }
}

impl Neg for &SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        self.scale(-1.0)
    }
}

/// Dense square matrix, row-major. Used where symmetry is not guaranteed,
/// e.g. the overlap `xᵀx̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: data.len() });
        }
        Ok(Self { dim, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        let k = self.dim;
        Mat::from_fn(k, |i, j| (0..k).map(|m| self.get(i, m) * other.get(m, j)).sum())
    }

    pub fn dot(&self, other: &Mat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat { dim: self.dim, data: self.data.iter().map(|v| c * v).collect() }
    }

    pub fn axpy(&self, c: f64, other: &Mat) -> Mat {
        Mat {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `|m − mᵀ|` in Frobenius norm.
    pub fn antisymmetric_norm(&self) -> f64 {
        self.axpy(-1.0, &self.transpose()).norm()
    }
}

/// Eigen-decomposition `m = Q diag(λ) Qᵀ` with eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Mat,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map_eigenvalues(&self, mut f: impl FnMut(f64) -> f64) -> SymMat {
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let q = &self.eigenvectors;
        SymMat::from_fn(self.dim(), |i, j| {
            (0..fl.len()).map(|k| q.get(i, k) * fl[k] * q.get(j, k)).sum()
        })
    }

    pub fn reconstruct(&self) -> SymMat {
        self.map_eigenvalues(|l| l)
    }

    /// `Qᵀ a Q` for a symmetric `a`.
    pub fn to_eigenbasis(&self, a: &SymMat) -> Mat {
        let q = &self.eigenvectors;
        q.transpose().matmul(&a.to_full()).matmul(q)
    }

    /// `Q m Qᵀ`, symmetrised by reading the upper triangle only.
    pub fn from_eigenbasis(&self, m: &Mat) -> SymMat {
        let q = &self.eigenvectors;
        let full = q.matmul(m).matmul(&q.transpose());
        SymMat::from_fn(self.dim(), |i, j| 0.5 * (full.get(i, j) + full.get(j, i)))
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
pub fn eig_sym(m: &SymMat) -> Result<SpectralDecomp> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = m.dim();
    let mut a = m.to_full();
    let mut v = Mat::identity(n);
    let mut d: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    let rotate = |mat: &mut Mat, i: usize, j: usize, k: usize, l: usize, s: f64, tau: f64| {
        let g = mat.get(i, j);
        let h = mat.get(k, l);
        mat.set(i, j, g - s * (h + g * tau));
        mat.set(k, l, h + s * (g - h * tau));
    };

    for sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a.get(p, q).abs();
            }
        }
        if off == 0.0 {
            break;
        }
        let tresh = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                let g = 100.0 * apq.abs();
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    a.set(p, q, 0.0);
                } else if apq.abs() > tresh {
                    let hdiff = d[q] - d[p];
                    let t = if hdiff.abs() + g == hdiff.abs() {
                        apq / hdiff
                    } else {
                        let theta = 0.5 * hdiff / apq;
                        let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            -t
                        } else {
                            t
                        }
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * apq;
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    a.set(p, q, 0.0);
                    for j in 0..p {
                        rotate(&mut a, j, p, j, q, s, tau);
                    }
                    for j in (p + 1)..q {
                        rotate(&mut a, p, j, j, q, s, tau);
                    }
                    for j in (q + 1)..n {
                        rotate(&mut a, p, j, q, j, s, tau);
                    }
                    for j in 0..n {
                        rotate(&mut v, j, p, j, q, s, tau);
                    }
                }
            }
        }
        for p in 0..n {
            b[p] += z[p];
            d[p] = b[p];
            z[p] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| d[i]).collect();
    let eigenvectors = Mat::from_fn(n, |r, c| v.get(r, order[c]));
    Ok(SpectralDecomp { eigenvalues, eigenvectors })
}

/// Projection onto the PSD cone: negative eigenvalues replaced by zero.
/// Inputs already PSD up to [`PSD_TOL`] come back unchanged, which makes the
/// map exactly idempotent.
pub fn psd_part(m: &SymMat) -> SymMat {
    match eig_sym(m) {
        Ok(sd) if sd.eigenvalues[0] >= -PSD_TOL => m.clone(),
        Ok(sd) => sd.map_eigenvalues(|l| l.max(0.0)),
        Err(_) => m.clone(),
    }
}

fn clamp_psd(sd: &SpectralDecomp) -> Result<()> {
    let min = sd.eigenvalues[0];
    if min < -PSD_TOL {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok(())
}

/// Principal square root of a PSD matrix.
pub fn sqrt_psd(h: &SymMat) -> Result<SymMat> {
    let sd = eig_sym(h)?;
    clamp_psd(&sd)?;
    Ok(sd.map_eigenvalues(|l| l.max(0.0).sqrt()))
}

/// Inverse of a positive definite matrix.
pub fn inverse_pd(h: &SymMat) -> Result<SymMat> {
    let sd = eig_sym(h)?;
    let min = sd.eigenvalues[0];
    if min < DEFINITE_TOL {
        return Err(Error::NotDefinite { min_eigenvalue: min });
    }
    Ok(sd.map_eigenvalues(|l| 1.0 / l))
}

/// Real number or `+∞`, used for the condition number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
}

impl ExtReal {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::PosInfinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInfinity => None,
        }
    }
}

/// `κ(h) = |h|·|h⁻¹|` in Frobenius norms; `+∞` unless `h` is definite.
pub fn cond_number(h: &SymMat) -> ExtReal {
    let sd = match eig_sym(h) {
        Ok(sd) => sd,
        Err(_) => return ExtReal::PosInfinity,
    };
    if sd.eigenvalues[0] <= COND_TOL {
        return ExtReal::PosInfinity;
    }
    let inv_norm = sd.eigenvalues.iter().map(|l| l.powi(-2)).sum::<f64>().sqrt();
    ExtReal::Finite(h.norm() * inv_norm)
}

/// `|h⁻¹|` for a definite `h`.
pub fn inverse_norm(h: &SymMat) -> Result<f64> {
    let sd = eig_sym(h)?;
    let min = sd.eigenvalues[0];
    if min < DEFINITE_TOL {
        return Err(Error::NotDefinite { min_eigenvalue: min });
    }
    Ok(sd.eigenvalues.iter().map(|l| l.powi(-2)).sum::<f64>().sqrt())
}

/// Square-root differentials at a fixed definite `h`, sharing one
/// eigen-decomposition across directions.
#[derive(Clone, Debug)]
pub struct SqrtCalculus {
    spectral: SpectralDecomp,
    sqrt_eigs: Vec<f64>,
}

impl SqrtCalculus {
    pub fn new(h: &SymMat) -> Result<Self> {
        let spectral = eig_sym(h)?;
        let min = spectral.eigenvalues[0];
        if min < DEFINITE_TOL {
            return Err(Error::NotDefinite { min_eigenvalue: min });
        }
        let sqrt_eigs = spectral.eigenvalues.iter().map(|l| l.sqrt()).collect();
        Ok(Self { spectral, sqrt_eigs })
    }

    pub fn sqrt(&self) -> SymMat {
        self.spectral.map_eigenvalues(|l| l.sqrt())
    }

    fn dsqrt_eigenbasis(&self, a: &SymMat) -> Mat {
        let ap = self.spectral.to_eigenbasis(a);
        let s = &self.sqrt_eigs;
        Mat::from_fn(a.dim(), |k, l| 0.5 * (ap.get(k, l) + ap.get(l, k)) / (s[k] + s[l]))
    }

    /// `D_√h(a)`: the solution `X` of `√h X + X √h = a`.
    pub fn dsqrt(&self, a: &SymMat) -> SymMat {
        self.spectral.from_eigenbasis(&self.dsqrt_eigenbasis(a))
    }

    /// `D²_√h(a,a)`: the solution `Y` of `2 D_√h(a)² + √h Y + Y √h = 0`.
    pub fn d2sqrt(&self, a: &SymMat) -> SymMat {
        let d = self.dsqrt_eigenbasis(a);
        let dd = d.matmul(&d);
        let s = &self.sqrt_eigs;
        let y = Mat::from_fn(a.dim(), |k, l| {
            -2.0 * 0.5 * (dd.get(k, l) + dd.get(l, k)) / (s[k] + s[l])
        });
        self.spectral.from_eigenbasis(&y)
    }
}

/// Differential of the matrix square root at `h` in direction `a`.
pub fn dsqrt(h: &SymMat, a: &SymMat) -> Result<SymMat> {
    check_dims(h, a)?;
    Ok(SqrtCalculus::new(h)?.dsqrt(a))
}

/// Second differential `D²_√h(a,a)`.
pub fn d2sqrt(h: &SymMat, a: &SymMat) -> Result<SymMat> {
    check_dims(h, a)?;
    Ok(SqrtCalculus::new(h)?.d2sqrt(a))
}

fn check_dims(h: &SymMat, a: &SymMat) -> Result<()> {
    if h.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: a.dim() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn random_sym(k: usize, rng: &mut StreamRng) -> SymMat {
        SymMat::from_fn(k, |_, _| rng.normal())
    }

    fn random_pd(k: usize, rng: &mut StreamRng, floor: f64) -> SymMat {
        let g = Mat::from_fn(k, |_, _| rng.normal());
        let gg = g.matmul(&g.transpose());
        &SymMat::sym_part(&gg) + &SymMat::scalar(k, floor)
    }

    #[test]
    fn tri_index_is_dense_row_major() {
        let k = 4;
        let mut seen = vec![];
        for i in 0..k {
            for j in i..k {
                seen.push(tri_index(k, i, j));
            }
        }
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(tri_index(k, 3, 1), tri_index(k, 1, 3));
    }

    #[test]
    fn full_reconstruction_is_exactly_symmetric() {
        let mut rng = StreamRng::new(1, 0);
        let m = random_sym(5, &mut rng);
        let f = m.to_full();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(f.get(i, j).to_bits(), f.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn dot_matches_full_matrix_sum() {
        let mut rng = StreamRng::new(2, 0);
        let a = random_sym(4, &mut rng);
        let b = random_sym(4, &mut rng);
        let full = a.to_full().dot(&b.to_full());
        assert!((a.dot(&b) - full).abs() < 1e-12);
        let coords: f64 = a.to_coords().iter().zip(b.to_coords()).map(|(x, y)| x * y).sum();
        assert!((coords - full).abs() < 1e-12);
    }

    #[test]
    fn eig_of_diagonal_and_identity() {
        let sd = eig_sym(&SymMat::from_diag(&[1.0, 2.0])).unwrap();
        assert_eq!(sd.eigenvalues, vec![1.0, 2.0]);
        assert_eq!(sd.eigenvectors, Mat::identity(2));
        let sd = eig_sym(&SymMat::identity(3)).unwrap();
        assert!(sd.eigenvalues.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn eig_reconstructs_random_input() {
        let mut rng = StreamRng::new(3, 0);
        for _ in 0..50 {
            let m = random_sym(4, &mut rng);
            let sd = eig_sym(&m).unwrap();
            assert!((&sd.reconstruct() - &m).norm() <= 1e-10 * m.norm());
            let qtq = sd.eigenvectors.transpose().matmul(&sd.eigenvectors);
            for i in 0..4 {
                for j in 0..4 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((qtq.get(i, j) - e).abs() < 1e-12);
                }
            }
            assert!(sd.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn eig_rejects_non_finite() {
        let mut m = SymMat::identity(2);
        m.set(0, 1, f64::NAN);
        assert!(matches!(eig_sym(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn psd_part_examples() {
        let p = psd_part(&SymMat::from_diag(&[1.0, -1.0]));
        assert!((&p - &SymMat::from_diag(&[1.0, 0.0])).norm() < 1e-15);
        let mut rng = StreamRng::new(4, 0);
        let h = random_pd(3, &mut rng, 0.0);
        assert_eq!(psd_part(&h), h);
    }

    #[test]
    fn sqrt_examples() {
        let s = sqrt_psd(&SymMat::from_diag(&[4.0, 9.0])).unwrap();
        assert!((&s - &SymMat::from_diag(&[2.0, 3.0])).norm() < 1e-15);
        assert_eq!(sqrt_psd(&SymMat::identity(3)).unwrap(), SymMat::identity(3));
        let mut rng = StreamRng::new(5, 0);
        for _ in 0..50 {
            let h = random_pd(4, &mut rng, 0.0);
            let s = sqrt_psd(&h).unwrap();
            let s2 = SymMat::sym_part(&s.matmul(&s));
            assert!((&s2 - &h).norm() <= 1e-9 * (1.0 + h.norm()));
            assert!(s.is_psd());
        }
    }

    #[test]
    fn sqrt_clamps_roundoff_and_rejects_indefinite() {
        let s = sqrt_psd(&SymMat::from_diag(&[1.0, -5e-11])).unwrap();
        assert_eq!(s.get(1, 1), 0.0);
        assert!(matches!(
            sqrt_psd(&SymMat::from_diag(&[1.0, -1e-6])),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn condition_number_examples() {
        let k1 = cond_number(&SymMat::from_diag(&[4.0])).finite().unwrap();
        assert!((k1 - 1.0).abs() < 1e-15);
        let k2 = cond_number(&SymMat::identity(2)).finite().unwrap();
        assert!((k2 - 2.0).abs() < 1e-14);
        assert_eq!(cond_number(&SymMat::from_diag(&[1.0, 0.0])), ExtReal::PosInfinity);
    }

    #[test]
    fn dsqrt_at_identity_is_half() {
        let mut rng = StreamRng::new(6, 0);
        let a = random_sym(3, &mut rng);
        let x = dsqrt(&SymMat::identity(3), &a).unwrap();
        assert!((&x - &a.scale(0.5)).norm() < 1e-14);
    }

    #[test]
    fn dsqrt_diagonal_entries() {
        let h = SymMat::from_diag(&[1.0, 4.0, 9.0]);
        let a = SymMat::from_fn(3, |i, j| (1 + i + 2 * j) as f64);
        let x = dsqrt(&h, &a).unwrap();
        let s = [1.0, 2.0, 3.0];
        for k in 0..3 {
            for l in 0..3 {
                assert!((x.get(k, l) - a.get(k, l) / (s[k] + s[l])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn d2sqrt_at_identity() {
        let mut rng = StreamRng::new(7, 0);
        let a = random_sym(3, &mut rng);
        let y = d2sqrt(&SymMat::identity(3), &a).unwrap();
        let expect = SymMat::sym_part(&a.matmul(&a)).scale(-0.25);
        assert!((&y - &expect).norm() < 1e-14);
        let y3 = d2sqrt(&SymMat::identity(3), &a.scale(3.0)).unwrap();
        assert!((&y3 - &y.scale(9.0)).norm() < 1e-12);
    }

    #[test]
    fn differentials_reject_singular_h() {
        let h = SymMat::from_diag(&[1.0, 0.0]);
        let a = SymMat::identity(2);
        assert!(matches!(dsqrt(&h, &a), Err(Error::NotDefinite { .. })));
        assert!(matches!(d2sqrt(&h, &a), Err(Error::NotDefinite { .. })));
    }

    #[test]
    fn symmetrization_identity_and_bound() {
        let mut rng = StreamRng::new(8, 0);
        for k in 1..=4 {
            for _ in 0..25 {
                let h = random_pd(k, &mut rng, 0.05);
                let a = random_sym(k, &mut rng);
                let b = random_sym(k, &mut rng);
                let calc = SqrtCalculus::new(&h).unwrap();
                let x = calc.dsqrt(&a);
                let xs = x.matmul(&calc.sqrt());
                assert!((xs.dot(&b.to_full()) - 0.5 * a.dot(&b)).abs() < 1e-8 * (1.0 + a.norm() * b.norm()));

                let bg = Mat::from_fn(k, |_, _| rng.normal());
                let kappa = cond_number(&h).finite().unwrap();
                let lhs = (xs.dot(&bg) - 0.5 * a.dot_mat(&bg)).abs();
                let rhs = k as f64 * kappa.sqrt() * a.norm() * bg.antisymmetric_norm();
                assert!(lhs <= rhs + 1e-12, "k={k}: {lhs} > {rhs}");
            }
        }
    }
}
