//! Gaussian densities in moment form `(mean, cov)` and canonical (information)
//! form `(Lambda, eta)`, plus the small set of symmetric linear-algebra
//! routines the message updates are written in.
//!
//! Inverses are never formed explicitly except when the inverse itself is the
//! result; everything else goes through a Cholesky solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tolerances::{JITTER_FLOOR, JITTER_SCALE, TAU_PSD, TAU_SYM};

/// `(X + X^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `max |X - X^T|` entrywise.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>, context: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!("{context}: square matrix"),
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>, context: &str) -> Result<()> {
    check_square(m, context)?;
    let asymmetry = max_asymmetry(m);
    // Relative slack for large-magnitude matrices, absolute floor otherwise.
    let scale = m.amax().max(1.0);
    if asymmetry > TAU_SYM * scale {
        return Err(Error::NotSymmetric {
            context: context.to_string(),
            asymmetry,
        });
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    check_symmetric(m, context)?;
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::not_pd(context))
}

/// Diagonal jitter used when a covariance-like matrix fails to factor:
/// `JITTER_SCALE * trace / d`, floored at `JITTER_FLOOR`.
pub fn jitter_for(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows().max(1) as f64;
    (JITTER_SCALE * m.trace().abs() / d).max(JITTER_FLOOR)
}

/// Cholesky with one retry after adding [`jitter_for`] to the diagonal.
/// Returns the factor together with the jitter that was applied (0 if none).
pub fn cholesky_with_jitter(m: &DMatrix<f64>, context: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    check_symmetric(m, context)?;
    let sym = symmetrize(m);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok((chol, 0.0));
    }
    let jitter = jitter_for(&sym);
    let n = sym.nrows();
    Cholesky::new(sym + DMatrix::identity(n, n) * jitter)
        .map(|c| (c, jitter))
        .ok_or_else(|| Error::not_pd(context))
}

/// Solves `m X = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if rhs.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch {
            context: "spd_solve rhs rows".into(),
            expected: m.nrows(),
            found: rhs.nrows(),
        });
    }
    Ok(cholesky(m, "spd_solve")?.solve(rhs))
}

/// Vector right-hand side variant of [`spd_solve`].
pub fn spd_solve_vec(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if rhs.len() != m.nrows() {
        return Err(Error::DimensionMismatch {
            context: "spd_solve rhs length".into(),
            expected: m.nrows(),
            found: rhs.len(),
        });
    }
    Ok(cholesky(m, "spd_solve")?.solve(rhs))
}

/// Inverse of a symmetric positive definite matrix, via a solve against the identity.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky(m, context)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes `m` and clamps eigenvalues in `[-TAU_PSD, 0)` to zero.
///
/// Returns `Err(min_eigenvalue)` when an eigenvalue lies below `-TAU_PSD`,
/// scaled by the matrix magnitude.
pub fn repair_psd(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let floor = TAU_PSD * sym.amax().max(1.0);
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -floor {
        return Err(min);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    Ok(symmetrize(
        &(v * DMatrix::from_diagonal(&clamped) * v.transpose()),
    ))
}

/// Gaussian in moment form.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl MomentGaussian {
    /// Validates symmetry and positive definiteness of `cov`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "moment gaussian covariance".into(),
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        cholesky(&cov, "moment covariance")?;
        Ok(Self {
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// Skips the positive definiteness check. Used for mixture covariances and
    /// for results the caller has already factored.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    pub fn to_canonical(&self) -> Result<CanonicalGaussian> {
        to_canonical(self)
    }
}

/// Gaussian (possibly improper) in canonical form `exp(-x^T Lambda x / 2 + x^T eta)`.
///
/// `Lambda = 0, eta = 0` is the flat message. Only symmetry is enforced on
/// construction: backward and upward messages of an aggregate model can carry
/// negative curvature in some directions, so definiteness is checked where a
/// proper density is actually required.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalGaussian {
    info_matrix: DMatrix<f64>,
    info_vector: DVector<f64>,
}

impl CanonicalGaussian {
    pub fn new(info_matrix: DMatrix<f64>, info_vector: DVector<f64>) -> Result<Self> {
        if info_matrix.nrows() != info_vector.len() {
            return Err(Error::DimensionMismatch {
                context: "canonical gaussian information matrix".into(),
                expected: info_vector.len(),
                found: info_matrix.nrows(),
            });
        }
        check_symmetric(&info_matrix, "information matrix")?;
        Ok(Self::from_parts(info_matrix, info_vector))
    }

    pub(crate) fn from_parts(info_matrix: DMatrix<f64>, info_vector: DVector<f64>) -> Self {
        Self {
            info_matrix: symmetrize(&info_matrix),
            info_vector,
        }
    }

    /// The flat (uninformative) message over `d` dimensions.
    pub fn flat(d: usize) -> Self {
        Self {
            info_matrix: DMatrix::zeros(d, d),
            info_vector: DVector::zeros(d),
        }
    }

    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }

    pub fn info_vector(&self) -> &DVector<f64> {
        &self.info_vector
    }

    pub fn dim(&self) -> usize {
        self.info_vector.len()
    }

    pub fn is_flat(&self) -> bool {
        self.info_matrix.iter().all(|v| *v == 0.0) && self.info_vector.iter().all(|v| *v == 0.0)
    }

    /// True when the information matrix has no eigenvalue below `-TAU_PSD`.
    pub fn is_psd(&self) -> bool {
        min_eigenvalue(&self.info_matrix) >= -TAU_PSD * self.info_matrix.amax().max(1.0)
    }

    /// Largest absolute entrywise difference across both parameters.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let m = (&self.info_matrix - &other.info_matrix).amax();
        let v = (&self.info_vector - &other.info_vector).amax();
        m.max(v)
    }

    /// `(1 - weight) * self + weight * other`, parameter-wise.
    pub fn blend(&self, other: &Self, weight: f64) -> Self {
        Self {
            info_matrix: &self.info_matrix * (1.0 - weight) + &other.info_matrix * weight,
            info_vector: &self.info_vector * (1.0 - weight) + &other.info_vector * weight,
        }
    }

    pub fn to_moment(&self) -> Result<MomentGaussian> {
        to_moment(self)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.info_matrix, self.info_vector)
    }
}

/// `P = Lambda^-1`, `mu = Lambda^-1 eta`.
pub fn to_moment(g: &CanonicalGaussian) -> Result<MomentGaussian> {
    let chol = cholesky(&g.info_matrix, "to_moment information matrix")?;
    let mean = chol.solve(&g.info_vector);
    let cov = symmetrize(&chol.inverse());
    Ok(MomentGaussian { mean, cov })
}

/// `Lambda = P^-1`, `eta = P^-1 mu`.
pub fn to_canonical(g: &MomentGaussian) -> Result<CanonicalGaussian> {
    let chol = cholesky(&g.cov, "to_canonical covariance")?;
    let info_vector = chol.solve(&g.mean);
    let info_matrix = symmetrize(&chol.inverse());
    Ok(CanonicalGaussian {
        info_matrix,
        info_vector,
    })
}

/// Unnormalized product of canonical densities: information matrices and
/// vectors add. An empty product is an error since its dimension is unknown.
pub fn canonical_product<'a, I>(factors: I) -> Result<CanonicalGaussian>
where
    I: IntoIterator<Item = &'a CanonicalGaussian>,
{
    let mut iter = factors.into_iter();
    let first = iter.next().ok_or_else(|| Error::DimensionMismatch {
        context: "canonical_product needs at least one factor".into(),
        expected: 1,
        found: 0,
    })?;
    let d = first.dim();
    let mut info_matrix = first.info_matrix.clone();
    let mut info_vector = first.info_vector.clone();
    for g in iter {
        if g.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "canonical_product factor".into(),
                expected: d,
                found: g.dim(),
            });
        }
        info_matrix += &g.info_matrix;
        info_vector += &g.info_vector;
    }
    Ok(CanonicalGaussian {
        info_matrix,
        info_vector,
    })
}
