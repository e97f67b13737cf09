//! Dense and triangular kernels shared by every filter in the crate.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; upper-triangular Cholesky-style
//! factors use the [`UpperTriangular`] newtype, which guarantees exact zeros
//! below the diagonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Square matrix whose strictly-lower part is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperTriangular(Matrix);

impl UpperTriangular {
    /// Wrap `m`, rejecting non-square input or any nonzero below the diagonal.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "upper-triangular factor must be square and nonempty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for j in 0..m.ncols() {
            for i in (j + 1)..m.nrows() {
                if m[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i},{j}) below the diagonal is nonzero"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Keep only the upper triangle of `m` (strictly-lower part set to zero).
    pub fn from_upper_part(m: &Matrix) -> Self {
        Self(m.upper_triangle())
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// `UᵀU`, the matrix this factor represents.
    pub fn gram(&self) -> Matrix {
        self.0.transpose() * &self.0
    }

    /// Σ ln u_jj. Meaningful only for positive diagonals.
    pub fn log_det(&self) -> f64 {
        self.0.diagonal().iter().map(|d| d.ln()).sum()
    }
}

/// Exact three-way partition of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LduSplit {
    pub strict_lower: Matrix,
    pub diagonal: Matrix,
    pub strict_upper: Matrix,
}

/// Which triangular system [`solve_upper`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `U·X = B`
    Left,
    /// `X·U = B`
    Right,
    /// `Uᵀ·X = B`
    TransposedLeft,
}

/// Orthogonally rotate `prearray` so its first `lead_cols` columns become upper
/// triangular with a nonnegative diagonal.
///
/// Householder reflections are built column by column over the leading block;
/// each reflection, and each row sign flip used to make a diagonal entry
/// nonnegative, is applied to every remaining column of the array. Entries
/// below the diagonal of the leading block are written as exact zeros.
pub fn householder_block_triangularize(prearray: &Matrix, lead_cols: usize) -> Result<Matrix> {
    let (rows, cols) = prearray.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty pre-array".into()));
    }
    if lead_cols > cols || lead_cols > rows {
        return Err(Error::InvalidArgument(format!(
            "cannot triangularize {lead_cols} leading columns of a {rows}x{cols} array"
        )));
    }

    let mut a = prearray.clone();
    let mut v = vec![0.0; rows];
    for j in 0..lead_cols {
        let scale = (j..rows).fold(0.0_f64, |s, i| s.max(a[(i, j)].abs()));
        let tail_nonzero = ((j + 1)..rows).any(|i| a[(i, j)] != 0.0);
        if tail_nonzero && scale > 0.0 {
            let mut sumsq = 0.0;
            for i in j..rows {
                let t = a[(i, j)] / scale;
                sumsq += t * t;
            }
            let norm = scale * sumsq.sqrt();
            let x0 = a[(j, j)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };

            v[j] = x0 - alpha;
            for i in (j + 1)..rows {
                v[i] = a[(i, j)];
            }
            // vᵀv = 2·norm·(norm + |x0|)
            let beta = 1.0 / (norm * (norm + x0.abs()));

            for c in (j + 1)..cols {
                let mut s = 0.0;
                for i in j..rows {
                    s += v[i] * a[(i, c)];
                }
                if s != 0.0 {
                    let f = beta * s;
                    for i in j..rows {
                        a[(i, c)] -= f * v[i];
                    }
                }
            }
            a[(j, j)] = alpha;
            for i in (j + 1)..rows {
                a[(i, j)] = 0.0;
            }
        }
        if a[(j, j)] < 0.0 {
            for c in j..cols {
                a[(j, c)] = -a[(j, c)];
            }
        }
    }
    Ok(a)
}

fn check_symmetric(a: &Matrix, what: &str) -> Result<()> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be square and nonempty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax();
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!(
                    "{what} is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    Ok(())
}

/// Upper Cholesky factor `U` with `UᵀU = A` and positive diagonal.
pub fn cholesky_upper(a: &Matrix) -> Result<UpperTriangular> {
    check_symmetric(a, "matrix to factor")?;
    let n = a.nrows();
    let mut u = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= u[(k, j)] * u[(k, j)];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ujj = pivot.sqrt();
        u[(j, j)] = ujj;
        for i in (j + 1)..n {
            let mut s = a[(j, i)];
            for k in 0..j {
                s -= u[(k, j)] * u[(k, i)];
            }
            u[(j, i)] = s / ujj;
        }
    }
    Ok(UpperTriangular(u))
}

/// Factor `A` and propagate the tangent `dA` through the factorization loop.
///
/// Returns `(U, dU)` with `dUᵀU + UᵀdU = dA` and `dU` upper triangular.
pub fn cholesky_upper_with_derivative(
    a: &Matrix,
    da: &Matrix,
) -> Result<(UpperTriangular, UpperTriangular)> {
    check_symmetric(a, "matrix to factor")?;
    check_symmetric(da, "tangent")?;
    if a.shape() != da.shape() {
        return Err(Error::InvalidArgument(
            "tangent shape differs from matrix".into(),
        ));
    }
    let n = a.nrows();
    let mut u = Matrix::zeros(n, n);
    let mut du = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        let mut dpivot = da[(j, j)];
        for k in 0..j {
            pivot -= u[(k, j)] * u[(k, j)];
            dpivot -= 2.0 * u[(k, j)] * du[(k, j)];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let ujj = pivot.sqrt();
        let dujj = dpivot / (2.0 * ujj);
        u[(j, j)] = ujj;
        du[(j, j)] = dujj;
        for i in (j + 1)..n {
            let mut s = a[(j, i)];
            let mut ds = da[(j, i)];
            for k in 0..j {
                s -= u[(k, j)] * u[(k, i)];
                ds -= du[(k, j)] * u[(k, i)] + u[(k, j)] * du[(k, i)];
            }
            let uji = s / ujj;
            u[(j, i)] = uji;
            du[(j, i)] = (ds - uji * dujj) / ujj;
        }
    }
    Ok((UpperTriangular(u), UpperTriangular(du)))
}

/// Tangent of the upper Cholesky factor of `a` in direction `da`.
pub fn cholesky_upper_derivative(a: &Matrix, da: &Matrix) -> Result<Matrix> {
    cholesky_upper_with_derivative(a, da).map(|(_, du)| du.into_inner())
}

/// Back/forward substitution against an upper-triangular factor.
///
/// Fails with [`Error::SingularFactor`] when a diagonal entry is below
/// `ε·max|u|`.
pub fn solve_upper(u: &UpperTriangular, b: &Matrix, side: Side) -> Result<Matrix> {
    let n = u.dim();
    let um = u.as_matrix();
    let compatible = match side {
        Side::Left | Side::TransposedLeft => b.nrows() == n,
        Side::Right => b.ncols() == n,
    };
    if !compatible {
        return Err(Error::InvalidArgument(format!(
            "{}x{} right-hand side incompatible with {n}x{n} factor",
            b.nrows(),
            b.ncols()
        )));
    }
    let threshold = f64::EPSILON * um.amax();
    for j in 0..n {
        if !(um[(j, j)].abs() >= threshold) || um[(j, j)] == 0.0 {
            return Err(Error::SingularFactor { index: j });
        }
    }

    let mut x = b.clone();
    match side {
        Side::Left => {
            for c in 0..x.ncols() {
                for i in (0..n).rev() {
                    let mut s = x[(i, c)];
                    for k in (i + 1)..n {
                        s -= um[(i, k)] * x[(k, c)];
                    }
                    x[(i, c)] = s / um[(i, i)];
                }
            }
        }
        Side::TransposedLeft => {
            for c in 0..x.ncols() {
                for i in 0..n {
                    let mut s = x[(i, c)];
                    for k in 0..i {
                        s -= um[(k, i)] * x[(k, c)];
                    }
                    x[(i, c)] = s / um[(i, i)];
                }
            }
        }
        Side::Right => {
            // X·U = B row by row: x_j = (b_j − Σ_{k<j} x_k u_kj) / u_jj
            for r in 0..x.nrows() {
                for j in 0..n {
                    let mut s = x[(r, j)];
                    for k in 0..j {
                        s -= x[(r, k)] * um[(k, j)];
                    }
                    x[(r, j)] = s / um[(j, j)];
                }
            }
        }
    }
    Ok(x)
}

pub fn solve_upper_vec(u: &UpperTriangular, b: &Vector, side: Side) -> Result<Vector> {
    if side == Side::Right {
        return Err(Error::InvalidArgument(
            "vector solves are column solves".into(),
        ));
    }
    let m = Matrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_upper(u, &m, side)?;
    Ok(Vector::from_column_slice(x.as_slice()))
}

pub fn strict_ldu_split(m: &Matrix) -> Result<LduSplit> {
    if !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "LDU split needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    let mut split = LduSplit {
        strict_lower: Matrix::zeros(n, n),
        diagonal: Matrix::zeros(n, n),
        strict_upper: Matrix::zeros(n, n),
    };
    for j in 0..n {
        for i in 0..n {
            let target = match i.cmp(&j) {
                std::cmp::Ordering::Greater => &mut split.strict_lower,
                std::cmp::Ordering::Equal => &mut split.diagonal,
                std::cmp::Ordering::Less => &mut split.strict_upper,
            };
            target[(i, j)] = m[(i, j)];
        }
    }
    Ok(split)
}

/// 2-norm condition number of a symmetric matrix; `+∞` unless positive definite.
pub fn symmetric_condition(a: &Matrix) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// 2-norm condition number `σ_max / σ_min`; `+∞` when `σ_min` is zero.
pub fn condition_number(a: &Matrix) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = a.clone().singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `(M + Mᵀ)/2`
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let m = random_matrix(rng, n, n);
        symmetrize(&(m.transpose() * &m + Matrix::identity(n, n)))
    }

    pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        symmetrize(&random_matrix(rng, n, n))
    }
}
