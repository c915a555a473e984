//! Dense-matrix primitives shared by the decomposition and sparse-coding
//! stages: the scalar and elementwise shrinkage operator, a deterministic
//! thin SVD, singular value thresholding, and the norms both objectives
//! are written in terms of.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Real-valued dense matrix, (row, col) indexed.
pub type DenseMatrix = DMatrix<f64>;

/// Entries with absolute value at or below this count as zero for the l0 norm.
pub const L0_TOLERANCE: f64 = 1e-12;

/// Checks every entry is finite, reporting the first offending coordinate.
pub fn ensure_finite(m: &DenseMatrix) -> Result<()> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

fn ensure_nonempty(m: &DenseMatrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(())
}

fn ensure_threshold(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::NegativeThreshold(lambda));
    }
    Ok(())
}

/// Shrinks `a` toward zero by `lambda`, clipping to zero inside `[-lambda, lambda]`.
///
/// This is the proximal operator of `lambda * |.|`.
pub fn soft_threshold(a: f64, lambda: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::NonFiniteValue(a));
    }
    ensure_threshold(lambda)?;
    Ok(shrink(a, lambda))
}

/// Unchecked scalar shrinkage for inner loops; callers validate inputs once.
#[inline]
pub(crate) fn shrink(a: f64, lambda: f64) -> f64 {
    if a > lambda {
        a - lambda
    } else if a < -lambda {
        a + lambda
    } else {
        0.0
    }
}

/// Applies the shrinkage operator to every entry.
///
/// The result minimizes `lambda * ||X||_1 + 1/2 * ||X - m||_F^2` over X.
pub fn soft_threshold_matrix(m: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    ensure_finite(m)?;
    ensure_threshold(lambda)?;
    Ok(m.map(|a| shrink(a, lambda)))
}

/// Thin SVD `m = u * diag(s) * v^T` with `k = min(rows, cols)`.
///
/// Singular values are nonincreasing and the first nonzero entry of each
/// column of `u` is nonnegative, so factorizations are reproducible.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub s: DVector<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> DenseMatrix {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }
}

/// Upper bound on Jacobi sweeps; cyclic one-sided Jacobi converges in far
/// fewer for the matrix sizes this crate works with.
const JACOBI_MAX_SWEEPS: usize = 64;

/// Computes the thin SVD of `m`.
///
/// The factorization runs cyclic one-sided Jacobi on the taller orientation:
/// plane rotations orthogonalize column pairs of a working copy until every
/// pair is orthogonal relative to its scale. The sweep order is fixed and no
/// pivoting depends on ties, so repeated calls are bit-for-bit identical,
/// and accuracy degrades gracefully on rank-deficient input (QR-iteration
/// SVDs can silently misconverge on such matrices).
pub fn svd(m: &DenseMatrix) -> Result<SvdFactors> {
    ensure_nonempty(m)?;
    ensure_finite(m)?;

    let mut f = if m.nrows() >= m.ncols() {
        jacobi_svd_tall(m)?
    } else {
        // A^T = U S V^T gives A = V S U^T, so the factors swap roles.
        let g = jacobi_svd_tall(&m.transpose())?;
        SvdFactors {
            u: g.v,
            s: g.s,
            v: g.u,
        }
    };

    sort_descending(&mut f.u, &mut f.s, &mut f.v);
    fix_signs(&mut f.u, &mut f.v);
    Ok(f)
}

/// One-sided Jacobi SVD for `rows >= cols`.
fn jacobi_svd_tall(a: &DenseMatrix) -> Result<SvdFactors> {
    let (rows, cols) = a.shape();
    debug_assert!(rows >= cols);
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(cols, cols);
    // Dot products of length `rows` carry roundoff around rows * eps, so a
    // tighter cutoff would spin on noise without improving the factors.
    let tol = rows as f64 * f64::EPSILON;
    // Columns at roundoff scale relative to the whole matrix are zeroed
    // outright. Rotating a pair of near-parallel columns leaves a residue
    // column of that size which is parallel again, so without deflation the
    // sweep loop never settles on rank-deficient input. Zeroing perturbs the
    // matrix by at most eps * ||A||_F, below the accuracy of the factors.
    // The Frobenius norm is rotation-invariant, so the threshold is fixed.
    let deflate_sq = {
        let d = f64::EPSILON * a.norm();
        d * d
    };

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let (colp, colq) = column_pair_mut(&mut w, rows, p, q);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    alpha += colp[i] * colp[i];
                    beta += colq[i] * colq[i];
                    gamma += colp[i] * colq[i];
                }
                if alpha <= deflate_sq {
                    colp.fill(0.0);
                    continue;
                }
                if beta <= deflate_sq {
                    colq.fill(0.0);
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Jacobi rotation that zeroes the (p, q) entry of the column
                // Gram matrix [[alpha, gamma], [gamma, beta]].
                let theta = (beta - alpha) / (2.0 * gamma);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let wp = colp[i];
                    let wq = colq[i];
                    colp[i] = c * wp - s * wq;
                    colq[i] = s * wp + c * wq;
                }
                let (vp, vq) = column_pair_mut(&mut v, cols, p, q);
                for i in 0..cols {
                    let a = vp[i];
                    let b = vq[i];
                    vp[i] = c * a - s * b;
                    vq[i] = s * a + c * b;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdFailed);
    }

    let mut s = DVector::zeros(cols);
    let mut u = DenseMatrix::zeros(rows, cols);
    let mut empty = Vec::new();
    for j in 0..cols {
        let norm = w.column(j).norm();
        if norm * norm <= deflate_sq {
            empty.push(j);
            continue;
        }
        s[j] = norm;
        let inv = 1.0 / norm;
        for i in 0..rows {
            u[(i, j)] = w[(i, j)] * inv;
        }
    }
    complete_basis(&mut u, &empty);

    Ok(SvdFactors { u, s, v })
}

/// Disjoint mutable views of columns `p < q`; matrix storage is column-major.
fn column_pair_mut(m: &mut DenseMatrix, rows: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(q * rows);
    (&mut lo[p * rows..(p + 1) * rows], &mut hi[..rows])
}

/// Fills the listed zero columns of `u` with unit vectors orthogonal to all
/// other columns, so `u` stays orthonormal when the input had zero columns.
fn complete_basis(u: &mut DenseMatrix, empty: &[usize]) {
    let rows = u.nrows();
    for &j in empty {
        // Start from the coordinate vector that projects least onto the
        // existing columns; lowest index wins ties to stay deterministic.
        let mut best = 0;
        let mut best_residual = f64::NEG_INFINITY;
        for cand in 0..rows {
            let mut projected = 0.0;
            for col in 0..u.ncols() {
                let coef = u[(cand, col)];
                projected += coef * coef;
            }
            let residual = 1.0 - projected;
            if residual > best_residual {
                best_residual = residual;
                best = cand;
            }
        }
        let mut r = DVector::zeros(rows);
        r[best] = 1.0;
        // Two rounds of modified Gram-Schmidt keep orthogonality near
        // machine precision.
        for _ in 0..2 {
            for col in 0..u.ncols() {
                if col == j {
                    continue;
                }
                let dot = u.column(col).dot(&r);
                for i in 0..rows {
                    r[i] -= dot * u[(i, col)];
                }
            }
        }
        let norm = r.norm();
        for i in 0..rows {
            u[(i, j)] = r[i] / norm;
        }
    }
}

fn sort_descending(u: &mut DenseMatrix, s: &mut DVector<f64>, v: &mut DenseMatrix) {
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("singular values are finite"));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return;
    }
    let u_old = u.clone();
    let v_old = v.clone();
    let s_old = s.clone();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u_old.column(src));
        v.set_column(dst, &v_old.column(src));
        s[dst] = s_old[src];
    }
}

/// Flips paired singular vectors so the first nonzero entry of each `u`
/// column is nonnegative.
fn fix_signs(u: &mut DenseMatrix, v: &mut DenseMatrix) {
    for j in 0..u.ncols() {
        let lead = (0..u.nrows()).map(|i| u[(i, j)]).find(|&x| x != 0.0);
        if let Some(x) = lead {
            if x < 0.0 {
                for i in 0..u.nrows() {
                    u[(i, j)] = -u[(i, j)];
                }
                for i in 0..v.nrows() {
                    v[(i, j)] = -v[(i, j)];
                }
            }
        }
    }
}

/// Singular value thresholding: shrinks the singular values of `m` by `tau`.
///
/// The result minimizes `tau * ||X||_* + 1/2 * ||X - m||_F^2` over X.
pub fn svt(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    ensure_threshold(tau)?;
    let factors = svd(m)?;
    let shrunk = factors.s.map(|sigma| shrink(sigma, tau));
    Ok(&factors.u * DMatrix::from_diagonal(&shrunk) * factors.v.transpose())
}

/// The norms used by the decomposition objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    /// Sum of singular values.
    pub nuclear: f64,
    /// Sum of absolute entries.
    pub l1: f64,
    /// Square root of the sum of squared entries.
    pub frobenius: f64,
    /// Count of entries with absolute value above [`L0_TOLERANCE`].
    pub l0: usize,
}

/// Computes nuclear, l1, Frobenius, and l0 norms of `m`.
pub fn norms(m: &DenseMatrix) -> Result<MatrixNorms> {
    ensure_nonempty(m)?;
    ensure_finite(m)?;
    let factors = svd(m)?;
    Ok(MatrixNorms {
        nuclear: factors.s.iter().sum(),
        l1: m.iter().map(|a| a.abs()).sum(),
        frobenius: m.norm(),
        l0: m.iter().filter(|a| a.abs() > L0_TOLERANCE).count(),
    })
}

/// Reads the matrix text format: a `rows cols` header line followed by
/// `rows` lines of space-separated decimals.
pub fn read_matrix_text<R: BufRead>(reader: R) -> Result<DenseMatrix> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MatrixParse {
            line: 1,
            message: "missing header line".into(),
        })?
        .map_err(Error::Io)?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::MatrixParse {
            line: 1,
            message: format!("expected `rows cols`, got {header:?}"),
        });
    }
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|e| Error::MatrixParse {
            line: 1,
            message: format!("bad dimension {s:?}: {e}"),
        })
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyMatrix);
    }

    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line_no = r + 2;
        let line = lines
            .next()
            .ok_or_else(|| Error::MatrixParse {
                line: line_no,
                message: format!("expected {rows} data rows, found {r}"),
            })?
            .map_err(Error::Io)?;
        let mut count = 0;
        for token in line.split_whitespace() {
            let value: f64 = token.parse().map_err(|e| Error::MatrixParse {
                line: line_no,
                message: format!("bad value {token:?}: {e}"),
            })?;
            if !value.is_finite() {
                return Err(Error::MatrixParse {
                    line: line_no,
                    message: format!("non-finite value {token:?}"),
                });
            }
            data.push(value);
            count += 1;
        }
        if count != cols {
            return Err(Error::MatrixParse {
                line: line_no,
                message: format!("expected {cols} values, got {count}"),
            });
        }
    }
    Ok(DenseMatrix::from_row_slice(rows, cols, &data))
}

/// Writes the matrix text format. Values print with the shortest
/// representation that round-trips through `f64`.
pub fn write_matrix_text<W: Write>(m: &DenseMatrix, writer: &mut W) -> io::Result<()> {
    writeln!(writer, "{} {}", m.nrows(), m.ncols())?;
    let mut line = String::new();
    for r in 0..m.nrows() {
        line.clear();
        for c in 0..m.ncols() {
            if c > 0 {
                line.push(' ');
            }
            line.push_str(&m[(r, c)].to_string());
        }
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
