//! Dense symmetric-matrix algebra: eigendecomposition with a fixed sign
//! convention, rank-d spectral projectors, principal-angle distances, and
//! symmetric Gaussian noise matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Max-norm tolerance for `basisᵀ·basis ≈ I` on a [`Projector`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Frobenius tolerance for `‖P² − P‖_F` and `|trace(P) − d|` on a [`Projector`].
pub const IDEMPOTENCY_TOL: f64 = 1e-8;
/// Relative eigengap below which a spectrum is treated as degenerate at the cut.
const DEGENERATE_GAP_TOL: f64 = 1e-12;

/// Dense symmetric matrix with exact (bitwise) storage symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// The zero matrix of size `dim × dim`.
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: DMatrix::zeros(dim, dim),
        }
    }

    /// Build from a function evaluated on the upper triangle (`j ≤ k`);
    /// the lower triangle mirrors it bitwise.
    pub fn from_fn_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for k in j..dim {
                let v = f(j, k);
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "SymMatrix::from_fn_upper",
                    });
                }
                data[(j, k)] = v;
                data[(k, j)] = v;
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Wrap a square matrix, requiring exact symmetry and finite entries.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                left_name: "rows",
                left: m.nrows(),
                right_name: "cols",
                right: m.ncols(),
            });
        }
        let dim = m.nrows();
        for j in 0..dim {
            for k in j..dim {
                if !m[(j, k)].is_finite() {
                    return Err(Error::NonFinite {
                        context: "SymMatrix::from_matrix",
                    });
                }
                if m[(j, k)] != m[(k, j)] {
                    return Err(Error::invalid(
                        "matrix",
                        format!("entry ({j},{k}) differs from ({k},{j})"),
                    ));
                }
            }
        }
        Ok(SymMatrix { dim, data: m })
    }

    /// Wrap a square matrix keeping only its lower triangle; the upper
    /// triangle is overwritten with the mirror so symmetry is exact even
    /// when the input carries rounding asymmetry (e.g. a gemm product).
    pub fn from_lower_of(mut m: DMatrix<f64>) -> Result<Self> {
        assert_eq!(m.nrows(), m.ncols(), "square matrix required");
        let dim = m.nrows();
        for j in 0..dim {
            for k in j..dim {
                let v = m[(k, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: "SymMatrix::from_lower_of",
                    });
                }
                m[(j, k)] = v;
            }
        }
        Ok(SymMatrix { dim, data: m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[(j, k)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Entrywise sum; both operands stay exactly symmetric, so the result does.
    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left_name: "lhs",
                left: self.dim,
                right_name: "rhs",
                right: other.dim,
            });
        }
        Ok(SymMatrix {
            dim: self.dim,
            data: &self.data + &other.data,
        })
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: &self.data * factor,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending,
/// eigenvector signs fixed (largest-|entry| coordinate positive, lowest index
/// breaking ties) so the output is reproducible.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column i pairing with `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition. Deterministic for a fixed input.
pub fn sym_eigh(s: &SymMatrix) -> Result<EigenDecomposition> {
    let dim = s.dim();
    if dim == 0 {
        return Err(Error::invalid("matrix", "empty matrix"));
    }
    let eig = s.data.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    // Descending by eigenvalue; equal values keep nalgebra's output order.
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut values = Vec::with_capacity(dim);
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        // Sign convention: the entry of largest absolute value is positive;
        // among equal magnitudes the lowest index decides.
        let mut pivot = 0;
        let mut best = col[0].abs();
        for (i, &v) in col.iter().enumerate().skip(1) {
            if v.abs() > best {
                best = v.abs();
                pivot = i;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..dim {
            vectors[(i, dst)] = flip * col[i];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Rank-d orthogonal projector represented by an orthonormal basis of its range.
#[derive(Debug, Clone)]
pub struct Projector {
    ambient_dim: usize,
    rank: usize,
    basis: DMatrix<f64>,
}

impl Projector {
    /// Wrap a `D × d` basis, validating orthonormality and the induced-matrix
    /// idempotency/trace invariants.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let (dim, rank) = (basis.nrows(), basis.ncols());
        if rank == 0 || rank > dim {
            return Err(Error::invalid(
                "rank",
                format!("rank {rank} not in 1..={dim}"),
            ));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Projector::from_basis",
            });
        }
        let gram = basis.tr_mul(&basis);
        for j in 0..rank {
            for k in 0..rank {
                let target = if j == k { 1.0 } else { 0.0 };
                if (gram[(j, k)] - target).abs() > ORTHONORMALITY_TOL {
                    return Err(Error::invalid(
                        "basis",
                        format!(
                            "columns not orthonormal: gram({j},{k}) = {:.3e}",
                            gram[(j, k)]
                        ),
                    ));
                }
            }
        }
        Ok(Projector {
            ambient_dim: dim,
            rank,
            basis,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The induced matrix `P = B·Bᵀ` as an exactly symmetric matrix.
    pub fn matrix(&self) -> SymMatrix {
        let p = &self.basis * self.basis.transpose();
        SymMatrix::from_lower_of(p).expect("finite basis product")
    }

    /// `P·v` without forming the `D × D` matrix.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.ambient_dim);
        let mut coeffs = vec![0.0; self.rank];
        for (c, coeff) in coeffs.iter_mut().enumerate() {
            let col = self.basis.column(c);
            *coeff = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
        }
        let mut out = vec![0.0; self.ambient_dim];
        for (c, coeff) in coeffs.iter().enumerate() {
            let col = self.basis.column(c);
            for (o, b) in out.iter_mut().zip(col.iter()) {
                *o += coeff * b;
            }
        }
        out
    }
}

/// Projector onto the top-d eigenspace of `s`.
///
/// Degenerate spectra (no eigengap at the cut) are accepted: the projector is
/// whatever the deterministic eigensolver returns, with a logged warning.
pub fn top_d_projector(s: &SymMatrix, d: usize) -> Result<Projector> {
    let dim = s.dim();
    if d == 0 || d > dim {
        return Err(Error::invalid(
            "d",
            format!("requested rank {d} for a {dim}-dimensional matrix"),
        ));
    }
    let eig = sym_eigh(s)?;
    if d < dim {
        let gap = eig.values[d - 1] - eig.values[d];
        let scale = eig.values[0].abs().max(1.0);
        if gap <= DEGENERATE_GAP_TOL * scale {
            log::warn!(
                "degenerate spectrum at rank cut {d}: lambda_d = {:.6e}, lambda_d+1 = {:.6e}",
                eig.values[d - 1],
                eig.values[d]
            );
        }
    }
    let basis = eig.vectors.columns(0, d).into_owned();
    Projector::from_basis(basis)
}

/// Spectral-norm distance `‖P − Q‖` between the induced matrices; for
/// equal-rank projectors this equals the sine of the largest principal angle.
pub fn principal_angle_distance(p: &Projector, q: &Projector) -> Result<f64> {
    if p.ambient_dim() != q.ambient_dim() {
        return Err(Error::DimensionMismatch {
            left_name: "p.ambient_dim",
            left: p.ambient_dim(),
            right_name: "q.ambient_dim",
            right: q.ambient_dim(),
        });
    }
    if p.rank() != q.rank() {
        return Err(Error::DimensionMismatch {
            left_name: "p.rank",
            left: p.rank(),
            right_name: "q.rank",
            right: q.rank(),
        });
    }
    let diff = &p.matrix().data - &q.matrix().data;
    let sym = SymMatrix::from_lower_of(diff)?;
    let eig = sym_eigh(&sym)?;
    let norm = eig
        .values
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    // The exact value lies in [0,1] for equal ranks; trim rounding overshoot.
    Ok(norm.min(1.0))
}

/// Symmetric Gaussian noise matrix: `W[j][k] = W[k][j] ~ N(0, scale²)`
/// independently for `j ≤ k`, the diagonal included at the same variance.
/// Entries are drawn in row-major upper-triangle order.
pub fn sample_symmetric_gaussian(
    dim: usize,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<SymMatrix> {
    if !scale.is_finite() || scale < 0.0 {
        return Err(Error::invalid("scale", format!("negative scale {scale}")));
    }
    SymMatrix::from_fn_upper(dim, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        scale * g
    })
}

/// `C = A·Aᵀ` for `a` holding `cols` points of length `dim` contiguously
/// (column-major `dim × cols`), written into `out` (`dim × dim`, column-major).
/// Used by the covariance and projector-aggregation hot paths.
pub(crate) fn gram_into(a: &[f64], dim: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), dim * cols);
    debug_assert_eq!(out.len(), dim * dim);
    out.fill(0.0);
    if cols == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            dim,
            cols,
            dim,
            1.0,
            a.as_ptr(),
            1,
            dim as isize, // A: dim × cols, column-major
            a.as_ptr(),
            dim as isize,
            1, // Aᵀ: cols × dim view of the same buffer
            0.0,
            out.as_mut_ptr(),
            1,
            dim as isize,
        );
    }
}

/// Assemble a `SymMatrix` from a column-major `dim × dim` gram buffer,
/// mirroring one triangle for exact symmetry.
pub(crate) fn sym_from_gram(buf: &[f64], dim: usize, scale: f64) -> Result<SymMatrix> {
    SymMatrix::from_fn_upper(dim, |j, k| buf[j + k * dim] * scale)
}
