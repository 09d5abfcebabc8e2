//! Subset eigenproblem: the minimizer of tr(WᵀR_kW) over orthonormal W is
//! the span of the q algebraically smallest eigenvectors of R_k.
//!
//! Two routes produce it. The direct route eigendecomposes the d×d scatter.
//! The Gram route, for d ≫ N_k, writes W = X_k·U and shrinks the problem to
//! N_k×N_k: instead of the non-symmetric L_k·G (G = X_kᵀX_k) it solves the
//! similar symmetric problem G^{1/2}·L_k·G^{1/2}, maps back through
//! G^{−1/2}, and re-orthonormalizes with a thin QR. A small ridge keeps
//! rank-deficient Gram matrices invertible.
//!
//! β makes R_k indefinite in general; "smallest" always means algebraically
//! smallest, which may be negative.

use nalgebra::DMatrix;

use crate::error::{AdmlError, Result};
use crate::linalg;
use crate::patch::ScatterRep;

/// How to solve a subset problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Gram route when d > N_k, direct otherwise.
    #[default]
    Auto,
    Direct,
    Gram,
}

/// Spectrum summary of a subset scatter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumDiagnostics {
    /// Largest singular value of R_k.
    pub sigma_max: f64,
    /// Smallest singular value of R_k (0 when rank-deficient).
    pub sigma_min: f64,
    /// Numerical rank estimate.
    pub rank: usize,
}

/// A solved subset problem: orthonormal basis of the minimizing subspace,
/// its eigenvalues (ascending), and scatter diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    pub subset_id: usize,
    /// d×q, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// q ascending eigenvalues; negative values are expected.
    pub eigenvalues: Vec<f64>,
    pub diagnostics: SpectrumDiagnostics,
}

const RANK_TOL: f64 = 1e-12;
const GRAM_COND_LIMIT: f64 = 1e12;

/// Eigenvectors of the q algebraically smallest eigenvalues of a symmetric
/// matrix, columns sign-canonicalized (largest-magnitude entry positive),
/// eigenvalues ascending. The input is symmetrized as (M+Mᵀ)/2 first.
pub fn eigen_smallest(m: &DMatrix<f64>, q: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("expected square matrix, got {}x{}", d, m.ncols()),
        });
    }
    if q == 0 || q > d {
        return Err(AdmlError::BadDimension {
            msg: format!("q = {q} out of range for dimension {d}"),
        });
    }
    let (values, vectors) = linalg::sym_eigen_sorted(m);
    let mut basis = vectors.columns(0, q).into_owned();
    linalg::sign_canonicalize_columns(&mut basis);
    Ok((basis, values[..q].to_vec()))
}

fn diagnostics_from_spectrum(all_eigenvalues: &[f64], dim: usize) -> SpectrumDiagnostics {
    let sigma_max = all_eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let tol = RANK_TOL * sigma_max;
    let nonzero: Vec<f64> = all_eigenvalues
        .iter()
        .map(|v| v.abs())
        .filter(|&a| a > tol)
        .collect();
    let rank = nonzero.len();
    let sigma_min = if rank < dim {
        0.0
    } else {
        nonzero.iter().copied().fold(f64::INFINITY, f64::min)
    };
    SpectrumDiagnostics {
        sigma_max,
        sigma_min: if sigma_min.is_finite() { sigma_min } else { 0.0 },
        rank,
    }
}

/// Solve min tr(WᵀR_kW) for a subset scatter. `ridge` (Gram route only)
/// defaults to 1e−8·tr(G)/N_k.
pub fn solve_subset(
    scatter: &ScatterRep,
    subset_id: usize,
    q: usize,
    mode: SolveMode,
    ridge: Option<f64>,
) -> Result<SubsetSolution> {
    let d = scatter.dim();
    if q == 0 || q > d {
        return Err(AdmlError::BadDimension {
            msg: format!("q = {q} out of range for dimension {d}"),
        });
    }
    let use_gram = match (mode, scatter) {
        (SolveMode::Auto, ScatterRep::Factored { penalty, .. }) => d > penalty.n(),
        (SolveMode::Auto, ScatterRep::Dense(_)) => false,
        (SolveMode::Gram, _) => true,
        (SolveMode::Direct, _) => false,
    };

    if !use_gram {
        let dense = scatter.to_dense();
        let (all_values, vectors) = linalg::sym_eigen_sorted(&dense);
        let mut basis = vectors.columns(0, q).into_owned();
        linalg::sign_canonicalize_columns(&mut basis);
        Ok(SubsetSolution {
            subset_id,
            basis,
            eigenvalues: all_values[..q].to_vec(),
            diagnostics: diagnostics_from_spectrum(&all_values, d),
        })
    } else {
        let (x, penalty) = match scatter {
                ScatterRep::Factored { x, penalty } => (x, penalty),
            ScatterRep::Dense(_) => {
                return Err(AdmlError::ShapeMismatch {
                    msg: "Gram route needs the factored scatter".into(),
                })
            }
        };
        let n = penalty.n();
        if q > n {
            return Err(AdmlError::BadDimension {
                msg: format!("q = {q} exceeds subset size {n}"),
            });
        }
        let gram = x.transpose() * x;
        let ridge = ridge.unwrap_or_else(|| 1e-8 * gram.trace() / n as f64);
        let gram = gram + DMatrix::identity(n, n) * ridge;

        let (g_values, g_vectors) = linalg::sym_eigen_sorted(&gram);
        let g_min = g_values[0].max(0.0);
        let g_max = g_values[n - 1];
        if g_min <= 0.0 || g_max / g_min > GRAM_COND_LIMIT {
            return Err(AdmlError::GramIllConditioned {
                cond: if g_min > 0.0 { g_max / g_min } else { f64::INFINITY },
            });
        }
        let sqrt_diag = nalgebra::DVector::from_iterator(n, g_values.iter().map(|v| v.sqrt()));
        let g_half = &g_vectors * DMatrix::from_diagonal(&sqrt_diag) * g_vectors.transpose();
        let inv_sqrt_diag =
            nalgebra::DVector::from_iterator(n, g_values.iter().map(|v| 1.0 / v.sqrt()));
        let g_inv_half =
            &g_vectors * DMatrix::from_diagonal(&inv_sqrt_diag) * g_vectors.transpose();

        // symmetric stand-in for L·G with the same spectrum
        let reduced = &g_half * penalty.mul_dense(&g_half);
        let (all_values, vectors) = linalg::sym_eigen_sorted(&reduced);
        let coeffs = &g_inv_half * vectors.columns(0, q).into_owned();
        let mut basis = linalg::thin_q(&(x * coeffs));
        linalg::sign_canonicalize_columns(&mut basis);

        // ridge and the QR perturb the eigenvalues; re-evaluate each as
        // a Rayleigh quotient against the true operator
        let applied = scatter.apply(&basis)?;
        let eigenvalues: Vec<f64> = (0..q)
            .map(|j| basis.column(j).dot(&applied.column(j)))
            .collect();

        Ok(SubsetSolution {
            subset_id,
            basis,
            eigenvalues,
            diagnostics: diagnostics_from_spectrum(&all_values, d),
        })
    }
}
