//! Aggregation of subset solutions into one global metric, and numeric
//! checks of the consistency bounds that justify it.
//!
//! Both rules consume the per-subset summands P_k = R_k·W_k:
//!
//! * inverse-weighted (ADML-I): solve (Σ_k R_k)·W_A = Σ_k P_k, the point
//!   where the summed subset gradients cancel;
//! * SVD-orthogonalized (ADML-II): thin SVD W_A·D·Vᵀ = Σ_k P_k, which skips
//!   the d×d inversion and returns an orthonormal W_A directly.
//!
//! The bound report compares ‖W_A − Ŵ‖ (spectral) against constants built
//! from the subset spectra:
//!
//!   S1 = K·max_k σ_max(R_k)/σ_min(R)         (needs R invertible)
//!   S2 = max_k σ_max(R_k)/min_k σ_min(R_k)   (needs every R_k PD)
//!   S3 = σ_max(R)/min(diag D)                (SVD rule)
//!
//! All constants use singular values, which agree with eigenvalues on PSD
//! matrices and keep 1/σ_min meaningful for indefinite ones. Alongside the
//! S3 bound K·S3·maxΔ + S3 + 1 the report carries a tighter variant,
//! (Σ_k σ_max(R_k))·maxΔ/min(D) + σ_max(R)/min(D) + 1, whose triangle-
//! inequality chain is valid term by term; only that variant is asserted by
//! the test suite, the former is recorded.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{AdmlError, Result};
use crate::linalg;
use crate::patch::ScatterRep;
use crate::solver::SubsetSolution;

/// P_k = R_k·W_k without materializing a d×d operator for factored
/// scatters.
pub fn compute_pk(scatter: &ScatterRep, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    scatter.apply(basis)
}

const SINGULAR_REL_TOL: f64 = 1e-10;
const RANK_DEFICIENT_REL_TOL: f64 = 1e-12;

/// Inverse-weighted aggregation: W_A = R⁻¹·Σ_k P_k, computed by a spectral
/// solve of the symmetric R rather than an explicit inverse. `dense` and
/// `weighted` are per-subset R_k and P_k in ascending subset order.
pub fn aggregate_inverse(
    dense: &[DMatrix<f64>],
    weighted: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    if dense.is_empty() || dense.len() != weighted.len() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!(
                "{} scatters vs {} weighted bases",
                dense.len(),
                weighted.len()
            ),
        });
    }
    let d = dense[0].nrows();
    let mut total = DMatrix::zeros(d, d);
    for r in dense {
        total += r;
    }
    let mut summed = weighted[0].clone();
    for p in &weighted[1..] {
        summed += p;
    }

    let (values, vectors) = linalg::sym_eigen_sorted(&total);
    let sigma_max = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let sigma_min = values.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if sigma_max == 0.0 || sigma_min <= SINGULAR_REL_TOL * sigma_max {
        return Err(AdmlError::SingularAggregate {
            sigma_min,
            sigma_max,
        });
    }
    let coeffs = vectors.transpose() * summed;
    let mut scaled = coeffs;
    for (i, &v) in values.iter().enumerate() {
        for c in 0..scaled.ncols() {
            scaled[(i, c)] /= v;
        }
    }
    Ok(vectors * scaled)
}

/// Result of the SVD aggregation rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdAggregate {
    /// W_A: d×q, orthonormal columns, sign-canonicalized.
    pub basis: DMatrix<f64>,
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    /// V: q×q with orthonormal columns.
    pub right: DMatrix<f64>,
    /// min(D) ≤ 1e−12·max(D): the S3 constant is unusable.
    pub rank_deficient: bool,
}

/// SVD-orthogonalized aggregation: thin SVD of M = Σ_k P_k (ascending
/// subset order).
pub fn aggregate_svd(weighted: &[DMatrix<f64>]) -> Result<SvdAggregate> {
    if weighted.is_empty() {
        return Err(AdmlError::ZeroAggregate);
    }
    let mut summed = weighted[0].clone();
    for p in &weighted[1..] {
        if p.shape() != summed.shape() {
            return Err(AdmlError::ShapeMismatch {
                msg: format!("{:?} vs {:?}", p.shape(), summed.shape()),
            });
        }
        summed += p;
    }
    if summed.norm() == 0.0 {
        return Err(AdmlError::ZeroAggregate);
    }

    let q = summed.ncols();
    let svd = summed.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vt");
    // sort singular values descending and carry the factors along
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut basis = DMatrix::zeros(u.nrows(), q);
    let mut right = DMatrix::zeros(q, q);
    let mut singular_values = Vec::with_capacity(q);
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &u.column(src));
        right.set_column(dst, &v_t.transpose().column(src));
        singular_values.push(svd.singular_values[src]);
    }
    let flips = linalg::sign_canonicalize_columns(&mut basis);
    for (c, flipped) in flips.iter().enumerate() {
        if *flipped {
            for r in 0..q {
                right[(r, c)] = -right[(r, c)];
            }
        }
    }
    let max_sv = singular_values[0];
    let min_sv = singular_values[q - 1];
    Ok(SvdAggregate {
        basis,
        singular_values,
        right,
        rank_deficient: min_sv <= RANK_DEFICIENT_REL_TOL * max_sv,
    })
}

/// Outcome of one bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundFlag {
    Holds,
    Violated,
    NotApplicable,
}

impl std::fmt::Display for BoundFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundFlag::Holds => "holds",
            BoundFlag::Violated => "violated",
            BoundFlag::NotApplicable => "not-applicable",
        };
        f.write_str(s)
    }
}

/// Numeric record of the consistency bounds for one aggregation run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub k: usize,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    /// ‖W_A − Ŵ‖ (spectral).
    pub lhs: f64,
    /// max_k ‖W_k − Ŵ‖ (spectral).
    pub max_deviation: f64,
    pub rhs1: f64,
    pub rhs2: f64,
    pub rhs3: f64,
    pub rhs3_corrected: f64,
    pub flag1: BoundFlag,
    pub flag2: BoundFlag,
    pub flag3: BoundFlag,
    pub flag3_corrected: BoundFlag,
    pub min_diag_d: f64,
}

impl BoundReport {
    /// Flat `key=value` block for terminal output.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "k={}", self.k);
        let _ = writeln!(out, "lhs={:.6e}", self.lhs);
        let _ = writeln!(out, "max_deviation={:.6e}", self.max_deviation);
        let _ = writeln!(out, "s1={:.6e}", self.s1);
        let _ = writeln!(out, "rhs1={:.6e}", self.rhs1);
        let _ = writeln!(out, "flag1={}", self.flag1);
        let _ = writeln!(out, "s2={:.6e}", self.s2);
        let _ = writeln!(out, "rhs2={:.6e}", self.rhs2);
        let _ = writeln!(out, "flag2={}", self.flag2);
        let _ = writeln!(out, "s3={:.6e}", self.s3);
        let _ = writeln!(out, "rhs3={:.6e}", self.rhs3);
        let _ = writeln!(out, "flag3={}", self.flag3);
        let _ = writeln!(out, "rhs3_corrected={:.6e}", self.rhs3_corrected);
        let _ = writeln!(out, "flag3_corrected={}", self.flag3_corrected);
        let _ = writeln!(out, "min_diag_d={:.6e}", self.min_diag_d);
        out
    }

    pub fn csv_header() -> &'static str {
        "k,lhs,max_deviation,s1,rhs1,flag1,s2,rhs2,flag2,s3,rhs3,flag3,rhs3_corrected,flag3_corrected,min_diag_d"
    }

    /// One CSV row matching [`BoundReport::csv_header`].
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e},{:.10e},{},{:.10e},{:.10e},{},{:.10e},{},{:.10e}",
            self.k,
            self.lhs,
            self.max_deviation,
            self.s1,
            self.rhs1,
            self.flag1,
            self.s2,
            self.rhs2,
            self.flag2,
            self.s3,
            self.rhs3,
            self.flag3,
            self.rhs3_corrected,
            self.flag3_corrected,
            self.min_diag_d,
        )
    }
}

/// Absolute slack absorbing rounding noise in the zero-deviation cases
/// (lhs ~ machine epsilon against an exactly-zero rhs).
const BOUND_SLACK: f64 = 1e-9;

fn flag_of(lhs: f64, rhs: f64, applicable: bool) -> BoundFlag {
    if !applicable {
        BoundFlag::NotApplicable
    } else if lhs <= rhs + BOUND_SLACK {
        BoundFlag::Holds
    } else {
        BoundFlag::Violated
    }
}

/// Compute the bound constants and check each bound numerically.
/// Diagnostic mode: needs every R_k dense, so keep d small. `singular_d` is
/// the diagonal of the SVD rule (None for the inverse rule, which has no S3
/// bounds).
pub fn bound_report(
    dense: &[DMatrix<f64>],
    solutions: &[SubsetSolution],
    aggregated: &DMatrix<f64>,
    target: &DMatrix<f64>,
    singular_d: Option<&[f64]>,
) -> Result<BoundReport> {
    if dense.is_empty() {
        return Err(AdmlError::MissingDense);
    }
    if dense.len() != solutions.len() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("{} scatters vs {} solutions", dense.len(), solutions.len()),
        });
    }
    let k = dense.len();
    let d = dense[0].nrows();
    let mut total = DMatrix::zeros(d, d);
    for r in dense {
        total += r;
    }

    // per-subset spectra drive every constant
    let mut max_sigma_max = 0.0f64;
    let mut sum_sigma_max = 0.0f64;
    let mut min_lambda_min = f64::INFINITY;
    let mut all_pd = true;
    for r in dense {
        let (values, _) = linalg::sym_eigen_sorted(r);
        let smax = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        max_sigma_max = max_sigma_max.max(smax);
        sum_sigma_max += smax;
        min_lambda_min = min_lambda_min.min(values[0]);
        if values[0] <= 0.0 {
            all_pd = false;
        }
    }
    let (total_values, _) = linalg::sym_eigen_sorted(&total);
    let total_sigma_max = total_values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let total_sigma_min = total_values
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let total_invertible = total_sigma_max > 0.0
        && total_sigma_min > SINGULAR_REL_TOL * total_sigma_max;

    let lhs = linalg::spectral_norm(&(aggregated - target));
    let max_deviation = solutions
        .iter()
        .map(|s| linalg::spectral_norm(&(&s.basis - target)))
        .fold(0.0f64, f64::max);

    let s1 = if total_invertible {
        k as f64 * max_sigma_max / total_sigma_min
    } else {
        f64::INFINITY
    };
    let rhs1 = s1 * max_deviation;
    let flag1 = flag_of(lhs, rhs1, total_invertible);

    let s2 = if all_pd {
        max_sigma_max / min_lambda_min
    } else {
        f64::INFINITY
    };
    let rhs2 = s2 * max_deviation;
    let flag2 = flag_of(lhs, rhs2, all_pd);

    let (s3, rhs3, rhs3_corrected, min_diag_d, svd_applicable) = match singular_d {
        Some(diag) if !diag.is_empty() => {
            let min_d = diag.iter().copied().fold(f64::INFINITY, f64::min);
            let max_d = diag.iter().copied().fold(0.0f64, f64::max);
            if min_d > RANK_DEFICIENT_REL_TOL * max_d && min_d > 0.0 {
                let s3 = total_sigma_max / min_d;
                let rhs3 = k as f64 * s3 * max_deviation + s3 + 1.0;
                let corrected =
                    sum_sigma_max * max_deviation / min_d + total_sigma_max / min_d + 1.0;
                (s3, rhs3, corrected, min_d, true)
            } else {
                (f64::INFINITY, f64::INFINITY, f64::INFINITY, min_d, false)
            }
        }
        _ => (f64::INFINITY, f64::INFINITY, f64::INFINITY, 0.0, false),
    };
    let flag3 = flag_of(lhs, rhs3, svd_applicable);
    let flag3_corrected = flag_of(lhs, rhs3_corrected, svd_applicable);

    Ok(BoundReport {
        k,
        s1,
        s2,
        s3,
        lhs,
        max_deviation,
        rhs1,
        rhs2,
        rhs3,
        rhs3_corrected,
        flag1,
        flag2,
        flag3,
        flag3_corrected,
        min_diag_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledDataset, Labels};
    use crate::eval::subspace_distance;
    use crate::patch::{accumulate_scatter, PatchSpec, ScatterMode};
    use crate::solver::{solve_subset, SolveMode};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dvector, DMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_two_class(d: usize, n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..d * n)
            .map(|i| {
                let shift = if (i / d).is_multiple_of(2) { 0.8 } else { -0.8 };
                rng.gen::<f64>() + shift
            })
            .collect();
        let classes: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        LabeledDataset::new(
            DMatrix::from_column_slice(d, n, &feats),
            Labels::Categorical(classes),
        )
        .unwrap()
    }

    #[test]
    fn pk_matches_dense_product() {
        let ds = random_two_class(5, 12, 2);
        let spec = PatchSpec::new(2, 2, 0.6).unwrap();
        let factored = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Factored)
            .unwrap()
            .rep;
        let dense = factored.to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DMatrix::from_fn(5, 2, |_, _| rng.gen::<f64>() - 0.5);
        let p = compute_pk(&factored, &w).unwrap();
        let p_dense = &dense * &w;
        assert!((p.clone() - &p_dense).norm() <= 1e-10 * p_dense.norm());
        assert_eq!(p.shape(), (5, 2));

        let zero = DMatrix::zeros(5, 2);
        assert_eq!(compute_pk(&factored, &zero).unwrap(), zero);
    }

    #[test]
    fn inverse_rule_hand_case() {
        let r1 = DMatrix::from_diagonal(&dvector![1.0, 2.0]);
        let r2 = DMatrix::from_diagonal(&dvector![3.0, 1.0]);
        let w1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let w2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let p1 = &r1 * &w1;
        let p2 = &r2 * &w2;
        let agg = aggregate_inverse(&[r1, r2], &[p1, p2]).unwrap();
        assert_abs_diff_eq!(agg[(0, 0)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(agg[(1, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn inverse_rule_collapses_for_one_subset() {
        let ds = random_two_class(4, 16, 5);
        let spec = PatchSpec::new(2, 3, 0.5).unwrap();
        let scatter = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep;
        let sol = solve_subset(&scatter, 0, 2, SolveMode::Direct, None).unwrap();
        let p = compute_pk(&scatter, &sol.basis).unwrap();
        let dense = scatter.to_dense();
        let agg = aggregate_inverse(&[dense], &[p]).unwrap();
        assert!((agg - &sol.basis).norm() <= 1e-12 * sol.basis.norm().max(1.0));
    }

    #[test]
    fn inverse_rule_rejects_singular_sum() {
        let r = DMatrix::from_diagonal(&dvector![1.0, -0.5]);
        let w = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let p = DMatrix::zeros(2, 1);
        let result = aggregate_inverse(&[r.clone(), -r], &[p.clone(), p]);
        assert!(matches!(result, Err(AdmlError::SingularAggregate { .. })));
        let _ = w;
    }

    #[test]
    fn svd_rule_spans_single_solution() {
        let ds = random_two_class(5, 18, 8);
        let spec = PatchSpec::new(2, 3, 1.0).unwrap();
        let scatter = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep;
        let sol = solve_subset(&scatter, 0, 2, SolveMode::Direct, None).unwrap();
        assert!(
            sol.eigenvalues.iter().all(|v| v.abs() > 1e-12),
            "test instance needs nonzero eigenvalues"
        );
        let p = compute_pk(&scatter, &sol.basis).unwrap();
        let agg = aggregate_svd(&[p]).unwrap();
        assert!(subspace_distance(&agg.basis, &sol.basis).unwrap() <= 1e-10);
    }

    #[test]
    fn svd_reconstruction_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let parts: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(6, 2, |_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let mut summed = DMatrix::zeros(6, 2);
        for p in &parts {
            summed += p;
        }
        let agg = aggregate_svd(&parts).unwrap();
        assert!(agg.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(agg.singular_values.iter().all(|&v| v >= 0.0));
        let rebuilt = &agg.basis
            * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(agg.singular_values.clone()))
            * agg.right.transpose();
        assert!((rebuilt - &summed).norm() <= 1e-10 * summed.norm());
        assert!(crate::linalg::orthonormality_defect(&agg.basis) <= 1e-10);
    }

    #[test]
    fn svd_rejects_zero_sum() {
        let zero = DMatrix::zeros(4, 2);
        assert!(matches!(
            aggregate_svd(&[zero]),
            Err(AdmlError::ZeroAggregate)
        ));
    }

    #[test]
    fn stationarity_residual_vanishes() {
        let ds = random_two_class(5, 60, 33);
        let spec = PatchSpec::new(3, 3, 0.3).unwrap();
        let (views, _) =
            crate::dataset::random_split(&ds, crate::dataset::PartitionSpec::Count(4), 0).unwrap();
        let mut dense = Vec::new();
        let mut weighted = Vec::new();
        for v in &views {
            let scatter = accumulate_scatter(v, &spec, ScatterMode::Dense).unwrap().rep;
            let sol = solve_subset(&scatter, v.id, 2, SolveMode::Direct, None).unwrap();
            weighted.push(compute_pk(&scatter, &sol.basis).unwrap());
            dense.push(scatter.to_dense());
        }
        let agg = aggregate_inverse(&dense, &weighted).unwrap();
        let mut residual = DMatrix::zeros(5, 2);
        let mut summed = DMatrix::zeros(5, 2);
        for (r, p) in dense.iter().zip(weighted.iter()) {
            residual += p - r * &agg;
            summed += p;
        }
        assert!(residual.norm() <= 1e-8 * summed.norm());
    }

    #[test]
    fn report_zero_deviation_for_single_subset() {
        let ds = random_two_class(4, 20, 55);
        let spec = PatchSpec::new(2, 3, 0.5).unwrap();
        let scatter = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep;
        let sol = solve_subset(&scatter, 0, 2, SolveMode::Direct, None).unwrap();
        let p = compute_pk(&scatter, &sol.basis).unwrap();
        let dense = scatter.to_dense();
        let agg = aggregate_inverse(std::slice::from_ref(&dense), &[p]).unwrap();
        let report =
            bound_report(&[dense], std::slice::from_ref(&sol), &agg, &sol.basis, None).unwrap();
        assert!(report.lhs <= 1e-10);
        assert_ne!(report.flag1, BoundFlag::Violated);
        assert_eq!(report.flag3, BoundFlag::NotApplicable);
        // text block round-trips the flags
        assert!(report.to_text().contains("flag1=holds"));
        assert_eq!(
            report.to_csv_row().split(',').count(),
            BoundReport::csv_header().split(',').count()
        );
    }

    #[test]
    fn report_missing_dense() {
        let agg = DMatrix::identity(3, 2);
        assert!(matches!(
            bound_report(&[], &[], &agg, &agg, None),
            Err(AdmlError::MissingDense)
        ));
    }

    #[test]
    fn subset_order_barely_moves_the_result() {
        let ds = random_two_class(5, 72, 44);
        let spec = PatchSpec::new(2, 3, 0.4).unwrap();
        let (views, _) =
            crate::dataset::random_split(&ds, crate::dataset::PartitionSpec::Count(6), 1).unwrap();
        let mut dense = Vec::new();
        let mut weighted = Vec::new();
        for v in &views {
            let scatter = accumulate_scatter(v, &spec, ScatterMode::Dense).unwrap().rep;
            let sol = solve_subset(&scatter, v.id, 2, SolveMode::Direct, None).unwrap();
            weighted.push(compute_pk(&scatter, &sol.basis).unwrap());
            dense.push(scatter.to_dense());
        }
        let forward = aggregate_svd(&weighted).unwrap();
        let mut shuffled = weighted.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let permuted = aggregate_svd(&shuffled).unwrap();
        // only float summation order differs
        assert!(subspace_distance(&forward.basis, &permuted.basis).unwrap() <= 1e-9);

        let fwd_inv = aggregate_inverse(&dense, &weighted).unwrap();
        let mut dense_rev = dense.clone();
        dense_rev.reverse();
        let mut weighted_rev = weighted.clone();
        weighted_rev.reverse();
        let rev_inv = aggregate_inverse(&dense_rev, &weighted_rev).unwrap();
        assert!((fwd_inv - rev_inv).norm() <= 1e-9);
    }
}
