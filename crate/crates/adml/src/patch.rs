//! Discriminative patches and subset scatter assembly.
//!
//! A patch couples a centre sample with its k_W nearest same-class and k_B
//! nearest other-class neighbours. The patch's penalty matrix L_i turns the
//! local pull-within / push-between objective
//!
//!   Σ_{j∈within} ‖Wᵀ(x_i−x_j)‖² − β Σ_{j∈between} ‖Wᵀ(x_i−x_j)‖²
//!
//! into the quadratic form tr(Wᵀ X_{N_i} L_i X_{N_i}ᵀ W). Summing the
//! per-patch penalties over a subset yields the subset scatter
//! R_k = X_k L_k X_kᵀ, kept either as an explicit d×d matrix or factored as
//! (X_k, L_k) when d is too large to square.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::dataset::SubsetView;
use crate::error::{AdmlError, Result};

/// Neighbourhood sizes and the between-class weight β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSpec {
    pub k_within: usize,
    pub k_between: usize,
    pub beta: f64,
}

impl PatchSpec {
    pub fn new(k_within: usize, k_between: usize, beta: f64) -> Result<Self> {
        let spec = Self {
            k_within,
            k_between,
            beta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_between == 0 || self.k_within + self.k_between == 0 {
            return Err(AdmlError::BadDimension {
                msg: "patch needs at least one between-class neighbour".into(),
            });
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(AdmlError::BadDimension {
                msg: format!("beta must be positive, got {}", self.beta),
            });
        }
        Ok(())
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            k_within: 10,
            k_between: 20,
            beta: 0.1,
        }
    }
}

/// One centre plus its neighbour lists (subset-local indices) and weights.
/// `omega` is |within| ones followed by |between| entries of −β.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center: usize,
    pub within: Vec<usize>,
    pub between: Vec<usize>,
    pub omega: Vec<f64>,
}

impl Patch {
    /// Neighbour count m = |within| + |between|.
    pub fn neighbour_count(&self) -> usize {
        self.within.len() + self.between.len()
    }

    /// Local index order used by the penalty matrix: centre, within, between.
    pub fn member_indices(&self) -> Vec<usize> {
        let mut members = Vec::with_capacity(1 + self.neighbour_count());
        members.push(self.center);
        members.extend_from_slice(&self.within);
        members.extend_from_slice(&self.between);
        members
    }
}

/// The (m+1)×(m+1) penalty matrix of one patch. Row/col 0 is the centre.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPenalty {
    pub matrix: DMatrix<f64>,
}

/// Select the centre's nearest neighbours by Euclidean distance in the
/// subset, same-class and other-class separately. Distance ties break by
/// ascending local index. A class with fewer than k_W peers contributes all
/// it has; a centre with no other-class sample at all is an error.
pub fn find_patch(subset: &SubsetView<'_>, center: usize, spec: &PatchSpec) -> Result<Patch> {
    spec.validate()?;
    let center_col = subset.column(center);
    let mut within: Vec<(f64, usize)> = Vec::new();
    let mut between: Vec<(f64, usize)> = Vec::new();
    for i in 0..subset.len() {
        if i == center {
            continue;
        }
        let diff = subset.column(i) - center_col;
        let dist2 = diff.norm_squared();
        if subset.same_class(center, i) {
            within.push((dist2, i));
        } else {
            between.push((dist2, i));
        }
    }
    if between.is_empty() {
        return Err(AdmlError::NoBetweenClass { center });
    }
    let by_distance_then_index = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
    };
    within.sort_by(by_distance_then_index);
    between.sort_by(by_distance_then_index);
    within.truncate(spec.k_within);
    between.truncate(spec.k_between);

    let mut omega = vec![1.0; within.len()];
    omega.extend(std::iter::repeat_n(-spec.beta, between.len()));
    Ok(Patch {
        center,
        within: within.into_iter().map(|(_, i)| i).collect(),
        between: between.into_iter().map(|(_, i)| i).collect(),
        omega,
    })
}

/// Assemble the patch penalty:
///
///   L_i = [ Σ_j ω_j   −ωᵀ      ]
///         [ −ω        diag(ω)  ]
///
/// Every row sums to zero, so the induced scatter is translation invariant.
pub fn build_local_penalty(patch: &Patch) -> LocalPenalty {
    let m = patch.omega.len();
    assert!(m >= 1, "patch without neighbours");
    let mut l = DMatrix::zeros(m + 1, m + 1);
    l[(0, 0)] = patch.omega.iter().sum();
    for (j, &w) in patch.omega.iter().enumerate() {
        l[(0, j + 1)] = -w;
        l[(j + 1, 0)] = -w;
        l[(j + 1, j + 1)] = w;
    }
    LocalPenalty { matrix: l }
}

/// Sparse symmetric N_k×N_k accumulation of patch penalties, stored as
/// coordinate triplets sorted by (row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePenalty {
    n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl SparsePenalty {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Y = L·X for a dense n×q right-hand side.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "penalty/operand size mismatch");
        let mut y = DMatrix::zeros(self.n, x.ncols());
        for &(r, c, v) in &self.entries {
            for j in 0..x.ncols() {
                y[(r as usize, j)] += v * x[(c as usize, j)];
            }
        }
        y
    }

    /// Row sums; all zero for a valid accumulation (L·1 = 0).
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for &(r, _, v) in &self.entries {
            sums[r as usize] += v;
        }
        sums
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            m[(r as usize, c as usize)] += v;
        }
        m
    }
}

/// Accumulator for building a `SparsePenalty`. Per-key addition order
/// follows the caller's loop order, so sums are deterministic.
pub struct SparsePenaltyBuilder {
    n: usize,
    map: HashMap<(u32, u32), f64>,
}

impl SparsePenaltyBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            map: HashMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            *self.map.entry((row as u32, col as u32)).or_insert(0.0) += value;
        }
    }

    pub fn freeze(self) -> SparsePenalty {
        let mut entries: Vec<(u32, u32, f64)> = self
            .map
            .into_iter()
            .map(|((r, c), v)| (r, c, v))
            .collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        SparsePenalty {
            n: self.n,
            entries,
        }
    }
}

/// A subset's scatter operator R_k = X_k L_k X_kᵀ, dense or factored.
#[derive(Debug, Clone, PartialEq)]
pub enum ScatterRep {
    Dense(DMatrix<f64>),
    Factored {
        /// Subset feature matrix X_k (d×N_k).
        x: DMatrix<f64>,
        /// Accumulated penalty L_k (N_k×N_k).
        penalty: SparsePenalty,
    },
}

/// Which representation `accumulate_scatter` should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterMode {
    Dense,
    Factored,
}

impl ScatterRep {
    pub fn dim(&self) -> usize {
        match self {
            ScatterRep::Dense(r) => r.nrows(),
            ScatterRep::Factored { x, .. } => x.nrows(),
        }
    }

    /// Samples behind a factored scatter; dense scatters have forgotten it.
    pub fn n_samples(&self) -> Option<usize> {
        match self {
            ScatterRep::Dense(_) => None,
            ScatterRep::Factored { penalty, .. } => Some(penalty.n()),
        }
    }

    /// R·W without ever forming a d×d product in the factored case:
    /// X·(L·(Xᵀ·W)), evaluated right to left.
    pub fn apply(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.dim() {
            return Err(AdmlError::ShapeMismatch {
                msg: format!("scatter dim {} vs operand rows {}", self.dim(), w.nrows()),
            });
        }
        Ok(match self {
            ScatterRep::Dense(r) => r * w,
            ScatterRep::Factored { x, penalty } => {
                let xt_w = x.transpose() * w;
                let l_xt_w = penalty.mul_dense(&xt_w);
                x * l_xt_w
            }
        })
    }

    /// tr(Wᵀ R W), the subset objective at W.
    pub fn quad_form(&self, w: &DMatrix<f64>) -> Result<f64> {
        let rw = self.apply(w)?;
        Ok((w.transpose() * rw).trace())
    }

    /// Explicit d×d matrix; a copy for dense, X·L·Xᵀ for factored.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ScatterRep::Dense(r) => r.clone(),
            ScatterRep::Factored { x, penalty } => {
                let l_xt = penalty.mul_dense(&x.transpose().into_owned());
                x * l_xt
            }
        }
    }
}

/// A subset's assembled scatter plus a tally of samples skipped because
/// their patch had no other-class neighbour.
#[derive(Debug, Clone)]
pub struct SubsetScatter {
    pub rep: ScatterRep,
    pub skipped: usize,
}

/// Build each sample's patch and fold its penalty into the subset scatter.
/// Samples without an other-class peer are skipped and tallied; a subset
/// where every sample is skipped is degenerate.
pub fn accumulate_scatter(
    subset: &SubsetView<'_>,
    spec: &PatchSpec,
    mode: ScatterMode,
) -> Result<SubsetScatter> {
    spec.validate()?;
    let n = subset.len();
    let mut builder = SparsePenaltyBuilder::new(n);
    let mut skipped = 0usize;
    let mut contributed = 0usize;
    for center in 0..n {
        let patch = match find_patch(subset, center, spec) {
            Ok(p) => p,
            Err(AdmlError::NoBetweenClass { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let members = patch.member_indices();
        let penalty = build_local_penalty(&patch);
        for a in 0..members.len() {
            for b in 0..members.len() {
                let v = penalty.matrix[(a, b)];
                if v != 0.0 {
                    builder.add(members[a], members[b], v);
                }
            }
        }
        contributed += 1;
    }
    if contributed == 0 {
        return Err(AdmlError::SubsetDegenerate { subset: subset.id });
    }
    let penalty = builder.freeze();
    let x = subset.materialize();
    let rep = match mode {
        ScatterMode::Factored => ScatterRep::Factored { x, penalty },
        ScatterMode::Dense => {
            let factored = ScatterRep::Factored { x, penalty };
            // symmetry repair only fights rounding; the product is symmetric
            // in exact arithmetic
            ScatterRep::Dense(crate::linalg::symmetrize(&factored.to_dense()))
        }
    };
    Ok(SubsetScatter { rep, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{LabeledDataset, Labels};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(features: &[f64], d: usize, classes: &[u32]) -> LabeledDataset {
        LabeledDataset::new(
            DMatrix::from_column_slice(d, classes.len(), features),
            Labels::Categorical(classes.to_vec()),
        )
        .unwrap()
    }

    fn random_two_class(
        d: usize,
        n: usize,
        seed: u64,
    ) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f64> = (0..d * n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let classes: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        dataset(&feats, d, &classes)
    }

    /// Direct evaluation of the patch objective, the independent oracle for
    /// the quadratic-form identity.
    fn direct_patch_sum(
        subset: &SubsetView<'_>,
        spec: &PatchSpec,
        w: &DMatrix<f64>,
    ) -> f64 {
        let mut total = 0.0;
        for center in 0..subset.len() {
            let patch = match find_patch(subset, center, spec) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let xc = subset.column(patch.center);
            for &j in &patch.within {
                let diff = xc - subset.column(j);
                total += (w.transpose() * diff).norm_squared();
            }
            for &j in &patch.between {
                let diff = xc - subset.column(j);
                total -= spec.beta * (w.transpose() * diff).norm_squared();
            }
        }
        total
    }

    #[test]
    fn find_patch_hand_case() {
        // 1-D: class A at 0, 1, 10; class B at 0.5; centre = the sample at 0
        let ds = dataset(&[0.0, 1.0, 10.0, 0.5], 1, &[0, 0, 0, 1]);
        let view = ds.full_view();
        let spec = PatchSpec::new(1, 1, 1.0).unwrap();
        let patch = find_patch(&view, 0, &spec).unwrap();
        assert_eq!(patch.within, vec![1]); // the sample at 1.0
        assert_eq!(patch.between, vec![3]); // the sample at 0.5
        assert_eq!(patch.omega, vec![1.0, -1.0]);
    }

    #[test]
    fn find_patch_truncates_small_class() {
        let ds = dataset(&[0.0, 1.0, 0.5], 1, &[0, 0, 1]);
        let view = ds.full_view();
        let spec = PatchSpec::new(5, 1, 0.5).unwrap();
        let patch = find_patch(&view, 0, &spec).unwrap();
        assert_eq!(patch.within.len(), 1);
        assert_eq!(patch.omega, vec![1.0, -0.5]);
    }

    #[test]
    fn find_patch_sole_class_member() {
        let ds = dataset(&[0.0, 1.0, 2.0], 1, &[0, 1, 1]);
        let view = ds.full_view();
        let spec = PatchSpec::new(3, 2, 0.25).unwrap();
        let patch = find_patch(&view, 0, &spec).unwrap();
        assert!(patch.within.is_empty());
        assert_eq!(patch.omega, vec![-0.25, -0.25]);
    }

    #[test]
    fn find_patch_no_between_class() {
        let ds = dataset(&[0.0, 1.0], 1, &[0, 0]);
        let view = ds.full_view();
        let spec = PatchSpec::new(1, 1, 1.0).unwrap();
        assert!(matches!(
            find_patch(&view, 0, &spec),
            Err(AdmlError::NoBetweenClass { center: 0 })
        ));
    }

    #[test]
    fn penalty_hand_cases() {
        let patch = Patch {
            center: 0,
            within: vec![1],
            between: vec![2],
            omega: vec![1.0, -1.0],
        };
        let l = build_local_penalty(&patch).matrix;
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -1.0, 1.0, -1.0, 1.0, 0.0, 1.0, 0.0, -1.0],
        );
        assert_eq!(l, expected);

        let patch = Patch {
            center: 0,
            within: vec![1, 2],
            between: vec![3],
            omega: vec![1.0, 1.0, -0.5],
        };
        let l = build_local_penalty(&patch).matrix;
        assert_abs_diff_eq!(l[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn penalty_rows_sum_to_zero() {
        // dyadic weights: the row-sum identity is exact
        let patch = Patch {
            center: 0,
            within: vec![1, 4],
            between: vec![2, 3],
            omega: vec![1.0, 1.0, -0.25, -0.25],
        };
        let l = build_local_penalty(&patch).matrix;
        for r in 0..l.nrows() {
            let sum: f64 = l.row(r).iter().sum();
            assert_eq!(sum, 0.0);
        }
        // non-dyadic weights: exact up to one rounding step per entry
        let patch = Patch {
            center: 0,
            within: vec![1],
            between: vec![2, 3],
            omega: vec![1.0, -0.3, -0.3],
        };
        let l = build_local_penalty(&patch).matrix;
        for r in 0..l.nrows() {
            let sum: f64 = l.row(r).iter().sum();
            assert!(sum.abs() < 1e-15);
        }
    }

    #[test]
    fn quad_form_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_two_class(4, 5, 17);
        let view = ds.full_view();
        let spec = PatchSpec::new(2, 2, 0.7).unwrap();
        let scatter = accumulate_scatter(&view, &spec, ScatterMode::Dense).unwrap();
        for _ in 0..10 {
            let w = DMatrix::from_fn(4, 2, |_, _| rng.gen::<f64>() - 0.5);
            let via_matrix = scatter.rep.quad_form(&w).unwrap();
            let direct = direct_patch_sum(&view, &spec, &w);
            let scale = direct.abs().max(via_matrix.abs()).max(1.0);
            assert!(
                (via_matrix - direct).abs() <= 1e-10 * scale,
                "matrix {via_matrix} vs direct {direct}"
            );
        }
    }

    #[test]
    fn dense_and_factored_agree() {
        let ds = random_two_class(6, 14, 23);
        let view = ds.full_view();
        let spec = PatchSpec::new(3, 3, 0.4).unwrap();
        let dense = accumulate_scatter(&view, &spec, ScatterMode::Dense).unwrap();
        let factored = accumulate_scatter(&view, &spec, ScatterMode::Factored).unwrap();
        let r_dense = dense.rep.to_dense();
        let r_fact = factored.rep.to_dense();
        let diff = (&r_dense - &r_fact).norm();
        assert!(diff <= 1e-10 * r_dense.norm());
        if let ScatterRep::Factored { penalty, .. } = &factored.rep {
            assert!(penalty.row_sums().iter().all(|s| s.abs() < 1e-12));
        } else {
            panic!("expected factored representation");
        }
    }

    #[test]
    fn scatter_is_symmetric_and_translation_invariant() {
        let ds = random_two_class(5, 12, 31);
        let spec = PatchSpec::new(2, 2, 0.9).unwrap();
        let r0 = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep
            .to_dense();
        assert!((&r0 - r0.transpose()).norm() <= 1e-12 * r0.norm().max(1.0));

        // shift every sample by the same vector
        let mut shifted = ds.features().clone();
        for s in 0..shifted.ncols() {
            for f in 0..shifted.nrows() {
                shifted[(f, s)] += 3.25 * (f as f64 + 1.0);
            }
        }
        let ds2 = LabeledDataset::new(shifted, ds.labels().clone()).unwrap();
        let r1 = accumulate_scatter(&ds2.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep
            .to_dense();
        assert!((&r0 - &r1).norm() <= 1e-10 * r0.norm().max(1.0));
    }

    #[test]
    fn scatter_scales_quadratically() {
        let ds = random_two_class(4, 10, 41);
        let spec = PatchSpec::new(2, 2, 0.5).unwrap();
        let r0 = accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep
            .to_dense();
        let scaled = LabeledDataset::new(ds.features() * 3.0, ds.labels().clone()).unwrap();
        let r1 = accumulate_scatter(&scaled.full_view(), &spec, ScatterMode::Dense)
            .unwrap()
            .rep
            .to_dense();
        assert!((&r1 - &r0 * 9.0).norm() <= 1e-9 * r1.norm());
    }

    #[test]
    fn degenerate_subset_is_rejected() {
        let ds = dataset(&[0.0, 1.0, 2.0], 1, &[0, 0, 0]);
        let spec = PatchSpec::default();
        assert!(matches!(
            accumulate_scatter(&ds.full_view(), &spec, ScatterMode::Dense),
            Err(AdmlError::SubsetDegenerate { .. })
        ));
    }
}
