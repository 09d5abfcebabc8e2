//! Shared helpers for the integration suites: synthetic data generators and
//! independent oracles (kept free of the library's assembly paths so they
//! can catch its mistakes).

use adml::{LabeledDataset, Labels, PatchSpec, SubsetView};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Mutex, MutexGuard, OnceLock};

/// Two Gaussian clouds with the given mean separation along every axis.
pub fn two_class_gaussian(d: usize, n: usize, separation: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = DMatrix::zeros(d, n);
    let mut classes = Vec::with_capacity(n);
    for s in 0..n {
        let class = (s % 2) as u32;
        let shift = if class == 0 { separation / 2.0 } else { -separation / 2.0 };
        for f in 0..d {
            features[(f, s)] = rng.gen::<f64>() * 2.0 - 1.0 + shift;
        }
        classes.push(class);
    }
    LabeledDataset::new(features, Labels::Categorical(classes)).unwrap()
}

/// Random matrix with orthonormal columns (QR of a Gaussian draw).
pub fn random_orthonormal(d: usize, q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, q, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    g.qr().q()
}

/// Random symmetric matrix with entries in [-1, 1].
pub fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    (&a + a.transpose()) * 0.5
}

/// Direct evaluation of the per-patch objective
/// Σ_i [ Σ_{j∈within(i)} ‖Wᵀ(x_i−x_j)‖² − β Σ_{j∈between(i)} ‖Wᵀ(x_i−x_j)‖² ],
/// summing squared projected differences pair by pair. This is the oracle
/// the scatter assembly is checked against; it never touches the penalty
/// matrices.
pub fn direct_patch_objective(
    subset: &SubsetView<'_>,
    spec: &PatchSpec,
    w: &DMatrix<f64>,
) -> f64 {
    let mut total = 0.0;
    for center in 0..subset.len() {
        let patch = match adml::find_patch(subset, center, spec) {
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

/// Serializes the wall-clock-sensitive suites so their timing budgets are
/// not distorted by each other.
pub fn timing_lock() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}
