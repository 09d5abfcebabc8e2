//! Using a learned metric: distances, nearest-neighbour classification,
//! tag annotation by the neighbour-rate rule, F1 scoring, pair-distance
//! histograms, low-dimensional projections, and subspace comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{LabeledDataset, Labels};
use crate::error::{AdmlError, Result};
use crate::linalg;
use crate::model::MetricModel;
use crate::parallel;

/// d_Q(x, y) = ‖Wᵀ(x−y)‖, the metric induced by Q = WWᵀ.
pub fn mdist(model: &MetricModel, x: DVectorView<'_, f64>, y: DVectorView<'_, f64>) -> Result<f64> {
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("model dim {d}, points {} and {}", x.len(), y.len()),
        });
    }
    let diff = x - y;
    Ok((model.projection.transpose() * diff).norm())
}

/// Wᵀx, the query mapped into the learned q-dimensional space.
pub fn project_point(model: &MetricModel, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("model dim {}, point {}", model.dim(), x.len()),
        });
    }
    Ok(model.projection.transpose() * x)
}

/// WᵀX for a whole dataset (q×N). The metric between projected points is
/// plain Euclidean distance.
pub fn project_all(model: &MetricModel, ds: &LabeledDataset) -> Result<DMatrix<f64>> {
    if ds.dim() != model.dim() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("model dim {}, data dim {}", model.dim(), ds.dim()),
        });
    }
    Ok(model.projection.transpose() * ds.features())
}

/// Indices (ascending by distance, ties by ascending sample id) and
/// distances of the k nearest reference samples, in projected space.
fn nearest_in_projection(
    reference_proj: &DMatrix<f64>,
    query_proj: &DVector<f64>,
    k: usize,
) -> Vec<(f64, usize)> {
    let mut scored: Vec<(f64, usize)> = (0..reference_proj.ncols())
        .map(|i| ((reference_proj.column(i) - query_proj).norm(), i))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored
}

/// Majority label among the k nearest reference samples under the model's
/// metric. Ties: distance → ascending sample id; votes: smaller summed
/// distance → smaller label id.
pub fn knn_classify(
    reference: &LabeledDataset,
    model: &MetricModel,
    x: DVectorView<'_, f64>,
    k: usize,
) -> Result<u32> {
    if reference.is_empty() {
        return Err(AdmlError::EmptyReference);
    }
    if k == 0 || k > reference.len() {
        return Err(AdmlError::InvalidK {
            k,
            n: reference.len(),
        });
    }
    let classes = match reference.labels() {
        Labels::Categorical(v) => v,
        Labels::Multilabel(_) => {
            return Err(AdmlError::ShapeMismatch {
                msg: "knn classification needs categorical labels".into(),
            })
        }
    };
    let ref_proj = project_all(model, reference)?;
    let query = project_point(model, x)?;
    let nearest = nearest_in_projection(&ref_proj, &query, k);

    let mut votes: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for &(dist, idx) in &nearest {
        let e = votes.entry(classes[idx]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += dist;
    }
    let winner = votes
        .iter()
        .min_by(|(la, (ca, sa)), (lb, (cb, sb))| {
            cb.cmp(ca) // more votes first
                .then(sa.partial_cmp(sb).unwrap()) // then smaller summed distance
                .then(la.cmp(lb)) // then smaller label id
        })
        .map(|(&label, _)| label)
        .expect("k >= 1");
    Ok(winner)
}

/// Fraction of queries whose kNN label matches their own, batched over the
/// query set (parallel over queries when the feature is on).
pub fn knn_accuracy(
    reference: &LabeledDataset,
    model: &MetricModel,
    queries: &LabeledDataset,
    k: usize,
) -> Result<f64> {
    if reference.is_empty() {
        return Err(AdmlError::EmptyReference);
    }
    if k == 0 || k > reference.len() {
        return Err(AdmlError::InvalidK {
            k,
            n: reference.len(),
        });
    }
    let ref_classes = match reference.labels() {
        Labels::Categorical(v) => v,
        Labels::Multilabel(_) => {
            return Err(AdmlError::ShapeMismatch {
                msg: "knn classification needs categorical labels".into(),
            })
        }
    };
    let query_classes = match queries.labels() {
        Labels::Categorical(v) => v,
        Labels::Multilabel(_) => {
            return Err(AdmlError::ShapeMismatch {
                msg: "knn classification needs categorical labels".into(),
            })
        }
    };
    let ref_proj = project_all(model, reference)?;
    let query_proj = project_all(model, queries)?;

    let ids: Vec<usize> = (0..queries.len()).collect();
    let outcomes = parallel::map_shared(&ids, |&qi| {
        let query = query_proj.column(qi).into_owned();
        let nearest = nearest_in_projection(&ref_proj, &query, k);
        let mut votes: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
        for &(dist, idx) in &nearest {
            let e = votes.entry(ref_classes[idx]).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += dist;
        }
        let winner = votes
            .iter()
            .min_by(|(la, (ca, sa)), (lb, (cb, sb))| {
                cb.cmp(ca)
                    .then(sa.partial_cmp(sb).unwrap())
                    .then(la.cmp(lb))
            })
            .map(|(&label, _)| label)
            .expect("k >= 1");
        (winner == query_classes[qi]) as usize
    });
    Ok(outcomes.iter().sum::<usize>() as f64 / queries.len() as f64)
}

/// Per-tag background presence rates over a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStats {
    /// tag id → fraction of reference samples carrying it.
    pub rates: BTreeMap<u32, f64>,
}

impl TagStats {
    /// Compute background rates from a multilabel reference set.
    pub fn from_reference(reference: &LabeledDataset) -> Result<Self> {
        if reference.is_empty() {
            return Err(AdmlError::EmptyReference);
        }
        let sets = match reference.labels() {
            Labels::Multilabel(v) => v,
            Labels::Categorical(_) => {
                return Err(AdmlError::ShapeMismatch {
                    msg: "tag statistics need multilabel data".into(),
                })
            }
        };
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for set in sets {
            for &tag in set {
                *counts.entry(tag).or_insert(0) += 1;
            }
        }
        let n = reference.len() as f64;
        Ok(Self {
            rates: counts
                .into_iter()
                .map(|(tag, c)| (tag, c as f64 / n))
                .collect(),
        })
    }

    pub fn vocabulary(&self) -> BTreeSet<u32> {
        self.rates.keys().copied().collect()
    }
}

const MAX_ANNOTATE_K: usize = 15;

/// Predict tags for one query: a tag is present iff its rate r1 among the
/// k nearest neighbours strictly exceeds its background rate r0.
pub fn annotate(
    reference: &LabeledDataset,
    stats: &TagStats,
    model: &MetricModel,
    x: DVectorView<'_, f64>,
    k: usize,
) -> Result<BTreeSet<u32>> {
    let ref_proj = project_all(model, reference)?;
    let query = project_point(model, x)?;
    annotate_projected(reference, stats, &ref_proj, &query, k)
}

fn annotate_projected(
    reference: &LabeledDataset,
    stats: &TagStats,
    ref_proj: &DMatrix<f64>,
    query: &DVector<f64>,
    k: usize,
) -> Result<BTreeSet<u32>> {
    if reference.is_empty() {
        return Err(AdmlError::EmptyReference);
    }
    if k == 0 || k > MAX_ANNOTATE_K || k > reference.len() {
        return Err(AdmlError::InvalidK {
            k,
            n: reference.len().min(MAX_ANNOTATE_K),
        });
    }
    let sets = match reference.labels() {
        Labels::Multilabel(v) => v,
        Labels::Categorical(_) => {
            return Err(AdmlError::ShapeMismatch {
                msg: "annotation needs multilabel data".into(),
            })
        }
    };
    let nearest = nearest_in_projection(ref_proj, query, k);
    let mut neighbour_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &(_, idx) in &nearest {
        for &tag in &sets[idx] {
            *neighbour_counts.entry(tag).or_insert(0) += 1;
        }
    }
    let mut predicted = BTreeSet::new();
    for (&tag, &r0) in &stats.rates {
        let r1 = neighbour_counts.get(&tag).copied().unwrap_or(0) as f64 / k as f64;
        if r1 > r0 {
            predicted.insert(tag);
        }
    }
    Ok(predicted)
}

/// Annotate every query in a batch (parallel over queries).
pub fn annotate_batch(
    reference: &LabeledDataset,
    stats: &TagStats,
    model: &MetricModel,
    queries: &LabeledDataset,
    k: usize,
) -> Result<Vec<BTreeSet<u32>>> {
    let ref_proj = project_all(model, reference)?;
    let query_proj = project_all(model, queries)?;
    let ids: Vec<usize> = (0..queries.len()).collect();
    let results = parallel::map_shared(&ids, |&qi| {
        annotate_projected(
            reference,
            stats,
            &ref_proj,
            &query_proj.column(qi).into_owned(),
            k,
        )
    });
    results.into_iter().collect()
}

/// Per-tag F1 plus the macro mean (the headline number).
#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_tag: BTreeMap<u32, f64>,
    pub macro_f1: f64,
}

/// F1 per tag over an explicit vocabulary. The 0/0 cases (precision,
/// recall, or F1 undefined) score 0.
pub fn f1_scores_over(
    predictions: &[BTreeSet<u32>],
    truth: &[BTreeSet<u32>],
    vocabulary: &BTreeSet<u32>,
) -> Result<F1Report> {
    if predictions.len() != truth.len() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!(
                "{} predictions vs {} truths",
                predictions.len(),
                truth.len()
            ),
        });
    }
    let mut per_tag = BTreeMap::new();
    for &tag in vocabulary {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fne = 0usize;
        for (pred, actual) in predictions.iter().zip(truth.iter()) {
            match (pred.contains(&tag), actual.contains(&tag)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fne > 0 {
            tp as f64 / (tp + fne) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_tag.insert(tag, f1);
    }
    let macro_f1 = if per_tag.is_empty() {
        0.0
    } else {
        per_tag.values().sum::<f64>() / per_tag.len() as f64
    };
    Ok(F1Report { per_tag, macro_f1 })
}

/// F1 with the vocabulary taken as the union of tags seen in either side.
pub fn f1_scores(predictions: &[BTreeSet<u32>], truth: &[BTreeSet<u32>]) -> Result<F1Report> {
    let vocabulary: BTreeSet<u32> = predictions
        .iter()
        .chain(truth.iter())
        .flat_map(|s| s.iter().copied())
        .collect();
    f1_scores_over(predictions, truth, &vocabulary)
}

/// Within/between pair-distance histogram over [0,1]-normalized distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Number of equal-width bins covering [0,1]; the last bin is closed.
    pub bins: usize,
    pub counts_within: Vec<u64>,
    pub counts_between: Vec<u64>,
    pub n_pairs: usize,
    /// Max raw distance among the sampled pairs (0 for all-identical data;
    /// those pairs land in bin 0).
    pub normalizer: f64,
    /// Mean normalized distance over same-class pairs.
    pub mean_within: f64,
    /// Mean normalized distance over cross-class pairs.
    pub mean_between: f64,
}

impl Histogram {
    /// `bin_lo,bin_hi,count_within,count_between` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_within,count_between\n");
        let width = 1.0 / self.bins as f64;
        for b in 0..self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                b as f64 * width,
                (b + 1) as f64 * width,
                self.counts_within[b],
                self.counts_between[b]
            );
        }
        out
    }
}

/// Sample `n_pairs` unordered pairs (distinct endpoints, with replacement
/// across pairs), measure them under the model, normalize by the max
/// sampled distance, and bin same-class and cross-class pairs separately.
pub fn pair_histogram(
    ds: &LabeledDataset,
    model: &MetricModel,
    n_pairs: usize,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    if ds.len() < 2 {
        return Err(AdmlError::EmptyReference);
    }
    if bins == 0 || n_pairs == 0 {
        return Err(AdmlError::BadDimension {
            msg: "need at least one bin and one pair".into(),
        });
    }
    let proj = project_all(model, ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ds.len();
    let mut samples: Vec<(f64, bool)> = Vec::with_capacity(n_pairs);
    let mut max_dist = 0.0f64;
    for _ in 0..n_pairs {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let dist = (proj.column(a) - proj.column(b)).norm();
        max_dist = max_dist.max(dist);
        samples.push((dist, ds.same_class(a, b)));
    }

    let mut counts_within = vec![0u64; bins];
    let mut counts_between = vec![0u64; bins];
    let mut sum_within = 0.0;
    let mut n_within = 0usize;
    let mut sum_between = 0.0;
    let mut n_between = 0usize;
    for (dist, within) in samples {
        let normalized = if max_dist > 0.0 { dist / max_dist } else { 0.0 };
        let bin = ((normalized * bins as f64) as usize).min(bins - 1);
        if within {
            counts_within[bin] += 1;
            sum_within += normalized;
            n_within += 1;
        } else {
            counts_between[bin] += 1;
            sum_between += normalized;
            n_between += 1;
        }
    }
    Ok(Histogram {
        bins,
        counts_within,
        counts_between,
        n_pairs,
        normalizer: max_dist,
        mean_within: if n_within > 0 {
            sum_within / n_within as f64
        } else {
            0.0
        },
        mean_between: if n_between > 0 {
            sum_between / n_between as f64
        } else {
            0.0
        },
    })
}

/// ‖W₁W₁ᵀ − W₂W₂ᵀ‖_F for orthonormal bases: zero iff equal spans, and
/// blind to signs and rotations. Computed as √(2q − 2‖W₁ᵀW₂‖²_F).
pub fn subspace_distance(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64> {
    if w1.shape() != w2.shape() {
        return Err(AdmlError::ShapeMismatch {
            msg: format!("{:?} vs {:?}", w1.shape(), w2.shape()),
        });
    }
    for w in [w1, w2] {
        let defect = linalg::orthonormality_defect(w);
        if defect > 1e-6 {
            return Err(AdmlError::NotOrthonormal { defect });
        }
    }
    let q = w1.ncols() as f64;
    let cross = (w1.transpose() * w2).norm_squared();
    Ok((2.0 * q - 2.0 * cross).max(0.0).sqrt())
}

/// Projection CSV (`label,p1,...,pq`, one row per sample) for external
/// plotting.
pub fn projection_csv(ds: &LabeledDataset, model: &MetricModel) -> Result<String> {
    let proj = project_all(model, ds)?;
    let mut out = String::from("label");
    for c in 1..=model.subspace_dim() {
        let _ = write!(out, ",p{c}");
    }
    out.push('\n');
    for s in 0..ds.len() {
        out.push_str(&ds.labels().display(s));
        for c in 0..model.subspace_dim() {
            let _ = write!(out, ",{}", proj[(c, s)]);
        }
        out.push('\n');
    }
    Ok(out)
}
