//! Data ingestion, feature normalization, synthetic data generation, and
//! random partitioning into subsets.
//!
//! Features are stored feature-major (d×N, one column per sample) because
//! every hot kernel walks sample columns. Datasets are immutable after
//! construction and safe to share across worker threads.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AdmlError, Result};

/// Whether a CSV carries one class id per sample or a `;`-separated tag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Categorical,
    Multilabel,
}

/// Per-sample annotations.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Exactly one class id per sample.
    Categorical(Vec<u32>),
    /// At least one tag id per sample.
    Multilabel(Vec<BTreeSet<u32>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Categorical(v) => v.len(),
            Labels::Multilabel(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> LabelMode {
        match self {
            Labels::Categorical(_) => LabelMode::Categorical,
            Labels::Multilabel(_) => LabelMode::Multilabel,
        }
    }

    /// Discriminative equivalence between two samples: equal class ids, or,
    /// for tag sets, a non-empty intersection.
    pub fn same_class(&self, a: usize, b: usize) -> bool {
        match self {
            Labels::Categorical(v) => v[a] == v[b],
            Labels::Multilabel(v) => !v[a].is_disjoint(&v[b]),
        }
    }

    /// Printable form used by the CSV writers ("3" or "1;4;7").
    pub fn display(&self, i: usize) -> String {
        match self {
            Labels::Categorical(v) => v[i].to_string(),
            Labels::Multilabel(v) => {
                let parts: Vec<String> = v[i].iter().map(|t| t.to_string()).collect();
                parts.join(";")
            }
        }
    }
}

/// A feature matrix (d×N) plus one annotation per sample. Sample ids are the
/// column positions 0..N−1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Labels,
}

impl LabeledDataset {
    /// Build a dataset, enforcing the basic invariants: finite entries,
    /// N ≥ 1, d ≥ 1, one annotation per sample, non-empty tag sets.
    pub fn new(features: DMatrix<f64>, labels: Labels) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(AdmlError::EmptyFile);
        }
        if labels.len() != features.ncols() {
            return Err(AdmlError::ShapeMismatch {
                msg: format!(
                    "{} samples but {} labels",
                    features.ncols(),
                    labels.len()
                ),
            });
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            return Err(AdmlError::NonNumericFeature {
                line: pos % features.nrows(),
                column: pos / features.nrows(),
                token: format!("{}", features[pos]),
            });
        }
        if let Labels::Multilabel(sets) = &labels {
            if sets.iter().any(|s| s.is_empty()) {
                return Err(AdmlError::EmptyFile);
            }
        }
        Ok(Self { features, labels })
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn column(&self, i: usize) -> DVectorView<'_, f64> {
        self.features.column(i)
    }

    pub fn same_class(&self, a: usize, b: usize) -> bool {
        self.labels.same_class(a, b)
    }

    /// View covering every sample, in id order.
    pub fn full_view(&self) -> SubsetView<'_> {
        SubsetView {
            data: self,
            id: 0,
            indices: (0..self.len() as u32).collect(),
        }
    }
}

/// Per-feature location/scale learned from a training set, reusable on test
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    /// Apply stored statistics to another dataset (same feature count).
    pub fn transform(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if ds.dim() != self.mean.len() {
            return Err(AdmlError::ShapeMismatch {
                msg: format!("stats for {} features, data has {}", self.mean.len(), ds.dim()),
            });
        }
        let mut features = ds.features.clone();
        for f in 0..features.nrows() {
            for s in 0..features.ncols() {
                features[(f, s)] = (features[(f, s)] - self.mean[f]) / self.scale[f];
            }
        }
        LabeledDataset::new(features, ds.labels.clone())
    }
}

/// Center each feature and scale it to unit sample standard deviation
/// (denominator N−1). Zero-variance features map to zeros with scale
/// recorded as 1, so dead columns survive.
pub fn normalize(ds: &LabeledDataset) -> (LabeledDataset, NormStats) {
    let d = ds.dim();
    let n = ds.len();
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for f in 0..d {
        let row = ds.features.row(f);
        let m = row.iter().sum::<f64>() / n as f64;
        mean[f] = m;
        if n >= 2 {
            let ss = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            if sd > 0.0 {
                scale[f] = sd;
            }
        }
    }
    let stats = NormStats { mean, scale };
    let out = stats
        .transform(ds)
        .expect("stats built from the same dataset");
    (out, stats)
}

/// A deterministic assignment of samples to subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignment[sample_id]` = subset index in 0..k.
    pub assignment: Vec<u32>,
}

/// How to partition a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionSpec {
    /// Exactly this many subsets, sizes differing by at most one.
    Count(usize),
    /// Subsets of (up to) this many samples; K = ceil(N / size).
    SubsetSize(usize),
}

/// A borrowed slice of a dataset: the samples assigned to one subset, with
/// subset-local indices 0..len. Local order is ascending sample id.
#[derive(Debug, Clone)]
pub struct SubsetView<'a> {
    data: &'a LabeledDataset,
    pub id: usize,
    indices: Vec<u32>,
}

impl<'a> SubsetView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Global sample id of local index `i`.
    pub fn sample_id(&self, i: usize) -> u32 {
        self.indices[i]
    }

    pub fn column(&self, i: usize) -> DVectorView<'a, f64> {
        self.data.features.column(self.indices[i] as usize)
    }

    pub fn same_class(&self, a: usize, b: usize) -> bool {
        self.data
            .same_class(self.indices[a] as usize, self.indices[b] as usize)
    }

    /// Number of discriminative classes present; counts distinct class ids,
    /// or for tag sets whether any pair is disjoint (2) or none is (1).
    pub fn has_between_class_pairs(&self) -> bool {
        (0..self.len()).any(|i| !self.same_class(0, i))
    }

    /// Copy the subset's columns into an owned d×N_k matrix.
    pub fn materialize(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut x = DMatrix::zeros(d, self.len());
        for (local, &global) in self.indices.iter().enumerate() {
            x.set_column(local, &self.data.features.column(global as usize));
        }
        x
    }

    /// Copy the subset out into an owned dataset with fresh ids 0..len−1.
    pub fn to_dataset(&self) -> LabeledDataset {
        let features = self.materialize();
        let labels = match self.data.labels() {
            Labels::Categorical(v) => Labels::Categorical(
                self.indices.iter().map(|&i| v[i as usize]).collect(),
            ),
            Labels::Multilabel(v) => Labels::Multilabel(
                self.indices.iter().map(|&i| v[i as usize].clone()).collect(),
            ),
        };
        LabeledDataset::new(features, labels).expect("subset of a valid dataset")
    }

    pub fn parent(&self) -> &'a LabeledDataset {
        self.data
    }
}

/// Shuffle sample ids with a seeded permutation and cut the result into K
/// near-equal subsets (first N mod K subsets take the extra sample). Local
/// index order inside each subset is ascending sample id, so K=1 reproduces
/// the input.
pub fn random_split(
    ds: &LabeledDataset,
    part: PartitionSpec,
    seed: u64,
) -> Result<(Vec<SubsetView<'_>>, SplitPlan)> {
    let n = ds.len();
    let k = match part {
        PartitionSpec::Count(k) => k,
        PartitionSpec::SubsetSize(size) => {
            if size == 0 {
                return Err(AdmlError::InvalidK { k: 0, n });
            }
            n.div_ceil(size)
        }
    };
    if k == 0 || k > n {
        return Err(AdmlError::InvalidK { k, n });
    }

    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0u32; n];
    let mut views = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for subset in 0..k {
        let size = base + usize::from(subset < extra);
        let mut indices: Vec<u32> = order[cursor..cursor + size].to_vec();
        indices.sort_unstable();
        for &sample in &indices {
            assignment[sample as usize] = subset as u32;
        }
        views.push(SubsetView {
            data: ds,
            id: subset,
            indices,
        });
        cursor += size;
    }

    Ok((views, SplitPlan { k, seed, assignment }))
}

/// Parameters of the two-class coiled-surface sampler. The surfaces are two
/// Archimedean-spiral sheets offset by half a turn, extruded along z; class
/// structure lives entirely in the x/y plane while z carries most of the
/// spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoiledParams {
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub z_halfwidth: f64,
    pub turns: f64,
}

impl Default for CoiledParams {
    fn default() -> Self {
        Self {
            n_per_class: 1000,
            noise_sigma: 0.05,
            z_halfwidth: 3.0,
            turns: 1.0,
        }
    }
}

/// Draw 2·n_per_class points from the coiled-surface pair:
/// t ~ U[0, 2π·turns], r = 0.25 + 0.15·t,
/// x = r·cos(t + c·π) + ε, y = r·sin(t + c·π) + ε, z ~ U[−h, h],
/// with ε ~ N(0, noise_sigma²). Identical seeds give identical datasets.
pub fn gen_coiled_surfaces(params: &CoiledParams, seed: u64) -> LabeledDataset {
    assert!(params.n_per_class >= 1, "n_per_class must be at least 1");
    assert!(params.noise_sigma >= 0.0 && params.z_halfwidth > 0.0 && params.turns > 0.0);
    let n = params.n_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_sigma).expect("sigma >= 0");
    let t_max = 2.0 * std::f64::consts::PI * params.turns;

    let mut features = DMatrix::zeros(3, 2 * n);
    let mut classes = Vec::with_capacity(2 * n);
    for class in 0..2u32 {
        let phase = f64::from(class) * std::f64::consts::PI;
        for i in 0..n {
            let t = rng.gen::<f64>() * t_max;
            let r = 0.25 + 0.15 * t;
            let ex = noise.sample(&mut rng);
            let ey = noise.sample(&mut rng);
            let z = (rng.gen::<f64>() * 2.0 - 1.0) * params.z_halfwidth;
            let col = class as usize * n + i;
            features[(0, col)] = r * (t + phase).cos() + ex;
            features[(1, col)] = r * (t + phase).sin() + ey;
            features[(2, col)] = z;
            classes.push(class);
        }
    }
    LabeledDataset::new(features, Labels::Categorical(classes))
        .expect("generated data is finite and labelled")
}

/// Read a dataset from CSV. The header is `label,f1,...,fd` (categorical) or
/// `tags,f1,...,fd` (multilabel, tags `;`-separated). UTF-8, `.` decimals.
pub fn load_csv(path: &Path, mode: LabelMode) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(AdmlError::from)?,
        None => return Err(AdmlError::EmptyFile),
    };
    if header.len() < 2 {
        return Err(AdmlError::MalformedRow {
            line: 1,
            expected: 2,
            got: header.len(),
        });
    }
    let d = header.len() - 1;

    let mut columns: Vec<f64> = Vec::new();
    let mut class_ids = Vec::new();
    let mut tag_sets = Vec::new();
    for (row, rec) in records.enumerate() {
        let line = row + 2;
        let rec = rec.map_err(AdmlError::from)?;
        if rec.len() != d + 1 {
            return Err(AdmlError::MalformedRow {
                line,
                expected: d + 1,
                got: rec.len(),
            });
        }
        match mode {
            LabelMode::Categorical => {
                let id: u32 = rec[0].parse().map_err(|_| AdmlError::MalformedRow {
                    line,
                    expected: d + 1,
                    got: rec.len(),
                })?;
                class_ids.push(id);
            }
            LabelMode::Multilabel => {
                let mut set = BTreeSet::new();
                for part in rec[0].split(';').filter(|p| !p.is_empty()) {
                    let tag: u32 = part.parse().map_err(|_| AdmlError::MalformedRow {
                        line,
                        expected: d + 1,
                        got: rec.len(),
                    })?;
                    set.insert(tag);
                }
                if set.is_empty() {
                    return Err(AdmlError::MalformedRow {
                        line,
                        expected: d + 1,
                        got: rec.len(),
                    });
                }
                tag_sets.push(set);
            }
        }
        for (col, token) in rec.iter().skip(1).enumerate() {
            let value: f64 = token.parse().map_err(|_| AdmlError::NonNumericFeature {
                line,
                column: col + 1,
                token: token.to_string(),
            })?;
            if !value.is_finite() {
                return Err(AdmlError::NonNumericFeature {
                    line,
                    column: col + 1,
                    token: token.to_string(),
                });
            }
            columns.push(value);
        }
    }

    let n = match mode {
        LabelMode::Categorical => class_ids.len(),
        LabelMode::Multilabel => tag_sets.len(),
    };
    if n == 0 {
        return Err(AdmlError::EmptyFile);
    }
    // columns holds row-major sample rows; transpose into the d×N layout.
    let mut features = DMatrix::zeros(d, n);
    for s in 0..n {
        for f in 0..d {
            features[(f, s)] = columns[s * d + f];
        }
    }
    let labels = match mode {
        LabelMode::Categorical => Labels::Categorical(class_ids),
        LabelMode::Multilabel => Labels::Multilabel(tag_sets),
    };
    LabeledDataset::new(features, labels)
}

/// Peek at a CSV header to decide the label mode (`label` vs `tags`).
pub fn detect_label_mode(path: &Path) -> Result<LabelMode> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(AdmlError::from)?,
        None => return Err(AdmlError::EmptyFile),
    };
    match header.get(0) {
        Some("tags") => Ok(LabelMode::Multilabel),
        _ => Ok(LabelMode::Categorical),
    }
}

/// Write a dataset in the same CSV dialect `load_csv` reads. Floats use the
/// shortest round-trip representation, so writing and re-reading is lossless
/// and repeated runs are byte-identical.
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let label_col = match ds.labels().mode() {
        LabelMode::Categorical => "label",
        LabelMode::Multilabel => "tags",
    };
    out.push_str(label_col);
    for f in 1..=ds.dim() {
        out.push_str(&format!(",f{f}"));
    }
    out.push('\n');
    for s in 0..ds.len() {
        out.push_str(&ds.labels().display(s));
        for f in 0..ds.dim() {
            out.push_str(&format!(",{}", ds.features()[(f, s)]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Materialize a feature matrix view into sample-major rows for callers that
/// need them (tests, mostly).
pub fn rows_of(view: DMatrixView<'_, f64>) -> Vec<Vec<f64>> {
    (0..view.ncols())
        .map(|c| view.column(c).iter().copied().collect())
        .collect()
}
