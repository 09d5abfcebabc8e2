//! Map/reduce-style training orchestration.
//!
//! Map tasks are pure functions of (subset, config): build patches,
//! accumulate the scatter, solve the subset eigenproblem, and emit the
//! aggregation summand P_k. They may run in any interleaving; the single
//! synchronization point is the reduce fold, which always consumes results
//! in ascending subset-id order, so the trained model is byte-identical
//! for any worker count.
//!
//! Worker results have a little-endian wire encoding (for multi-process
//! runners and golden tests): magic `ADMLWR1`, u32 subset id, u32 d, u32 q,
//! u8 flags (bit 0: dense scatter present), then P_k and W_k as d·q f64
//! row-major, the optional d·d dense scatter, and q eigenvalues.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::aggregate::{aggregate_inverse, aggregate_svd, compute_pk};
use crate::dataset::{normalize, random_split, LabeledDataset, PartitionSpec, SubsetView};
use crate::error::{AdmlError, Result};
use crate::model::{Algo, MetricModel, ModelMeta, PhaseTimings};
use crate::parallel;
use crate::patch::{accumulate_scatter, PatchSpec, ScatterMode, ScatterRep};
use crate::solver::{solve_subset, SolveMode, SubsetSolution};

/// Everything a training job needs. Defaults mirror the synthetic-data
/// setup: k_W=10, k_B=20, β=0.1, q=2, subsets of 600.
#[derive(Debug, Clone, PartialEq)]
pub struct JobConfig {
    pub patch: PatchSpec,
    /// Subspace dimension of the learned metric.
    pub q: usize,
    pub algo: Algo,
    /// Ignored when `algo` is the wholistic solve.
    pub partition: PartitionSpec,
    /// Max concurrent map tasks.
    pub workers: usize,
    pub seed: u64,
    pub solve_mode: SolveMode,
    /// Gram-route regularizer; None picks 1e−8·tr(G)/N_k.
    pub ridge: Option<f64>,
    /// Keep each subset's dense scatter for bound diagnostics.
    pub collect_dense: bool,
    /// Normalize features before training.
    pub normalize: bool,
    /// Largest d for which dense d×d work is allowed.
    pub dense_cap: usize,
}

impl Default for JobConfig {
    fn default() -> Self {
        Self {
            patch: PatchSpec::default(),
            q: 2,
            algo: Algo::Adml2,
            partition: PartitionSpec::SubsetSize(600),
            workers: 1,
            seed: 0,
            solve_mode: SolveMode::Auto,
            ridge: None,
            collect_dense: false,
            normalize: false,
            dense_cap: 2000,
        }
    }
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        if self.q == 0 {
            return Err(AdmlError::BadDimension {
                msg: "q must be at least 1".into(),
            });
        }
        if self.workers == 0 {
            return Err(AdmlError::BadDimension {
                msg: "workers must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// The inverse-weighted rule folds dense scatters.
    fn needs_dense(&self) -> bool {
        self.collect_dense || self.algo == Algo::Adml1
    }

    /// Stable FNV-1a hash of the fields that shape the result.
    pub fn stable_hash(&self) -> u64 {
        let repr = format!(
            "kw={};kb={};beta={};q={};algo={};part={:?};seed={};mode={:?};ridge={:?};norm={}",
            self.patch.k_within,
            self.patch.k_between,
            self.patch.beta,
            self.q,
            self.algo,
            self.partition,
            self.seed,
            self.solve_mode,
            self.ridge,
            self.normalize,
        );
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in repr.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// Output of one map task.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerResult {
    pub subset_id: usize,
    pub solution: SubsetSolution,
    /// P_k = R_k·W_k, the aggregation summand.
    pub weighted: DMatrix<f64>,
    /// Dense R_k when the job collects it.
    pub dense: Option<DMatrix<f64>>,
    /// Wall time of the map task (not part of the wire encoding).
    pub wall: Duration,
}

const WIRE_MAGIC: &[u8; 7] = b"ADMLWR1";

fn push_matrix_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

struct WireReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> WireReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AdmlError::MalformedWire(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix_row_major(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

impl WorkerResult {
    pub fn encode(&self) -> Vec<u8> {
        let d = self.weighted.nrows();
        let q = self.weighted.ncols();
        let mut out = Vec::with_capacity(7 + 13 + 8 * (2 * d * q + q));
        out.extend_from_slice(WIRE_MAGIC);
        out.extend_from_slice(&(self.subset_id as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(q as u32).to_le_bytes());
        out.push(u8::from(self.dense.is_some()));
        push_matrix_row_major(&mut out, &self.weighted);
        push_matrix_row_major(&mut out, &self.solution.basis);
        if let Some(dense) = &self.dense {
            push_matrix_row_major(&mut out, dense);
        }
        for v in &self.solution.eigenvalues {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut reader = WireReader { bytes, pos: 0 };
        if reader.take(7)? != WIRE_MAGIC {
            return Err(AdmlError::MalformedWire("bad magic".into()));
        }
        let subset_id = reader.u32()? as usize;
        let d = reader.u32()? as usize;
        let q = reader.u32()? as usize;
        let flags = reader.take(1)?[0];
        if d == 0 || q == 0 || q > d {
            return Err(AdmlError::MalformedWire(format!("bad shape {d}x{q}")));
        }
        let weighted = reader.matrix_row_major(d, q)?;
        let basis = reader.matrix_row_major(d, q)?;
        let dense = if flags & 1 != 0 {
            Some(reader.matrix_row_major(d, d)?)
        } else {
            None
        };
        let mut eigenvalues = Vec::with_capacity(q);
        for _ in 0..q {
            eigenvalues.push(reader.f64()?);
        }
        if reader.pos != bytes.len() {
            return Err(AdmlError::MalformedWire(format!(
                "{} trailing bytes",
                bytes.len() - reader.pos
            )));
        }
        Ok(Self {
            subset_id,
            solution: SubsetSolution {
                subset_id,
                basis,
                eigenvalues,
                diagnostics: crate::solver::SpectrumDiagnostics {
                    sigma_max: 0.0,
                    sigma_min: 0.0,
                    rank: 0,
                },
            },
            weighted,
            dense: None.or(dense),
            wall: Duration::ZERO,
        })
    }
}

/// Solve one subset: patches → scatter → eigenproblem → P_k. Pure, so the
/// scheduler is free to run map tasks in any order.
pub fn map_task(subset: &SubsetView<'_>, cfg: &JobConfig) -> Result<WorkerResult> {
    cfg.validate()?;
    let start = Instant::now();
    if subset.is_empty() || !subset.has_between_class_pairs() {
        return Err(AdmlError::SubsetDegenerate { subset: subset.id });
    }
    let d = subset.dim();
    let needs_dense = cfg.needs_dense();
    if needs_dense && d > cfg.dense_cap {
        return Err(AdmlError::MissingDense);
    }

    let use_gram = match cfg.solve_mode {
        SolveMode::Gram => true,
        SolveMode::Direct => false,
        SolveMode::Auto => d > subset.len(),
    };
    // the factored form serves the Gram route and P_k; densify only when
    // the solve or the fold needs the d×d operator
    let scatter_mode = if use_gram || d > cfg.dense_cap {
        ScatterMode::Factored
    } else {
        ScatterMode::Dense
    };
    let assembled = accumulate_scatter(subset, &cfg.patch, scatter_mode)?;
    let solution = solve_subset(
        &assembled.rep,
        subset.id,
        cfg.q,
        if use_gram {
            SolveMode::Gram
        } else {
            SolveMode::Direct
        },
        cfg.ridge,
    )?;
    let weighted = compute_pk(&assembled.rep, &solution.basis)?;
    let dense = if needs_dense {
        Some(match &assembled.rep {
            ScatterRep::Dense(r) => r.clone(),
            factored => crate::linalg::symmetrize(&factored.to_dense()),
        })
    } else {
        None
    };
    Ok(WorkerResult {
        subset_id: subset.id,
        solution,
        weighted,
        dense,
        wall: start.elapsed(),
    })
}

/// Fold worker results (ascending subset id, regardless of arrival order)
/// and aggregate into a model.
pub fn reduce_fold(mut results: Vec<WorkerResult>, cfg: &JobConfig) -> Result<MetricModel> {
    if results.is_empty() {
        return Err(AdmlError::SubsetDegenerate { subset: 0 });
    }
    results.sort_by_key(|r| r.subset_id);
    let weighted: Vec<DMatrix<f64>> = results.iter().map(|r| r.weighted.clone()).collect();

    let projection = match cfg.algo {
        Algo::Adml2 => aggregate_svd(&weighted)?.basis,
        Algo::Adml1 => {
            let dense: Option<Vec<DMatrix<f64>>> = results
                .iter()
                .map(|r| r.dense.clone())
                .collect();
            let dense = dense.ok_or(AdmlError::MissingDense)?;
            aggregate_inverse(&dense, &weighted)?
        }
        // the wholistic solve has exactly one result; its basis is the model
        Algo::Ddml => results[0].solution.basis.clone(),
    };

    MetricModel::new(
        projection,
        ModelMeta {
            algo: cfg.algo,
            k: results.len(),
            degenerate: Vec::new(),
            cfg_hash: cfg.stable_hash(),
            timings: PhaseTimings::default(),
        },
    )
}

/// Split → map (bounded concurrency) → reduce. Degenerate subsets are
/// dropped and recorded; the job fails only if nothing survives.
pub fn train(ds: &LabeledDataset, cfg: &JobConfig) -> Result<MetricModel> {
    cfg.validate()?;
    let normalized;
    let ds = if cfg.normalize {
        normalized = normalize(ds).0;
        &normalized
    } else {
        ds
    };

    let split_start = Instant::now();
    let views: Vec<SubsetView<'_>> = match cfg.algo {
        Algo::Ddml => vec![ds.full_view()],
        _ => random_split(ds, cfg.partition, cfg.seed)?.0,
    };
    let split_ms = split_start.elapsed().as_secs_f64() * 1e3;

    let map_start = Instant::now();
    let outcomes = parallel::map_indexed(&views, cfg.workers, |view| map_task(view, cfg));
    let map_ms = map_start.elapsed().as_secs_f64() * 1e3;

    let mut results = Vec::with_capacity(outcomes.len());
    let mut degenerate = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(AdmlError::SubsetDegenerate { subset }) => degenerate.push(subset as u32),
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        return Err(AdmlError::SubsetDegenerate { subset: 0 });
    }

    let reduce_start = Instant::now();
    let mut model = reduce_fold(results, cfg)?;
    model.meta.degenerate = degenerate;
    model.meta.timings = PhaseTimings {
        split_ms,
        map_ms,
        reduce_ms: reduce_start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(model)
}
