//! The learned metric and its text serialization.
//!
//! A model is the projection W (d×q); the induced distance is
//! ‖Wᵀ(x−y)‖, i.e. the Mahalanobis distance of Q = WWᵀ. The file format is
//! plain text with round-trip-exact decimals:
//!
//! ```text
//! ADML-MODEL v1
//! d=<d> q=<q> algo=<algo>
//! <d rows of q space-separated values>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{AdmlError, Result};

/// Which training pipeline produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algo {
    /// One eigensolve over the whole dataset.
    Ddml,
    /// Subset solves merged by the inverse-weighted rule.
    Adml1,
    /// Subset solves merged by the SVD rule.
    #[default]
    Adml2,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Ddml => "ddml",
            Algo::Adml1 => "adml1",
            Algo::Adml2 => "adml2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddml" => Ok(Algo::Ddml),
            "adml1" => Ok(Algo::Adml1),
            "adml2" => Ok(Algo::Adml2),
            other => Err(AdmlError::MalformedModel(format!("unknown algo {other:?}"))),
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wall-clock milliseconds per training phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimings {
    pub split_ms: f64,
    pub map_ms: f64,
    pub reduce_ms: f64,
}

impl PhaseTimings {
    pub fn total_ms(&self) -> f64 {
        self.split_ms + self.map_ms + self.reduce_ms
    }
}

/// Training provenance carried in memory (not serialized to the model
/// file).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    pub algo: Algo,
    /// Number of subsets that contributed.
    pub k: usize,
    /// Subsets dropped as degenerate.
    pub degenerate: Vec<u32>,
    /// Stable hash of the training configuration.
    pub cfg_hash: u64,
    pub timings: PhaseTimings,
}

/// A learned Mahalanobis metric in subspace form.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    /// W: d×q.
    pub projection: DMatrix<f64>,
    pub meta: ModelMeta,
}

impl MetricModel {
    pub fn new(projection: DMatrix<f64>, meta: ModelMeta) -> Result<Self> {
        if projection.nrows() == 0 || projection.ncols() == 0 {
            return Err(AdmlError::BadDimension {
                msg: "empty projection".into(),
            });
        }
        if projection.iter().any(|x| !x.is_finite()) {
            return Err(AdmlError::MalformedModel("non-finite entry".into()));
        }
        Ok(Self { projection, meta })
    }

    /// Identity metric in d dimensions: plain Euclidean distance, the
    /// untrained baseline.
    pub fn euclidean(d: usize) -> Self {
        Self {
            projection: DMatrix::identity(d, d),
            meta: ModelMeta::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn subspace_dim(&self) -> usize {
        self.projection.ncols()
    }

    /// Serialize to the model text format. 17 significant digits make the
    /// round trip exact and repeated runs byte-identical.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ADML-MODEL v1");
        let _ = writeln!(
            out,
            "d={} q={} algo={}",
            self.dim(),
            self.subspace_dim(),
            self.meta.algo
        );
        for r in 0..self.dim() {
            for c in 0..self.subspace_dim() {
                if c > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{:.16e}", self.projection[(r, c)]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("ADML-MODEL v1") => {}
            other => {
                return Err(AdmlError::MalformedModel(format!(
                    "bad magic line {other:?}"
                )))
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| AdmlError::MalformedModel("missing header".into()))?;
        let mut d = None;
        let mut q = None;
        let mut algo = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("d", v)) => d = v.parse::<usize>().ok(),
                Some(("q", v)) => q = v.parse::<usize>().ok(),
                Some(("algo", v)) => algo = Some(Algo::parse(v)?),
                _ => {
                    return Err(AdmlError::MalformedModel(format!(
                        "unexpected header field {field:?}"
                    )))
                }
            }
        }
        let (d, q, algo) = match (d, q, algo) {
            (Some(d), Some(q), Some(a)) if d >= 1 && q >= 1 => (d, q, a),
            _ => return Err(AdmlError::MalformedModel("incomplete header".into())),
        };
        let mut projection = DMatrix::zeros(d, q);
        for r in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| AdmlError::MalformedModel(format!("missing row {r}")))?;
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != q {
                return Err(AdmlError::MalformedModel(format!(
                    "row {r} has {} values, expected {q}",
                    values.len()
                )));
            }
            for (c, token) in values.iter().enumerate() {
                let v: f64 = token
                    .parse()
                    .map_err(|_| AdmlError::MalformedModel(format!("bad value {token:?}")))?;
                projection[(r, c)] = v;
            }
        }
        Self::new(
            projection,
            ModelMeta {
                algo,
                ..ModelMeta::default()
            },
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }
}
