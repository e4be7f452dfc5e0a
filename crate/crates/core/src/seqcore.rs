//! Shared sequence types, parameters, and the similarity matrix between two
//! embedding sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A length-`T` sequence of `E`-dimensional frame embeddings together with the
/// source-frame positions they were sampled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSequence {
    frames: Matrix,
    indices: Vec<usize>,
    source_id: String,
    source_len: usize,
}

impl EmbeddingSequence {
    /// Source length defaults to `last index + 1`.
    pub fn new(frames: Matrix, indices: Vec<usize>, source_id: impl Into<String>) -> Result<Self> {
        let source_len = indices.last().map_or(0, |i| i + 1);
        Self::with_source_len(frames, indices, source_id, source_len)
    }

    pub fn with_source_len(
        frames: Matrix,
        indices: Vec<usize>,
        source_id: impl Into<String>,
        source_len: usize,
    ) -> Result<Self> {
        let (t, e) = frames.shape();
        if t == 0 || e == 0 {
            return Err(Error::invalid(format!("sequence must be at least 1x1, got {t}x{e}")));
        }
        if indices.len() != t {
            return Err(Error::shape(format!("{} indices for {t} frames", indices.len())));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("frame indices must be strictly increasing"));
        }
        if !frames.all_finite() {
            return Err(Error::invalid("frame embeddings must be finite"));
        }
        if source_len <= *indices.last().unwrap() {
            return Err(Error::invalid(format!(
                "source length {source_len} does not cover index {}",
                indices.last().unwrap()
            )));
        }
        Ok(Self {
            frames,
            indices,
            source_id: source_id.into(),
            source_len,
        })
    }

    /// Frames indexed `0..T` from an unnamed source.
    pub fn from_frames(frames: Matrix) -> Result<Self> {
        let t = frames.rows();
        Self::new(frames, (0..t).collect(), "")
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Same indices and provenance, new frame values.
    pub fn with_frames(&self, frames: Matrix) -> Result<Self> {
        Self::with_source_len(frames, self.indices.clone(), self.source_id.clone(), self.source_len)
    }
}

/// An embedding sequence with per-frame phase ids and progress values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub sequence: EmbeddingSequence,
    pub phase_labels: Vec<usize>,
    pub progress: Vec<f64>,
}

impl LabeledSequence {
    pub fn new(sequence: EmbeddingSequence, phase_labels: Vec<usize>, progress: Vec<f64>) -> Result<Self> {
        let t = sequence.len();
        if phase_labels.len() != t || progress.len() != t {
            return Err(Error::shape(format!(
                "{t} frames but {} labels and {} progress values",
                phase_labels.len(),
                progress.len()
            )));
        }
        if progress.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("progress values must lie in [0, 1]"));
        }
        if progress.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("progress must be non-decreasing"));
        }
        Ok(Self {
            sequence,
            phase_labels,
            progress,
        })
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Keeps the labels and replaces the embeddings (e.g. with encoder output).
    pub fn with_frames(&self, frames: Matrix) -> Result<Self> {
        Ok(Self {
            sequence: self.sequence.with_frames(frames)?,
            phase_labels: self.phase_labels.clone(),
            progress: self.progress.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// `−d` standardized to zero mean and unit population variance per matrix.
    #[default]
    NegEuclideanZNorm,
    /// `1 / (1 + d)`.
    InverseDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub mode: SimilarityMode,
}

impl SimilarityMatrix {
    pub fn dims(&self) -> (usize, usize) {
        self.values.shape()
    }
}

impl AsRef<Matrix> for SimilarityMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.values
    }
}

/// Standard deviations at or below this are treated as zero variance.
const ZERO_VARIANCE: f64 = 1e-12;

fn distances(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    })
}

fn mean_std(m: &Matrix) -> (f64, f64) {
    let n = (m.rows() * m.cols()) as f64;
    let mean = m.sum() / n;
    let var = m.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_dims(a: &EmbeddingSequence, b: &EmbeddingSequence) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn build_similarity(
    a: &EmbeddingSequence,
    b: &EmbeddingSequence,
    mode: SimilarityMode,
) -> Result<SimilarityMatrix> {
    check_dims(a, b)?;
    let d = distances(a.frames(), b.frames());
    let values = match mode {
        SimilarityMode::InverseDistance => d.map(|v| 1.0 / (1.0 + v)),
        SimilarityMode::NegEuclideanZNorm => {
            let neg = d.map(|v| -v);
            let (mean, std) = mean_std(&neg);
            if std <= ZERO_VARIANCE {
                Matrix::zeros(neg.rows(), neg.cols())
            } else {
                neg.map(|v| (v - mean) / std)
            }
        }
    };
    Ok(SimilarityMatrix { values, mode })
}

/// Pulls `∂L/∂values` back onto both sequences' frames.
///
/// Zero-distance cells use subgradient 0, as does the whole matrix when the
/// z-normalization hits its zero-variance branch.
pub fn build_similarity_backward(
    a: &EmbeddingSequence,
    b: &EmbeddingSequence,
    mode: SimilarityMode,
    d_values: &Matrix,
) -> Result<(Matrix, Matrix)> {
    check_dims(a, b)?;
    let (t1, t2) = (a.len(), b.len());
    if d_values.shape() != (t1, t2) {
        return Err(Error::shape(format!(
            "similarity adjoint is {:?}, expected ({t1}, {t2})",
            d_values.shape()
        )));
    }
    let d = distances(a.frames(), b.frames());
    // adjoint on the raw distances
    let d_dist = match mode {
        SimilarityMode::InverseDistance => {
            Matrix::from_fn(t1, t2, |i, j| -d_values[(i, j)] / (1.0 + d[(i, j)]).powi(2))
        }
        SimilarityMode::NegEuclideanZNorm => {
            let neg = d.map(|v| -v);
            let (mean, std) = mean_std(&neg);
            if std <= ZERO_VARIANCE {
                Matrix::zeros(t1, t2)
            } else {
                let n = (t1 * t2) as f64;
                let z = neg.map(|v| (v - mean) / std);
                let g_mean = d_values.sum() / n;
                let gz_mean = d_values
                    .as_slice()
                    .iter()
                    .zip(z.as_slice())
                    .map(|(g, z)| g * z)
                    .sum::<f64>()
                    / n;
                Matrix::from_fn(t1, t2, |i, j| {
                    -(d_values[(i, j)] - g_mean - z[(i, j)] * gz_mean) / std
                })
            }
        }
    };
    let e = a.dim();
    let mut da = Matrix::zeros(t1, e);
    let mut db = Matrix::zeros(t2, e);
    for i in 0..t1 {
        for j in 0..t2 {
            let dist = d[(i, j)];
            let g = d_dist[(i, j)];
            if dist == 0.0 || g == 0.0 {
                continue;
            }
            let s = g / dist;
            let (ra, rb) = (a.frames().row(i), b.frames().row(j));
            for k in 0..e {
                let diff = s * (ra[k] - rb[k]);
                da[(i, k)] += diff;
                db[(j, k)] -= diff;
            }
        }
    }
    Ok((da, db))
}

/// Smoothing and gap penalties for the local-alignment recursions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentParams {
    pub gamma: f64,
    pub gap_open: f64,
    pub gap_extend: f64,
    pub learnable_gaps: bool,
    pub similarity: SimilarityMode,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            gap_open: 1.0,
            gap_extend: 0.1,
            learnable_gaps: false,
            similarity: SimilarityMode::NegEuclideanZNorm,
        }
    }
}

impl AlignmentParams {
    pub fn new(gamma: f64, gap_open: f64, gap_extend: f64) -> Result<Self> {
        let p = Self {
            gamma,
            gap_open,
            gap_extend,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_similarity(mut self, mode: SimilarityMode) -> Self {
        self.similarity = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.gap_open >= 0.0 && self.gap_open.is_finite()) {
            return Err(Error::invalid(format!("gap_open must be >= 0, got {}", self.gap_open)));
        }
        if !(self.gap_extend >= 0.0 && self.gap_extend.is_finite()) {
            return Err(Error::invalid(format!("gap_extend must be >= 0, got {}", self.gap_extend)));
        }
        if self.gap_extend > self.gap_open {
            return Err(Error::invalid(format!(
                "gap_extend ({}) must not exceed gap_open ({})",
                self.gap_extend, self.gap_open
            )));
        }
        Ok(())
    }
}
