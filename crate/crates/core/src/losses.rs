//! Contrastive, local-consistency and alignment losses, and their composition
//!
//! ```text
//! total = l_c + α · (l_l + β · (l_sw12 + l_sw21))
//! ```
//!
//! with analytic gradients down to the embeddings and the gap penalties.
//! Alignment terms enter as the negated smooth Smith-Waterman score, so
//! minimizing the total pulls aligned frames together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seqcore::{build_similarity, build_similarity_backward, AlignmentParams, EmbeddingSequence};
use crate::softdtw::{dtw_backward, dtw_forward};
use crate::softsw::{sw_backward, sw_forward, DpTables};

/// How index differences are scaled before the Gaussian label kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexScale {
    /// Each index is divided by its source sequence length.
    #[default]
    SourceLength,
    /// Raw frame-index differences; `sigma` is then in frames.
    Raw,
}

/// How the two soft-alignment matrices combine into consistency logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogitsMode {
    /// `D̃12 ⊙ D̃21ᵀ`
    #[default]
    Hadamard,
    /// `D̃12 · D̃21ᵀ`
    MatMul,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LacWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub sigma: f64,
    pub index_scale: IndexScale,
    pub logits: LogitsMode,
}

impl Default for LacWeights {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            tau: 0.1,
            sigma: 0.1,
            index_scale: IndexScale::SourceLength,
            logits: LogitsMode::Hadamard,
        }
    }
}

impl LacWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.tau > 0.0
            && self.sigma > 0.0
            && [self.alpha, self.beta, self.tau, self.sigma].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!(
                "need alpha, beta >= 0 and tau, sigma > 0; got alpha={} beta={} tau={} sigma={}",
                self.alpha, self.beta, self.tau, self.sigma
            )));
        }
        Ok(())
    }
}

/// Which terms of the objective are active; mirrors the loss ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    LacFull,
    ContrastiveOnly,
    ContrastivePlusLl,
    /// Contrastive loss plus soft-DTW on `−S` in place of the alignment terms.
    SoftdtwBaseline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_l: f64,
    pub l_sw12: f64,
    pub l_sw21: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("l_c", self.l_c),
            ("l_l", self.l_l),
            ("l_sw12", self.l_sw12),
            ("l_sw21", self.l_sw21),
            ("total", self.total),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LacGradients {
    pub d_z1: Matrix,
    pub d_z2: Matrix,
    pub d_gap_open: f64,
    pub d_gap_extend: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub d_z1: Matrix,
    pub d_z2: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitsArtifacts {
    pub d12_tilde: Matrix,
    pub d21_tilde: Matrix,
    pub logits: Matrix,
    pub gauss_labels: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalConsistency {
    pub loss: f64,
    /// `∂loss/∂D12` over interior cells, ready to seed [`sw_backward`].
    pub seed_d12: Matrix,
    pub seed_d21: Matrix,
    pub artifacts: LogitsArtifacts,
}

/// Row-normalized Gaussian kernel over index differences between the two
/// sequences' sampled frames.
pub fn gaussian_labels(z1: &EmbeddingSequence, z2: &EmbeddingSequence, w: &LacWeights) -> Matrix {
    let pos = |s: &EmbeddingSequence| -> Vec<f64> {
        match w.index_scale {
            IndexScale::SourceLength => {
                let n = s.source_len() as f64;
                s.indices().iter().map(|&i| i as f64 / n).collect()
            }
            IndexScale::Raw => s.indices().iter().map(|&i| i as f64).collect(),
        }
    };
    let (p1, p2) = (pos(z1), pos(z2));
    let two_s2 = 2.0 * w.sigma * w.sigma;
    let mut g = Matrix::from_fn(p1.len(), p2.len(), |i, j| -(p1[i] - p2[j]).powi(2) / two_s2);
    // Shifting by the row max before exp keeps a row non-degenerate even when
    // every kernel value underflows.
    for i in 0..g.rows() {
        let row = g.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    g
}

fn row_softmax(x: &Matrix, temperature: f64) -> Matrix {
    let mut out = x.map(|v| v / temperature);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Backward of [`row_softmax`]: `gX = P ⊙ (gP − rowsum(P ⊙ gP)) / t`.
fn row_softmax_backward(p: &Matrix, gp: &Matrix, temperature: f64) -> Matrix {
    let mut out = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let dot: f64 = p.row(i).iter().zip(gp.row(i)).map(|(a, b)| a * b).sum();
        for j in 0..p.cols() {
            out[(i, j)] = p[(i, j)] * (gp[(i, j)] - dot) / temperature;
        }
    }
    out
}

/// Mean over rows of `−Σ_j labels_ij · log softmax(logits_i)_j`, plus its
/// gradient with respect to the logits.
fn soft_cross_entropy(logits: &Matrix, labels: &Matrix) -> (f64, Matrix) {
    let t = logits.rows() as f64;
    let p = row_softmax(logits, 1.0);
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (l, y) in row.iter().zip(labels.row(i)) {
            loss -= y * (l - lse);
        }
    }
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let ysum: f64 = labels.row(i).iter().sum();
        for j in 0..logits.cols() {
            grad[(i, j)] = (ysum * p[(i, j)] - labels[(i, j)]) / t;
        }
    }
    (loss / t, grad)
}

fn l2_normalize_rows(z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let n = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::invalid(format!("frame {i} has zero norm and cannot be normalized")));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient on normalized rows back through `z / ‖z‖`.
fn l2_normalize_backward(unit: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    let mut out = g.clone();
    for i in 0..g.rows() {
        let dot: f64 = unit.row(i).iter().zip(g.row(i)).map(|(a, b)| a * b).sum();
        for (k, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = (*o - unit[(i, k)] * dot) / norms[i];
        }
    }
    out
}

fn check_pair(z1: &EmbeddingSequence, z2: &EmbeddingSequence) -> Result<()> {
    if z1.len() != z2.len() {
        return Err(Error::shape(format!("sequence lengths differ: {} vs {}", z1.len(), z2.len())));
    }
    if z1.dim() != z2.dim() {
        return Err(Error::shape(format!("embedding dims differ: {} vs {}", z1.dim(), z2.dim())));
    }
    Ok(())
}

/// Cross-entropy between Gaussian index labels and the row-softmax of cosine
/// similarities over temperature.
pub fn contrastive_loss(z1: &EmbeddingSequence, z2: &EmbeddingSequence, w: &LacWeights) -> Result<ContrastiveOutput> {
    check_pair(z1, z2)?;
    w.validate()?;
    let (u1, n1) = l2_normalize_rows(z1.frames())?;
    let (u2, n2) = l2_normalize_rows(z2.frames())?;
    let logits = u1.matmul(&u2.transpose())?.map(|v| v / w.tau);
    let labels = gaussian_labels(z1, z2, w);
    let (loss, g_logits) = soft_cross_entropy(&logits, &labels);
    let mut g_u1 = g_logits.matmul(&u2)?;
    g_u1.scale(1.0 / w.tau);
    let mut g_u2 = g_logits.transpose().matmul(&u1)?;
    g_u2.scale(1.0 / w.tau);
    Ok(ContrastiveOutput {
        loss,
        d_z1: l2_normalize_backward(&u1, &n1, &g_u1),
        d_z2: l2_normalize_backward(&u2, &n2, &g_u2),
    })
}

/// Consistency between the two directions' soft alignments, scored against
/// `labels` (normally [`gaussian_labels`]).
pub fn local_consistency_loss(
    tables12: &DpTables,
    tables21: &DpTables,
    labels: &Matrix,
    w: &LacWeights,
) -> Result<LocalConsistency> {
    w.validate()?;
    let (a, b) = tables12.dims();
    if a != b || tables21.dims() != (a, a) {
        return Err(Error::shape(format!(
            "local consistency needs square tables of equal size, got {:?} and {:?}",
            tables12.dims(),
            tables21.dims()
        )));
    }
    if labels.shape() != (a, a) {
        return Err(Error::shape(format!("labels are {:?}, expected ({a}, {a})", labels.shape())));
    }
    let p12 = row_softmax(&tables12.interior_d(), w.tau);
    let p21 = row_softmax(&tables21.interior_d(), w.tau);
    let p21t = p21.transpose();
    let logits = match w.logits {
        LogitsMode::Hadamard => Matrix::from_fn(a, a, |i, j| p12[(i, j)] * p21t[(i, j)]),
        LogitsMode::MatMul => p12.matmul(&p21t)?,
    };
    let (loss, g_l) = soft_cross_entropy(&logits, labels);
    let (g12, g21) = match w.logits {
        LogitsMode::Hadamard => (
            Matrix::from_fn(a, a, |i, j| g_l[(i, j)] * p21t[(i, j)]),
            Matrix::from_fn(a, a, |i, j| g_l[(j, i)] * p12[(j, i)]),
        ),
        LogitsMode::MatMul => (g_l.matmul(&p21)?, g_l.transpose().matmul(&p12)?),
    };
    Ok(LocalConsistency {
        loss,
        seed_d12: row_softmax_backward(&p12, &g12, w.tau),
        seed_d21: row_softmax_backward(&p21, &g21, w.tau),
        artifacts: LogitsArtifacts {
            d12_tilde: p12,
            d21_tilde: p21,
            logits,
            gauss_labels: labels.clone(),
        },
    })
}

/// The full objective with every term active.
pub fn lac_total(
    z1: &EmbeddingSequence,
    z2: &EmbeddingSequence,
    p: &AlignmentParams,
    w: &LacWeights,
) -> Result<(LossBreakdown, LacGradients)> {
    lac_objective(z1, z2, p, w, LossMode::LacFull)
}

/// The objective restricted to the terms selected by `mode`. Inactive terms
/// are reported as 0 so `total` always equals the composition formula.
pub fn lac_objective(
    z1: &EmbeddingSequence,
    z2: &EmbeddingSequence,
    p: &AlignmentParams,
    w: &LacWeights,
    mode: LossMode,
) -> Result<(LossBreakdown, LacGradients)> {
    check_pair(z1, z2)?;
    p.validate()?;
    w.validate()?;
    let c = contrastive_loss(z1, z2, w)?;
    let mut out = LossBreakdown {
        l_c: c.loss,
        ..Default::default()
    };
    let mut grads = LacGradients {
        d_z1: c.d_z1,
        d_z2: c.d_z2,
        d_gap_open: 0.0,
        d_gap_extend: 0.0,
    };

    let weighted = w.alpha > 0.0;
    match mode {
        LossMode::ContrastiveOnly => {}
        _ if !weighted => {}
        LossMode::LacFull | LossMode::ContrastivePlusLl => {
            let s12 = build_similarity(z1, z2, p.similarity)?;
            let s21 = build_similarity(z2, z1, p.similarity)?;
            let t12 = sw_forward(&s12.values, p)?;
            let t21 = sw_forward(&s21.values, p)?;
            let labels = gaussian_labels(z1, z2, w);
            let lc = local_consistency_loss(&t12, &t21, &labels, w)?;
            out.l_l = lc.loss;
            let seed_score = if mode == LossMode::LacFull {
                out.l_sw12 = -t12.score;
                out.l_sw21 = -t21.score;
                -w.alpha * w.beta
            } else {
                0.0
            };
            let mut seed12 = lc.seed_d12;
            seed12.scale(w.alpha);
            let mut seed21 = lc.seed_d21;
            seed21.scale(w.alpha);
            let g12 = sw_backward(&s12.values, p, &t12, seed_score, Some(&seed12))?;
            let g21 = sw_backward(&s21.values, p, &t21, seed_score, Some(&seed21))?;
            let (a1, a2) = build_similarity_backward(z1, z2, p.similarity, &g12.ds)?;
            let (b2, b1) = build_similarity_backward(z2, z1, p.similarity, &g21.ds)?;
            grads.d_z1.add_scaled(&a1, 1.0);
            grads.d_z1.add_scaled(&b1, 1.0);
            grads.d_z2.add_scaled(&a2, 1.0);
            grads.d_z2.add_scaled(&b2, 1.0);
            grads.d_gap_open = g12.d_gap_open + g21.d_gap_open;
            grads.d_gap_extend = g12.d_gap_extend + g21.d_gap_extend;
        }
        LossMode::SoftdtwBaseline => {
            let scale = w.alpha * w.beta;
            for (first, second, slot) in [(z1, z2, 0), (z2, z1, 1)] {
                let s = build_similarity(first, second, p.similarity)?;
                let cost = s.values.map(|v| -v);
                let tables = dtw_forward(&cost, p.gamma)?;
                let dc = dtw_backward(&cost, p.gamma, &tables)?;
                let ds = dc.map(|v| -scale * v);
                let (ga, gb) = build_similarity_backward(first, second, p.similarity, &ds)?;
                if slot == 0 {
                    out.l_sw12 = tables.cost;
                    grads.d_z1.add_scaled(&ga, 1.0);
                    grads.d_z2.add_scaled(&gb, 1.0);
                } else {
                    out.l_sw21 = tables.cost;
                    grads.d_z2.add_scaled(&ga, 1.0);
                    grads.d_z1.add_scaled(&gb, 1.0);
                }
            }
        }
    }
    out.total = out.l_c + w.alpha * (out.l_l + w.beta * (out.l_sw12 + out.l_sw21));
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcore::SimilarityMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, t: usize, e: usize) -> EmbeddingSequence {
        let frames = Matrix::from_fn(t, e, |_, _| rng.random_range(-1.0..1.0));
        let mut idx: Vec<usize> = (0..t).map(|k| 2 * k + rng.random_range(0..2)).collect();
        idx.dedup();
        EmbeddingSequence::with_source_len(frames, idx, "r", 2 * t + 2).unwrap()
    }

    /// Direct double-loop evaluation of the contrastive objective.
    #[allow(clippy::needless_range_loop)]
    fn contrastive_oracle(z1: &EmbeddingSequence, z2: &EmbeddingSequence, w: &LacWeights) -> f64 {
        let t = z1.len();
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sim = |i: usize, j: usize| {
            let (a, b) = (z1.frames().row(i), z2.frames().row(j));
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
        };
        let s1: Vec<f64> = z1.indices().iter().map(|&i| i as f64 / z1.source_len() as f64).collect();
        let s2: Vec<f64> = z2.indices().iter().map(|&i| i as f64 / z2.source_len() as f64).collect();
        let gk = |d: f64| (-d * d / (2.0 * w.sigma * w.sigma)).exp();
        let mut total = 0.0;
        for i in 0..t {
            let gsum: f64 = (0..t).map(|k| gk(s1[i] - s2[k])).sum();
            let esum: f64 = (0..t).map(|k| (sim(i, k) / w.tau).exp()).sum();
            for j in 0..t {
                total += gk(s1[i] - s2[j]) / gsum * ((sim(i, j) / w.tau).exp() / esum).ln();
            }
        }
        -total / t as f64
    }

    fn fd_close(fd: f64, an: f64, tol: f64) -> bool {
        (fd - an).abs() <= tol * fd.abs().max(an.abs()).max(1e-3)
    }

    #[test]
    fn single_frame_contrastive_is_zero() {
        let z = EmbeddingSequence::from_frames(Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        let c = contrastive_loss(&z, &z, &LacWeights::default()).unwrap();
        assert_eq!(c.loss, 0.0);
    }

    #[test]
    fn zero_norm_frame_rejected() {
        let z = EmbeddingSequence::from_frames(Matrix::from_rows(&[[1.0, 2.0], [0.0, 0.0]]).unwrap()).unwrap();
        assert!(matches!(contrastive_loss(&z, &z, &LacWeights::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn contrastive_matches_oracle_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let z1 = random_seq(&mut rng, 4, 3);
        let z2 = random_seq(&mut rng, 4, 3);
        let w = LacWeights {
            sigma: 0.2,
            ..Default::default()
        };
        let c = contrastive_loss(&z1, &z2, &w).unwrap();
        assert!((c.loss - contrastive_oracle(&z1, &z2, &w)).abs() < 1e-10);
        let h = 1e-6;
        for (which, grad) in [(0, &c.d_z1), (1, &c.d_z2)] {
            let base = if which == 0 { &z1 } else { &z2 };
            for i in 0..4 {
                for k in 0..3 {
                    let mut up = base.frames().clone();
                    let mut dn = base.frames().clone();
                    up[(i, k)] += h;
                    dn[(i, k)] -= h;
                    let (u, d) = (base.with_frames(up).unwrap(), base.with_frames(dn).unwrap());
                    let fd = if which == 0 {
                        (contrastive_oracle(&u, &z2, &w) - contrastive_oracle(&d, &z2, &w)) / (2.0 * h)
                    } else {
                        (contrastive_oracle(&z1, &u, &w) - contrastive_oracle(&z1, &d, &w)) / (2.0 * h)
                    };
                    assert!(fd_close(fd, grad[(i, k)], 1e-5), "fd={fd} an={}", grad[(i, k)]);
                }
            }
        }
    }

    #[test]
    fn labels_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let z1 = random_seq(&mut rng, 5, 2);
        let z2 = random_seq(&mut rng, 5, 2);
        for scale in [IndexScale::SourceLength, IndexScale::Raw] {
            let w = LacWeights {
                index_scale: scale,
                sigma: 1e-4,
                ..Default::default()
            };
            let g = gaussian_labels(&z1, &z2, &w);
            for i in 0..5 {
                assert!((g.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn diag_tables(t: usize, diag: f64) -> DpTables {
        // a score matrix whose smooth-SW D table is strongly diagonal
        let s = Matrix::from_fn(t, t, |i, j| if i == j { diag } else { -diag });
        sw_forward(&s, &AlignmentParams::new(0.8, 50.0, 50.0).unwrap()).unwrap()
    }

    #[test]
    fn consistency_small_on_diagonal_alignment_and_decreasing() {
        let w = LacWeights {
            sigma: 1e-3,
            tau: 1.0,
            ..Default::default()
        };
        let labels = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        let weak = local_consistency_loss(&diag_tables(3, 2.0), &diag_tables(3, 2.0), &labels, &w).unwrap();
        let strong = local_consistency_loss(&diag_tables(3, 10.0), &diag_tables(3, 10.0), &labels, &w).unwrap();
        assert!(strong.loss < weak.loss);
        assert!(strong.loss >= 0.0);
        for m in [&strong.artifacts.d12_tilde, &strong.artifacts.d21_tilde] {
            for i in 0..3 {
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn consistency_seeds_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = AlignmentParams::new(0.8, 1.0, 0.1).unwrap();
        let s12 = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let s21 = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels = gaussian_labels(&random_seq(&mut rng, 4, 2), &random_seq(&mut rng, 4, 2), &LacWeights::default());
        for logits in [LogitsMode::Hadamard, LogitsMode::MatMul] {
            let w = LacWeights {
                logits,
                tau: 0.7,
                ..Default::default()
            };
            let t12 = sw_forward(&s12, &p).unwrap();
            let t21 = sw_forward(&s21, &p).unwrap();
            let lc = local_consistency_loss(&t12, &t21, &labels, &w).unwrap();
            let h = 1e-6;
            for (which, seed) in [(0, &lc.seed_d12), (1, &lc.seed_d21)] {
                for i in 0..4 {
                    for j in 0..4 {
                        let bump = |delta: f64| {
                            let (mut a, mut b) = (t12.clone(), t21.clone());
                            if which == 0 {
                                a.d[(i + 1, j + 1)] += delta;
                            } else {
                                b.d[(i + 1, j + 1)] += delta;
                            }
                            local_consistency_loss(&a, &b, &labels, &w).unwrap().loss
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        assert!(fd_close(fd, seed[(i, j)], 1e-4), "{logits:?} fd={fd} an={}", seed[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn non_square_tables_rejected() {
        let p = AlignmentParams::default();
        let t = sw_forward(&Matrix::zeros(2, 3), &p).unwrap();
        assert!(local_consistency_loss(&t, &t, &Matrix::zeros(2, 2), &LacWeights::default()).is_err());
    }

    #[test]
    fn alpha_zero_is_contrastive() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let z1 = random_seq(&mut rng, 4, 3);
        let z2 = random_seq(&mut rng, 4, 3);
        let w = LacWeights {
            alpha: 0.0,
            ..Default::default()
        };
        let (b, _) = lac_total(&z1, &z2, &AlignmentParams::default(), &w).unwrap();
        assert_eq!(b.total, b.l_c);
    }

    #[test]
    fn composition_matches_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let z1 = random_seq(&mut rng, 4, 3);
        let z2 = random_seq(&mut rng, 4, 3);
        let p = AlignmentParams::default();
        let w = LacWeights::default();
        let (b, _) = lac_total(&z1, &z2, &p, &w).unwrap();
        let l_c = contrastive_loss(&z1, &z2, &w).unwrap().loss;
        let s12 = build_similarity(&z1, &z2, SimilarityMode::NegEuclideanZNorm).unwrap();
        let s21 = build_similarity(&z2, &z1, SimilarityMode::NegEuclideanZNorm).unwrap();
        let t12 = sw_forward(&s12.values, &p).unwrap();
        let t21 = sw_forward(&s21.values, &p).unwrap();
        let l_l = local_consistency_loss(&t12, &t21, &gaussian_labels(&z1, &z2, &w), &w).unwrap().loss;
        let expected = l_c + 0.01 * (l_l + 1.0 * (-t12.score - t21.score));
        assert!((b.total - expected).abs() < 1e-10);
        assert!(b.l_c >= 0.0 && b.l_l >= 0.0);
    }

    #[test]
    fn every_mode_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let z1 = random_seq(&mut rng, 3, 2);
        let z2 = random_seq(&mut rng, 3, 2);
        let w = LacWeights {
            alpha: 0.5,
            beta: 0.7,
            tau: 0.5,
            sigma: 0.3,
            ..Default::default()
        };
        let p = AlignmentParams::new(0.8, 0.9, 0.2).unwrap();
        for mode in [LossMode::LacFull, LossMode::ContrastiveOnly, LossMode::ContrastivePlusLl, LossMode::SoftdtwBaseline] {
            let (_, g) = lac_objective(&z1, &z2, &p, &w, mode).unwrap();
            let total = |a: &EmbeddingSequence, b: &EmbeddingSequence, p: &AlignmentParams| {
                lac_objective(a, b, p, &w, mode).unwrap().0.total
            };
            let h = 1e-6;
            for (which, grad) in [(0, &g.d_z1), (1, &g.d_z2)] {
                let base = if which == 0 { &z1 } else { &z2 };
                for i in 0..3 {
                    for k in 0..2 {
                        let mut up = base.frames().clone();
                        let mut dn = base.frames().clone();
                        up[(i, k)] += h;
                        dn[(i, k)] -= h;
                        let (u, d) = (base.with_frames(up).unwrap(), base.with_frames(dn).unwrap());
                        let fd = if which == 0 {
                            (total(&u, &z2, &p) - total(&d, &z2, &p)) / (2.0 * h)
                        } else {
                            (total(&z1, &u, &p) - total(&z1, &d, &p)) / (2.0 * h)
                        };
                        assert!(fd_close(fd, grad[(i, k)], 1e-4), "{mode:?} fd={fd} an={}", grad[(i, k)]);
                    }
                }
            }
            let mut up = p;
            let mut dn = p;
            up.gap_open += h;
            dn.gap_open -= h;
            let fd = (total(&z1, &z2, &up) - total(&z1, &z2, &dn)) / (2.0 * h);
            assert!(fd_close(fd, g.d_gap_open, 1e-4), "{mode:?} go fd={fd} an={}", g.d_gap_open);
        }
    }
}
