//! Frame-level evaluation of embeddings: phase classification with a linear
//! probe, phase progression by least squares, fine-grained retrieval
//! precision (AP@K), and Kendall's tau of cross-sequence nearest neighbours.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcore::{EmbeddingSequence, LabeledSequence};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.1, 0.5, 1.0];
pub const DEFAULT_KS: [usize; 3] = [5, 10, 15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Keyed by label fraction formatted as `"0.1"`, `"0.5"`, `"1"`.
    pub phase_classification: BTreeMap<String, f64>,
    pub ap_at_k: BTreeMap<usize, f64>,
    pub progress_r2: f64,
    pub kendall_tau: f64,
    pub seed: u64,
}

impl MetricReport {
    /// One-line fixed-order table: Class@10/50/100, AP@5/10/15, Progress, tau.
    pub fn table(&self) -> String {
        let mut header = Vec::new();
        let mut row = Vec::new();
        for (f, acc) in &self.phase_classification {
            let pct = (f.parse::<f64>().unwrap_or(0.0) * 100.0).round();
            header.push(format!("Class@{pct}"));
            row.push(format!("{:.2}", acc * 100.0));
        }
        for (k, ap) in &self.ap_at_k {
            header.push(format!("AP@{k}"));
            row.push(format!("{:.2}", ap * 100.0));
        }
        header.push("Progress".into());
        row.push(format!("{:.2}", self.progress_r2 * 100.0));
        header.push("Tau".into());
        row.push(format!("{:.2}", self.kendall_tau * 100.0));
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let fmt = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!("{}\n{}", fmt(&header), fmt(&row))
    }
}

pub(crate) fn fraction_key(f: f64) -> String {
    format!("{f}")
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(seqs: &[&LabeledSequence]) -> Result<usize> {
    let dim = seqs
        .first()
        .map(|s| s.sequence.dim())
        .ok_or_else(|| Error::invalid("no sequences given"))?;
    if seqs.iter().any(|s| s.sequence.dim() != dim) {
        return Err(Error::shape("sequences have different embedding dimensions"));
    }
    Ok(dim)
}

/// Multinomial logistic regression on standardized features, trained by
/// full-batch Adam from a zero start.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    classes: Vec<usize>,
    /// `classes × (dim + 1)`, the last column is the bias.
    weights: Vec<Vec<f64>>,
}

impl LinearProbe {
    const STEPS: usize = 400;
    const LR: f64 = 0.05;
    const L2: f64 = 1e-4;

    pub fn fit(x: &[&[f64]], y: &[usize]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("probe needs a non-empty, equally sized design and label set"));
        }
        let dim = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            for k in 0..dim {
                scale[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 });

        let classes: Vec<usize> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let class_pos: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let feats: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut f: Vec<f64> = (0..dim).map(|k| (r[k] - mean[k]) * scale[k]).collect();
                f.push(1.0);
                f
            })
            .collect();
        let kc = classes.len();
        let width = dim + 1;
        let mut w = vec![vec![0.0; width]; kc];
        let mut m1 = w.clone();
        let mut m2 = w.clone();
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut logits = vec![0.0; kc];
        for step in 1..=Self::STEPS {
            let mut grad = vec![vec![0.0; width]; kc];
            for (f, label) in feats.iter().zip(y) {
                for (c, l) in logits.iter_mut().enumerate() {
                    *l = w[c].iter().zip(f).map(|(a, b)| a * b).sum();
                }
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                let target = class_pos[label];
                for c in 0..kc {
                    let p = (logits[c] - mx).exp() / z;
                    let g = (p - f64::from(u8::from(c == target))) / n;
                    for (gw, fv) in grad[c].iter_mut().zip(f) {
                        *gw += g * fv;
                    }
                }
            }
            let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
            for c in 0..kc {
                for k in 0..width {
                    let g = grad[c][k] + if k < dim { Self::L2 * w[c][k] } else { 0.0 };
                    m1[c][k] = b1 * m1[c][k] + (1.0 - b1) * g;
                    m2[c][k] = b2 * m2[c][k] + (1.0 - b2) * g * g;
                    w[c][k] -= Self::LR * (m1[c][k] / c1) / ((m2[c][k] / c2).sqrt() + eps);
                }
            }
        }
        Ok(Self {
            mean,
            scale,
            classes,
            weights: w,
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let dim = self.mean.len();
        let mut best = (f64::NEG_INFINITY, self.classes[0]);
        for (c, w) in self.weights.iter().enumerate() {
            let s = (0..dim).map(|k| w[k] * (x[k] - self.mean[k]) * self.scale[k]).sum::<f64>() + w[dim];
            if s > best.0 {
                best = (s, self.classes[c]);
            }
        }
        best.1
    }
}

/// Linear-probe phase accuracy on `test` frames after fitting on a
/// per-phase stratified `fraction` of `train` frames.
pub fn phase_classification(train: &[LabeledSequence], test: &[LabeledSequence], fraction: f64, seed: u64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("label fraction must be in (0, 1], got {fraction}")));
    }
    let all: Vec<&LabeledSequence> = train.iter().chain(test).collect();
    check_dims(&all)?;
    let mut by_phase: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (si, s) in train.iter().enumerate() {
        for (fi, &p) in s.phase_labels.iter().enumerate() {
            by_phase.entry(p).or_default().push((si, fi));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for frames in by_phase.values_mut() {
        frames.shuffle(&mut rng);
        let take = ((frames.len() as f64 * fraction).ceil() as usize).clamp(1, frames.len());
        picked.extend_from_slice(&frames[..take]);
    }
    picked.sort_unstable();
    for s in test {
        if let Some(p) = s.phase_labels.iter().find(|p| !by_phase.contains_key(p)) {
            return Err(Error::MissingPhase(*p));
        }
    }
    let x: Vec<&[f64]> = picked.iter().map(|&(si, fi)| train[si].sequence.frames().row(fi)).collect();
    let y: Vec<usize> = picked.iter().map(|&(si, fi)| train[si].phase_labels[fi]).collect();
    let probe = LinearProbe::fit(&x, &y)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in test {
        for (fi, &p) in s.phase_labels.iter().enumerate() {
            correct += usize::from(probe.predict(s.sequence.frames().row(fi)) == p);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::invalid("test set has no frames"));
    }
    Ok(correct as f64 / total as f64)
}

/// Mean (over query sequences) of the fraction of the `k` nearest frames from
/// other sequences that share the query frame's phase.
///
/// Sequences sharing the query's `source_id` are excluded from its corpus.
/// Ties are broken by lower frame index, then lower corpus position.
pub fn average_precision_at_k(query: &[LabeledSequence], corpus: &[LabeledSequence], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let all: Vec<&LabeledSequence> = query.iter().chain(corpus).collect();
    check_dims(&all)?;
    if query.is_empty() {
        return Err(Error::invalid("no query sequences"));
    }
    let mut per_video = Vec::with_capacity(query.len());
    for q in query {
        let pool: Vec<(usize, &LabeledSequence)> = corpus
            .iter()
            .enumerate()
            .filter(|(_, c)| c.sequence.source_id() != q.sequence.source_id())
            .collect();
        let pool_frames: usize = pool.iter().map(|(_, c)| c.len()).sum();
        if pool_frames == 0 {
            return Err(Error::invalid(format!(
                "corpus is empty after excluding sequence '{}'",
                q.sequence.source_id()
            )));
        }
        if pool_frames < k {
            return Err(Error::invalid(format!("corpus has {pool_frames} frames, fewer than k = {k}")));
        }
        let mut sum = 0.0;
        let mut cands: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(pool_frames);
        for (qi, &qp) in q.phase_labels.iter().enumerate() {
            let qf = q.sequence.frames().row(qi);
            cands.clear();
            for (vi, c) in &pool {
                for fi in 0..c.len() {
                    cands.push((sq_dist(qf, c.sequence.frames().row(fi)), fi, *vi, c.phase_labels[fi]));
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let hits = cands[..k].iter().filter(|c| c.3 == qp).count();
            sum += hits as f64 / k as f64;
        }
        per_video.push(sum / q.len() as f64);
    }
    Ok(per_video.iter().sum::<f64>() / per_video.len() as f64)
}

fn least_squares_fit(train: &[LabeledSequence]) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let seqs: Vec<&LabeledSequence> = train.iter().collect();
    let dim = check_dims(&seqs)?;
    let n: usize = train.iter().map(|s| s.len()).sum();
    let mut mean = vec![0.0; dim];
    let mut ymean = 0.0;
    for s in train {
        for fi in 0..s.len() {
            for (m, v) in mean.iter_mut().zip(s.sequence.frames().row(fi)) {
                *m += v / n as f64;
            }
            ymean += s.progress[fi] / n as f64;
        }
    }
    let mut x = DMatrix::<f64>::zeros(n, dim);
    let mut y = DVector::<f64>::zeros(n);
    let mut r = 0;
    for s in train {
        for fi in 0..s.len() {
            for k in 0..dim {
                x[(r, k)] = s.sequence.frames()[(fi, k)] - mean[k];
            }
            y[r] = s.progress[fi] - ymean;
            r += 1;
        }
    }
    let svd = x.svd(true, true);
    let tol = svd.singular_values.max() * 1e-10;
    let coef = svd.solve(&y, tol).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((coef.iter().copied().collect(), ymean, mean))
}

/// Average per-sequence R² of an ordinary-least-squares map from embeddings
/// to progress, fit on `train` and scored on `test`. Test sequences with
/// constant progress are skipped.
pub fn phase_progression(train: &[LabeledSequence], test: &[LabeledSequence]) -> Result<f64> {
    let (coef, ymean, xmean) = least_squares_fit(train)?;
    if test.iter().any(|s| s.sequence.dim() != coef.len()) {
        return Err(Error::shape("test embeddings do not match the training dimension"));
    }
    let mut r2s = Vec::new();
    for s in test {
        let avg = s.progress.iter().sum::<f64>() / s.len() as f64;
        let ss_tot: f64 = s.progress.iter().map(|p| (p - avg).powi(2)).sum();
        if ss_tot == 0.0 {
            continue;
        }
        let ss_res: f64 = (0..s.len())
            .map(|fi| {
                let row = s.sequence.frames().row(fi);
                let pred = ymean + coef.iter().zip(row).zip(&xmean).map(|((c, v), m)| c * (v - m)).sum::<f64>();
                (s.progress[fi] - pred).powi(2)
            })
            .sum();
        r2s.push(1.0 - ss_res / ss_tot);
    }
    if r2s.is_empty() {
        return Err(Error::invalid("no test sequence has varying progress"));
    }
    Ok(r2s.iter().sum::<f64>() / r2s.len() as f64)
}

/// Index of each `a` frame's nearest `b` frame (lowest index on ties).
pub fn nearest_neighbours(a: &EmbeddingSequence, b: &EmbeddingSequence) -> Vec<usize> {
    (0..a.len())
        .map(|i| {
            let q = a.frames().row(i);
            let mut best = (f64::INFINITY, 0);
            for j in 0..b.len() {
                let d = sq_dist(q, b.frames().row(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// `(concordant − discordant) / (T(T−1)/2)` over pairs of `seq1` frames,
/// compared through their nearest neighbours in `seq2`.
pub fn kendall_tau(seq1: &EmbeddingSequence, seq2: &EmbeddingSequence) -> Result<f64> {
    if seq1.dim() != seq2.dim() {
        return Err(Error::shape("embedding dimensions differ"));
    }
    let t = seq1.len();
    if t < 2 {
        return Err(Error::invalid("kendall tau needs at least two frames"));
    }
    let nn = nearest_neighbours(seq1, seq2);
    let mut score: i64 = 0;
    for i in 0..t {
        for k in i + 1..t {
            score += match nn[i].cmp(&nn[k]) {
                std::cmp::Ordering::Less => 1,
                std::cmp::Ordering::Greater => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    Ok(score as f64 / (t * (t - 1) / 2) as f64)
}

/// Mean of [`kendall_tau`] over every ordered pair of distinct sequences.
pub fn corpus_kendall_tau(seqs: &[LabeledSequence]) -> Result<f64> {
    if seqs.len() < 2 {
        return Err(Error::invalid("corpus kendall tau needs at least two sequences"));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, a) in seqs.iter().enumerate() {
        for (j, b) in seqs.iter().enumerate() {
            if i != j {
                acc += kendall_tau(&a.sequence, &b.sequence)?;
                n += 1;
            }
        }
    }
    Ok(acc / n as f64)
}

/// All four metrics for embedded `train`/`test` sets. Retrieval and Kendall's
/// tau run within `test`.
pub fn evaluate(train: &[LabeledSequence], test: &[LabeledSequence], fractions: &[f64], ks: &[usize], seed: u64) -> Result<MetricReport> {
    let mut phase = BTreeMap::new();
    for &f in fractions {
        phase.insert(fraction_key(f), phase_classification(train, test, f, seed)?);
    }
    let mut ap = BTreeMap::new();
    for &k in ks {
        ap.insert(k, average_precision_at_k(test, test, k)?);
    }
    Ok(MetricReport {
        phase_classification: phase,
        ap_at_k: ap,
        progress_r2: phase_progression(train, test)?,
        kendall_tau: corpus_kendall_tau(test)?,
        seed,
    })
}
