//! Desk-scale self-supervised training of a two-layer MLP encoder through the
//! alignment objective, with hand-written backward passes and Adam.
//!
//! Every step draws `batch_pairs` pairs of distinct sequences, crops each
//! view, perturbs it with feature noise, encodes both and backpropagates the
//! loss into the encoder (and optionally the gap penalties). Randomness for a
//! pair comes from a per-pair seed drawn from the run's generator in pair
//! order, so the optional parallel evaluation reduces in the same order as
//! the sequential one and produces identical results.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::losses::{lac_objective, LacWeights, LossBreakdown, LossMode};
use crate::matrix::Matrix;
use crate::seqcore::{AlignmentParams, EmbeddingSequence, LabeledSequence};
use crate::synth::{add_feature_noise, crop_sequence};

/// `x W1 + b1 -> ReLU -> W2 + b2`, then optional row ℓ2-normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderParams {
    /// `F × H`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `H × E`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub normalize: bool,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    x: Matrix,
    h: Matrix,
    norms: Vec<f64>,
    z: Matrix,
}

impl EncoderCache {
    pub fn output(&self) -> &Matrix {
        &self.z
    }
}

/// Gradients with respect to every parameter and the input.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGradients {
    pub params: EncoderParams,
    pub d_input: Matrix,
}

impl EncoderParams {
    /// He-scaled Gaussian weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, normalize: bool, rng: &mut impl Rng) -> Self {
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
        };
        let w1 = gauss(input_dim, hidden_dim, (2.0 / input_dim as f64).sqrt());
        let w2 = gauss(hidden_dim, output_dim, (1.0 / hidden_dim as f64).sqrt());
        Self {
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
            normalize,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (f, h) = self.w1.shape();
        let (h2, e) = self.w2.shape();
        if f == 0 || h == 0 || e == 0 || h2 != h || self.b1.len() != h || self.b2.len() != e {
            return Err(Error::shape(format!(
                "inconsistent encoder shapes: w1 {f}x{h}, b1 {}, w2 {h2}x{e}, b2 {}",
                self.b1.len(),
                self.b2.len()
            )));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("encoder parameters must be finite"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Parameters in the order `w1, b1, w2, b2`, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out
    }

    /// Inverse of [`EncoderParams::flatten`] keeping this instance's shapes.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut out = self.clone();
        let mut rest = flat;
        for slot in [
            out.w1.as_mut_slice(),
            out.b1.as_mut_slice(),
            out.w2.as_mut_slice(),
            out.b2.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(slot.len());
            slot.copy_from_slice(head);
            rest = tail;
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<EncoderCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "encoder expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut h = x.matmul(&self.w1)?;
        for i in 0..h.rows() {
            for (v, b) in h.row_mut(i).iter_mut().zip(&self.b1) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut y = h.matmul(&self.w2)?;
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.b2) {
                *v += b;
            }
        }
        let mut z = y;
        let mut norms = vec![1.0; z.rows()];
        if self.normalize {
            for (i, n) in norms.iter_mut().enumerate() {
                let row = z.row_mut(i);
                *n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if *n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= *n);
                }
            }
        }
        Ok(EncoderCache {
            x: x.clone(),
            h,
            norms,
            z,
        })
    }

    pub fn backward(&self, cache: &EncoderCache, dz: &Matrix) -> Result<EncoderGradients> {
        if dz.shape() != cache.z.shape() {
            return Err(Error::shape(format!(
                "output gradient is {:?}, embeddings are {:?}",
                dz.shape(),
                cache.z.shape()
            )));
        }
        let mut dy = dz.clone();
        if self.normalize {
            for (i, &n) in cache.norms.iter().enumerate() {
                if n == 0.0 {
                    dy.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                let z = cache.z.row(i);
                let dot: f64 = z.iter().zip(dz.row(i)).map(|(a, b)| a * b).sum();
                for (k, v) in dy.row_mut(i).iter_mut().enumerate() {
                    *v = (*v - z[k] * dot) / n;
                }
            }
        }
        let d_w2 = cache.h.transpose().matmul(&dy)?;
        let d_b2 = column_sums(&dy);
        let mut dh = dy.matmul(&self.w2.transpose())?;
        for i in 0..dh.rows() {
            for (d, &a) in dh.row_mut(i).iter_mut().zip(cache.h.row(i)) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let d_w1 = cache.x.transpose().matmul(&dh)?;
        let d_b1 = column_sums(&dh);
        let d_input = dh.matmul(&self.w1.transpose())?;
        Ok(EncoderGradients {
            params: EncoderParams {
                w1: d_w1,
                b1: d_b1,
                w2: d_w2,
                b2: d_b2,
                normalize: self.normalize,
            },
            d_input,
        })
    }

    /// Embeds a sequence, keeping its frame indices and source metadata.
    pub fn encode(&self, seq: &EmbeddingSequence) -> Result<EmbeddingSequence> {
        let z = self.forward(seq.frames())?.z;
        seq.with_frames(z)
    }

    pub fn encode_labeled(&self, seq: &LabeledSequence) -> Result<LabeledSequence> {
        seq.with_frames(self.forward(seq.sequence.frames())?.z)
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconstrained gap parameters: `g_e = softplus(rho_extend)` and
/// `g_o = g_e + softplus(rho_diff)`, so `0 ≤ g_e ≤ g_o` always holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapParams {
    pub rho_extend: f64,
    pub rho_diff: f64,
}

const MIN_GAP: f64 = 1e-6;

impl GapParams {
    pub fn from_gaps(gap_open: f64, gap_extend: f64) -> Self {
        Self {
            rho_extend: softplus_inv(gap_extend.max(MIN_GAP)),
            rho_diff: softplus_inv((gap_open - gap_extend).max(MIN_GAP)),
        }
    }

    pub fn gaps(&self) -> (f64, f64) {
        let ge = softplus(self.rho_extend);
        (ge + softplus(self.rho_diff), ge)
    }

    /// Chain rule from `(∂/∂g_o, ∂/∂g_e)` to `(∂/∂rho_extend, ∂/∂rho_diff)`.
    pub fn pullback(&self, d_open: f64, d_extend: f64) -> (f64, f64) {
        (
            (d_open + d_extend) * sigmoid(self.rho_extend),
            d_open * sigmoid(self.rho_diff),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per Adam step; the gradient is their mean.
    pub batch_pairs: usize,
    /// Pairs drawn per epoch; `None` means half the number of sequences.
    pub pairs_per_epoch: Option<usize>,
    pub crop_len: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub alignment: AlignmentParams,
    pub lac: LacWeights,
    pub learn_gaps: bool,
    pub loss_mode: LossMode,
    /// Std-dev of the Gaussian feature noise added to each cropped view.
    pub aug_noise: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub normalize: bool,
    /// Evaluate the pairs of a step on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_pairs: 1,
            pairs_per_epoch: None,
            crop_len: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            alignment: AlignmentParams::default(),
            lac: LacWeights::default(),
            learn_gaps: false,
            loss_mode: LossMode::LacFull,
            aug_noise: 0.05,
            hidden_dim: 64,
            embed_dim: 32,
            normalize: true,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.batch_pairs == 0 || self.pairs_per_epoch == Some(0) {
            return Err(Error::invalid("batch_pairs and pairs_per_epoch must be positive"));
        }
        if self.crop_len < 2 {
            return Err(Error::invalid(format!("crop_len must be at least 2, got {}", self.crop_len)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        let eps_ok = self.adam_eps > 0.0;
        if !unit(self.adam_beta1) || !unit(self.adam_beta2) || !eps_ok {
            return Err(Error::invalid("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if !(self.aug_noise >= 0.0 && self.aug_noise.is_finite()) {
            return Err(Error::invalid("aug_noise must be >= 0"));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        self.alignment.validate()?;
        self.lac.validate()
    }

    /// The encoder a run with this config starts from.
    pub fn initial_encoder(&self, input_dim: usize) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        EncoderParams::init(input_dim, self.hidden_dim, self.embed_dim, self.normalize, &mut rng)
    }

    pub fn initial_checkpoint(&self, input_dim: usize) -> Checkpoint {
        Checkpoint {
            encoder: self.initial_encoder(input_dim),
            gap_open: self.alignment.gap_open,
            gap_extend: self.alignment.gap_extend,
            config: self.clone(),
            seed: self.seed,
        }
    }
}

/// Trained (or initial) model state plus the config that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub encoder: EncoderParams,
    pub gap_open: f64,
    pub gap_extend: f64,
    pub config: TrainConfig,
    pub seed: u64,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        ck.encoder.validate().map_err(|e| Error::parse(path, e))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Alignment parameters with the learned gap penalties.
    pub fn alignment_params(&self) -> AlignmentParams {
        AlignmentParams {
            gap_open: self.gap_open,
            gap_extend: self.gap_extend,
            learnable_gaps: self.config.learn_gaps,
            ..self.config.alignment
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    #[serde(flatten)]
    pub mean: LossBreakdown,
    pub gap_open: f64,
    pub gap_extend: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
            .collect()
    }
}

struct PairResult {
    breakdown: LossBreakdown,
    grad: Vec<f64>,
    d_gap_open: f64,
    d_gap_extend: f64,
}

fn non_finite(component: &str, detail: String) -> Error {
    Error::Numeric {
        component: component.to_string(),
        detail,
    }
}

fn eval_pair(
    enc: &EncoderParams,
    a: &EmbeddingSequence,
    b: &EmbeddingSequence,
    params: &AlignmentParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PairResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ca = crop_sequence(a, cfg.crop_len, &mut rng)?;
    let cb = crop_sequence(b, cfg.crop_len, &mut rng)?;
    let xa = add_feature_noise(ca.frames(), cfg.aug_noise, &mut rng);
    let xb = add_feature_noise(cb.frames(), cfg.aug_noise, &mut rng);
    let fa = enc.forward(&xa)?;
    let fb = enc.forward(&xb)?;
    if !fa.output().all_finite() || !fb.output().all_finite() {
        return Err(non_finite(
            "encoder output",
            format!("pair ({}, {})", a.source_id(), b.source_id()),
        ));
    }
    let za = ca.with_frames(fa.output().clone())?;
    let zb = cb.with_frames(fb.output().clone())?;
    let (breakdown, g) = lac_objective(&za, &zb, params, &cfg.lac, cfg.loss_mode)?;
    let ctx = || format!("pair ({}, {})", a.source_id(), b.source_id());
    for (name, v) in breakdown.fields() {
        if !v.is_finite() {
            return Err(non_finite(name, format!("{} = {v}", ctx())));
        }
    }
    if !g.d_z1.all_finite() || !g.d_z2.all_finite() {
        return Err(non_finite("embedding gradient", ctx()));
    }
    if !(g.d_gap_open.is_finite() && g.d_gap_extend.is_finite()) {
        return Err(non_finite("gap gradient", ctx()));
    }
    let ga = enc.backward(&fa, &g.d_z1)?;
    let gb = enc.backward(&fb, &g.d_z2)?;
    let mut grad = ga.params.flatten();
    for (x, y) in grad.iter_mut().zip(gb.params.flatten()) {
        *x += y;
    }
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(non_finite("encoder gradient", ctx()));
    }
    Ok(PairResult {
        breakdown,
        grad,
        d_gap_open: g.d_gap_open,
        d_gap_extend: g.d_gap_extend,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * grad[k];
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains on `data` (at least two sequences, each at least `crop_len` long).
pub fn train(data: &[EmbeddingSequence], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid(format!("training needs at least 2 sequences, got {}", data.len())));
    }
    let input_dim = data[0].dim();
    for s in data {
        if s.dim() != input_dim {
            return Err(Error::shape(format!(
                "sequence '{}' has {} features, expected {input_dim}",
                s.source_id(),
                s.dim()
            )));
        }
        if s.len() < cfg.crop_len {
            return Err(Error::invalid(format!(
                "sequence '{}' has {} frames, shorter than crop_len {}",
                s.source_id(),
                s.len(),
                cfg.crop_len
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = EncoderParams::init(input_dim, cfg.hidden_dim, cfg.embed_dim, cfg.normalize, &mut rng);
    let mut gaps = GapParams::from_gaps(cfg.alignment.gap_open, cfg.alignment.gap_extend);
    let mut params = cfg.alignment;
    params.learnable_gaps = cfg.learn_gaps;

    let mut theta = enc.flatten();
    let n_enc = theta.len();
    if cfg.learn_gaps {
        theta.extend([gaps.rho_extend, gaps.rho_diff]);
    }
    let mut adam = Adam::new(theta.len());

    let pairs_per_epoch = cfg.pairs_per_epoch.unwrap_or((data.len() / 2).max(1));
    let steps = pairs_per_epoch.div_ceil(cfg.batch_pairs);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = LossBreakdown::default();
        let mut count = 0usize;
        for _ in 0..steps {
            let jobs: Vec<(usize, usize, u64)> = (0..cfg.batch_pairs)
                .map(|_| {
                    let i = rng.random_range(0..data.len());
                    let mut j = rng.random_range(0..data.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i, j, rng.next_u64())
                })
                .collect();
            let run = |&(i, j, seed): &(usize, usize, u64)| eval_pair(&enc, &data[i], &data[j], &params, cfg, seed);
            let results: Vec<Result<PairResult>> = if cfg.parallel {
                jobs.par_iter().map(run).collect()
            } else {
                jobs.iter().map(run).collect()
            };

            let mut grad = vec![0.0; theta.len()];
            let (mut d_open, mut d_extend) = (0.0, 0.0);
            for r in results {
                let r = r?;
                for (g, v) in grad.iter_mut().zip(&r.grad) {
                    *g += v;
                }
                d_open += r.d_gap_open;
                d_extend += r.d_gap_extend;
                accumulate(&mut sum, &r.breakdown);
                count += 1;
            }
            let inv = 1.0 / jobs.len() as f64;
            if cfg.learn_gaps {
                let (dr_e, dr_d) = gaps.pullback(d_open, d_extend);
                grad[n_enc] = dr_e;
                grad[n_enc + 1] = dr_d;
            }
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut theta, &grad, cfg);

            if !theta.iter().all(|v| v.is_finite()) {
                return Err(non_finite("parameters", format!("after Adam step in epoch {epoch}")));
            }
            enc = enc.with_flat(&theta[..n_enc])?;
            if cfg.learn_gaps {
                gaps = GapParams {
                    rho_extend: theta[n_enc],
                    rho_diff: theta[n_enc + 1],
                };
                let (go, ge) = gaps.gaps();
                params.gap_open = go;
                params.gap_extend = ge;
            }
        }
        let c = count as f64;
        let mean = LossBreakdown {
            l_c: sum.l_c / c,
            l_l: sum.l_l / c,
            l_sw12: sum.l_sw12 / c,
            l_sw21: sum.l_sw21 / c,
            total: sum.total / c,
        };
        if !mean.total.is_finite() {
            return Err(non_finite("total", format!("epoch {epoch} mean")));
        }
        log.push(EpochLog {
            epoch,
            steps,
            mean,
            gap_open: params.gap_open,
            gap_extend: params.gap_extend,
        });
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            encoder: enc,
            gap_open: params.gap_open,
            gap_extend: params.gap_extend,
            config: cfg.clone(),
            seed: cfg.seed,
        },
        log,
    })
}

fn accumulate(sum: &mut LossBreakdown, b: &LossBreakdown) {
    sum.l_c += b.l_c;
    sum.l_l += b.l_l;
    sum.l_sw12 += b.l_sw12;
    sum.l_sw21 += b.l_sw21;
    sum.total += b.total;
}
