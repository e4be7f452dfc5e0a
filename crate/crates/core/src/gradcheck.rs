//! Finite-difference verification of every analytic gradient in the crate.
//!
//! Each check draws random instances, picks a random direction `v`, and
//! compares the analytic directional derivative `⟨∇f, v⟩` against the
//! central difference `(f(x + hv) − f(x − hv)) / 2h`. The error of a trial is
//! `|a − f| / max(|a|, |f|, 1e-3)`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{contrastive_loss, gaussian_labels, lac_objective, local_consistency_loss, LacWeights, LossMode};
use crate::matrix::Matrix;
use crate::seqcore::{AlignmentParams, EmbeddingSequence, SimilarityMode};
use crate::softdtw::{dtw_backward, dtw_forward};
use crate::softsw::{sw_backward, sw_forward};
use crate::trainer::EncoderParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub gamma: f64,
    pub trials: usize,
    pub tol: f64,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            trials: 20,
            tol: 1e-4,
            step: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "ok" } else { "FAIL" };
            writeln!(f, "{status:>4}  {:<28} trials={:<4} max_err={:.3e}", c.name, c.trials, c.max_error)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn shifted(m: &Matrix, v: &Matrix, h: f64) -> Matrix {
    let mut out = m.clone();
    out.add_scaled(v, h);
    out
}

fn rand_sequence(rng: &mut ChaCha8Rng, t: usize, e: usize) -> EmbeddingSequence {
    let frames = rand_matrix(rng, t, e, 1.0);
    let mut idx = Vec::with_capacity(t);
    let mut next = 0;
    for _ in 0..t {
        next += rng.random_range(1..4);
        idx.push(next);
    }
    EmbeddingSequence::with_source_len(frames, idx, "g", next + 2).expect("valid random sequence")
}

struct Runner<'a> {
    cfg: &'a GradcheckConfig,
    rng: ChaCha8Rng,
    checks: Vec<CheckResult>,
}

impl Runner<'_> {
    /// `trial` returns `(analytic, f(+h), f(−h))` for the configured step.
    fn check(&mut self, name: &str, mut trial: impl FnMut(&mut ChaCha8Rng, f64) -> Result<(f64, f64, f64)>) -> Result<()> {
        let h = self.cfg.step;
        let mut max_error: f64 = 0.0;
        for _ in 0..self.cfg.trials {
            let (an, fp, fm) = trial(&mut self.rng, h)?;
            let fd = (fp - fm) / (2.0 * h);
            let err = relative_error(an, fd);
            max_error = if err.is_nan() { f64::INFINITY } else { max_error.max(err) };
        }
        self.checks.push(CheckResult {
            name: name.to_string(),
            trials: self.cfg.trials,
            max_error,
            passed: max_error <= self.cfg.tol,
        });
        Ok(())
    }
}

fn rand_params(rng: &mut ChaCha8Rng, gamma: f64) -> AlignmentParams {
    let ge = rng.random_range(0.05..0.4);
    AlignmentParams {
        gamma,
        gap_open: ge + rng.random_range(0.2..1.2),
        gap_extend: ge,
        ..AlignmentParams::default()
    }
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut r = Runner {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        checks: Vec::new(),
    };
    let gamma = cfg.gamma;
    let dims = |rng: &mut ChaCha8Rng| (rng.random_range(2..8), rng.random_range(2..8));

    r.check("softsw dscore/dS", |rng, h| {
        let (t1, t2) = dims(rng);
        let p = rand_params(rng, gamma);
        let s = rand_matrix(rng, t1, t2, 2.0);
        let v = rand_matrix(rng, t1, t2, 1.0);
        let tab = sw_forward(&s, &p)?;
        let g = sw_backward(&s, &p, &tab, 1.0, None)?;
        Ok((
            dot(&g.ds, &v),
            sw_forward(&shifted(&s, &v, h), &p)?.score,
            sw_forward(&shifted(&s, &v, -h), &p)?.score,
        ))
    })?;

    r.check("softsw dscore/dgap_open", |rng, h| {
        let (t1, t2) = dims(rng);
        let p = rand_params(rng, gamma);
        let s = rand_matrix(rng, t1, t2, 2.0);
        let g = sw_backward(&s, &p, &sw_forward(&s, &p)?, 1.0, None)?;
        let at = |go: f64| sw_forward(&s, &AlignmentParams { gap_open: go, ..p }).map(|t| t.score);
        Ok((g.d_gap_open, at(p.gap_open + h)?, at(p.gap_open - h)?))
    })?;

    r.check("softsw dscore/dgap_extend", |rng, h| {
        let (t1, t2) = dims(rng);
        let p = rand_params(rng, gamma);
        let s = rand_matrix(rng, t1, t2, 2.0);
        let g = sw_backward(&s, &p, &sw_forward(&s, &p)?, 1.0, None)?;
        let at = |ge: f64| sw_forward(&s, &AlignmentParams { gap_extend: ge, ..p }).map(|t| t.score);
        Ok((g.d_gap_extend, at(p.gap_extend + h)?, at(p.gap_extend - h)?))
    })?;

    r.check("softsw seed_D path", |rng, h| {
        let (t1, t2) = dims(rng);
        let p = rand_params(rng, gamma);
        let s = rand_matrix(rng, t1, t2, 2.0);
        let w = rand_matrix(rng, t1, t2, 1.0);
        let c = rng.random_range(-1.0..1.0);
        let v = rand_matrix(rng, t1, t2, 1.0);
        let f = |m: &Matrix| sw_forward(m, &p).map(|t| dot(&w, &t.interior_d()) + c * t.score);
        let g = sw_backward(&s, &p, &sw_forward(&s, &p)?, c, Some(&w))?;
        let (fp, fm) = (f(&shifted(&s, &v, h))?, f(&shifted(&s, &v, -h))?);
        let go = rng.random_range(-1.0..1.0);
        let ge = rng.random_range(-1.0..1.0);
        let fg = |eps: f64| {
            let q = AlignmentParams {
                gap_open: p.gap_open + eps * go,
                gap_extend: p.gap_extend + eps * ge,
                ..p
            };
            sw_forward(&s, &q).map(|t| dot(&w, &t.interior_d()) + c * t.score)
        };
        // One combined direction over S and both gaps.
        Ok((
            dot(&g.ds, &v) + g.d_gap_open * go + g.d_gap_extend * ge,
            fp + fg(h)? - f(&s)?,
            fm + fg(-h)? - f(&s)?,
        ))
    })?;

    r.check("softdtw dcost", |rng, h| {
        let (t1, t2) = dims(rng);
        let cost = rand_matrix(rng, t1, t2, 2.0);
        let v = rand_matrix(rng, t1, t2, 1.0);
        let g = dtw_backward(&cost, gamma, &dtw_forward(&cost, gamma)?)?;
        Ok((
            dot(&g, &v),
            dtw_forward(&shifted(&cost, &v, h), gamma)?.cost,
            dtw_forward(&shifted(&cost, &v, -h), gamma)?.cost,
        ))
    })?;

    r.check("contrastive_loss", |rng, h| {
        let t = rng.random_range(2..8);
        let e = rng.random_range(2..6);
        let w = LacWeights::default();
        let (z1, z2) = (rand_sequence(rng, t, e), rand_sequence(rng, t, e));
        let (v1, v2) = (rand_matrix(rng, t, e, 1.0), rand_matrix(rng, t, e, 1.0));
        let out = contrastive_loss(&z1, &z2, &w)?;
        let f = |eps: f64| -> Result<f64> {
            let a = z1.with_frames(shifted(z1.frames(), &v1, eps))?;
            let b = z2.with_frames(shifted(z2.frames(), &v2, eps))?;
            Ok(contrastive_loss(&a, &b, &w)?.loss)
        };
        Ok((dot(&out.d_z1, &v1) + dot(&out.d_z2, &v2), f(h)?, f(-h)?))
    })?;

    r.check("local_consistency_loss", |rng, h| {
        let t = rng.random_range(2..8);
        let p = rand_params(rng, gamma);
        let mut w = LacWeights::default();
        if rng.random_bool(0.5) {
            w.logits = crate::losses::LogitsMode::MatMul;
        }
        let z = rand_sequence(rng, t, 3);
        let labels = gaussian_labels(&z, &z, &w);
        let (s12, s21) = (rand_matrix(rng, t, t, 2.0), rand_matrix(rng, t, t, 2.0));
        let (v12, v21) = (rand_matrix(rng, t, t, 1.0), rand_matrix(rng, t, t, 1.0));
        let f = |eps: f64| -> Result<f64> {
            let a = sw_forward(&shifted(&s12, &v12, eps), &p)?;
            let b = sw_forward(&shifted(&s21, &v21, eps), &p)?;
            Ok(local_consistency_loss(&a, &b, &labels, &w)?.loss)
        };
        let (t12, t21) = (sw_forward(&s12, &p)?, sw_forward(&s21, &p)?);
        let lc = local_consistency_loss(&t12, &t21, &labels, &w)?;
        let g12 = sw_backward(&s12, &p, &t12, 0.0, Some(&lc.seed_d12))?;
        let g21 = sw_backward(&s21, &p, &t21, 0.0, Some(&lc.seed_d21))?;
        Ok((dot(&g12.ds, &v12) + dot(&g21.ds, &v21), f(h)?, f(-h)?))
    })?;

    let modes = [
        LossMode::LacFull,
        LossMode::ContrastivePlusLl,
        LossMode::SoftdtwBaseline,
        LossMode::ContrastiveOnly,
    ];
    let mut trial_no = 0usize;
    r.check("lac_total embeddings", |rng, h| {
        let mode = modes[trial_no % modes.len()];
        let sim = if trial_no.is_multiple_of(2) {
            SimilarityMode::NegEuclideanZNorm
        } else {
            SimilarityMode::InverseDistance
        };
        trial_no += 1;
        let t = rng.random_range(2..7);
        let e = rng.random_range(2..5);
        let p = rand_params(rng, gamma).with_similarity(sim);
        let w = LacWeights {
            alpha: 0.5,
            ..LacWeights::default()
        };
        let (z1, z2) = (rand_sequence(rng, t, e), rand_sequence(rng, t, e));
        let (v1, v2) = (rand_matrix(rng, t, e, 1.0), rand_matrix(rng, t, e, 1.0));
        let (_, g) = lac_objective(&z1, &z2, &p, &w, mode)?;
        let f = |eps: f64| -> Result<f64> {
            let a = z1.with_frames(shifted(z1.frames(), &v1, eps))?;
            let b = z2.with_frames(shifted(z2.frames(), &v2, eps))?;
            Ok(lac_objective(&a, &b, &p, &w, mode)?.0.total)
        };
        Ok((dot(&g.d_z1, &v1) + dot(&g.d_z2, &v2), f(h)?, f(-h)?))
    })?;

    r.check("lac_total gaps", |rng, h| {
        let t = rng.random_range(2..7);
        let p = rand_params(rng, gamma);
        let w = LacWeights {
            alpha: 0.5,
            ..LacWeights::default()
        };
        let (z1, z2) = (rand_sequence(rng, t, 3), rand_sequence(rng, t, 3));
        let (go, ge) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (_, g) = lac_objective(&z1, &z2, &p, &w, LossMode::LacFull)?;
        let f = |eps: f64| {
            let q = AlignmentParams {
                gap_open: p.gap_open + eps * go,
                gap_extend: p.gap_extend + eps * ge,
                ..p
            };
            lac_objective(&z1, &z2, &q, &w, LossMode::LacFull).map(|o| o.0.total)
        };
        Ok((g.d_gap_open * go + g.d_gap_extend * ge, f(h)?, f(-h)?))
    })?;

    r.check("encoder jvp", |rng, h| {
        let (f_in, hid, out) = (rng.random_range(2..6), rng.random_range(2..9), rng.random_range(2..5));
        let mut enc = EncoderParams::init(f_in, hid, out, rng.random_bool(0.5), rng);
        enc.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        // Keeps output rows away from zero norm, where normalization has no derivative.
        enc.b2.iter_mut().for_each(|b| *b = rng.random_range(0.5..1.0));
        let t = rng.random_range(1..6);
        let x = rand_matrix(rng, t, f_in, 1.0);
        let w = rand_matrix(rng, t, out, 1.0);
        let dx = rand_matrix(rng, t, f_in, 1.0);
        let theta = enc.flatten();
        let dtheta: Vec<f64> = theta.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |eps: f64| -> Result<f64> {
            let moved: Vec<f64> = theta.iter().zip(&dtheta).map(|(a, d)| a + eps * d).collect();
            let z = enc.with_flat(&moved)?.forward(&shifted(&x, &dx, eps))?;
            Ok(dot(z.output(), &w))
        };
        let g = enc.backward(&enc.forward(&x)?, &w)?;
        let an = g.params.flatten().iter().zip(&dtheta).map(|(a, d)| a * d).sum::<f64>() + dot(&g.d_input, &dx);
        Ok((an, f(h)?, f(-h)?))
    })?;

    Ok(GradcheckReport {
        config: cfg.clone(),
        checks: r.checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_default_settings() {
        let cfg = GradcheckConfig {
            trials: 6,
            ..GradcheckConfig::default()
        };
        let report = run_gradcheck(&cfg).unwrap();
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.checks.len(), 10);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 1e-4);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
