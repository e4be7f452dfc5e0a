//! Synthetic paired action sequences and the temporal cropping sampler.
//!
//! A sequence walks a shared latent trajectory `u ∈ [0, 1]` through
//! `num_phases + 1` anchor points; phase `k` covers `u ∈ [k/P, (k+1)/P)` and
//! frames linearly interpolate between anchors `k` and `k+1`. Each sequence
//! gets its own random monotone time warp, Gaussian noise on the signal
//! coordinates, and independent high-variance noise on `nuisance_dims`
//! trailing coordinates that carry no phase information.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seqcore::{EmbeddingSequence, LabeledSequence};

/// Monotone piecewise-linear map of `[0, 1]` onto itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Warp {
    knots: Vec<[f64; 2]>,
}

impl Warp {
    pub fn identity() -> Self {
        Self {
            knots: vec![[0.0, 0.0], [1.0, 1.0]],
        }
    }

    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a warp needs at least two knots"));
        }
        if knots[0] != [0.0, 0.0] || *knots.last().unwrap() != [1.0, 1.0] {
            return Err(Error::invalid("warp must start at (0,0) and end at (1,1)"));
        }
        if knots.windows(2).any(|w| !(w[1][0] > w[0][0] && w[1][1] > w[0][1])) {
            return Err(Error::invalid("warp knots must be strictly increasing in both coordinates"));
        }
        Ok(Self { knots })
    }

    /// A random warp with `segments` pieces whose slopes are log-normal with
    /// scale `jitter`; `jitter = 0` gives the identity.
    pub fn random(rng: &mut impl Rng, segments: usize, jitter: f64) -> Self {
        let segments = segments.max(1);
        let steps: Vec<f64> = (0..segments)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                (jitter * z).exp()
            })
            .collect();
        let total: f64 = steps.iter().sum();
        let mut knots = vec![[0.0, 0.0]];
        let mut acc = 0.0;
        for (k, s) in steps.iter().enumerate().take(segments - 1) {
            acc += s / total;
            knots.push([(k + 1) as f64 / segments as f64, acc]);
        }
        knots.push([1.0, 1.0]);
        Self { knots }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.knots.partition_point(|p| p[0] < x).clamp(1, self.knots.len() - 1);
        let ([x0, y0], [x1, y1]) = (self.knots[k - 1], self.knots[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }
}

impl TryFrom<Vec<[f64; 2]>> for Warp {
    type Error = Error;

    fn try_from(knots: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(knots)
    }
}

impl From<Warp> for Vec<[f64; 2]> {
    fn from(w: Warp) -> Self {
        w.knots
    }
}

impl Default for Warp {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionSpec {
    pub num_phases: usize,
    /// Raw feature dimension `F`, including nuisance coordinates.
    pub obs_dim: usize,
    pub prototype_seed: u64,
    pub noise_sigma: f64,
    /// Base latent trajectory shared by every sequence.
    pub warp: Warp,
    pub length: usize,
    /// Log-normal slope scale of the per-sequence random warps.
    pub warp_jitter: f64,
    pub warp_segments: usize,
    pub nuisance_dims: usize,
    pub nuisance_sigma: f64,
}

impl Default for ActionSpec {
    fn default() -> Self {
        Self {
            num_phases: 4,
            obs_dim: 16,
            prototype_seed: 0,
            noise_sigma: 0.05,
            warp: Warp::identity(),
            length: 64,
            warp_jitter: 0.4,
            warp_segments: 4,
            nuisance_dims: 8,
            nuisance_sigma: 4.0,
        }
    }
}

impl ActionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_phases < 2 {
            return Err(Error::invalid("num_phases must be at least 2"));
        }
        if self.nuisance_dims >= self.obs_dim {
            return Err(Error::invalid("obs_dim must exceed nuisance_dims"));
        }
        if self.length < 2 {
            return Err(Error::invalid("sequence length must be at least 2"));
        }
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.noise_sigma) && ok(self.nuisance_sigma) && ok(self.warp_jitter)) {
            return Err(Error::invalid("noise scales and warp jitter must be finite and >= 0"));
        }
        Ok(())
    }

    fn signal_dims(&self) -> usize {
        self.obs_dim - self.nuisance_dims
    }

    /// `num_phases + 1` anchor points on the signal coordinates.
    pub fn anchors(&self) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.prototype_seed);
        Matrix::from_fn(self.num_phases + 1, self.signal_dims(), |_, _| StandardNormal.sample(&mut rng))
    }

    /// Noise-free signal coordinates and phase id at latent time `u`.
    pub fn render(&self, anchors: &Matrix, u: f64) -> (Vec<f64>, usize) {
        let pos = u.clamp(0.0, 1.0) * self.num_phases as f64;
        let k = (pos.floor() as usize).min(self.num_phases - 1);
        let frac = pos - k as f64;
        let v = anchors
            .row(k)
            .iter()
            .zip(anchors.row(k + 1))
            .map(|(a, b)| a + frac * (b - a))
            .collect();
        (v, k)
    }

    fn sample_sequence(&self, anchors: &Matrix, rng: &mut ChaCha8Rng, id: String) -> Result<LabeledSequence> {
        let warp = Warp::random(rng, self.warp_segments, self.warp_jitter);
        let noise = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let nuisance = Normal::new(0.0, self.nuisance_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let n = self.length;
        let mut frames = Matrix::zeros(n, self.obs_dim);
        let mut labels = Vec::with_capacity(n);
        let mut progress = Vec::with_capacity(n);
        for f in 0..n {
            let t = f as f64 / (n - 1) as f64;
            let u = self.warp.eval(warp.eval(t));
            let (signal, phase) = self.render(anchors, u);
            let row = frames.row_mut(f);
            for (k, s) in signal.iter().enumerate() {
                row[k] = s + noise.sample(rng);
            }
            for v in row[self.signal_dims()..].iter_mut() {
                *v = nuisance.sample(rng);
            }
            labels.push(phase);
            progress.push(u);
        }
        let seq = EmbeddingSequence::new(frames, (0..n).collect(), id)?;
        LabeledSequence::new(seq, labels, progress)
    }
}

/// Two sequences of the same action under independent warps and noise.
/// Deterministic given `(spec, seed)`.
pub fn generate_pair(spec: &ActionSpec, seed: u64) -> Result<(LabeledSequence, LabeledSequence)> {
    spec.validate()?;
    let anchors = spec.anchors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = spec.sample_sequence(&anchors, &mut rng, format!("s{seed}a"))?;
    let b = spec.sample_sequence(&anchors, &mut rng, format!("s{seed}b"))?;
    Ok((a, b))
}

/// `pairs` pairs with consecutive seeds starting at `first_seed`, flattened as
/// `[a0, b0, a1, b1, ...]`.
pub fn generate_dataset(spec: &ActionSpec, pairs: usize, first_seed: u64) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::with_capacity(2 * pairs);
    for k in 0..pairs as u64 {
        let (a, b) = generate_pair(spec, first_seed.wrapping_add(k))?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

const SPLIT_STRIDE: u64 = 1 << 20;

/// Disjoint train and test datasets derived from one `seed`: train pairs use
/// seeds from `seed · 2^20`, test pairs from `seed · 2^20 + 2^19`.
pub fn generate_split(
    spec: &ActionSpec,
    train_pairs: usize,
    test_pairs: usize,
    seed: u64,
) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>)> {
    let half = SPLIT_STRIDE / 2;
    if train_pairs as u64 > half || test_pairs as u64 > half {
        return Err(Error::invalid(format!("at most {half} pairs per split")));
    }
    let base = seed.wrapping_mul(SPLIT_STRIDE);
    Ok((
        generate_dataset(spec, train_pairs, base)?,
        generate_dataset(spec, test_pairs, base.wrapping_add(half))?,
    ))
}

/// Samples `crop_len` strictly increasing frames from a random window.
///
/// The window has nominal length `L ∈ [crop_len, T]`, skewed toward long
/// windows, and a start that may fall before the first frame or end past the
/// last, in which case it is clipped (never below `crop_len` frames). Frames
/// are then drawn from the window without replacement and sorted. Clipping
/// keeps boundary frames from being under-sampled relative to the middle.
pub fn temporal_random_crop(seq: &LabeledSequence, crop_len: usize, seed: u64) -> Result<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    temporal_random_crop_with(seq, crop_len, &mut rng)
}

pub fn temporal_random_crop_with(seq: &LabeledSequence, crop_len: usize, rng: &mut impl Rng) -> Result<LabeledSequence> {
    let picks = crop_positions(seq.len(), crop_len, rng)?;
    LabeledSequence::new(
        select_rows(&seq.sequence, &picks)?,
        picks.iter().map(|&k| seq.phase_labels[k]).collect(),
        picks.iter().map(|&k| seq.progress[k]).collect(),
    )
}

/// Same sampler as [`temporal_random_crop_with`] for sequences without labels.
pub fn crop_sequence(seq: &EmbeddingSequence, crop_len: usize, rng: &mut impl Rng) -> Result<EmbeddingSequence> {
    let picks = crop_positions(seq.len(), crop_len, rng)?;
    select_rows(seq, &picks)
}

/// Sorted row positions of one crop from a sequence of length `t`: a window of
/// random length (skewed long) is placed with overhang on both ends, clipped,
/// and `crop_len` distinct rows are drawn from it.
pub fn crop_positions(t: usize, crop_len: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if crop_len < 2 {
        return Err(Error::invalid(format!("crop length must be at least 2, got {crop_len}")));
    }
    if crop_len > t {
        return Err(Error::invalid(format!("crop length {crop_len} exceeds sequence length {t}")));
    }
    let span = t - crop_len;
    let u: f64 = rng.random();
    let len = crop_len + ((span + 1) as f64 * u.sqrt()).floor().min(span as f64) as usize;
    let overhang = (len - crop_len) as i64;
    let start = rng.random_range(-overhang..=(t - crop_len) as i64);
    let lo = start.max(0) as usize;
    let hi = ((start + len as i64) as usize).min(t);
    let mut picks: Vec<usize> = sample(rng, hi - lo, crop_len).into_iter().map(|k| k + lo).collect();
    picks.sort_unstable();
    Ok(picks)
}

fn select_rows(src: &EmbeddingSequence, picks: &[usize]) -> Result<EmbeddingSequence> {
    let frames = Matrix::from_fn(picks.len(), src.dim(), |r, c| src.frames()[(picks[r], c)]);
    let indices = picks.iter().map(|&k| src.indices()[k]).collect();
    EmbeddingSequence::with_source_len(frames, indices, src.source_id(), src.source_len())
}

/// Adds i.i.d. Gaussian noise to every observation (the train-time stand-in
/// for appearance augmentation).
pub fn add_feature_noise(frames: &Matrix, sigma: f64, rng: &mut impl Rng) -> Matrix {
    if sigma == 0.0 {
        return frames.clone();
    }
    let mut out = frames.clone();
    for v in out.as_mut_slice() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sigma * z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn quiet(jitter: f64) -> ActionSpec {
        ActionSpec {
            noise_sigma: 0.0,
            nuisance_sigma: 0.0,
            warp_jitter: jitter,
            ..Default::default()
        }
    }

    #[test]
    fn warp_validation_and_eval() {
        assert!(Warp::new(vec![[0.0, 0.0], [0.5, 0.5]]).is_err());
        assert!(Warp::new(vec![[0.0, 0.0], [0.5, 0.6], [0.4, 0.7], [1.0, 1.0]]).is_err());
        let w = Warp::new(vec![[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]]).unwrap();
        assert!((w.eval(0.25) - 0.125).abs() < 1e-15);
        assert!((w.eval(0.75) - 0.625).abs() < 1e-15);
        assert_eq!(w.eval(1.0), 1.0);
        let r = Warp::random(&mut ChaCha8Rng::seed_from_u64(1), 5, 0.8);
        assert!(Warp::new(r.knots().to_vec()).is_ok());
    }

    #[test]
    fn noise_free_identity_warps_give_identical_pairs() {
        let (a, b) = generate_pair(&quiet(0.0), 3).unwrap();
        assert_eq!(a.sequence.frames(), b.sequence.frames());
        assert_eq!(a.phase_labels, b.phase_labels);
    }

    #[test]
    fn noise_free_equal_latent_time_equal_observation() {
        let spec = quiet(0.6);
        let (a, b) = generate_pair(&spec, 4).unwrap();
        let anchors = spec.anchors();
        for (seq, lab) in [(&a.sequence, &a), (&b.sequence, &b)] {
            for f in 0..seq.len() {
                let (sig, phase) = spec.render(&anchors, lab.progress[f]);
                assert_eq!(&seq.frames().row(f)[..sig.len()], sig.as_slice());
                assert_eq!(lab.phase_labels[f], phase);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ActionSpec::default();
        assert_eq!(generate_pair(&spec, 9).unwrap(), generate_pair(&spec, 9).unwrap());
        assert_ne!(generate_pair(&spec, 9).unwrap().0, generate_pair(&spec, 10).unwrap().0);
    }

    fn nn_agreement(spec: &ActionSpec, dims: usize) -> f64 {
        let mut total = 0.0;
        for seed in 0..20 {
            let (a, b) = generate_pair(spec, seed).unwrap();
            let (fa, fb) = (a.sequence.frames(), b.sequence.frames());
            let d = |i: usize, j: usize| fa.row(i)[..dims].iter().zip(&fb.row(j)[..dims]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            let mut hits = 0;
            for i in 0..a.len() {
                let nn = (0..b.len()).min_by(|&x, &y| d(i, x).total_cmp(&d(i, y))).unwrap();
                hits += usize::from(a.phase_labels[i] == b.phase_labels[nn]);
            }
            total += hits as f64 / a.len() as f64;
        }
        total / 20.0
    }

    #[test]
    fn pair_nearest_neighbour_phase_agreement() {
        let clean = ActionSpec {
            nuisance_dims: 0,
            ..ActionSpec::default()
        };
        let raw = nn_agreement(&clean, clean.obs_dim);
        assert!(raw >= 0.9, "raw agreement {raw}");
        let spec = ActionSpec::default();
        let signal = nn_agreement(&spec, spec.signal_dims());
        assert!(signal >= 0.9, "signal agreement {signal}");
    }

    #[test]
    fn full_length_crop_is_identity() {
        let (a, _) = generate_pair(&ActionSpec::default(), 1).unwrap();
        let c = temporal_random_crop(&a, a.len(), 5).unwrap();
        assert_eq!(c.sequence.indices(), (0..a.len()).collect::<Vec<_>>().as_slice());
        assert_eq!(c, a);
    }

    #[test]
    fn tiny_crop_exhaustive() {
        let frames = Matrix::from_fn(3, 1, |i, _| i as f64);
        let seq = LabeledSequence::new(EmbeddingSequence::from_frames(frames).unwrap(), vec![0, 1, 1], vec![0.0, 0.5, 1.0]).unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..200 {
            let c = temporal_random_crop(&seq, 2, seed).unwrap();
            let idx = c.sequence.indices().to_vec();
            assert!(idx[0] < idx[1]);
            assert_eq!(c.sequence.frames()[(0, 0)], idx[0] as f64);
            seen.insert(idx);
        }
        let expected: BTreeSet<Vec<usize>> = [vec![0, 1], vec![0, 2], vec![1, 2]].into_iter().collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn crop_errors() {
        let (a, _) = generate_pair(&ActionSpec::default(), 1).unwrap();
        assert!(temporal_random_crop(&a, 1, 0).is_err());
        assert!(temporal_random_crop(&a, a.len() + 1, 0).is_err());
    }

    #[test]
    fn crop_replay_and_marginals() {
        let spec = ActionSpec {
            length: 32,
            ..Default::default()
        };
        let (a, _) = generate_pair(&spec, 2).unwrap();
        assert_eq!(temporal_random_crop(&a, 8, 77).unwrap(), temporal_random_crop(&a, 8, 77).unwrap());
        let mut counts = [0usize; 32];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let draws = 10_000;
        for _ in 0..draws {
            let c = temporal_random_crop_with(&a, 8, &mut rng).unwrap();
            assert!(c.sequence.indices().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(c.phase_labels.len(), 8);
            for &i in c.sequence.indices() {
                counts[i] += 1;
            }
        }
        let uniform = draws as f64 * 8.0 / 32.0;
        for (i, &n) in counts.iter().enumerate() {
            let ratio = n as f64 / uniform;
            assert!((0.75..=1.25).contains(&ratio), "index {i} ratio {ratio}");
        }
    }
}
