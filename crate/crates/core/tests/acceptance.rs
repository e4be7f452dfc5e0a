//! Acceptance suite. Runs every criterion at its stated tolerance and time
//! budget and prints one PASS/FAIL line per criterion; exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use lac_align::eval::{
    average_precision_at_k, evaluate, kendall_tau, phase_classification, phase_progression, DEFAULT_FRACTIONS,
    DEFAULT_KS,
};
use lac_align::gradcheck::{run_gradcheck, GradcheckConfig};
use lac_align::losses::{contrastive_loss, gaussian_labels, local_consistency_loss, LacWeights, LossMode};
use lac_align::softdtw::{dtw_enumerate_paths, dtw_forward, dtw_hard};
use lac_align::softsw::{sw_backward, sw_enumerate_paths, sw_forward, sw_hard, Aggregation};
use lac_align::synth::{generate_split, ActionSpec};
use lac_align::trainer::{train, EncoderParams, TrainConfig, TrainOutcome};
use lac_align::{AlignmentParams, EmbeddingSequence, LabeledSequence, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Criterion {
    id: &'static str,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: &'static str, name: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) -> Criterion {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str(&format!("; exceeded budget {budget:?}"));
    }
    Criterion {
        id,
        name,
        passed: ok && in_time,
        detail,
        elapsed,
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

fn rand_params(rng: &mut ChaCha8Rng, gamma: f64) -> AlignmentParams {
    let ge = rng.random_range(0.0..0.5);
    AlignmentParams::new(gamma, ge + rng.random_range(0.0..1.5), ge).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn semiring_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut sw_err, mut dtw_err) = (0.0f64, 0.0f64);
    for n in 0..200 {
        let gamma = [0.3, 0.8, 2.0][n % 3];
        let (t1, t2) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let s = rand_matrix(&mut rng, t1, t2);
        let p = rand_params(&mut rng, gamma);
        let score = sw_forward(&s, &p).unwrap().score;
        sw_err = sw_err.max(rel(score, sw_enumerate_paths(&s, &p, Aggregation::Smooth).unwrap()));
        let cost = rand_matrix(&mut rng, t1, t2);
        let soft = dtw_forward(&cost, gamma).unwrap().cost;
        dtw_err = dtw_err.max(rel(soft, dtw_enumerate_paths(&cost, gamma).unwrap()));
    }
    (
        sw_err <= 1e-9 && dtw_err <= 1e-9,
        format!("max rel err softSW {sw_err:.2e}, softDTW {dtw_err:.2e}"),
    )
}

fn hard_limit() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut lo, mut hi, mut dtw_gap) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..50 {
        let s = rand_matrix(&mut rng, 8, 8);
        let p = rand_params(&mut rng, 1e-3);
        let diff = sw_forward(&s, &p).unwrap().score - sw_hard(&s, p.gap_open, p.gap_extend).unwrap().score;
        lo = lo.min(diff);
        hi = hi.max(diff);
        let cost = rand_matrix(&mut rng, 8, 8);
        let gap = dtw_hard(&cost).unwrap().0 - dtw_forward(&cost, 1e-3).unwrap().cost;
        dtw_gap = dtw_gap.max(gap);
    }
    (
        lo >= 0.0 && hi <= 0.05 && dtw_gap <= 0.05,
        format!("softSW - hardSW in [{lo:.2e}, {hi:.2e}], hardDTW - softDTW <= {dtw_gap:.2e}"),
    )
}

fn gradient_suite() -> (bool, String) {
    let cfg = GradcheckConfig {
        gamma: 0.8,
        trials: 20,
        tol: 1e-4,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg).unwrap();
    let worst = report.checks.iter().map(|c| c.max_error).fold(0.0, f64::max);
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let code = lac_align::cli::run(["lac", "gradcheck", "--gamma", "0.8", "--trials", "20", "--tol", "1e-4"]);
    (
        report.all_passed() && code == 0,
        format!("{} checks, worst rel err {worst:.2e}, cli exit {code}, failed {failed:?}", report.checks.len()),
    )
}

fn rand_sequence(rng: &mut ChaCha8Rng, t: usize, e: usize) -> EmbeddingSequence {
    let frames = Matrix::from_fn(t, e, |_, _| rng.random_range(-1.0..1.0));
    EmbeddingSequence::new(frames, (0..t).map(|i| 2 * i).collect(), "r").unwrap()
}

fn signs() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = Vec::new();
    for n in 0..100 {
        let (t1, t2) = (rng.random_range(1..10), rng.random_range(1..10));
        let s = rand_matrix(&mut rng, t1, t2);
        let gamma = rng.random_range(0.1..2.0);
        let p = rand_params(&mut rng, gamma);
        let g = sw_backward(&s, &p, &sw_forward(&s, &p).unwrap(), 1.0, None).unwrap();
        if g.d_gap_open > 0.0 || g.d_gap_extend > 0.0 || g.ds.min() < 0.0 {
            bad.push(format!("sw#{n}"));
        }
    }
    let (mut min_lc, mut min_ll) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let t = rng.random_range(2..10);
        let (z1, z2) = (rand_sequence(&mut rng, t, 4), rand_sequence(&mut rng, t, 4));
        let w = LacWeights::default();
        min_lc = min_lc.min(contrastive_loss(&z1, &z2, &w).unwrap().loss);
        let p = rand_params(&mut rng, 0.8);
        let (s12, s21) = (rand_matrix(&mut rng, t, t), rand_matrix(&mut rng, t, t));
        let lab = gaussian_labels(&z1, &z2, &w);
        let lc = local_consistency_loss(&sw_forward(&s12, &p).unwrap(), &sw_forward(&s21, &p).unwrap(), &lab, &w);
        min_ll = min_ll.min(lc.unwrap().loss);
    }
    (
        bad.is_empty() && min_lc >= 0.0 && min_ll >= 0.0,
        format!("sign violations {bad:?}, min l_c {min_lc:.3e}, min l_l {min_ll:.3e}"),
    )
}

fn labeled(frames: Matrix, labels: Vec<usize>, progress: Vec<f64>, id: &str) -> LabeledSequence {
    let t = frames.rows();
    LabeledSequence::new(EmbeddingSequence::new(frames, (0..t).collect(), id).unwrap(), labels, progress).unwrap()
}

fn ramp(t: usize) -> Vec<f64> {
    (0..t).map(|i| i as f64 / (t - 1) as f64).collect()
}

fn metric_suite() -> (bool, String) {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let f = Matrix::from_fn(16, 3, |_, _| rng.random_range(-1.0..1.0));
    let a = EmbeddingSequence::from_frames(f.clone()).unwrap();
    let r = EmbeddingSequence::from_frames(Matrix::from_fn(16, 3, |i, k| f[(15 - i, k)])).unwrap();
    let (ti, tr) = (kendall_tau(&a, &a).unwrap(), kendall_tau(&a, &r).unwrap());
    ok &= ti == 1.0 && tr == -1.0;
    notes.push(format!("tau id {ti} rev {tr}"));

    let single: Vec<_> = (0..3)
        .map(|i| labeled(Matrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0)), vec![0; 10], ramp(10), &format!("p{i}")))
        .collect();
    let ap1 = [1, 5, 15].map(|k| average_precision_at_k(&single, &single, k).unwrap());
    ok &= ap1.iter().all(|&v| v == 1.0);
    notes.push(format!("AP single-phase {ap1:?}"));

    let lin = |t: usize, id: &str| labeled(Matrix::from_fn(t, 1, |i, _| ramp(t)[i]), vec![0; t], ramp(t), id);
    let r2 = phase_progression(&[lin(20, "a"), lin(13, "b")], &[lin(9, "c")]).unwrap();
    ok &= (r2 - 1.0).abs() < 1e-12;
    notes.push(format!("R2 exact {r2}"));

    let noise = |rng: &mut ChaCha8Rng, t: usize, id: &str| {
        let frames = Matrix::from_fn(t, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..t).map(|_| rng.random_range(0..2)).collect();
        labeled(frames, labels, ramp(t), id)
    };
    let (mut acc, mut ap) = (0.0, 0.0);
    let seeds = 10;
    for s in 0..seeds {
        let tr: Vec<_> = (0..4).map(|i| noise(&mut rng, 200, &format!("a{i}"))).collect();
        let te: Vec<_> = (0..2).map(|i| noise(&mut rng, 200, &format!("b{i}"))).collect();
        acc += phase_classification(&tr, &te, 1.0, s).unwrap() / seeds as f64;
        ap += average_precision_at_k(&te, &te, 5).unwrap() / seeds as f64;
    }
    ok &= (acc - 0.5).abs() <= 0.1 && (ap - 0.5).abs() <= 0.1;
    notes.push(format!("random probe {acc:.3}, random AP@5 {ap:.3}"));

    let normal = Normal::new(0.0, 0.1).unwrap();
    let mut noisy = |t: usize, id: &str| {
        let p = ramp(t);
        let frames = Matrix::from_fn(t, 2, |i, k| [p[i], 1.0 - 2.0 * p[i]][k] + normal.sample(&mut rng));
        labeled(frames, vec![0; t], p, id)
    };
    let tr: Vec<_> = (0..4).map(|i| noisy(50, &format!("n{i}"))).collect();
    let te: Vec<_> = (0..2).map(|i| noisy(50, &format!("m{i}"))).collect();
    let r2n = phase_progression(&tr, &te).unwrap();
    ok &= r2n > 0.5 && r2n < 1.0;
    notes.push(format!("R2 noisy {r2n:.3}"));
    (ok, notes.join(", "))
}

fn embed(enc: &EncoderParams, data: &[LabeledSequence]) -> Vec<LabeledSequence> {
    data.iter().map(|s| enc.encode_labeled(s).unwrap()).collect()
}

fn dataset(seed: u64) -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
    generate_split(&ActionSpec::default(), 20, 6, seed).unwrap()
}

fn fit(train_set: &[LabeledSequence], cfg: &TrainConfig) -> lac_align::Result<TrainOutcome> {
    let seqs: Vec<EmbeddingSequence> = train_set.iter().map(|s| s.sequence.clone()).collect();
    train(&seqs, cfg)
}

fn class_at_full(enc: &EncoderParams, tr: &[LabeledSequence], te: &[LabeledSequence], seed: u64) -> f64 {
    phase_classification(&embed(enc, tr), &embed(enc, te), 1.0, seed).unwrap()
}

fn end_to_end() -> (bool, String) {
    let mut notes = Vec::new();
    let (tr, te) = dataset(7);
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let untrained = class_at_full(&cfg.initial_encoder(tr[0].sequence.dim()), &tr, &te, 7);
    let trained = class_at_full(&fit(&tr, &cfg).unwrap().checkpoint.encoder, &tr, &te, 7);
    let gain = trained - untrained;
    notes.push(format!("(a) seed 7 untrained {untrained:.4} trained {trained:.4} gain {gain:+.4}"));

    let (mut lac, mut con) = (0.0, 0.0);
    for seed in [7, 8, 9] {
        let (tr, te) = dataset(seed);
        for (mode, acc) in [(LossMode::LacFull, &mut lac), (LossMode::ContrastiveOnly, &mut con)] {
            let cfg = TrainConfig {
                seed,
                loss_mode: mode,
                ..TrainConfig::default()
            };
            *acc += class_at_full(&fit(&tr, &cfg).unwrap().checkpoint.encoder, &tr, &te, seed) / 3.0;
        }
    }
    notes.push(format!("(b) mean lac_full {lac:.4} contrastive_only {con:.4} margin {:+.4}", lac - con));
    (gain >= 0.15 && lac - con >= 0.0, notes.join("; "))
}

fn gamma_sweep() -> (bool, String) {
    let (tr, _) = dataset(7);
    let mut notes = Vec::new();
    let mut ok = true;
    for gamma in [0.6, 0.7, 0.8, 0.9] {
        let mut cfg = TrainConfig {
            seed: 7,
            ..TrainConfig::default()
        };
        cfg.alignment.gamma = gamma;
        match fit(&tr, &cfg) {
            Ok(out) => notes.push(format!("γ={gamma}: final total {:.4}", out.log.last().unwrap().mean.total)),
            Err(e) => {
                ok = false;
                notes.push(format!("γ={gamma}: {e}"));
            }
        }
    }
    (ok, notes.join(", "))
}

fn determinism() -> (bool, String) {
    let (tr, te) = dataset(7);
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let once = || {
        let out = fit(&tr, &cfg).unwrap();
        let enc = &out.checkpoint.encoder;
        let report = evaluate(&embed(enc, &tr), &embed(enc, &te), &DEFAULT_FRACTIONS, &DEFAULT_KS, 7).unwrap();
        (out.log_jsonl(), serde_json::to_string(&report).unwrap())
    };
    let (log_a, rep_a) = once();
    let (log_b, rep_b) = once();
    (
        log_a == log_b && rep_a == rep_b,
        format!("logs identical: {}, reports identical: {}", log_a == log_b, rep_a == rep_b),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run("1", "semiring oracle", secs(30), semiring_oracle),
        run("2", "hard-limit convergence", secs(10), hard_limit),
        run("3", "gradient suite", secs(60), gradient_suite),
        run("4", "sign and non-negativity", secs(60), signs),
        run("5", "metric unit suite", secs(60), metric_suite),
        run("6", "end-to-end synthetic training", secs(600), end_to_end),
        run("7", "gamma sweep", secs(600), gamma_sweep),
        run("8", "determinism", secs(600), determinism),
    ];
    println!();
    for c in &results {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {} {} ({:.2?}): {}", c.id, c.name, c.elapsed, c.detail);
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
