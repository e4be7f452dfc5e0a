//! The full metric report (phase classification at several label fractions,
//! AP@K, progress regression, Kendall's tau) for raw observations, an
//! untrained encoder and a trained one.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use lac_align::eval::{evaluate, DEFAULT_FRACTIONS, DEFAULT_KS};
use lac_align::synth::{generate_split, ActionSpec};
use lac_align::trainer::{train, EncoderParams, TrainConfig};
use lac_align::LabeledSequence;

fn main() -> lac_align::Result<()> {
    let seed = 7;
    let (train_set, test_set) = generate_split(&ActionSpec::default(), 20, 6, seed)?;
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let seqs: Vec<_> = train_set.iter().map(|s| s.sequence.clone()).collect();
    let trained = train(&seqs, &cfg)?.checkpoint.encoder;
    let untrained = cfg.initial_encoder(seqs[0].dim());

    let embed = |enc: &EncoderParams, d: &[LabeledSequence]| d.iter().map(|s| enc.encode_labeled(s)).collect::<lac_align::Result<Vec<_>>>();
    let raw = evaluate(&train_set, &test_set, &DEFAULT_FRACTIONS, &DEFAULT_KS, seed)?;
    println!("raw observations\n{}\n", raw.table());
    for (name, enc) in [("untrained encoder", &untrained), ("trained encoder", &trained)] {
        let r = evaluate(&embed(enc, &train_set)?, &embed(enc, &test_set)?, &DEFAULT_FRACTIONS, &DEFAULT_KS, seed)?;
        println!("{name}\n{}\n", r.table());
    }
    Ok(())
}
