//! Trains the encoder on the default synthetic set and compares phase
//! classification before and after training, for the full objective and the
//! contrastive-only ablation.
//!
//! ```text
//! cargo run --release --example train_encoder -- 7
//! ```

use lac_align::eval::phase_classification;
use lac_align::losses::LossMode;
use lac_align::synth::{generate_split, ActionSpec};
use lac_align::trainer::{train, EncoderParams, TrainConfig};
use lac_align::{EmbeddingSequence, LabeledSequence};

fn accuracy(enc: &EncoderParams, train: &[LabeledSequence], test: &[LabeledSequence], seed: u64) -> lac_align::Result<f64> {
    let embed = |d: &[LabeledSequence]| d.iter().map(|s| enc.encode_labeled(s)).collect::<lac_align::Result<Vec<_>>>();
    phase_classification(&embed(train)?, &embed(test)?, 1.0, seed)
}

fn main() -> lac_align::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let (train_set, test_set) = generate_split(&ActionSpec::default(), 20, 6, seed)?;
    let seqs: Vec<EmbeddingSequence> = train_set.iter().map(|s| s.sequence.clone()).collect();

    let base = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let untrained = accuracy(&base.initial_encoder(seqs[0].dim()), &train_set, &test_set, seed)?;
    println!("untrained encoder: Class@100 {:.2}", untrained * 100.0);

    for mode in [LossMode::LacFull, LossMode::ContrastiveOnly] {
        let cfg = TrainConfig {
            loss_mode: mode,
            ..base.clone()
        };
        let out = train(&seqs, &cfg)?;
        let first = out.log.first().map_or(f64::NAN, |r| r.mean.total);
        let last = out.log.last().map_or(f64::NAN, |r| r.mean.total);
        let acc = accuracy(&out.checkpoint.encoder, &train_set, &test_set, seed)?;
        println!("{mode:?}: loss {first:.3} -> {last:.3}, Class@100 {:.2}", acc * 100.0);
    }
    Ok(())
}
