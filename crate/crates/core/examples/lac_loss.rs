//! The loss breakdown for one pair of embedded sequences under every loss mode.
//!
//! ```text
//! cargo run --example lac_loss
//! ```

use lac_align::losses::{lac_objective, LacWeights, LossMode};
use lac_align::synth::{generate_pair, temporal_random_crop, ActionSpec};
use lac_align::AlignmentParams;

fn main() -> lac_align::Result<()> {
    let (a, b) = generate_pair(&ActionSpec::default(), 2)?;
    let (a, b) = (temporal_random_crop(&a, 32, 0)?, temporal_random_crop(&b, 32, 1)?);
    let params = AlignmentParams::default();
    let weights = LacWeights::default();
    println!("{:<22} {:>8} {:>8} {:>9} {:>9} {:>8}", "mode", "l_c", "l_l", "l_sw12", "l_sw21", "total");
    for mode in [
        LossMode::LacFull,
        LossMode::ContrastiveOnly,
        LossMode::ContrastivePlusLl,
        LossMode::SoftdtwBaseline,
    ] {
        let (l, g) = lac_objective(&a.sequence, &b.sequence, &params, &weights, mode)?;
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>9.3} {:>9.3} {:>8.4}   |dz1| {:.3}",
            format!("{mode:?}"),
            l.l_c,
            l.l_l,
            l.l_sw12,
            l.l_sw21,
            l.total,
            g.d_z1.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
        );
    }
    Ok(())
}
