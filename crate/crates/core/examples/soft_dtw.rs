//! Soft-DTW between two sequences as the global-alignment baseline.
//!
//! ```text
//! cargo run --example soft_dtw
//! ```

use lac_align::softdtw::{dtw_backward, dtw_forward, dtw_hard};
use lac_align::synth::{generate_pair, ActionSpec};
use lac_align::{build_similarity, SimilarityMode};

fn main() -> lac_align::Result<()> {
    let spec = ActionSpec {
        length: 16,
        nuisance_dims: 0,
        ..ActionSpec::default()
    };
    let (a, b) = generate_pair(&spec, 4)?;
    let cost = build_similarity(&a.sequence, &b.sequence, SimilarityMode::NegEuclideanZNorm)?
        .values
        .map(|v| -v);
    let (hard, path) = dtw_hard(&cost)?;
    println!("hard DTW {hard:.4} over {} cells", path.len());
    for gamma in [1.0, 0.1, 0.01] {
        let t = dtw_forward(&cost, gamma)?;
        let occ = dtw_backward(&cost, gamma, &t)?;
        let on_path: f64 = path.iter().map(|&(i, j)| occ[(i, j)]).sum();
        println!("gamma {gamma:>5}: soft DTW {:.4}, occupancy on hard path {:.3} of {:.3}", t.cost, on_path, occ.sum());
    }
    Ok(())
}
