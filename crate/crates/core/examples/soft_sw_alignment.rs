//! Smooth local alignment of two warped synthetic sequences: the soft score,
//! the expected alignment matrix, and the hard traceback for comparison.
//!
//! ```text
//! cargo run --example soft_sw_alignment
//! ```

use lac_align::softsw::{sw_backward, sw_forward, sw_hard};
use lac_align::synth::{generate_pair, ActionSpec};
use lac_align::{build_similarity, AlignmentParams, SimilarityMode};

fn main() -> lac_align::Result<()> {
    let spec = ActionSpec {
        length: 24,
        nuisance_dims: 0,
        noise_sigma: 0.02,
        ..ActionSpec::default()
    };
    let (a, b) = generate_pair(&spec, 11)?;
    let params = AlignmentParams::default();
    let s = build_similarity(&a.sequence, &b.sequence, SimilarityMode::NegEuclideanZNorm)?.values;

    let tables = sw_forward(&s, &params)?;
    let grads = sw_backward(&s, &params, &tables, 1.0, None)?;
    let hard = sw_hard(&s, params.gap_open, params.gap_extend)?;
    println!("soft score {:.4}, hard score {:.4}", tables.score, hard.score);
    println!("dscore/dgap_open {:.4}, dscore/dgap_extend {:.4}", grads.d_gap_open, grads.d_gap_extend);

    // Shade cells by expected occupancy and mark the hard path.
    let e = grads.expected_alignment();
    let on_path = |i: usize, j: usize| hard.path.iter().any(|c| c.i == i && c.j == j);
    let shades = [' ', '.', ':', '+', '#'];
    for i in 0..e.rows() {
        let row: String = (0..e.cols())
            .map(|j| {
                if on_path(i, j) {
                    'o'
                } else {
                    shades[((e[(i, j)] * 4.0).round() as usize).min(4)]
                }
            })
            .collect();
        println!("|{row}| phase {}", a.phase_labels[i]);
    }
    Ok(())
}
