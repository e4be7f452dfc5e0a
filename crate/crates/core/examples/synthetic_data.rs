//! Generates a small paired dataset, writes it in the CSV/manifest layout the
//! command line reads, and shows one temporal crop.
//!
//! ```text
//! cargo run --example synthetic_data -- /tmp/lac-data
//! ```

use std::path::PathBuf;

use lac_align::io::{load_labeled, write_dataset};
use lac_align::synth::{generate_split, temporal_random_crop, ActionSpec};

fn main() -> lac_align::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lac-data"));
    let spec = ActionSpec::default();
    let (train, test) = generate_split(&spec, 4, 1, 0)?;
    let manifest = write_dataset(&out, "manifest.json", &train)?;
    write_dataset(&out, "test_manifest.json", &test)?;
    println!("wrote {} sequences to {}", train.len(), manifest.display());

    let back = load_labeled(&manifest)?;
    let s = &back[0];
    let phases: String = s.phase_labels.iter().map(|p| char::from(b'0' + *p as u8)).collect();
    println!("{}: {} frames x {} features", s.sequence.source_id(), s.sequence.len(), s.sequence.dim());
    println!("phases   {phases}");

    let crop = temporal_random_crop(s, 16, 3)?;
    println!("crop idx {:?}", crop.sequence.indices());
    println!("progress {:?}", crop.progress.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>());
    Ok(())
}
