//! How the temperature controls the smooth maximum and its gradient.
//!
//! ```text
//! cargo run --example smooth_max
//! ```

use lac_align::smoothops::smooth_max;

fn main() -> lac_align::Result<()> {
    let scores = [1.0, 0.8, -0.5, 0.2];
    println!("inputs {scores:?}, hard max 1.0");
    for gamma in [2.0, 0.8, 0.3, 0.05, 1e-3] {
        let r = smooth_max(&scores, gamma)?;
        let w: Vec<String> = r.weights.iter().map(|w| format!("{w:.3}")).collect();
        println!("gamma {gamma:>6}: value {:>8.5}  weights [{}]", r.value, w.join(", "));
    }
    Ok(())
}
