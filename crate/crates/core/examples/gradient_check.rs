//! Runs the finite-difference suite over every analytic gradient.
//!
//! ```text
//! cargo run --example gradient_check -- 0.5
//! ```

use lac_align::gradcheck::{run_gradcheck, GradcheckConfig};

fn main() -> lac_align::Result<()> {
    let gamma = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let report = run_gradcheck(&GradcheckConfig {
        gamma,
        ..GradcheckConfig::default()
    })?;
    print!("{report}");
    println!("{}", if report.all_passed() { "all gradients agree" } else { "gradient mismatch" });
    Ok(())
}
