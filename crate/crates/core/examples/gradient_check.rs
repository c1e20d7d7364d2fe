//! Runs the self-check suite and prints every measured error.
//!
//! `cargo run --example gradient_check -- full` for the 20-instance version.

use metacomm::harness::{run_gradcheck, Scale};

fn main() {
    let scale = match std::env::args().nth(1).as_deref() {
        Some("full") => Scale::Full,
        _ => Scale::Small,
    };
    let start = std::time::Instant::now();
    match run_gradcheck(scale) {
        Ok(report) => {
            println!("{report}");
            println!("{:.2}s", start.elapsed().as_secs_f64());
            if !report.passed() {
                std::process::exit(3);
            }
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
