//! Runs one benchmark trial and prints the per-algorithm scores.
//!
//! `cargo run --release -p warpsep --example trial -- <seed>`
//!
//! `TRIAL_GENERATOR` and `TRIAL_SEPARATOR` may hold JSON overrides of the
//! generator and separator settings.

use std::time::Instant;

use warpsep::benchmark::{run_trial, BenchmarkConfig};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut cfg = BenchmarkConfig::default();
    if let Ok(g) = std::env::var("TRIAL_GENERATOR") {
        cfg.generator = serde_json::from_str(&g).expect("generator JSON");
    }
    if let Ok(g) = std::env::var("TRIAL_SEPARATOR") {
        cfg.separator = serde_json::from_str(&g).expect("separator JSON");
    }
    let start = Instant::now();
    let r = run_trial(&cfg, seed);
    println!("{}", serde_json::to_string_pretty(&r).unwrap());
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
}
