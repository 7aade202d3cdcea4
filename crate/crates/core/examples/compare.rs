//! Paired multi-fidelity vs. high-fidelity-only comparison on the built-in
//! test problems.
//!
//! ```text
//! cargo run --release -p mfsurrogate --example compare -- nonlinear 10
//! ```

use std::time::Instant;

use mfsurrogate::bench::{run_benchmark, BenchCase, LinearPairSpec, NonlinearPairSpec};
use mfsurrogate::{MpinnConfig, TrainConfig};

fn main() -> mfsurrogate::Result<()> {
    let mut args = std::env::args().skip(1);
    let case = args.next().unwrap_or_else(|| "nonlinear".into());
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let (case, budget) = match case.as_str() {
        "linear" => (BenchCase::Linear(LinearPairSpec::default()), 10),
        _ => (BenchCase::Nonlinear(NonlinearPairSpec::default()), 8),
    };
    let cfg = TrainConfig {
        hf_budget: Some(budget),
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let start = Instant::now();
    let table = run_benchmark(&case, &MpinnConfig::default(), &cfg, &seeds)?;
    print!("{}", table.summary());
    println!("elapsed: {:.1?}", start.elapsed());
    Ok(())
}
