//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when
//! output capture would hide it. Exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::Check;

type Criterion = (usize, &'static str, fn() -> Check);

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let criteria: [Criterion; 10] = [
        (1, "fusion algebra", common::fusion_algebra),
        (2, "gradient suite", common::gradient_suite),
        (3, "tv oracle", common::tv_exhaustive),
        (4, "objective arithmetic and r schedule", common::objective_arithmetic),
        (5, "replay pool", common::pool_behaviour),
        (6, "determinism and resume", common::determinism),
        (7, "synthetic training progress", common::training_progress),
        (8, "mse/psnr metrics", common::metrics_cases),
        (9, "ablation wiring", common::ablation_wiring),
        (10, "architecture conformance", common::architecture),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(s) => println!("criterion {id:>2} PASS  {name}: {s} [{:.1?}]", t0.elapsed()),
            Err(e) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {e} [{:.1?}]", t0.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
