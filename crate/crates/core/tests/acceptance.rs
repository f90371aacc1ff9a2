//! One PASS/FAIL line per acceptance criterion; exits non-zero on any FAIL.

use potwell::acceptance::{run_criterion, CRITERIA};

fn main() {
    let seed = std::env::var("POTWELL_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(20240601);
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for id in 1..=CRITERIA.len() {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let r = run_criterion(id, seed);
        println!("{}", r.line());
        failed += usize::from(!r.pass);
    }
    println!("acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
