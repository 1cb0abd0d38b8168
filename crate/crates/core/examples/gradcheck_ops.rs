//! Finite-difference check of every differentiable operation at one seed.

use stainrestorer::gradsuite::run_suite;
use stainrestorer::GradcheckConfig;

fn main() -> stainrestorer::Result<()> {
    let cfg = GradcheckConfig::default().with_max_coords(100);
    for case in run_suite(&[0], &cfg)? {
        println!(
            "{:<20} {:>4} coords  max rel err {:.2e}  {}",
            case.op,
            case.report.coords_checked,
            case.report.max_rel_err,
            if case.report.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
