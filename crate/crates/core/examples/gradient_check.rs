//! Central finite differences against every hand-written backward pass.

use wtformer_lab::gradcheck::grad_check_all;

fn main() -> wtformer_lab::Result<()> {
    for r in grad_check_all(0)? {
        println!(
            "{:<11} {:.2e} over {:>3} coordinates ({}) {}",
            r.block.as_str(),
            r.max_rel_error,
            r.coordinates,
            r.worst,
            if r.passed { "ok" } else { "FAILED" }
        );
    }
    Ok(())
}
