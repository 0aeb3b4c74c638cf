//! Runs every invariant suite and prints one line per check.

use std::time::Instant;

use fmamba::selfcheck::{run, Suite};

fn main() {
    let mut failed = 0;
    for suite in Suite::ALL {
        let start = Instant::now();
        for outcome in run(&[suite], None) {
            failed += usize::from(!outcome.passed);
            println!("{outcome}");
        }
        println!("-- {suite} in {:.1?}", start.elapsed());
    }
    println!("{failed} failing");
}
