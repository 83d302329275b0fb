//! `gradcheck`: run every finite-difference gradient suite and report the
//! worst relative error per family. Exit 0 iff all families pass; exit 1 on
//! a numeric failure.

use std::process::ExitCode;

use clap::{Args, ValueEnum};
use tilt_rectify::gradcheck::{run_gradcheck_with_fault, FaultInjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Flip the sign of the L2 gradient; the audit must then fail.
    SignFlip,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Random instances per gradient family.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Deliberately break one gradient to verify the audit catches it.
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,
}

pub fn run(args: GradcheckArgs) -> ExitCode {
    if args.trials == 0 {
        eprintln!("error: usage error: --trials must be at least 1");
        return ExitCode::from(2);
    }
    let fault = match args.inject_fault {
        Some(Fault::SignFlip) => FaultInjection::FlipL2Sign,
        None => FaultInjection::None,
    };
    let report = run_gradcheck_with_fault(args.trials, args.seed, fault);
    for item in &report.items {
        println!(
            "{:<22} max rel err {:>12.3e}  (tolerance {:>8.0e}, {} trials)  {}",
            item.name,
            item.max_rel_err,
            item.tolerance,
            item.trials,
            if item.passed() { "ok" } else { "FAIL" }
        );
    }
    if report.all_passed() {
        println!("gradcheck: all gradients within tolerance");
        ExitCode::SUCCESS
    } else {
        println!("gradcheck: FAILED");
        ExitCode::from(1)
    }
}
