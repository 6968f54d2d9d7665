//! Acceptance criteria. Prints one line per criterion and fails if any
//! criterion fails or reports a tolerance other than the pinned one.

use fdelay_cli::verify::{run_criterion, Relation, CRITERIA};

use Relation::{Ge, Le};

/// `(criterion, check label, tolerance, relation)`.
const PINNED: &[(u32, &str, f64, Relation)] = &[
    (1, "max|dd f|/scale", 1e-10, Le),
    (1, "seconds", 1.0, Le),
    (2, "slope", 0.4, Ge),
    (2, "seconds", 10.0, Le),
    (3, "smooth residual/dt", 5.0, Le),
    (3, "fBm refinement ratio", 1.3, Ge),
    (4, "chain-rule refinement ratio", 1.3, Ge),
    (4, "Fubini refinement ratio", 1.3, Ge),
    (4, "|lhs - 1/8|", 1e-3, Le),
    (4, "|rhs - 1/8|", 1e-3, Le),
    (5, "H=0.5 max z", 4.0, Le),
    (5, "H=0.6 max z", 4.0, Le),
    (5, "H=0.75 max z", 4.0, Le),
    (5, "H=0.9 max z", 4.0, Le),
    (5, "seconds", 30.0, Le),
    (6, "max relative error", 1e-3, Le),
    (7, "solve_delay error/dt", 10.0, Le),
    (7, "method_of_steps error/dt", 10.0, Le),
    (7, "fBm refinement ratio", 1.3, Ge),
    (8, "constant case relative error", 1e-12, Le),
    (8, "finite-difference relative error", 1e-2, Le),
    (8, "representation relative error", 1e-2, Le),
    (9, "constant case relative error", 1e-2, Le),
    (9, "|slope - 2H|", 0.05, Le),
    (9, "paths with lambda_min(Q_1) > 0", 100.0, Ge),
    (9, "lower-bound failures", 0.0, Le),
    (9, "min lambda_min(Q_1)", f64::MIN_POSITIVE, Ge),
    (10, "max deviation", 0.02, Le),
    (10, "bandwidth halving sup change", 0.05, Le),
    (11, "|(16 H0 - 7)^2 - 17|", 1e-12, Le),
    (11, "|H0 - 0.6951|", 1e-4, Le),
    (11, "H=0.70 not smooth", 0.0, Le),
    (11, "H=0.69 not existence-only", 0.0, Le),
    (12, "csv files", 9.0, Ge),
    (12, "repeat differs", 0.0, Le),
    (12, "threads 1 vs 8 differ", 0.0, Le),
];

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut failed = Vec::new();
    for (id, name) in CRITERIA {
        let report = match run_criterion(id, dir.path()) {
            Ok(r) => r,
            Err(e) => {
                println!("[FAIL] {id:>2} {name}: error: {e}");
                failed.push(id);
                continue;
            }
        };
        let pinned: Vec<_> = PINNED.iter().filter(|p| p.0 == id).collect();
        let mut mismatch = Vec::new();
        if pinned.len() != report.checks.len() {
            mismatch.push(format!("{} checks, {} pinned", report.checks.len(), pinned.len()));
        }
        for check in &report.checks {
            let ok = pinned.iter().any(|p| {
                p.1 == check.label && p.2 == check.tolerance && p.3 == check.relation
            });
            if !ok {
                mismatch.push(format!("unpinned check {:?}", check.label));
            }
            let holds = match check.relation {
                Le => check.measured <= check.tolerance,
                Ge => check.measured >= check.tolerance,
            };
            if holds != check.pass {
                mismatch.push(format!("inconsistent pass flag on {:?}", check.label));
            }
        }
        println!("{}", report.line());
        if !mismatch.is_empty() {
            println!("       tolerance mismatch: {}", mismatch.join("; "));
        }
        if !report.pass || !mismatch.is_empty() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", CRITERIA.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
