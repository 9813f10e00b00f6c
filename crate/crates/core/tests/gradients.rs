mod common;

use common::{check_all, instance, report};
use texsr::learn::PriorNet;
use texsr::solver::SolverConfig;

#[test]
fn five_iteration_instance_matches_finite_differences() {
    let inst = instance(SolverConfig::with_iters(5), (0.05, 0.3));
    let tally = check_all(&inst);
    report(&tally);
    assert_eq!(
        tally.checked + tally.excluded,
        16 * 16 + 2 + PriorNet::PARAM_COUNT
    );
    assert!(
        tally.failures.is_empty(),
        "{} mismatches",
        tally.failures.len()
    );
    assert!(
        tally.excluded * 20 < tally.checked,
        "too many kinks: {}",
        tally.excluded
    );
}

#[test]
fn large_step_instance_matches_finite_differences() {
    let solver = SolverConfig {
        eta: 0.5,
        tau: 0.5,
        ..SolverConfig::with_iters(5)
    };
    let inst = instance(solver, (0.05, 0.3));
    let tally = check_all(&inst);
    report(&tally);
    assert!(
        tally.failures.is_empty(),
        "{} mismatches",
        tally.failures.len()
    );
}

#[test]
fn saturated_duals_match_finite_differences() {
    let solver = SolverConfig {
        eta: 1.0,
        tau: 0.025,
        ..SolverConfig::with_iters(25)
    };
    let inst = instance(solver, (0.5, 2.0));
    let trace = texsr::solver::run_unrolled(
        &inst.set.samples[0].init,
        &inst.set.samples[0].views,
        &inst.set.samples[0].chains,
        &inst.params.lambda(),
        Some(&inst.params.sigmas()),
        &SolverConfig {
            record_states: true,
            ..solver
        },
    )
    .unwrap()
    .trace
    .unwrap();
    let saturated = trace.active_set().iter().filter(|&&a| a).count();
    eprintln!("saturated duals across all steps: {saturated}");
    assert!(
        saturated > 0,
        "instance never reaches a projection boundary"
    );
    let tally = check_all(&inst);
    report(&tally);
    assert!(
        tally.failures.is_empty(),
        "{} mismatches",
        tally.failures.len()
    );
}
