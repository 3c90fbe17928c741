use proptest::prelude::*;
use qtime_core::krotov::{
    backward_sweep, cycle, forward_sweep, global_phase, seed_random_field, solve,
    ConvergenceCriteria, Initial, KrotovState,
};
use qtime_core::pauli::enumerate_basis;
use qtime_core::propagation::{TimeGrid, T2_MAX};
use qtime_core::targets::named_target;

fn target_for(n: usize, pick: usize) -> &'static str {
    match (n, pick % 2) {
        (2, 0) => "cnot",
        (_, 0) => "qft",
        _ => "asym",
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    /// Squared fidelity never drops by more than 1e-10 across a cycle, and
    /// every slice stays on the sphere after every half-sweep.
    #[test]
    fn cycles_are_monotone_and_normalized(
        n in 1usize..=3,
        pick in 0usize..2,
        seed in any::<u64>(),
        t_rel in 0.2f64..1.6,
    ) {
        let basis = enumerate_basis(n).unwrap();
        let u_f = named_target(target_for(n, pick), n).unwrap().matrix;
        let slices = if n == 3 { 24 } else { 60 };
        let grid = TimeGrid::new(t_rel * T2_MAX, slices).unwrap();
        let field = seed_random_field(grid, &basis, seed, 1.0).unwrap();
        let mut state = KrotovState::from_field(field, &basis, &u_f).unwrap();
        let criteria = ConvergenceCriteria::default();
        let cycles = if n == 3 { 4 } else { 8 };
        for _ in 0..cycles {
            let before = state.fidelity;
            backward_sweep(&mut state, &u_f, &basis, &criteria).unwrap();
            prop_assert!(state.field.normalization_error() < 1e-10);
            forward_sweep(&mut state, &u_f, &basis, &criteria).unwrap();
            prop_assert!(state.field.normalization_error() < 1e-10);
            let after = state.fidelity;
            prop_assert!(
                after * after >= before * before - 1e-10,
                "F {} -> {}", before, after
            );
        }
    }
}

#[test]
fn reports_flag_no_violations_over_a_full_solve() {
    let basis = enumerate_basis(2).unwrap();
    let u_f = named_target("qft", 2).unwrap().matrix;
    let grid = TimeGrid::from_relative(0.6).unwrap();
    let criteria = ConvergenceCriteria {
        max_cycles: 300,
        ..Default::default()
    };
    let out = solve(&u_f, grid, &basis, Initial::Seed(21), &criteria).unwrap();
    assert!(out.reports.iter().all(|r| !r.violation));
    let mut prev = out.initial_fidelity;
    for r in &out.reports {
        assert_eq!(r.fidelity_before, prev);
        prev = r.fidelity_after;
    }
}

#[test]
fn global_phase_leaves_fidelity_sequence_unchanged() {
    let basis = enumerate_basis(2).unwrap();
    let u_f = named_target("asym", 2).unwrap().matrix;
    let shifted = &u_f * global_phase(1.234);
    let grid = TimeGrid::new(0.7 * T2_MAX, 80).unwrap();
    let criteria = ConvergenceCriteria::default();
    let start = seed_random_field(grid, &basis, 8, 1.0).unwrap();
    let mut a = KrotovState::from_field(start.clone(), &basis, &u_f).unwrap();
    let mut b = KrotovState::from_field(start, &basis, &shifted).unwrap();
    for i in 0..8 {
        let ra = cycle(&mut a, &u_f, &basis, &criteria, i).unwrap();
        let rb = cycle(&mut b, &shifted, &basis, &criteria, i).unwrap();
        assert!((ra.fidelity_after - rb.fidelity_after).abs() < 1e-10);
        if i == 0 {
            let diff = a
                .field
                .values()
                .iter()
                .zip(b.field.values())
                .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
            assert!(diff < 1e-9, "field differs by {diff:e} after one cycle");
        }
    }
}
