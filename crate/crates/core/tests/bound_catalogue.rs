use bridgelab_core::bridge::solve_bridge_shooting;
use bridgelab_core::{verify_bounds, BoundCase, BoundId, Potential, SolverOptions};
use std::collections::BTreeSet;

fn run(p: &Potential, x: &[f64], y: &[f64], horizon: f64) -> Vec<bridgelab_core::BoundReport> {
    let sol = solve_bridge_shooting(p, x, y, horizon, &SolverOptions::default()).unwrap();
    let case = BoundCase {
        times: vec![0.25 * horizon, 0.5 * horizon, 0.75 * horizon],
        thetas: (1..10).map(|i| i as f64 / 10.0).collect(),
        ..BoundCase::new(p, &sol)
    };
    verify_bounds(&case).unwrap()
}

#[test]
fn catalogue_passes_on_builtin_grid() {
    let mut seen = BTreeSet::new();
    for horizon in [2.0, 5.0, 10.0, 20.0] {
        for (p, x, y) in [
            (Potential::neg_log(1), vec![1.0], vec![1.0]),
            (Potential::neg_log(1), vec![0.5], vec![2.0]),
            (Potential::neg_log(2), vec![1.0, 3.0], vec![2.0, 0.5]),
            (Potential::quadratic(1), vec![2.0], vec![1.0]),
            (Potential::quadratic(1), vec![1.0], vec![1.0]),
            (Potential::quadratic(2), vec![-1.0, 0.5], vec![3.0, 0.0]),
        ] {
            for r in run(&p, &x, &y, horizon) {
                assert!(r.pass, "{r:?}");
                seen.insert(r.bound_id);
            }
        }
    }
    assert_eq!(seen.len(), BoundId::ALL.len());
}

#[test]
fn turnpike_bound_is_consistent_with_energy_bound() {
    let p = Potential::neg_log(1);
    let reports = run(&p, &[1.0], &[1.0], 10.0);
    let b3_mid = reports.iter().find(|r| r.bound_id == BoundId::B3 && r.context.theta == Some(0.5)).unwrap();
    let b1 = reports.iter().find(|r| r.bound_id == BoundId::B1 && r.part.as_deref() == Some("energy")).unwrap();
    assert!((b3_mid.rhs - b1.rhs).abs() < 1e-12);
    // At the midpoint of an equal-endpoint bridge, |F'|² = −E.
    assert!((b3_mid.lhs - b1.lhs).abs() < 1e-6);
}

#[test]
fn matrix_potential_uses_rho_bounds() {
    let p = Potential::quadratic_matrix(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let reports = run(&p, &[1.0, -1.0], &[0.5, 2.0], 4.0);
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.pass), "{:?}", reports.iter().find(|r| !r.pass));
}
