use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

use sparse_ddp::analysis::{check_derivatives, SparsityReport};
use sparse_ddp::config::ProblemConfig;
use sparse_ddp::dynamics::{so3, SatelliteModel, SatelliteParams, SystemModel};
use sparse_ddp::prelude::*;

fn shipped() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_build_and_round_trip() {
    let files = shipped();
    assert!(files.len() >= 8);
    for path in files {
        let config = ProblemConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(config.description.is_some(), "{} lacks a description", path.display());
        let again = ProblemConfig::from_toml_str(&config.to_toml_string().unwrap()).unwrap();
        assert_eq!(config, again);
        let problem = config.build_problem().unwrap();
        let traj = problem.rollout(problem.zero_controls()).unwrap();
        assert_eq!(traj.knots(), config.system.knots);
    }
}

#[test]
fn arm_reach_config_solves_and_checks() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/arm_reach.toml");
    let config = ProblemConfig::load(&path).unwrap();
    let problem = config.build_problem().unwrap();
    assert!(check_derivatives(&problem).unwrap().passed);
    let result = problem.solve(&config.solver).unwrap();
    assert!(result.converged);
    let report = SparsityReport::for_solve(&problem, &result);
    assert_eq!(report.total_count, 6 * 49);
    assert!(result.cost.total < problem.cost(&problem.rollout(problem.zero_controls()).unwrap()).unwrap().total);
}

fn small_problem(kind: LossKind, beta: f64, lambda: f64) -> Problem {
    let arm = ArmModel::new(vec![0.4, 0.3], 0.1, vec![1.5, 1.5]).unwrap();
    let state = QuadraticStateCost::new(
        DVector::from_element(4, 0.1),
        DVector::from_element(4, 50.0),
        ReferenceSchedule::constant(DVector::from_vec(vec![0.8, -0.5, 0.0, 0.0])),
    )
    .unwrap();
    Problem::new(
        std::sync::Arc::new(arm),
        CostBundle::new(state, LossSpec::new(kind, beta, lambda).unwrap()),
        DVector::zeros(4),
        15,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn solve_never_increases_cost_and_respects_bounds(
        kind_index in 0usize..4,
        beta in 0.01f64..2.0,
        lambda in 0.0f64..1.0,
    ) {
        let problem = small_problem(LossKind::ALL[kind_index], beta, lambda);
        let initial = problem.cost(&problem.rollout(problem.zero_controls()).unwrap()).unwrap().total;
        let result = problem.solve(&SolverConfig { max_iterations: 60, ..SolverConfig::default() }).unwrap();
        prop_assert!(result.cost.total <= initial + 1e-12);
        for w in result.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        for u in &result.trajectory.controls {
            prop_assert!(u.iter().all(|v| v.abs() <= 1.5));
        }
    }

    #[test]
    fn satellite_quaternion_stays_unit(
        wx in -0.5f64..0.5, wy in -0.5f64..0.5, wz in -0.5f64..0.5,
        thrust in proptest::collection::vec(0.0f64..50.0, 18),
    ) {
        let model = SatelliteModel::new(SatelliteParams::default(), 0.1).unwrap();
        let mut x = SatelliteModel::state(Vector3::zeros(), so3::identity(), Vector3::zeros(), Vector3::new(wx, wy, wz));
        let u = DVector::from_vec(thrust);
        for _ in 0..50 {
            x = model.step(&x, &u).unwrap();
        }
        prop_assert!((x.fixed_rows::<4>(3).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_diff_inverts_integrate(
        d in proptest::collection::vec(-0.5f64..0.5, 12),
    ) {
        let model = SatelliteModel::new(SatelliteParams::default(), 0.1).unwrap();
        let x = SatelliteModel::state(
            Vector3::new(1.0, 2.0, 3.0),
            so3::exp(&Vector3::new(0.3, -0.1, 0.2)),
            Vector3::new(0.1, 0.0, -0.1),
            Vector3::new(0.0, 0.05, 0.0),
        );
        let dx = DVector::from_vec(d);
        let y = model.integrate(&x, &dx).unwrap();
        let back = model.state_diff(&y, &x).unwrap();
        prop_assert!((back - dx).amax() < 1e-12);
    }
}
