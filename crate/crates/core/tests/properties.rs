//! Randomized invariants across grid, Hamiltonian, operator, solver and
//! measure layers.

use ergodic_core::eigensolver::BoundaryMode;
use ergodic_core::grid::{advect_upwind, gradient_central, laplacian, norm};
use ergodic_core::hamiltonian::{DriftSpec, DEFAULT_EPS_GRAD};
use ergodic_core::lp::{assemble_lp, feasibility_violation, uniform_xi_grid};
use ergodic_core::measure::{pair_measure, stationary_density};
use ergodic_core::operator::{assemble, Closure};
use ergodic_core::*;
use proptest::prelude::*;
use proptest::test_runner::Config;

fn cases(n: u32) -> Config {
    Config { cases: n, failure_persistence: None, ..Config::default() }
}

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (1usize..=2, 0.1f64..0.5, 4usize..12).prop_map(|(d, h, n)| Grid::new(d, h * n as f64, h).unwrap())
}

fn model_strategy() -> impl Strategy<Value = HamiltonianModel> {
    prop_oneof![
        (1.1f64..4.0).prop_map(|g| HamiltonianModel::pure_power(g).unwrap()),
        (1.1f64..4.0, -2.0f64..2.0, -2.0f64..2.0)
            .prop_map(|(g, a, b)| HamiltonianModel::drift_power(g, DriftSpec::Constant { b: [a, b] }).unwrap()),
        (1.1f64..4.0, 0.1f64..2.0, 0.2f64..3.0).prop_map(|(g, a, s)| {
            HamiltonianModel::drift_power(g, DriftSpec::Tanh { amplitude: [a, -a], scale: s }).unwrap()
        }),
    ]
}

fn vec2() -> impl Strategy<Value = Vector> {
    [-10.0f64..10.0, -10.0f64..10.0]
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn stencils_exact_on_low_degree_polynomials(
        grid in grid_strategy(),
        c in prop::array::uniform6(-3.0f64..3.0),
    ) {
        let q = |x: &Vector| c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[0] * x[0] + c[4] * x[0] * x[1] + c[5] * x[1] * x[1];
        let exact_lap = if grid.dim() == 1 { 2.0 * c[3] } else { 2.0 * (c[3] + c[5]) };
        let lin = |x: &Vector| c[0] + c[1] * x[0] + c[2] * x[1];
        let q1 = |x: &Vector| if grid.dim() == 1 { c[0] + c[1] * x[0] + c[3] * x[0] * x[0] } else { q(x) };
        let lap = laplacian(&ScalarField::from_fn(&grid, q1), &grid);
        let grad = gradient_central(&ScalarField::from_fn(&grid, lin), &grid);
        // Second differences cancel digits: roundoff scales like max|q| / h².
        let h = grid.spacing();
        let qmax = (0..grid.node_count()).map(|n| q1(&grid.coords(n)).abs()).fold(0.0, f64::max);
        let lap_tol = 1e-12 * (1.0 + qmax / (h * h));
        for &n in grid.interior_nodes() {
            prop_assert!((lap.values[n] - exact_lap).abs() <= lap_tol);
            prop_assert!((grad.values[n][0] - c[1]).abs() <= 1e-12 * (1.0 + qmax / h));
            if grid.dim() == 2 {
                prop_assert!((grad.values[n][1] - c[2]).abs() <= 1e-12 * (1.0 + qmax / h));
            }
        }
    }

    #[test]
    fn upwind_advection_of_coordinate_sum(grid in grid_strategy(), a in vec2(), b in vec2()) {
        let sum = ScalarField::from_fn(&grid, |x| x[0] + x[1]);
        let drift = VectorField::from_fn(&grid, |x| [a[0] + b[0] * x[0].sin(), a[1] + b[1] * x[1].cos()]);
        let adv = advect_upwind(&sum, &drift, &grid);
        for &n in grid.interior_nodes() {
            let w = drift.values[n];
            let expected = if grid.dim() == 1 { w[0] } else { w[0] + w[1] };
            prop_assert!((adv.values[n] - expected).abs() <= 1e-12 * (1.0 + expected.abs()) * 10.0);
        }
    }

    #[test]
    fn generator_is_a_monotone_conservative_matrix(grid in grid_strategy(), a in vec2(), b in vec2()) {
        let control: Vec<Vector> = (0..grid.node_count())
            .map(|n| {
                let x = grid.coords(n);
                [a[0] + b[0] * x[0], if grid.dim() == 2 { a[1] - b[1] * x[1] } else { 0.0 }]
            })
            .collect();
        let q = assemble(&grid, &control, Closure::Reflect);
        for i in 0..grid.interior_count() {
            let mut sum = 0.0;
            let mut diag = 0.0;
            for (j, v) in q.row(i) {
                sum += v;
                if j == i { diag = v } else { prop_assert!(v <= 0.0) }
            }
            prop_assert!(diag >= 0.0);
            prop_assert!(sum.abs() <= 1e-9 * diag.abs().max(1.0));
        }
    }

    #[test]
    fn conjugate_exponents(gamma in 1.01f64..10.0) {
        let m = HamiltonianModel::pure_power(gamma).unwrap();
        prop_assert!((1.0 / m.gamma + 1.0 / m.gamma_star - 1.0).abs() <= 1e-14);
    }

    #[test]
    fn fenchel_young_gap(model in model_strategy(), x in vec2(), p in vec2(), xi in vec2()) {
        prop_assert!(model.duality_gap(&x, &xi, &p) >= -1e-9);
        let opt = model.optimal_control(&x, &p, DEFAULT_EPS_GRAD);
        let gap = model.duality_gap(&x, &opt, &p);
        prop_assert!(gap <= 1e-9 * (1.0 + model.hamiltonian_value(&x, &p).abs()), "gap {gap}");
    }

    #[test]
    fn sampled_legendre_transform(model in model_strategy(), x in vec2(), p in [-7.0f64..7.0, -7.0f64..7.0]) {
        let p = if norm(&p) > 10.0 { [p[0] / 2.0, p[1] / 2.0] } else { p };
        // Sample around the maximizer so the bound reflects spacing, not range.
        let opt = model.optimal_control(&x, &p, DEFAULT_EPS_GRAD);
        let spacing = 0.05;
        let samples: Vec<Vector> = (-40..=40)
            .flat_map(|i| (-40..=40).map(move |j| [i as f64 * spacing, j as f64 * spacing]))
            .map(|d| [(opt[0] / spacing).round() * spacing + d[0], (opt[1] / spacing).round() * spacing + d[1]])
            .collect();
        let numeric = model.legendre_numeric(&x, &p, &samples);
        let exact = model.hamiltonian_value(&x, &p);
        prop_assert!(numeric <= exact + 1e-9);
        prop_assert!(exact - numeric <= 2.0 * spacing * norm(&p) + 1e-9, "{exact} vs {numeric}");
    }

    #[test]
    fn growth_constants_are_finite(model in model_strategy(), pts in prop::collection::vec((vec2(), vec2(), vec2()), 50)) {
        let g = model.fit_growth_constants(&pts);
        prop_assert!(g.h0.is_finite() && g.h0 > 0.0);
        prop_assert!(g.h1.is_finite() && g.h1 > 0.0);
        prop_assert!(g.l1.is_finite() && g.l1 > 0.0);
    }

    #[test]
    fn paired_grid_controls_are_lp_feasible(
        h in 0.1f64..0.3,
        n in 6usize..14,
        picks in prop::collection::vec(0usize..9, 64),
        slope in 0.2f64..2.0,
    ) {
        let grid = Grid::new(1, h * n as f64, h).unwrap();
        let xi_grid = uniform_xi_grid(1, 4.0, 9).unwrap();
        // Confining on average, with arbitrary per-node grid values in the middle.
        let control = VectorField::from_fn(&grid, |x| {
            let node = grid.nearest_node(x);
            let pick = xi_grid[picks[node % picks.len()]];
            if x[0].abs() > 0.5 * grid.extent() { [(slope * x[0]).clamp(-4.0, 4.0), 0.0] } else { pick }
        });
        let snapped = VectorField { values: control.values.iter().map(|v| xi_grid[ergodic_core::measure::nearest_xi(&xi_grid, v)]).collect() };
        let density = stationary_density(&grid, &snapped).unwrap();
        let paired = pair_measure(&density, &snapped, &xi_grid).unwrap();
        let model = HamiltonianModel::pure_power(1.5).unwrap();
        let problem = assemble_lp(&grid, &xi_grid, &model, &PotentialSpec::QuadraticPower { gamma: 1.5 }).unwrap();
        prop_assert!(feasibility_violation(&paired.measure, &problem) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn policy_iteration_lambda_is_non_increasing(gamma in 1.2f64..3.0, h in 0.04f64..0.1, radius in 3.0f64..5.0) {
        let grid = Grid::new(1, radius, h).unwrap();
        let model = HamiltonianModel::pure_power(gamma).unwrap();
        let s = solve_ergodic_hjb(&grid, &model, &PotentialSpec::QuadraticPower { gamma }, &SolverOptions::default()).unwrap();
        prop_assert!(s.converged);
        for w in s.lambda_history.windows(2).skip(1) {
            prop_assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{:?}", s.lambda_history);
        }
    }

    #[test]
    fn minimum_of_u_is_one_in_the_interior(
        gamma in 1.2f64..3.0,
        family in 0usize..3,
        mode in 0usize..2,
    ) {
        let grid = Grid::new(2, 2.5, 0.125).unwrap();
        let model = HamiltonianModel::pure_power(gamma).unwrap();
        let f = match family {
            0 => PotentialSpec::QuadraticPower { gamma },
            1 => PotentialSpec::PowerBeta { beta: 1.0 },
            _ => PotentialSpec::Exponential,
        };
        let mode = if mode == 0 { BoundaryMode::StateConstraint } else { BoundaryMode::DirichletBig(1e3) };
        let s = solve_ergodic_hjb(&grid, &model, &f, &SolverOptions::default().with_boundary(mode)).unwrap();
        let (argmin, min) = s.u.values.iter().enumerate().fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
        prop_assert_eq!(min, 1.0);
        prop_assert!(grid.is_interior(argmin));
    }
}
