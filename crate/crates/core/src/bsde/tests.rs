use nalgebra::DMatrix;

use super::*;
use crate::convex::{ConvexKind, ConvexSpec};
use crate::field::{FieldConstants, ObliqueField};
use crate::forward::{build_lattice, TimeGrid};

fn brownian_problem(
    n_steps: usize,
    terminal: Terminal,
    driver: Driver,
    convex: ConvexSpec,
    field: ObliqueField,
    epsilon: f64,
) -> BsviProblem {
    let grid = TimeGrid::new(0.0, 1.0, n_steps).unwrap();
    BsviProblem::new(grid, terminal, driver, convex, field, ForwardModel::brownian(0.0), epsilon)
        .unwrap()
}

fn one_step(
    dt: f64,
    next: f64,
    driver: Driver,
    convex: ConvexSpec,
    epsilon: f64,
) -> (BsviProblem, StepOutput) {
    let grid = TimeGrid::new(0.0, dt, 1).unwrap();
    let p = BsviProblem::new(
        grid,
        Terminal::NodeValues(vec![next, next]),
        driver,
        convex,
        ObliqueField::identity(1),
        ForwardModel::brownian(0.0),
        epsilon,
    )
    .unwrap();
    let lattice = build_lattice(grid);
    let out = backward_step(&p, 0, &[next, next], CondExpectation::Lattice(&lattice)).unwrap();
    (p, out)
}

#[test]
fn pure_conditional_expectation_without_penalty_or_driver() {
    let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
    let lattice = build_lattice(grid);
    let p = brownian_problem(
        2,
        Terminal::NodeValues(vec![1.0, 4.0, 9.0]),
        Driver::zero(),
        ConvexSpec::zero(1),
        ObliqueField::identity(1),
        0.1,
    );
    let out = backward_step(&p, 1, &[1.0, 4.0, 9.0], CondExpectation::Lattice(&lattice)).unwrap();
    assert_eq!(out.y, vec![2.5, 6.5]);
    assert_eq!(out.u, vec![0.0, 0.0]);
}

#[test]
fn linear_driver_is_implicit() {
    let (_, out) = one_step(0.1, 1.0, Driver::linear(-1.0, 0.0, 0.0, vec![0.0]), ConvexSpec::zero(1), 0.1);
    assert!((out.y[0] - 1.0 / 1.1).abs() < 1e-15);
}

#[test]
fn half_line_step_matches_root_scan() {
    let (_, out) = one_step(0.1, -0.05, Driver::zero(), ConvexSpec::nonneg_half_line(), 0.1);
    // scan y + dt·∇φ_ε(y) = −0.05 with ∇φ_ε(y) = min(y, 0)/ε over [−1, 1]
    let (dt, eps) = (0.1, 0.1);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=2_000_000 {
        let y = -1.0 + i as f64 * 1e-6;
        let r = (y + dt * y.min(0.0) / eps + 0.05).abs();
        if r < best.0 {
            best = (r, y);
        }
    }
    assert!((out.y[0] - best.1).abs() <= 1e-6);
    assert!((out.y[0] + 0.025).abs() < 1e-15);
    assert!((out.u[0] + 0.25).abs() < 1e-14);
}

#[test]
fn martingale_representation_is_exact() {
    let p = brownian_problem(
        6,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::zero(1),
        ObliqueField::identity(1),
        0.1,
    );
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lattice = s.lattice().unwrap().clone();
    for k in 0..=6 {
        for j in 0..=k {
            assert!((s.y_at(k, j)[0] - lattice.brownian(k, j)).abs() < 1e-14);
            assert_eq!(s.u_at(k, j)[0], 0.0);
            assert_eq!(s.k[k][j], 0.0);
        }
        if k < 6 {
            assert!(s.z[k].iter().all(|z| (z - 1.0).abs() < 1e-12));
        }
    }
}

#[test]
fn linear_decay_converges_to_exponential() {
    let mut errors = Vec::new();
    for n in [16, 32, 64, 128] {
        let p = brownian_problem(
            n,
            Terminal::expressions(&["1"], 1).unwrap(),
            Driver::linear(-1.0, 0.0, 0.0, vec![0.0]),
            ConvexSpec::zero(1),
            ObliqueField::identity(1),
            0.1,
        );
        let s = solve_penalized(&p, &Backend::Lattice).unwrap();
        let exact_scheme = (1.0 / (1.0 + 1.0 / n as f64)).powi(n as i32);
        assert!((s.y0()[0] - exact_scheme).abs() < 1e-13);
        errors.push((s.y0()[0] - (-1.0f64).exp()).abs());
    }
    assert!(errors[3] < 5e-3);
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }
}

fn rich_problem(field: ObliqueField) -> BsviProblem {
    let convex = ConvexSpec::new(
        2,
        ConvexKind::IndicatorBox {
            lower: vec![-0.3, -0.2],
            upper: vec![0.4, 0.5],
        },
    )
    .unwrap();
    brownian_problem(
        10,
        Terminal::expressions(&["x", "sin(3*x)"], 1).unwrap(),
        Driver::linear(-0.5, 0.3, 0.1, vec![0.2, -0.1]),
        convex,
        field,
        0.05,
    )
}

fn assert_discrete_identities(p: &BsviProblem, s: &BackwardSolution) {
    let lattice = s.lattice().unwrap();
    let dt = p.grid.dt();
    let d = p.dim;
    for k in 0..p.grid.n_steps() {
        let mean = lattice.cond_expect_vec(&s.y[k + 1], d).unwrap();
        for j in 0..=k {
            let y = s.y_at(k, j);
            let u = s.u_at(k, j);
            let mut grad = vec![0.0; d];
            p.convex.moreau_gradient_into(y, p.epsilon, &mut grad).unwrap();
            assert_eq!(grad, u);
            let h = p.field.matrix(p.grid.time(k), y);
            let mut f = vec![0.0; d];
            let x = [lattice.brownian(k, j)];
            p.driver.eval(p.grid.time(k), &x, y, s.z_at(k, j), &mut f);
            for i in 0..d {
                let hu: f64 = (0..d).map(|c| h[(i, c)] * u[c]).sum();
                let r = y[i] + dt * hu - dt * f[i] - mean[j * d + i];
                assert!(r.abs() <= 1e-9, "step {k} node {j}: {r}");
            }
        }
    }
}

#[test]
fn one_step_consistency_with_rotated_field() {
    let field = ObliqueField::rotated_diagonal(
        0.6,
        &["1.5", "3"],
        FieldConstants {
            a: 1.0,
            b: 4.0,
            lambda: 0.0,
        },
    )
    .unwrap();
    let p = rich_problem(field);
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    assert_discrete_identities(&p, &s);
    assert!(s.metadata.max_residual <= 1e-10);
}

#[test]
fn one_step_consistency_with_state_dependent_field() {
    let field = ObliqueField::diagonal(
        &["2 + sin(y1)", "2 + 0.5*cos(y2)"],
        FieldConstants {
            a: 1.0,
            b: 4.0,
            lambda: 1.0,
        },
    )
    .unwrap();
    let p = rich_problem(field);
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    assert_discrete_identities(&p, &s);
    assert!(s.metadata.notes.iter().any(|n| n.contains("weak-solution")));
}

#[test]
fn terminal_and_running_penalty_bookkeeping() {
    let p = brownian_problem(
        8,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::identity(1),
        0.1,
    );
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lattice = s.lattice().unwrap();
    for j in 0..=8 {
        assert_eq!(s.y_at(8, j)[0], lattice.brownian(8, j));
    }
    let dt = p.grid.dt();
    let moves = [true, false, false, true, false, false, false, true];
    let path_k = s.k_along_path(&moves).unwrap();
    let mut node = 0;
    for k in 0..8 {
        assert_eq!(path_k[k + 1][0] - path_k[k][0], s.u_at(k, node)[0] * dt);
        node += moves[k] as usize;
    }
    // node-conditional means agree in expectation with the pathwise sum
    let lhs = lattice.expectation(&s.k[8], 1, 8).unwrap()[0];
    let rhs: f64 = (0..8)
        .map(|k| lattice.expectation(&s.u[k], 1, k).unwrap()[0] * dt)
        .sum();
    assert!((lhs - rhs).abs() < 1e-14);
}

#[test]
fn lattice_martingale_residual() {
    let p = brownian_problem(
        12,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::linear(0.5, 0.2, 0.0, vec![0.1]),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::scalar(1, 2.0).unwrap(),
        0.05,
    );
    let s = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lattice = s.lattice().unwrap();
    let dt = p.grid.dt();
    for k in 0..12 {
        // M_k = Y_k − Y_0 − Σ_{j<k}(HU − F)_j dt, so
        // E_k[M_{k+1}] − M_k = E_k[Y_{k+1}] − Y_k − dt(HU − F)_k
        let mean = lattice.cond_expect(&s.y[k + 1]).unwrap();
        for j in 0..=k {
            let y = s.y_at(k, j)[0];
            let f = 0.5 * y + 0.2 * s.z_at(k, j)[0] + 0.1;
            let drift = mean[j] - y - dt * (2.0 * s.u_at(k, j)[0] - f);
            assert!(drift.abs() < 1e-9, "step {k} node {j}: {drift}");
        }
    }
}

#[test]
fn constant_field_scaling_only_moves_the_penalized_solution_by_order_epsilon() {
    let run = |c: f64, eps: f64| {
        let p = brownian_problem(
            16,
            Terminal::expressions(&["x"], 1).unwrap(),
            Driver::zero(),
            ConvexSpec::nonneg_half_line(),
            ObliqueField::scalar(1, c).unwrap(),
            eps,
        );
        solve_penalized(&p, &Backend::Lattice).unwrap()
    };
    let mut gaps = Vec::new();
    for eps in [0.1, 0.01, 0.001] {
        let a = run(1.0, eps);
        let b = run(3.0, eps);
        gaps.push(sup_difference(&a.y, &b.y));
    }
    // once ε ≪ dt the gap shrinks linearly in ε
    assert!(gaps[1] < 0.5 * gaps[0] && gaps[2] < 0.2 * gaps[1], "{gaps:?}");
}

#[test]
fn interior_base_shift_round_trips() {
    let p = brownian_problem(
        8,
        Terminal::expressions(&["x + 0.5"], 1).unwrap(),
        Driver::linear(-0.3, 0.0, 0.0, vec![0.2]),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::scalar(1, 2.0).unwrap(),
        0.1,
    );
    let direct = solve_penalized(&p, &Backend::Lattice).unwrap();
    let (shifted, shift) = p.normalize(vec![1.0], vec![0.0]).unwrap();
    let back = solve_penalized(&shifted, &Backend::Lattice)
        .unwrap()
        .denormalize(&shift);
    // the shifted driver is no longer affine, so it goes through the fixed point
    assert!(sup_difference(&direct.y, &back.y) < 1e-9);
    assert!(sup_difference(&direct.u, &back.u) < 1e-8);
}

#[test]
fn ensemble_reproduces_deterministic_decay() {
    let p = brownian_problem(
        10,
        Terminal::expressions(&["1"], 1).unwrap(),
        Driver::linear(-1.0, 0.0, 0.0, vec![0.0]),
        ConvexSpec::zero(1),
        ObliqueField::identity(1),
        0.1,
    );
    let s = solve_penalized(
        &p,
        &Backend::Ensemble {
            n_paths: 500,
            seed: 3,
            degree: 2,
        },
    )
    .unwrap();
    let exact = (1.0f64 / 1.1).powi(10);
    assert!(s.y[0].iter().all(|v| (v - exact).abs() < 1e-9));
}

#[test]
fn ensemble_agrees_with_lattice_on_half_line_problem() {
    let p = brownian_problem(
        16,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::identity(1),
        0.1,
    );
    let lattice = solve_penalized(&p, &Backend::Lattice).unwrap().y0()[0];
    let mc = solve_penalized(
        &p,
        &Backend::Ensemble {
            n_paths: 20_000,
            seed: 9,
            degree: 4,
        },
    )
    .unwrap()
    .y0()[0];
    assert!((lattice - mc).abs() < 0.03, "lattice {lattice} mc {mc}");
}

#[test]
fn ensemble_is_thread_count_independent() {
    let p = rich_problem(ObliqueField::identity(2));
    let backend = Backend::Ensemble {
        n_paths: 800,
        seed: 21,
        degree: 3,
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_penalized(&p, &backend).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.y, b.y);
    assert_eq!(a.z, b.z);
}

#[test]
fn lagged_scheme_reduces_to_direct_solve_for_constant_field() {
    let p = brownian_problem(
        16,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        ObliqueField::scalar(1, 2.5).unwrap(),
        0.05,
    );
    let direct = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lagged = solve_lagged_h(&p, LaggedOptions::new(4)).unwrap();
    assert!(sup_difference(&direct.y, &lagged.solution.y) <= 1e-12);
}

fn tanh_field() -> ObliqueField {
    ObliqueField::diagonal(
        &["2 + tanh(y)"],
        FieldConstants {
            a: 1.0,
            b: 3.0,
            lambda: 1.0,
        },
    )
    .unwrap()
}

#[test]
fn lagged_scheme_ignores_field_without_penalty() {
    let p = brownian_problem(
        16,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::linear(-0.5, 0.0, 0.0, vec![0.3]),
        ConvexSpec::zero(1),
        tanh_field(),
        0.05,
    );
    let direct = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lagged = solve_lagged_h(&p, LaggedOptions::new(4)).unwrap();
    assert!(sup_difference(&direct.y, &lagged.solution.y) <= 1e-12);
}

#[test]
fn lagged_scheme_settles_near_direct_freezing() {
    let p = brownian_problem(
        16,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        tanh_field(),
        0.05,
    );
    let direct = solve_penalized(&p, &Backend::Lattice).unwrap();
    let lagged = solve_lagged_h(&p, LaggedOptions::new(4)).unwrap();
    assert!(lagged.sweeps <= 20);
    let gap = sup_difference(&direct.y, &lagged.solution.y);
    assert!(gap <= 5.0 * 0.05, "gap {gap}");
}

#[test]
fn lagged_scheme_rejects_bad_partition() {
    let p = brownian_problem(
        16,
        Terminal::expressions(&["x"], 1).unwrap(),
        Driver::zero(),
        ConvexSpec::nonneg_half_line(),
        tanh_field(),
        0.05,
    );
    assert!(matches!(
        solve_lagged_h(&p, LaggedOptions::new(5)),
        Err(crate::BsviError::InvalidArgument(_))
    ));
}

#[test]
fn divergence_reports_location_and_history() {
    // a driver whose fixed point cannot contract: F(y) = 50·y³ pushes iterates away
    let driver = Driver::custom(|_, _, y, _, out| out[0] = 50.0 * y[0].powi(3), 1e3, 0.0);
    let p = brownian_problem(
        4,
        Terminal::expressions(&["3*x"], 1).unwrap(),
        driver,
        ConvexSpec::nonneg_half_line(),
        ObliqueField::identity(1),
        0.01,
    );
    match solve_penalized(&p, &Backend::Lattice) {
        Err(crate::BsviError::SchemeFailure {
            location: Some((k, eps, dt)),
            history,
            message,
        }) => {
            assert_eq!(k, 3);
            assert_eq!(eps, 0.01);
            assert_eq!(dt, 0.25);
            assert!(!history.is_empty());
            assert!(message.contains("epsilon/(2b)"));
        }
        other => panic!("expected scheme failure, got {other:?}"),
    }
}

#[test]
fn newton_resolve_matches_scalar_identity_on_diagonal_embedding() {
    // a scalar multiple of the identity written as a generic matrix path
    let convex = ConvexSpec::l1(2);
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let r = [0.7, -0.4];
    let y = super::step::resolve_frozen(&convex, 0.1, &h, 0.2, &r).unwrap();
    let m = convex.moreau(0.1, &y).unwrap();
    for i in 0..2 {
        let hu: f64 = (0..2).map(|j| h[(i, j)] * m.gradient[j]).sum();
        assert!((y[i] + 0.2 * hu - r[i]).abs() < 1e-12);
    }
}
