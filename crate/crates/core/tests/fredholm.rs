use proxy_causal::dgp::{fixtures, oracle_do_gaussian};
use proxy_causal::fredholm::{integrate_do, l_curve, picard_diagnostics, solve_tikhonov, GaussianInstance, GridConfig};
use proxy_causal::linalg::singular_values;
use proxy_causal::quadrature::{Grid, QuadratureRule};

fn instance(x: f64, y: f64) -> GaussianInstance {
    let sem = fixtures::gaussian_sem();
    GaussianInstance {
        fit: sem.population_fit().unwrap(),
        z_law: sem.z_given_x(x),
        w_law: sem.w_marginal(),
        x,
        y,
    }
}

fn grids(n: usize) -> GridConfig {
    GridConfig {
        n_z: n,
        n_w: n,
        ..Default::default()
    }
}

fn do_value(inst: &GaussianInstance, grid: &GridConfig) -> f64 {
    let eq = inst.discretize(grid).unwrap();
    let lambda = l_curve(&eq).unwrap().lambda;
    let sol = solve_tikhonov(&eq, lambda).unwrap();
    integrate_do(&sol.h, &eq.w_grid, |w| inst.w_density(w)).unwrap()
}

#[test]
fn ill_posedness_grows_with_grid_size() {
    let inst = instance(0.5, 1.0);
    let conds: Vec<f64> = [13, 15, 17, 19, 21]
        .iter()
        .map(|&n| {
            let s = singular_values(&inst.discretize(&grids(n)).unwrap().a);
            s[0] / s[s.len() - 1]
        })
        .collect();
    assert!(conds.windows(2).all(|c| c[0] < c[1]), "{conds:?}");
}

#[test]
fn regularized_density_integrates_to_one() {
    let x = 0.5;
    let law = oracle_do_gaussian(&fixtures::gaussian_sem());
    let sd = law.sigma_sq.sqrt();
    let y_grid = Grid::centered(QuadratureRule::GaussLegendre, law.mean(x), sd, 6.0, 40).unwrap();
    let grid = grids(101);
    let mass = y_grid.integrate(|y| do_value(&instance(x, y), &grid));
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
}

#[test]
fn different_regularization_same_effect() {
    let inst = instance(0.5, 1.0);
    let eq = inst.discretize(&grids(121)).unwrap();
    let lambda = l_curve(&eq).unwrap().lambda;
    let a = solve_tikhonov(&eq, lambda).unwrap();
    let b = solve_tikhonov(&eq, lambda * 10.0).unwrap();
    let b_norm = eq.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(a.residual_norm < 1e-3 * b_norm && b.residual_norm < 1e-2 * b_norm, "{} {} {b_norm}", a.residual_norm, b.residual_norm);
    let h_gap = a.h.iter().zip(&b.h).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(h_gap > 1e-4, "solutions should differ, gap {h_gap}");
    let da = integrate_do(&a.h, &eq.w_grid, |w| inst.w_density(w)).unwrap();
    let db = integrate_do(&b.h, &eq.w_grid, |w| inst.w_density(w)).unwrap();
    assert!((da - db).abs() < 2e-3, "{da} vs {db}");
}

#[test]
fn residual_and_norm_trade_off_monotonically() {
    let eq = instance(0.0, 0.5).discretize(&grids(81)).unwrap();
    let curve = l_curve(&eq).unwrap();
    for pair in curve.points.windows(2) {
        assert!(pair[1].residual_norm >= pair[0].residual_norm * (1.0 - 1e-9));
        assert!(pair[1].solution_norm <= pair[0].solution_norm * (1.0 + 1e-9));
    }
}

#[test]
fn compatible_right_hand_side_passes_picard() {
    let inst = instance(0.5, 1.0);
    let eq = inst.discretize(&grids(101)).unwrap();
    let h: Vec<f64> = eq.w_grid.points.iter().map(|w| (-0.5 * (w - 0.3).powi(2)).exp()).collect();
    let eq = eq.with_rhs(eq.forward(&h).unwrap()).unwrap();
    let zd = |z: f64| inst.z_density(z);
    let diag = picard_diagnostics(&eq, Some(&zd)).unwrap();
    assert!(!diag.blow_up, "{:?}", diag.warning);
    assert!(diag.trusted > 5);
}

#[test]
fn other_quadrature_rule_gives_same_effect() {
    let inst = instance(-0.5, 0.0);
    let trap = do_value(&inst, &grids(161));
    let gl = do_value(
        &inst,
        &GridConfig {
            rule: QuadratureRule::GaussLegendre,
            ..grids(161)
        },
    );
    let closed = oracle_do_gaussian(&fixtures::gaussian_sem()).density(0.0, -0.5);
    assert!((trap - closed).abs() < 1e-3 && (gl - closed).abs() < 1e-3, "{trap} {gl} {closed}");
}
