// Solve the bridge integral equation numerically: discretize, pick the
// Tikhonov parameter from the L-curve, integrate against the W marginal,
// and read the Picard diagnostics.

use proxy_causal::dgp::{fixtures, oracle_do_gaussian};
use proxy_causal::fredholm::{integrate_do, l_curve, picard_diagnostics, solve_tikhonov, GaussianInstance, GridConfig};

pub fn run() -> proxy_causal::Result<()> {
    let sem = fixtures::gaussian_sem();
    let (x, y) = (0.5, 1.0);
    let inst = GaussianInstance {
        fit: sem.population_fit()?,
        z_law: sem.z_given_x(x),
        w_law: sem.w_marginal(),
        x,
        y,
    };
    let eq = inst.discretize(&GridConfig {
        n_z: 121,
        n_w: 121,
        ..Default::default()
    })?;
    let curve = l_curve(&eq)?;
    println!("{:>10} {:>12} {:>12}", "lambda", "residual", "norm(h)");
    for (k, p) in curve.points.iter().enumerate() {
        let mark = if k == curve.corner { " <- corner" } else { "" };
        println!("{:>10.2e} {:>12.3e} {:>12.3e}{mark}", p.lambda, p.residual_norm, p.solution_norm);
    }

    let sol = solve_tikhonov(&eq, curve.lambda)?;
    let value = integrate_do(&sol.h, &eq.w_grid, |w| inst.w_density(w))?;
    let closed = oracle_do_gaussian(&sem).density(y, x);
    println!("p(y={y} | do(x={x})) = {value:.6}, closed form {closed:.6}");

    let zd = |z: f64| inst.z_density(z);
    let picard = picard_diagnostics(&eq, Some(&zd))?;
    println!(
        "picard: {} trusted singular values, blow-up {}, partial sum {:.3e}",
        picard.trusted,
        picard.blow_up,
        picard.picard_partial_sums.get(picard.trusted.saturating_sub(1)).copied().unwrap_or(0.0)
    );
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
