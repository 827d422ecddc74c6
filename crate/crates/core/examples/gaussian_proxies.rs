// Continuous confounder in a linear Gaussian model: two proxy regressions
// give the direct effect, and a bridge function gives the whole
// interventional law.

use proxy_causal::dgp::{fixtures, oracle_do_gaussian, sample_gaussian_sem};
use proxy_causal::ident_gauss::{fit_proxy_regressions, gamma1, gaussian_do_law, solve_h_gaussian, HSolveConfig};

pub fn run() -> proxy_causal::Result<()> {
    let sem = fixtures::gaussian_sem();
    let data = sample_gaussian_sem(&sem, 20_000, 1)?;
    let fit = fit_proxy_regressions(&data)?;
    let se = fit.std_errors.clone().expect("sample fit has standard errors");
    println!("E(Y|z,x) = {:.3} + {:.3} z + {:.3} x", fit.alpha0, fit.alpha1, fit.alpha2);
    println!("E(W|z,x) = {:.3} + {:.3} z + {:.3} x", fit.beta0, fit.beta1, fit.beta2);
    println!("gamma1 = {:.4} (se {:.4}); structural d2 = {}", gamma1(&fit)?, se.gamma1, sem.d2);
    println!("naive slope of Y on X given Z: {:.4}", fit.alpha2);

    let h = solve_h_gaussian(&fit.proxy_family(), &fit.outcome_family(), &HSolveConfig::default())?;
    println!(
        "h(w,x,y) = N(y; {:.3} + {:.3} w + {:.3} x, {:.3}), residual {:.1e}",
        h.m0, h.m1, h.m2, h.s_sq, h.max_residual
    );

    let n = data.n() as f64;
    let mw = data.w.iter().sum::<f64>() / n;
    let vw = data.w.iter().map(|w| (w - mw).powi(2)).sum::<f64>() / (n - 1.0);
    let law = gaussian_do_law(&fit, (mw, vw))?;
    let truth = oracle_do_gaussian(&sem);
    for x in [-1.0, 0.0, 1.0] {
        println!("E(Y | do(x={x:>4})) = {:.3}  (truth {:.3})", law.mean(x), truth.mean(x));
    }
    println!("Var(Y | do(x)) = {:.3}  (truth {:.3})", law.sigma_sq, truth.sigma_sq);
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
