// The proxy's error mechanism P(W|U) is not identified, yet the effect is:
// two latent parameterizations with the same observables give the same
// `pr{y | do(x)}` but different `P(y|U,x)`.

use proxy_causal::dgp::{alternative_error_mechanism, population_matrices, random_model, Diagram, ModelDims, RandomModelConstraints};
use proxy_causal::ident_cat::{causal_effects, conditional_outcome_given_u, POPULATION_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> proxy_causal::Result<()> {
    let dims = ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 };
    let model = random_model(dims, Diagram::F, 31, RandomModelConstraints::default())?;
    let strata = (0..2).map(|x| population_matrices(&model, x)).collect::<proxy_causal::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let Some(alt) = alternative_error_mechanism(&strata, 0.02, &mut rng, 50) else {
        println!("no admissible alternative found");
        return Ok(());
    };
    for (a, b) in strata.iter().zip(&alt) {
        let ea = causal_effects(&a.p_yzx()?, &a.p_wzx()?, &a.p_w_pmf()?, POPULATION_TOL)?;
        let eb = causal_effects(&b.p_yzx()?, &b.p_wzx()?, &b.p_w_pmf()?, POPULATION_TOL)?;
        let row: Vec<f64> = a.p_y_given_zx.row(1).iter().copied().collect();
        let ua = conditional_outcome_given_u(&row, &a.p_wzx()?, &a.p_wu()?, POPULATION_TOL)?;
        let ub = conditional_outcome_given_u(&row, &b.p_wzx()?, &b.p_wu()?, POPULATION_TOL)?;
        println!("x = {}", a.x);
        println!("  P(W|U) original:{}  P(W|U) alternative:{}", a.p_w_given_u, b.p_w_given_u);
        println!("  pr(y=1|do(x)): {:.10} vs {:.10}", ea.values[1], eb.values[1]);
        println!("  P(y=1|U,x):    {ua:.4?} vs {ub:.4?}");
    }
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
