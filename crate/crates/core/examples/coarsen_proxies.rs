// Proxies with more levels than the confounder: the 4x4 matrix P(W|Z,x) is
// singular, so levels are merged into a 2x2 invertible matrix first.

use proxy_causal::dgp::{oracle_do_categorical, population_matrices, random_model, sample_latent_class, Diagram, ModelDims, RandomModelConstraints};
use proxy_causal::ident_cat::{coarsen, identify_from_data, rank_diagnostics, IdentifyConfig, POPULATION_TOL};

pub fn run() -> proxy_causal::Result<()> {
    let dims = ModelDims { i: 2, j: 4, k_w: 4, m: 2, k: 2 };
    let model = random_model(dims, Diagram::F, 19, RandomModelConstraints::default())?;

    let pop = population_matrices(&model, 0)?;
    let full = rank_diagnostics(&pop.p_w_given_zx, POPULATION_TOL);
    println!("full 4x4 matrix: min singular value {:.2e}, invertible {}", full.min_singular_value, full.invertible);
    let (map, merged) = coarsen(&pop.p_wzx()?, Some(&pop.p_z_given_x()), 2, POPULATION_TOL)?;
    println!("W groups {:?}, Z groups {:?}", map.w_groups, map.z_groups);
    println!("merged matrix:{}", merged.values());

    let data = sample_latent_class(&model, 40_000, 2)?.without_u();
    let cfg = IdentifyConfig {
        coarsen_to: Some(2),
        ..Default::default()
    };
    let table = identify_from_data(&data, &cfg)?;
    let truth = oracle_do_categorical(&model);
    for row in table.rows.iter().filter(|r| r.y_level == 1) {
        println!(
            "pr(y=1 | do(x={})) = {:.4}  (truth {:.4}, coarsened: {})",
            row.x,
            row.estimate,
            truth.get(row.x_level, 1),
            row.coarsening_used
        );
    }
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
