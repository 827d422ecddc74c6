// Estimate `pr{y | do(x)}` from a sample with two proxies of a hidden
// binary confounder and compare it with the truth and with plain
// adjustment for Z.
//
// ```text
// cargo run --example identify_effects
// ```

use proxy_causal::dgp::{fixtures, oracle_do_categorical, sample_latent_class};
use proxy_causal::ident_cat::{identify_from_data, IdentifyConfig};

pub fn run() -> proxy_causal::Result<()> {
    let model = fixtures::binary_confounded();
    let truth = oracle_do_categorical(&model);
    let data = sample_latent_class(&model, 50_000, 7)?.without_u();

    let table = identify_from_data(&data, &IdentifyConfig::default())?;
    println!("{:>3} {:>3} {:>9} {:>9} {:>9} {:>7}", "x", "y", "proxy", "naive", "truth", "cond");
    for row in &table.rows {
        println!(
            "{:>3} {:>3} {:>9.4} {:>9.4} {:>9.4} {:>7.2}",
            row.x,
            row.y,
            row.estimate,
            row.naive_estimate,
            truth.get(row.x_level, row.y_level),
            row.condition_number
        );
    }
    for w in &table.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
