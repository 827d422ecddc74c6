// Draw data from a latent-class model, write it as CSV, read it back, and
// check the independencies the diagram implies using the hidden column.

use proxy_causal::dgp::{conditional_independence_test, fixtures, sample_latent_class};
use proxy_causal::tabular::{load_csv, write_csv, CsvSchema, Var};

pub fn run() -> proxy_causal::Result<()> {
    let model = fixtures::binary_confounded();
    let data = sample_latent_class(&model, 100_000, 3)?;

    let path = std::env::temp_dir().join("proxy_causal_sample.csv");
    write_csv(&data, std::fs::File::create(&path)?, true)?;
    let schema = CsvSchema {
        u: Some("u".into()),
        ..Default::default()
    };
    let back = load_csv(&path, &schema)?;
    println!("wrote and re-read {} rows from {}", back.n(), path.display());

    let checks: [(&str, &[Var], &[Var], &[Var]); 3] = [
        ("W _||_ (Z,X) | U", &[Var::W], &[Var::Z, Var::X], &[Var::U]),
        ("Z _||_ Y | (U,X)", &[Var::Z], &[Var::Y], &[Var::U, Var::X]),
        ("W _||_ Z", &[Var::W], &[Var::Z], &[]),
    ];
    for (name, l, r, g) in checks {
        let t = conditional_independence_test(&back, l, r, g)?;
        println!("{name:<18} chi2 = {:>10.2} on {:>2} dof, p = {:.4}", t.statistic, t.dof, t.p_value);
    }
    std::fs::remove_file(&path)?;
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
