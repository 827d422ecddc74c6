// Monte Carlo size and power of the null test, and bias of the proximal
// estimator against naive adjustment.

use proxy_causal::dgp::{fixtures, run_power, run_study, Estimators, StudyConfig};
use proxy_causal::ident_cat::IdentifyConfig;
use proxy_causal::nulltest::NullTestConfig;

pub fn run() -> proxy_causal::Result<()> {
    let config = StudyConfig {
        model: fixtures::binary_power_base(),
        n: 5000,
        replicates: 200,
        alpha: 0.05,
        seed: 2024,
        estimators: Estimators {
            effect: false,
            null_test: true,
        },
        y_level: 1,
        test: NullTestConfig::default(),
        identify: IdentifyConfig::default(),
        keep_statistics: false,
        jobs: None,
    };
    let power = run_power(&config, &[0.0, 0.05, 0.1, 0.2])?;
    println!("{:>6} {:>10} {:>8}", "delta", "rejection", "mc se");
    for row in &power.rows {
        println!("{:>6.2} {:>10.3} {:>8.3}", row.delta, row.rejection_rate, row.mc_se);
    }

    let effect = StudyConfig {
        model: fixtures::binary_confounded(),
        n: 20_000,
        replicates: 40,
        estimators: Estimators {
            effect: true,
            null_test: false,
        },
        ..config
    };
    let report = run_study(&effect)?;
    if let Some(summary) = &report.effect {
        for c in &summary.cells {
            println!(
                "x={} y={}: oracle {:.3}, bias {:+.4} (naive {:+.4}), rmse {:.4}",
                c.x, c.y, c.oracle, c.bias, c.naive_bias, c.rmse
            );
        }
    }
    println!("failed replicates: {}", report.failures);
    Ok(())
}

fn main() -> proxy_causal::Result<()> {
    run()
}
