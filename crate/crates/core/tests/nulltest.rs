use rayon::prelude::*;

use proxy_causal::tabular::Var;
use proxy_causal::Error;
use proxy_causal::dgp::{fixtures, random_model, sample_latent_class, Diagram, LatentClassModel, ModelDims, RandomModelConstraints};
use proxy_causal::nulltest::{
    build_stacked_moments, null_test, null_test_mean_scale, population_null_test, test_other_diagrams, CovMethod, NullTestConfig,
    StackedMoments,
};

fn rejection_rate(model: &LatentClassModel, n: usize, reps: u64, seed: u64, test: impl Fn(&proxy_causal::tabular::CategoricalDataset) -> f64 + Sync) -> f64 {
    let rejections: usize = (0..reps)
        .into_par_iter()
        .map(|r| {
            let data = sample_latent_class(model, n, seed.wrapping_mul(1_000_003).wrapping_add(r)).unwrap().without_u();
            usize::from(test(&data) < 0.05)
        })
        .sum();
    rejections as f64 / reps as f64
}

fn null_constraints() -> RandomModelConstraints {
    RandomModelConstraints {
        h0: true,
        min_sv: 0.1,
        ..Default::default()
    }
}

#[test]
fn population_residual_vanishes_under_null() {
    for (seed, dims) in [
        ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 },
        ModelDims { i: 3, j: 2, k_w: 2, m: 3, k: 2 },
        ModelDims { i: 2, j: 3, k_w: 3, m: 2, k: 3 },
        ModelDims { i: 3, j: 3, k_w: 2, m: 2, k: 2 },
    ]
    .into_iter()
    .enumerate()
    {
        let model = random_model(dims, Diagram::F, 300 + seed as u64, null_constraints()).unwrap();
        for y in 0..dims.m {
            let res = population_null_test(&model, y, 5000).unwrap();
            let norm = res.xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-10, "{dims:?} y {y}: |xi| = {norm}");
        }
        let room = model.p_y_given_uxw.iter().flat_map(|ux| ux[1].iter().map(|py| py[0])).fold(1.0, f64::min);
        let alt = model.add_direct_effect(0.9 * room).unwrap();
        let res = population_null_test(&alt, dims.m - 1, 5000).unwrap();
        assert!(res.statistic > 0.0, "{dims:?}: T = {}", res.statistic);
    }
}

#[test]
fn duplicate_proxy_levels_carry_no_rank() {
    let base = fixtures::binary_confounded();
    let mut split = base.clone();
    split.p_w_given_u = base.p_w_given_u.iter().map(|r| vec![r[0], r[1] / 2.0, r[1] / 2.0]).collect();
    split.p_y_given_uxw = base
        .p_y_given_uxw
        .iter()
        .map(|ux| ux.iter().map(|xw| vec![xw[0].clone(), xw[1].clone(), xw[1].clone()]).collect())
        .collect();
    split.validate().unwrap();
    let err = population_null_test(&split, 1, 5000).unwrap_err();
    assert!(matches!(err, Error::RankCondition { .. }), "{err:?}");

    let data = sample_latent_class(&base, 20_000, 6).unwrap().without_u();
    let w: Vec<usize> = data.column(Var::W).unwrap().iter().enumerate().map(|(r, &w)| if w == 1 { 1 + r % 2 } else { w }).collect();
    let widened = data.replace_column(Var::W, w, 3).unwrap();
    let cfg = NullTestConfig::default();
    let direct = null_test(&data, 1, &cfg).unwrap();
    let coarsened = null_test(
        &widened,
        1,
        &NullTestConfig {
            coarsen_w: Some(2),
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(coarsened.dof, direct.dof);
    assert_eq!(coarsened.diagnostics.w_groups.as_deref(), Some(&[0, 1, 1][..]));
    assert!((coarsened.statistic - direct.statistic).abs() < 1e-10);
}

#[test]
fn plugin_variance_matches_monte_carlo() {
    let model = fixtures::binary_null();
    let n = 5000;
    let pop = StackedMoments::from_population(&model, 1, n).unwrap();
    let draws: Vec<Vec<f64>> = (0..2000u64)
        .into_par_iter()
        .map(|r| {
            let data = sample_latent_class(&model, n, 40_000 + r).unwrap();
            build_stacked_moments(&data, 1).unwrap().q.iter().copied().collect()
        })
        .collect();
    for c in 0..pop.q.len() {
        let vals: Vec<f64> = draws.iter().map(|d| (n as f64).sqrt() * d[c]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let p = pop.q[c];
        let expected = p * (1.0 - p) / pop.cell_shares[c];
        assert!((var / expected - 1.0).abs() < 0.1, "cell {c}: {var} vs {expected}");
    }
}

#[test]
fn mean_scale_size_and_power() {
    let model = LatentClassModel {
        diagram: Diagram::F,
        pi_u: vec![0.5, 0.5],
        p_z_given_u: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        p_x_given_uz: vec![vec![vec![0.6, 0.4], vec![0.4, 0.6]], vec![vec![0.3, 0.7], vec![0.2, 0.8]]],
        p_w_given_u: vec![vec![0.75, 0.25], vec![0.25, 0.75]],
        p_y_given_uxw: vec![
            vec![vec![vec![0.5, 0.3, 0.2], vec![0.4, 0.35, 0.25]]; 2],
            vec![vec![vec![0.3, 0.3, 0.4], vec![0.2, 0.3, 0.5]]; 2],
        ],
    };
    model.validate().unwrap();
    assert!(model.satisfies_null());
    let cfg = NullTestConfig::default();
    let size = rejection_rate(&model, 5000, 2000, 1, |d| null_test_mean_scale(d, &cfg).unwrap().p_value);
    assert!((0.03..=0.07).contains(&size), "size {size}");
    let alt = model.add_direct_effect(0.15).unwrap();
    let power = rejection_rate(&alt, 5000, 500, 2, |d| null_test_mean_scale(d, &cfg).unwrap().p_value);
    assert!(power >= 0.9, "power {power}");
}

#[test]
fn single_proxy_diagram_size() {
    let model = LatentClassModel {
        diagram: Diagram::B,
        pi_u: vec![0.4, 0.6],
        p_z_given_u: vec![vec![0.8, 0.2], vec![0.25, 0.75]],
        p_x_given_uz: vec![vec![vec![0.7, 0.3], vec![0.5, 0.5]], vec![vec![0.4, 0.6], vec![0.2, 0.8]]],
        p_w_given_u: vec![vec![1.0], vec![1.0]],
        p_y_given_uxw: vec![vec![vec![vec![0.6, 0.1, 0.3]]; 2], vec![vec![vec![0.15, 0.55, 0.3]]; 2]],
    };
    model.validate().unwrap();
    let cfg = NullTestConfig::default();
    let size = rejection_rate(&model, 5000, 2000, 3, |d| test_other_diagrams(d, Diagram::B, 0, &cfg).unwrap().p_value);
    assert!((0.03..=0.07).contains(&size), "size {size}");
}

#[test]
fn covariance_methods_agree_on_large_samples() {
    let model = fixtures::binary_power_base().add_direct_effect(0.05).unwrap();
    let data = sample_latent_class(&model, 50_000, 8).unwrap().without_u();
    let stat = |cov| {
        let cfg = NullTestConfig {
            cov,
            bootstrap_resamples: 400,
            bootstrap_seed: 1,
            ..Default::default()
        };
        null_test(&data, 1, &cfg).unwrap().statistic
    };
    let residual = stat(CovMethod::Residual);
    let boot = stat(CovMethod::Bootstrap);
    let plugin = stat(CovMethod::Plugin);
    assert!((boot / residual - 1.0).abs() < 0.25, "{boot} vs {residual}");
    assert!((plugin / residual - 1.0).abs() < 0.5, "{plugin} vs {residual}");
}
