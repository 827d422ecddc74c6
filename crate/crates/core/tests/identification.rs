use nalgebra::DMatrix;
use proxy_causal::dgp::{fixtures, oracle_do_categorical, population_matrices, random_model, sample_latent_class, Diagram, ModelDims, RandomModelConstraints};
use proxy_causal::ident_cat::{
    causal_effect_categorical, causal_effects, coarsen, conditional_outcome_given_u, identify_from_data, rank_diagnostics, IdentifyConfig,
    POPULATION_TOL,
};
use proxy_causal::tabular::{cond_prob_matrix, marginal_pmf, CondProbMatrix, MarginalPMF, Var};
use proxy_causal::Error;

#[test]
fn binary_population_effect_matches_enumeration() {
    let dims = ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 };
    for seed in 0..50 {
        let model = random_model(dims, Diagram::F, seed, RandomModelConstraints::default()).unwrap();
        for x in 0..2 {
            let pop = population_matrices(&model, x).unwrap();
            let row: Vec<f64> = pop.p_y_given_zx.row(1).iter().copied().collect();
            let effect = causal_effect_categorical(&row, &pop.p_wzx().unwrap(), &pop.p_w_pmf().unwrap(), POPULATION_TOL).unwrap();
            let oracle: f64 = (0..2)
                .map(|u| model.pi_u[u] * (0..2).map(|w| model.p_w_given_u[u][w] * model.p_y_given_uxw[u][x][w][1]).sum::<f64>())
                .sum();
            assert!((effect - oracle).abs() < 1e-10, "seed {seed}: {effect} vs {oracle}");
        }
    }
}

#[test]
fn outcome_given_confounder_with_true_error_mechanism() {
    let dims = ModelDims { i: 2, j: 3, k_w: 3, m: 2, k: 3 };
    let model = random_model(dims, Diagram::F, 7, RandomModelConstraints::default()).unwrap();
    for x in 0..2 {
        let pop = population_matrices(&model, x).unwrap();
        for y in 0..2 {
            let row: Vec<f64> = pop.p_y_given_zx.row(y).iter().copied().collect();
            let got = conditional_outcome_given_u(&row, &pop.p_wzx().unwrap(), &pop.p_wu().unwrap(), POPULATION_TOL).unwrap();
            for (u, g) in got.iter().enumerate() {
                let want: f64 = (0..3).map(|w| model.p_w_given_u[u][w] * model.p_y_given_uxw[u][x][w][y]).sum();
                assert!((g - want).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn proxy_unrelated_to_confounder_is_flagged() {
    let mut model = fixtures::binary_confounded();
    model.p_z_given_u = vec![vec![0.4, 0.6], vec![0.4, 0.6]];
    model.p_x_given_uz = vec![vec![vec![0.3, 0.7]; 2], vec![vec![0.7, 0.3]; 2]];
    for x in 0..2 {
        let pop = population_matrices(&model, x).unwrap();
        let diag = rank_diagnostics(&pop.p_w_given_zx, POPULATION_TOL);
        assert!(!diag.invertible, "{diag:?}");
        let row: Vec<f64> = pop.p_y_given_zx.row(1).iter().copied().collect();
        let err = causal_effect_categorical(&row, &pop.p_wzx().unwrap(), &pop.p_w_pmf().unwrap(), POPULATION_TOL).unwrap_err();
        assert!(matches!(err, Error::RankCondition { .. }));
    }
}

#[test]
fn coarsened_population_recovers_effect() {
    let dims = ModelDims { i: 2, j: 4, k_w: 4, m: 2, k: 2 };
    let model = random_model(dims, Diagram::F, 19, RandomModelConstraints::default()).unwrap();
    let oracle = oracle_do_categorical(&model);
    for x in 0..2 {
        let pop = population_matrices(&model, x).unwrap();
        let weights = pop.p_z_given_x();
        let (map, merged) = coarsen(&pop.p_wzx().unwrap(), Some(&weights), 2, POPULATION_TOL).unwrap();
        assert_eq!(merged.nrows(), 2);
        let p_w = MarginalPMF::new(Var::W, map.apply_marginal(pop.p_w.as_slice())).unwrap();
        for y in 0..2 {
            let row: Vec<f64> = pop.p_y_given_zx.row(y).iter().copied().collect();
            let merged_row = map.apply_outcome_row(&row, &weights).unwrap();
            let effect = causal_effect_categorical(&merged_row, &merged, &p_w, POPULATION_TOL).unwrap();
            assert!((effect - oracle.get(x, y)).abs() < 1e-10, "x {x} y {y}: {effect} vs {}", oracle.get(x, y));
        }
    }
}

#[test]
fn sampled_matrices_approach_population() {
    let dims = ModelDims { i: 2, j: 3, k_w: 3, m: 3, k: 3 };
    let model = random_model(dims, Diagram::F, 3, RandomModelConstraints::default()).unwrap();
    let data = sample_latent_class(&model, 100_000, 1).unwrap();
    for x in 0..2 {
        let pop = population_matrices(&model, x).unwrap();
        let emp = cond_prob_matrix(&data, Var::W, Var::Z, &[(Var::X, x)]).unwrap();
        let gap = (emp.values() - &pop.p_w_given_zx).abs().max();
        assert!(gap < 0.02, "x {x}: {gap}");
        for col in emp.values().column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-12);
        }
    }
    let p_w = marginal_pmf(&data, Var::W).unwrap();
    for w in 0..3 {
        let oracle: f64 = (0..3).map(|u| model.pi_u[u] * model.p_w_given_u[u][w]).sum();
        assert!((p_w.values()[w] - oracle).abs() < 0.01);
    }
}

#[test]
fn estimation_error_shrinks_with_n() {
    let model = fixtures::binary_confounded();
    let pop = population_matrices(&model, 1).unwrap();
    let mut mean_err = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let mut total = 0.0;
        for seed in 0..20 {
            let data = sample_latent_class(&model, n, 1000 + seed).unwrap();
            let emp = cond_prob_matrix(&data, Var::W, Var::Z, &[(Var::X, 1)]).unwrap();
            total += (emp.values() - &pop.p_w_given_zx).abs().max();
        }
        mean_err.push(total / 20.0);
    }
    assert!(mean_err[0] >= mean_err[1] && mean_err[1] >= mean_err[2], "{mean_err:?}");
}

#[test]
fn estimates_follow_outcome_relabeling() {
    let dims = ModelDims { i: 2, j: 2, k_w: 2, m: 3, k: 2 };
    let model = random_model(dims, Diagram::F, 5, RandomModelConstraints::default()).unwrap();
    let data = sample_latent_class(&model, 20_000, 2).unwrap().without_u();
    let perm = [2usize, 0, 1];
    let relabeled = data.map_levels(Var::Y, &perm, 3).unwrap();
    let cfg = IdentifyConfig::default();
    let a = identify_from_data(&data, &cfg).unwrap();
    let b = identify_from_data(&relabeled, &cfg).unwrap();
    for x in 0..2 {
        for y in 0..3 {
            let ea = a.estimate(x, y).unwrap().raw_estimate;
            let eb = b.estimate(x, perm[y]).unwrap().raw_estimate;
            assert!((ea - eb).abs() < 1e-12);
        }
    }
}

#[test]
fn naive_adjustment_is_biased_under_confounding() {
    let model = fixtures::binary_confounded();
    let oracle = oracle_do_categorical(&model);
    let data = sample_latent_class(&model, 100_000, 31).unwrap().without_u();
    let table = identify_from_data(&data, &IdentifyConfig::default()).unwrap();
    let effect = |x: usize, naive: bool| {
        let r = table.estimate(x, 1).unwrap();
        if naive {
            r.naive_estimate
        } else {
            r.raw_estimate
        }
    };
    let truth = oracle.get(1, 1) - oracle.get(0, 1);
    let proximal = effect(1, false) - effect(0, false);
    let naive = effect(1, true) - effect(0, true);
    assert!((proximal - truth).abs() < 0.04, "{proximal} vs {truth}");
    assert!((naive - truth).abs() > 0.05, "{naive} vs {truth}");
}

#[test]
fn effects_over_all_outcomes_sum_to_one() {
    let m = DMatrix::from_row_slice(3, 3, &[0.6, 0.2, 0.1, 0.3, 0.6, 0.2, 0.1, 0.2, 0.7]);
    let p_wzx = CondProbMatrix::from_values(m).unwrap();
    let p_w = MarginalPMF::new(Var::W, vec![0.3, 0.3, 0.4]).unwrap();
    let p_y = CondProbMatrix::from_values(DMatrix::from_row_slice(2, 3, &[0.2, 0.5, 0.7, 0.8, 0.5, 0.3])).unwrap();
    let e = causal_effects(&p_y, &p_wzx, &p_w, POPULATION_TOL).unwrap();
    assert!((e.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
