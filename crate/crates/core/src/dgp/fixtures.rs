//! Fixed models used by the examples and tests.

use super::latent::{Diagram, LatentClassModel};
use super::sem::LinearGaussianSEM;

fn bernoulli(p: f64) -> Vec<f64> {
    vec![1.0 - p, p]
}

/// Binary diagram-(f) model with `p(y|u,x,w)` free of x. `p(y=1|u,w)` is
/// `base[u][w]`.
pub fn binary_model(base: [[f64; 2]; 2]) -> LatentClassModel {
    let p_x = [[0.2, 0.4], [0.6, 0.8]];
    LatentClassModel {
        diagram: Diagram::F,
        pi_u: vec![0.5, 0.5],
        p_z_given_u: vec![bernoulli(0.2), bernoulli(0.8)],
        p_x_given_uz: (0..2).map(|u| (0..2).map(|z| bernoulli(p_x[u][z])).collect()).collect(),
        p_w_given_u: vec![bernoulli(0.25), bernoulli(0.75)],
        p_y_given_uxw: (0..2)
            .map(|u| vec![(0..2).map(|w| bernoulli(base[u][w])).collect::<Vec<_>>(); 2])
            .collect(),
    }
}

/// Binary model satisfying the causal null.
pub fn binary_null() -> LatentClassModel {
    binary_model([[0.2, 0.35], [0.6, 0.75]])
}

/// Base of the direct-effect family: adding up to 0.3 stays in the simplex.
pub fn binary_power_base() -> LatentClassModel {
    binary_model([[0.2, 0.35], [0.5, 0.65]])
}

/// Binary diagram-(f) model with strong confounding and a direct effect.
pub fn binary_confounded() -> LatentClassModel {
    let p_x = [[0.1, 0.25], [0.75, 0.9]];
    let p_y = [[[0.1, 0.2], [0.3, 0.4]], [[0.6, 0.7], [0.8, 0.9]]];
    LatentClassModel {
        diagram: Diagram::F,
        pi_u: vec![0.5, 0.5],
        p_z_given_u: vec![bernoulli(0.15), bernoulli(0.85)],
        p_x_given_uz: (0..2).map(|u| (0..2).map(|z| bernoulli(p_x[u][z])).collect()).collect(),
        p_w_given_u: vec![bernoulli(0.2), bernoulli(0.8)],
        p_y_given_uxw: (0..2)
            .map(|u| (0..2).map(|x| (0..2).map(|w| bernoulli(p_y[u][x][w])).collect()).collect())
            .collect(),
    }
}

/// Gaussian SEM with proxies on both sides and a W → Y path.
pub fn gaussian_sem() -> LinearGaussianSEM {
    LinearGaussianSEM {
        mu_u: 0.0,
        tau_sq: 1.0,
        a0: 0.0,
        a1: 1.0,
        var_z: 0.5,
        b0: 0.0,
        b1: 0.5,
        b2: 0.3,
        var_x: 1.0,
        c0: 0.0,
        c1: 1.0,
        var_w: 0.5,
        d0: 0.0,
        d1: 1.0,
        d2: 0.8,
        d3: 0.5,
        var_y: 1.5,
    }
}
