use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident_cat::rank_diagnostics;
use crate::tabular::{CategoricalDataset, Cardinalities, CondProbMatrix, MarginalPMF, Var};

const TABLE_TOL: f64 = 1e-12;

/// Causal diagrams with confounder proxies.
///
/// * `A`: single proxy Z, with Z independent of (X, Y) given U.
/// * `B`: single proxy Z that may affect X.
/// * `C`: single proxy W that may affect Y.
/// * `D`: Z and W both independent of everything else given U.
/// * `E`: as `D`, but Z may affect X.
/// * `F`: Z may affect X and W may affect Y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Diagram {
    A,
    B,
    C,
    D,
    E,
    #[default]
    F,
}

impl std::str::FromStr for Diagram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Diagram::A),
            "b" => Ok(Diagram::B),
            "c" => Ok(Diagram::C),
            "d" => Ok(Diagram::D),
            "e" => Ok(Diagram::E),
            "f" => Ok(Diagram::F),
            other => Err(Error::InvalidConfig(format!("unknown diagram {other:?}; expected a-f"))),
        }
    }
}

impl Diagram {
    /// X does not depend on Z given U.
    fn x_free_of_z(self) -> bool {
        matches!(self, Diagram::A | Diagram::D)
    }

    /// Y does not depend on W given (U, X).
    fn y_free_of_w(self) -> bool {
        matches!(self, Diagram::D | Diagram::E)
    }

    fn has_w(self) -> bool {
        !matches!(self, Diagram::A | Diagram::B)
    }

    fn has_z(self) -> bool {
        !matches!(self, Diagram::C)
    }
}

/// Fully parameterized discrete law over `(U, Z, X, W, Y)` factorizing as
/// `p(u) p(z|u) p(x|u,z) p(w|u) p(y|u,x,w)`. Each innermost vector is a pmf
/// over the first-named variable. A proxy absent from the diagram has a
/// single level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentClassModel {
    pub diagram: Diagram,
    pub pi_u: Vec<f64>,
    /// `[u][z]`
    pub p_z_given_u: Vec<Vec<f64>>,
    /// `[u][z][x]`
    pub p_x_given_uz: Vec<Vec<Vec<f64>>>,
    /// `[u][w]`
    pub p_w_given_u: Vec<Vec<f64>>,
    /// `[u][x][w][y]`
    pub p_y_given_uxw: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Level counts `(i, j, k_w, m, k)` of X, Z, W, Y, U.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub i: usize,
    pub j: usize,
    pub k_w: usize,
    pub m: usize,
    pub k: usize,
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidModel(format!("{what} is empty")));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidModel(format!("{what} has an entry outside [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > TABLE_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {s}")));
    }
    Ok(())
}

fn same_pmf(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= TABLE_TOL)
}

impl LatentClassModel {
    pub fn dims(&self) -> ModelDims {
        let k = self.pi_u.len();
        ModelDims {
            k,
            j: self.p_z_given_u.first().map_or(0, Vec::len),
            i: self.p_x_given_uz.first().and_then(|v| v.first()).map_or(0, Vec::len),
            k_w: self.p_w_given_u.first().map_or(0, Vec::len),
            m: self
                .p_y_given_uxw
                .first()
                .and_then(|v| v.first())
                .and_then(|v| v.first())
                .map_or(0, Vec::len),
        }
    }

    pub fn cardinalities(&self) -> Cardinalities {
        let d = self.dims();
        Cardinalities {
            x: d.i,
            z: d.j,
            w: d.k_w,
            y: d.m,
            u: Some(d.k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ModelDims { i, j, k_w, m, k } = self.dims();
        if k == 0 || i == 0 || j == 0 || k_w == 0 || m == 0 {
            return Err(Error::InvalidModel("every variable needs at least one level".into()));
        }
        check_pmf(&self.pi_u, "pi_u")?;
        let shape_err = |what: &str| Error::InvalidModel(format!("{what} has inconsistent dimensions"));
        if self.p_z_given_u.len() != k || self.p_x_given_uz.len() != k || self.p_w_given_u.len() != k || self.p_y_given_uxw.len() != k {
            return Err(shape_err("a conditional table over U"));
        }
        for u in 0..k {
            if self.p_z_given_u[u].len() != j {
                return Err(shape_err("p_z_given_u"));
            }
            check_pmf(&self.p_z_given_u[u], &format!("p(z|u={u})"))?;
            if self.p_w_given_u[u].len() != k_w {
                return Err(shape_err("p_w_given_u"));
            }
            check_pmf(&self.p_w_given_u[u], &format!("p(w|u={u})"))?;
            if self.p_x_given_uz[u].len() != j {
                return Err(shape_err("p_x_given_uz"));
            }
            for z in 0..j {
                if self.p_x_given_uz[u][z].len() != i {
                    return Err(shape_err("p_x_given_uz"));
                }
                check_pmf(&self.p_x_given_uz[u][z], &format!("p(x|u={u},z={z})"))?;
            }
            if self.p_y_given_uxw[u].len() != i {
                return Err(shape_err("p_y_given_uxw"));
            }
            for x in 0..i {
                if self.p_y_given_uxw[u][x].len() != k_w {
                    return Err(shape_err("p_y_given_uxw"));
                }
                for w in 0..k_w {
                    if self.p_y_given_uxw[u][x][w].len() != m {
                        return Err(shape_err("p_y_given_uxw"));
                    }
                    check_pmf(&self.p_y_given_uxw[u][x][w], &format!("p(y|u={u},x={x},w={w})"))?;
                }
            }
        }

        let d = self.diagram;
        if !d.has_w() && k_w != 1 {
            return Err(Error::InvalidModel(format!("diagram {d:?} has no W proxy; W must have one level")));
        }
        if !d.has_z() && j != 1 {
            return Err(Error::InvalidModel(format!("diagram {d:?} has no Z proxy; Z must have one level")));
        }
        for u in 0..k {
            if d.x_free_of_z() && (1..j).any(|z| !same_pmf(&self.p_x_given_uz[u][z], &self.p_x_given_uz[u][0])) {
                return Err(Error::InvalidModel(format!("diagram {d:?} requires p(x|u,z) constant in z")));
            }
            if d.y_free_of_w() {
                for x in 0..i {
                    if (1..k_w).any(|w| !same_pmf(&self.p_y_given_uxw[u][x][w], &self.p_y_given_uxw[u][x][0])) {
                        return Err(Error::InvalidModel(format!("diagram {d:?} requires p(y|u,x,w) constant in w")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Joint probability of one configuration.
    pub fn joint(&self, u: usize, z: usize, x: usize, w: usize, y: usize) -> f64 {
        self.pi_u[u] * self.p_z_given_u[u][z] * self.p_x_given_uz[u][z][x] * self.p_w_given_u[u][w] * self.p_y_given_uxw[u][x][w][y]
    }

    /// True when `p(y|u,x,w)` does not depend on x, i.e. X has no effect on Y
    /// within any stratum of U.
    pub fn satisfies_null(&self) -> bool {
        let ModelDims { i, k_w, k, .. } = self.dims();
        (0..k).all(|u| (1..i).all(|x| (0..k_w).all(|w| same_pmf(&self.p_y_given_uxw[u][x][w], &self.p_y_given_uxw[u][0][w]))))
    }

    /// Shifts probability `delta` from the first to the last outcome level for
    /// every treatment level above the first.
    pub fn add_direct_effect(&self, delta: f64) -> Result<Self> {
        let mut out = self.clone();
        let m = self.dims().m;
        if m < 2 {
            return Err(Error::InvalidModel("direct effect needs at least two outcome levels".into()));
        }
        for per_u in &mut out.p_y_given_uxw {
            for per_x in per_u.iter_mut().skip(1) {
                for pmf in per_x.iter_mut() {
                    pmf[0] -= delta;
                    pmf[m - 1] += delta;
                    if pmf[0] < 0.0 || pmf[m - 1] > 1.0 {
                        return Err(Error::InvalidModel(format!("direct effect {delta} leaves the probability simplex")));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Exact `pr{y | do(x)}` table indexed `[x][y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoTable {
    pub values: Vec<Vec<f64>>,
}

impl DoTable {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x][y]
    }
}

/// `pr{y | do(x)} = Σ_u pr(y | x, u) pr(u)` with
/// `pr(y | x, u) = Σ_w p(w|u) p(y|u,x,w)`, by direct enumeration.
pub fn oracle_do_categorical(model: &LatentClassModel) -> DoTable {
    let ModelDims { i, k_w, m, k, .. } = model.dims();
    let mut values = vec![vec![0.0; m]; i];
    for (x, row) in values.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            *cell = (0..k)
                .map(|u| {
                    let p_y_ux: f64 = (0..k_w).map(|w| model.p_w_given_u[u][w] * model.p_y_given_uxw[u][x][w][y]).sum();
                    model.pi_u[u] * p_y_ux
                })
                .sum();
        }
    }
    DoTable { values }
}

/// Exact matrices of the stratum `X = x`, each column a conditional pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMatrices {
    pub x: usize,
    /// `P(Y|Z,x)`, `m × j`.
    pub p_y_given_zx: DMatrix<f64>,
    /// `P(W|Z,x)`, `k_w × j`.
    pub p_w_given_zx: DMatrix<f64>,
    /// `P(W)`.
    pub p_w: DVector<f64>,
    /// `P(W|U)`, `k_w × k`.
    pub p_w_given_u: DMatrix<f64>,
    /// `P(U|Z,x)`, `k × j`.
    pub p_u_given_zx: DMatrix<f64>,
    /// `P(Y|U,x)`, `m × k`.
    pub p_y_given_ux: DMatrix<f64>,
    /// `P(U)`.
    pub p_u: DVector<f64>,
    /// Joint `pr(z, x)` for each z.
    pub p_zx: Vec<f64>,
}

impl PopulationMatrices {
    pub fn p_wzx(&self) -> Result<CondProbMatrix> {
        CondProbMatrix::new(self.p_w_given_zx.clone(), Var::W, vec![Var::Z], vec![(Var::X, self.x)])
    }

    pub fn p_yzx(&self) -> Result<CondProbMatrix> {
        CondProbMatrix::new(self.p_y_given_zx.clone(), Var::Y, vec![Var::Z], vec![(Var::X, self.x)])
    }

    pub fn p_wu(&self) -> Result<CondProbMatrix> {
        CondProbMatrix::new(self.p_w_given_u.clone(), Var::W, vec![Var::U], Vec::new())
    }

    pub fn p_w_pmf(&self) -> Result<MarginalPMF> {
        MarginalPMF::new(Var::W, self.p_w.iter().copied().collect())
    }

    /// `pr(z | x)`.
    pub fn p_z_given_x(&self) -> Vec<f64> {
        let s: f64 = self.p_zx.iter().sum();
        self.p_zx.iter().map(|v| v / s).collect()
    }

    /// Re-expresses the latent factors through an invertible `s` whose
    /// columns sum to one: `P(W|U)s`, `s⁻¹P(U|Z,x)`, `s⁻¹P(U)` and
    /// `P(Y|U,x)s`. The observable matrices are recomputed from the new
    /// factors, so they agree with the originals up to rounding while the
    /// error mechanism changes. Fails when a transformed factor leaves the
    /// probability simplex.
    pub fn transform_latent(&self, s: &DMatrix<f64>) -> Result<Self> {
        let k = self.p_u.len();
        if s.nrows() != k || s.ncols() != k {
            return Err(Error::Shape("latent transform must be k x k".into()));
        }
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("latent transform is singular".into()))?;
        let p_w_given_u = &self.p_w_given_u * s;
        let p_u_given_zx = &s_inv * &self.p_u_given_zx;
        let p_u = &s_inv * &self.p_u;
        let p_y_given_ux = &self.p_y_given_ux * s;
        let in_simplex = |m: &[f64]| m.iter().all(|v| (-1e-15..=1.0 + 1e-15).contains(v));
        if !in_simplex(p_w_given_u.as_slice()) || !in_simplex(p_u_given_zx.as_slice()) || !in_simplex(p_u.as_slice()) || !in_simplex(p_y_given_ux.as_slice()) {
            return Err(Error::InvalidModel("transformed latent factors leave the probability simplex".into()));
        }
        Ok(Self {
            x: self.x,
            p_y_given_zx: &p_y_given_ux * &p_u_given_zx,
            p_w_given_zx: &p_w_given_u * &p_u_given_zx,
            p_w: &p_w_given_u * &p_u,
            p_w_given_u,
            p_u_given_zx,
            p_y_given_ux,
            p_u,
            p_zx: self.p_zx.clone(),
        })
    }
}

/// Exact matrices for stratum `x` by enumerating the joint law of
/// `(U, Z, X, W, Y)`.
pub fn population_matrices(model: &LatentClassModel, x: usize) -> Result<PopulationMatrices> {
    let ModelDims { i, j, k_w, m, k } = model.dims();
    if x >= i {
        return Err(Error::Shape(format!("treatment level {x} out of range")));
    }
    let mut p_zx = vec![0.0; j];
    let mut yz = DMatrix::zeros(m, j);
    let mut wz = DMatrix::zeros(k_w, j);
    let mut uz = DMatrix::zeros(k, j);
    for u in 0..k {
        for z in 0..j {
            for w in 0..k_w {
                for y in 0..m {
                    let p = model.joint(u, z, x, w, y);
                    p_zx[z] += p;
                    yz[(y, z)] += p;
                    wz[(w, z)] += p;
                    uz[(u, z)] += p;
                }
            }
        }
    }
    for (z, &pz) in p_zx.iter().enumerate() {
        if pz <= 0.0 {
            return Err(Error::Support(format!("pr(Z={z}, X={x}) = 0")));
        }
        yz.column_mut(z).scale_mut(1.0 / pz);
        wz.column_mut(z).scale_mut(1.0 / pz);
        uz.column_mut(z).scale_mut(1.0 / pz);
    }
    let p_w = DVector::from_fn(k_w, |w, _| (0..k).map(|u| model.pi_u[u] * model.p_w_given_u[u][w]).sum());
    let p_w_given_u = DMatrix::from_fn(k_w, k, |w, u| model.p_w_given_u[u][w]);
    let p_y_given_ux = DMatrix::from_fn(m, k, |y, u| (0..k_w).map(|w| model.p_w_given_u[u][w] * model.p_y_given_uxw[u][x][w][y]).sum());
    Ok(PopulationMatrices {
        x,
        p_y_given_zx: yz,
        p_w_given_zx: wz,
        p_w,
        p_w_given_u,
        p_u_given_zx: uz,
        p_y_given_ux,
        p_u: DVector::from_vec(model.pi_u.clone()),
        p_zx,
    })
}

/// Full joint pmf over observed `(x, z, w, y)` indexed
/// `((x·j + z)·k_w + w)·m + y`.
pub fn observed_joint(model: &LatentClassModel) -> Vec<f64> {
    let ModelDims { i, j, k_w, m, k } = model.dims();
    let mut out = vec![0.0; i * j * k_w * m];
    for u in 0..k {
        for x in 0..i {
            for z in 0..j {
                for w in 0..k_w {
                    for y in 0..m {
                        out[((x * j + z) * k_w + w) * m + y] += model.joint(u, z, x, w, y);
                    }
                }
            }
        }
    }
    out
}

struct Cumulative(Vec<f64>);

impl Cumulative {
    fn new(p: &[f64]) -> Self {
        let mut acc = 0.0;
        Self(
            p.iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect(),
        )
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let t: f64 = rng.random::<f64>() * self.0[self.0.len() - 1];
        self.0.iter().position(|&c| t < c).unwrap_or(self.0.len() - 1)
    }
}

/// Ancestral sampling `U → Z → X`, `U → W`, `(U, X, W) → Y`. The hidden U
/// column is kept for oracle checks.
pub fn sample_latent_class(model: &LatentClassModel, n: usize, seed: u64) -> Result<CategoricalDataset> {
    model.validate()?;
    let ModelDims { i, j, k_w, k, .. } = model.dims();
    let cu = Cumulative::new(&model.pi_u);
    let cz: Vec<Cumulative> = model.p_z_given_u.iter().map(|p| Cumulative::new(p)).collect();
    let cx: Vec<Vec<Cumulative>> = model
        .p_x_given_uz
        .iter()
        .map(|per_z| per_z.iter().map(|p| Cumulative::new(p)).collect())
        .collect();
    let cw: Vec<Cumulative> = model.p_w_given_u.iter().map(|p| Cumulative::new(p)).collect();
    let cy: Vec<Vec<Vec<Cumulative>>> = model
        .p_y_given_uxw
        .iter()
        .map(|per_x| per_x.iter().map(|per_w| per_w.iter().map(|p| Cumulative::new(p)).collect()).collect())
        .collect();
    debug_assert!(cz.len() == k && cx[0].len() == j && cy[0].len() == i && cy[0][0].len() == k_w);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut us, mut zs, mut xs, mut ws, mut ys) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let u = cu.draw(&mut rng);
        let z = cz[u].draw(&mut rng);
        let x = cx[u][z].draw(&mut rng);
        let w = cw[u].draw(&mut rng);
        let y = cy[u][x][w].draw(&mut rng);
        us.push(u);
        zs.push(z);
        xs.push(x);
        ws.push(w);
        ys.push(y);
    }
    CategoricalDataset::new(xs, zs, ws, ys, Some(us), model.cardinalities())
}

/// Rejection settings for [`random_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelConstraints {
    /// Generate `p(y|u,x,w)` constant in x.
    pub h0: bool,
    /// Minimum singular value required of `P(W|Z,x)` for every x (the r-th
    /// largest, `r = min(k, k_w, j)`).
    pub min_sv: f64,
    pub max_draws: usize,
}

impl Default for RandomModelConstraints {
    fn default() -> Self {
        Self {
            h0: false,
            min_sv: 0.05,
            max_draws: 10_000,
        }
    }
}

fn flat_dirichlet(rng: &mut (impl Rng + ?Sized), len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    // Exact normalization so the table passes the 1e-12 stochastic check.
    let drift: f64 = 1.0 - v.iter().sum::<f64>();
    v[0] += drift;
    v
}

fn draw_model(dims: ModelDims, diagram: Diagram, h0: bool, rng: &mut impl Rng) -> LatentClassModel {
    let ModelDims { i, j, k_w, m, k } = dims;
    let pi_u = flat_dirichlet(rng, k);
    let p_z_given_u = (0..k).map(|_| flat_dirichlet(rng, j)).collect();
    let p_x_given_uz = (0..k)
        .map(|_| {
            if diagram.x_free_of_z() {
                let p = flat_dirichlet(rng, i);
                vec![p; j]
            } else {
                (0..j).map(|_| flat_dirichlet(rng, i)).collect()
            }
        })
        .collect();
    let p_w_given_u = (0..k).map(|_| flat_dirichlet(rng, k_w)).collect();
    let p_y_given_uxw = (0..k)
        .map(|_| {
            let draw_w = |rng: &mut dyn rand::RngCore| -> Vec<Vec<f64>> {
                if diagram.y_free_of_w() {
                    vec![flat_dirichlet(rng, m); k_w]
                } else {
                    (0..k_w).map(|_| flat_dirichlet(rng, m)).collect()
                }
            };
            if h0 {
                vec![draw_w(rng); i]
            } else {
                (0..i).map(|_| draw_w(rng)).collect()
            }
        })
        .collect();
    LatentClassModel {
        diagram,
        pi_u,
        p_z_given_u,
        p_x_given_uz,
        p_w_given_u,
        p_y_given_uxw,
    }
}

/// Random model with flat-Dirichlet conditional tables, redrawn until every
/// stratum's `P(W|Z,x)` meets the singular-value floor.
pub fn random_model(dims: ModelDims, diagram: Diagram, seed: u64, constraints: RandomModelConstraints) -> Result<LatentClassModel> {
    if dims.i == 0 || dims.j == 0 || dims.k_w == 0 || dims.m == 0 || dims.k == 0 {
        return Err(Error::InvalidConfig("model dimensions must be positive".into()));
    }
    if !diagram.has_w() && dims.k_w != 1 {
        return Err(Error::InvalidConfig(format!("diagram {diagram:?} has no W; use k_w = 1")));
    }
    if !diagram.has_z() && dims.j != 1 {
        return Err(Error::InvalidConfig(format!("diagram {diagram:?} has no Z; use j = 1")));
    }
    let r = dims.k.min(dims.k_w).min(dims.j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..constraints.max_draws {
        let model = draw_model(dims, diagram, constraints.h0, &mut rng);
        let mut ok = true;
        for x in 0..dims.i {
            let pop = match population_matrices(&model, x) {
                Ok(p) => p,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            let s = crate::linalg::singular_values(&pop.p_w_given_zx);
            if s.get(r - 1).copied().unwrap_or(0.0) < constraints.min_sv {
                ok = false;
                break;
            }
        }
        if ok {
            model.validate()?;
            return Ok(model);
        }
    }
    Err(Error::ConstraintInfeasible {
        draws: constraints.max_draws,
        reason: format!("no draw had min singular value of P(W|Z,x) >= {}", constraints.min_sv),
    })
}

/// Draws a latent transform `S = I + t·D` (columns of D sum to zero) for which
/// every stratum's factors stay in the simplex and the error mechanism moves
/// by at least `min_change` in some entry of `P(Y|U,x)`. Returns the
/// transformed strata, or `None` when no admissible transform was found.
pub fn alternative_error_mechanism(
    strata: &[PopulationMatrices],
    min_change: f64,
    rng: &mut impl Rng,
    attempts: usize,
) -> Option<Vec<PopulationMatrices>> {
    let k = strata.first()?.p_u.len();
    for _ in 0..attempts {
        let mut d = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() - 0.5);
        for mut col in d.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let norm = d.norm();
        if norm == 0.0 {
            continue;
        }
        d /= norm;
        let admissible = |t: f64| -> Option<Vec<PopulationMatrices>> {
            let s = DMatrix::identity(k, k) + &d * t;
            strata.iter().map(|p| p.transform_latent(&s).ok()).collect()
        };
        // Largest admissible step by bisection, then back off to its midpoint.
        let (mut lo, mut hi) = (0.0, 2.0);
        if admissible(hi).is_some() {
            lo = hi;
        } else {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if admissible(mid).is_some() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        if lo <= 0.0 {
            continue;
        }
        if let Some(alt) = admissible(0.5 * lo) {
            let moved = strata
                .iter()
                .zip(&alt)
                .map(|(a, b)| crate::linalg::max_abs(&(&a.p_y_given_ux - &b.p_y_given_ux)))
                .fold(0.0, f64::max);
            if moved > min_change && rank_diagnostics(&alt[0].p_w_given_u, 1e-8).invertible {
                return Some(alt);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_model() -> LatentClassModel {
        LatentClassModel {
            diagram: Diagram::F,
            pi_u: vec![0.4, 0.6],
            p_z_given_u: vec![vec![0.8, 0.2], vec![0.3, 0.7]],
            p_x_given_uz: vec![vec![vec![0.7, 0.3], vec![0.5, 0.5]], vec![vec![0.4, 0.6], vec![0.2, 0.8]]],
            p_w_given_u: vec![vec![0.75, 0.25], vec![0.2, 0.8]],
            p_y_given_uxw: vec![
                vec![vec![vec![0.9, 0.1], vec![0.8, 0.2]], vec![vec![0.6, 0.4], vec![0.5, 0.5]]],
                vec![vec![vec![0.5, 0.5], vec![0.3, 0.7]], vec![vec![0.2, 0.8], vec![0.1, 0.9]]],
            ],
        }
    }

    #[test]
    fn tiny_model_is_valid() {
        tiny_model().validate().unwrap();
        assert!(!tiny_model().satisfies_null());
    }

    #[test]
    fn oracle_without_confounding_is_conditional() {
        let mut m = tiny_model();
        for per_u in &mut m.p_y_given_uxw {
            per_u[0] = vec![vec![0.7, 0.3]; 2];
            per_u[1] = vec![vec![0.25, 0.75]; 2];
        }
        let t = oracle_do_categorical(&m);
        assert!((t.get(0, 1) - 0.3).abs() < 1e-15);
        assert!((t.get(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn oracle_point_mass() {
        let mut m = tiny_model();
        m.pi_u = vec![1.0, 0.0];
        let t = oracle_do_categorical(&m);
        let expect = 0.75 * 0.4 + 0.25 * 0.5;
        assert!((t.get(1, 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn oracle_rows_sum_to_one() {
        let t = oracle_do_categorical(&tiny_model());
        for row in &t.values {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagram_constraints_enforced() {
        let mut m = tiny_model();
        m.diagram = Diagram::D;
        assert!(m.validate().is_err());
        m.diagram = Diagram::B;
        assert!(m.validate().is_err());
    }

    #[test]
    fn deterministic_tables_give_deterministic_data() {
        let m = LatentClassModel {
            diagram: Diagram::F,
            pi_u: vec![0.0, 1.0],
            p_z_given_u: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            p_x_given_uz: vec![vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]],
            p_w_given_u: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            p_y_given_uxw: vec![vec![vec![vec![1.0, 0.0]; 2]; 2], vec![vec![vec![0.0, 1.0]; 2]; 2]],
        };
        let d = sample_latent_class(&m, 50, 3).unwrap();
        for v in [Var::X, Var::Z, Var::W, Var::Y, Var::U] {
            assert!(d.column(v).unwrap().iter().all(|&l| l == 1));
        }
    }

    #[test]
    fn random_model_respects_null_and_floor() {
        let dims = ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 };
        let cons = RandomModelConstraints { h0: true, ..Default::default() };
        let m = random_model(dims, Diagram::F, 11, cons).unwrap();
        assert!(m.satisfies_null());
        let t = oracle_do_categorical(&m);
        assert!((t.get(0, 1) - t.get(1, 1)).abs() < 1e-15);
        assert_eq!(m, random_model(dims, Diagram::F, 11, cons).unwrap());
    }

    #[test]
    fn random_model_infeasible_floor() {
        let dims = ModelDims { i: 2, j: 2, k_w: 2, m: 2, k: 2 };
        let cons = RandomModelConstraints {
            min_sv: 10.0,
            max_draws: 20,
            ..Default::default()
        };
        assert!(matches!(
            random_model(dims, Diagram::F, 1, cons),
            Err(Error::ConstraintInfeasible { draws: 20, .. })
        ));
    }

    #[test]
    fn direct_effect_shifts_outcome() {
        let m = tiny_model().add_direct_effect(0.05).unwrap();
        assert!((m.p_y_given_uxw[0][1][0][1] - 0.45).abs() < 1e-15);
        assert_eq!(m.p_y_given_uxw[0][0], tiny_model().p_y_given_uxw[0][0]);
        assert!(tiny_model().add_direct_effect(0.6).is_err());
    }
}
