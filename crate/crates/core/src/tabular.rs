//! Dataset ingestion and empirical estimation of conditional and marginal
//! probability objects.
//!
//! Cells of the `(z, x)` stratification are always ordered with the `z` index
//! varying fastest: cell `x · |Z| + z`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance for column sums of conditional probability tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Default floor for plug-in covariance diagonals.
pub const DEFAULT_COV_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    X,
    Z,
    W,
    Y,
    U,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Var::X => "X",
            Var::Z => "Z",
            Var::W => "W",
            Var::Y => "Y",
            Var::U => "U",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cardinalities {
    pub x: usize,
    pub z: usize,
    pub w: usize,
    pub y: usize,
    pub u: Option<usize>,
}

impl Cardinalities {
    pub fn get(&self, var: Var) -> Option<usize> {
        match var {
            Var::X => Some(self.x),
            Var::Z => Some(self.z),
            Var::W => Some(self.w),
            Var::Y => Some(self.y),
            Var::U => self.u,
        }
    }
}

/// Observations of discrete `(X, Z, W, Y)` with an optional hidden `U`
/// column that only oracle code reads.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDataset {
    x: Vec<usize>,
    z: Vec<usize>,
    w: Vec<usize>,
    y: Vec<usize>,
    u: Option<Vec<usize>>,
    cards: Cardinalities,
    labels: BTreeMap<Var, Vec<String>>,
}

impl CategoricalDataset {
    /// Builds a dataset from level-index columns. Labels default to the
    /// decimal level index.
    pub fn new(
        x: Vec<usize>,
        z: Vec<usize>,
        w: Vec<usize>,
        y: Vec<usize>,
        u: Option<Vec<usize>>,
        cards: Cardinalities,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        let check = |var: Var, col: &[usize], card: usize| -> Result<()> {
            if col.len() != n {
                return Err(Error::Shape(format!("column {var} has {} rows, expected {n}", col.len())));
            }
            if card == 0 {
                return Err(Error::Shape(format!("column {var} has zero cardinality")));
            }
            if let Some(bad) = col.iter().find(|&&v| v >= card) {
                return Err(Error::Shape(format!("level {bad} of {var} outside [0, {card})")));
            }
            Ok(())
        };
        check(Var::X, &x, cards.x)?;
        check(Var::Z, &z, cards.z)?;
        check(Var::W, &w, cards.w)?;
        check(Var::Y, &y, cards.y)?;
        match (&u, cards.u) {
            (Some(col), Some(card)) => check(Var::U, col, card)?,
            (None, None) => {}
            _ => return Err(Error::Shape("u column and u cardinality must be given together".into())),
        }
        let mut labels = BTreeMap::new();
        for var in [Var::X, Var::Z, Var::W, Var::Y, Var::U] {
            if let Some(k) = cards.get(var) {
                labels.insert(var, (0..k).map(|l| l.to_string()).collect());
            }
        }
        Ok(Self {
            x,
            z,
            w,
            y,
            u,
            cards,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn cardinalities(&self) -> Cardinalities {
        self.cards
    }

    pub fn card(&self, var: Var) -> Option<usize> {
        self.cards.get(var)
    }

    pub fn column(&self, var: Var) -> Option<&[usize]> {
        match var {
            Var::X => Some(&self.x),
            Var::Z => Some(&self.z),
            Var::W => Some(&self.w),
            Var::Y => Some(&self.y),
            Var::U => self.u.as_deref(),
        }
    }

    pub fn has_hidden_u(&self) -> bool {
        self.u.is_some()
    }

    /// Copy of the dataset with the hidden column dropped.
    pub fn without_u(&self) -> Self {
        let mut out = self.clone();
        out.u = None;
        out.cards.u = None;
        out.labels.remove(&Var::U);
        out
    }

    pub fn labels(&self, var: Var) -> &[String] {
        self.labels.get(&var).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn with_labels(mut self, var: Var, labels: Vec<String>) -> Result<Self> {
        let card = self
            .card(var)
            .ok_or_else(|| Error::Schema(format!("dataset has no {var} column")))?;
        if labels.len() != card {
            return Err(Error::Shape(format!("{} labels for {card} levels of {var}", labels.len())));
        }
        self.labels.insert(var, labels);
        Ok(self)
    }

    /// Labels of `var` parsed as real-valued scores.
    pub fn numeric_scores(&self, var: Var) -> Result<Vec<f64>> {
        self.labels(var)
            .iter()
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| Error::Schema(format!("label {l:?} of {var} is not numeric")))
            })
            .collect()
    }

    /// Re-indexes the levels of `var` through `mapping` (old level → new level).
    pub fn map_levels(&self, var: Var, mapping: &[usize], new_card: usize) -> Result<Self> {
        let card = self
            .card(var)
            .ok_or_else(|| Error::Schema(format!("dataset has no {var} column")))?;
        if mapping.len() != card || mapping.iter().any(|&g| g >= new_card) {
            return Err(Error::Shape(format!("level map for {var} is not a map onto [0, {new_card})")));
        }
        let mut out = self.clone();
        let col = match var {
            Var::X => &mut out.x,
            Var::Z => &mut out.z,
            Var::W => &mut out.w,
            Var::Y => &mut out.y,
            Var::U => out.u.as_mut().expect("checked above"),
        };
        for v in col.iter_mut() {
            *v = mapping[*v];
        }
        match var {
            Var::X => out.cards.x = new_card,
            Var::Z => out.cards.z = new_card,
            Var::W => out.cards.w = new_card,
            Var::Y => out.cards.y = new_card,
            Var::U => out.cards.u = Some(new_card),
        }
        let old = self.labels(var);
        let mut merged = vec![Vec::new(); new_card];
        for (lvl, &g) in mapping.iter().enumerate() {
            merged[g].push(old[lvl].clone());
        }
        out.labels.insert(var, merged.into_iter().map(|v| v.join("+")).collect());
        Ok(out)
    }

    /// Replaces the column of `var` with new level indices and default labels.
    pub fn replace_column(&self, var: Var, values: Vec<usize>, card: usize) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::Shape(format!("replacement {var} column has {} rows, expected {}", values.len(), self.n())));
        }
        if card == 0 || values.iter().any(|&v| v >= card) {
            return Err(Error::Shape(format!("replacement {var} column has levels outside [0, {card})")));
        }
        let mut out = self.clone();
        match var {
            Var::X => (out.x, out.cards.x) = (values, card),
            Var::Z => (out.z, out.cards.z) = (values, card),
            Var::W => (out.w, out.cards.w) = (values, card),
            Var::Y => (out.y, out.cards.y) = (values, card),
            Var::U => (out.u, out.cards.u) = (Some(values), Some(card)),
        }
        out.labels.insert(var, (0..card).map(|l| l.to_string()).collect());
        Ok(out)
    }

    /// Replaces the level column of `var` by a constant single level.
    pub fn constant(&self, var: Var) -> Result<Self> {
        let card = self
            .card(var)
            .ok_or_else(|| Error::Schema(format!("dataset has no {var} column")))?;
        self.map_levels(var, &vec![0; card], 1)
    }

    /// Nonparametric bootstrap resample of rows.
    pub fn resample(&self, rng: &mut impl Rng) -> Self {
        let n = self.n();
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pick = |col: &[usize]| idx.iter().map(|&i| col[i]).collect::<Vec<_>>();
        Self {
            x: pick(&self.x),
            z: pick(&self.z),
            w: pick(&self.w),
            y: pick(&self.y),
            u: self.u.as_deref().map(pick),
            cards: self.cards,
            labels: self.labels.clone(),
        }
    }

    fn value(&self, var: Var, row: usize) -> usize {
        match var {
            Var::X => self.x[row],
            Var::Z => self.z[row],
            Var::W => self.w[row],
            Var::Y => self.y[row],
            Var::U => self.u.as_ref().expect("u column requested but absent")[row],
        }
    }
}

/// Column-name mapping for CSV ingestion. `z` or `w` may be absent, in which
/// case the variable is treated as a constant with a single level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub x: String,
    pub z: Option<String>,
    pub w: Option<String>,
    pub y: String,
    pub u: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            x: "x".into(),
            z: Some("z".into()),
            w: Some("w".into()),
            y: "y".into(),
            u: None,
        }
    }
}

fn read_csv_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .clone();
    let positions: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Schema(format!("column {name:?} not found in {}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for (c, &p) in positions.iter().enumerate() {
            let v = record.get(p).unwrap_or("");
            if v.is_empty() {
                return Err(Error::Ingestion(format!(
                    "missing value for {:?} on data row {}",
                    names[c],
                    line + 1
                )));
            }
            cols[c].push(v.to_string());
        }
    }
    if cols.first().is_none_or(|c| c.is_empty()) {
        return Err(Error::Ingestion(format!("{} contains no data rows", path.display())));
    }
    Ok(cols)
}

/// Dense re-indexing of labels: numeric order when every label is an
/// integer, lexicographic otherwise.
fn index_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    let mut labels: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let ints: Option<Vec<i64>> = labels.iter().map(|l| l.parse::<i64>().ok()).collect();
    if let Some(ints) = ints {
        let mut pairs: Vec<(i64, String)> = ints.into_iter().zip(labels).collect();
        pairs.sort();
        labels = pairs.into_iter().map(|(_, l)| l).collect();
    }
    let lookup: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let idx = raw.iter().map(|v| lookup[v.as_str()]).collect();
    (idx, labels)
}

/// Reads a categorical dataset from a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CategoricalDataset> {
    let path = path.as_ref();
    let mut vars = vec![(Var::X, schema.x.as_str()), (Var::Y, schema.y.as_str())];
    if let Some(z) = &schema.z {
        vars.push((Var::Z, z));
    }
    if let Some(w) = &schema.w {
        vars.push((Var::W, w));
    }
    if let Some(u) = &schema.u {
        vars.push((Var::U, u));
    }
    let names: Vec<&str> = vars.iter().map(|(_, n)| *n).collect();
    let cols = read_csv_columns(path, &names)?;
    let n = cols[0].len();

    let mut indexed: BTreeMap<Var, (Vec<usize>, Vec<String>)> = BTreeMap::new();
    for ((var, _), raw) in vars.iter().zip(&cols) {
        let (idx, labels) = index_labels(raw);
        if labels.len() < 2 && *var != Var::U {
            return Err(Error::DegenerateVariable { variable: *var });
        }
        indexed.insert(*var, (idx, labels));
    }
    let mut take = |var: Var| -> (Vec<usize>, Vec<String>) {
        indexed
            .remove(&var)
            .unwrap_or_else(|| (vec![0; n], vec!["const".to_string()]))
    };
    let (x, lx) = take(Var::X);
    let (z, lz) = take(Var::Z);
    let (w, lw) = take(Var::W);
    let (y, ly) = take(Var::Y);
    let u = schema.u.as_ref().map(|_| take(Var::U));
    let cards = Cardinalities {
        x: lx.len(),
        z: lz.len(),
        w: lw.len(),
        y: ly.len(),
        u: u.as_ref().map(|(_, l)| l.len()),
    };
    let (u_col, lu) = match u {
        Some((c, l)) => (Some(c), Some(l)),
        None => (None, None),
    };
    let mut data = CategoricalDataset::new(x, z, w, y, u_col, cards)?
        .with_labels(Var::X, lx)?
        .with_labels(Var::Z, lz)?
        .with_labels(Var::W, lw)?
        .with_labels(Var::Y, ly)?;
    if let Some(lu) = lu {
        data = data.with_labels(Var::U, lu)?;
    }
    Ok(data)
}

/// Writes a dataset as CSV using its level labels.
pub fn write_csv<W: std::io::Write>(data: &CategoricalDataset, out: W, include_u: bool) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let with_u = include_u && data.has_hidden_u();
    let mut header = vec!["x", "z", "w", "y"];
    if with_u {
        header.push("u");
    }
    wtr.write_record(&header)?;
    let vars: Vec<Var> = header
        .iter()
        .map(|h| match *h {
            "x" => Var::X,
            "z" => Var::Z,
            "w" => Var::W,
            "y" => Var::Y,
            _ => Var::U,
        })
        .collect();
    for row in 0..data.n() {
        let rec: Vec<&str> = vars
            .iter()
            .map(|&v| data.labels(v)[data.value(v, row)].as_str())
            .collect();
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Serialization of a dense matrix with explicit dimensions (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect(),
        }
    }
}

pub(crate) fn serialize_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    MatrixJson::from(m).serialize(s)
}

/// Column-stochastic matrix of conditional probabilities: entry `(a, b)` is
/// `pr(target = a | given = b, stratum)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CondProbMatrix {
    #[serde(serialize_with = "serialize_matrix")]
    values: DMatrix<f64>,
    target: Var,
    given: Vec<Var>,
    stratum: Vec<(Var, usize)>,
    /// Laplace pseudo-count, when smoothing was requested.
    smoothing: Option<f64>,
}

impl CondProbMatrix {
    pub fn new(values: DMatrix<f64>, target: Var, given: Vec<Var>, stratum: Vec<(Var, usize)>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape("empty conditional probability matrix".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("probability entry {v} outside [0, 1]")));
        }
        for (b, col) in values.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Shape(format!("column {b} sums to {s}, not 1")));
            }
        }
        Ok(Self {
            values,
            target,
            given,
            stratum,
            smoothing: None,
        })
    }

    /// Builds an unlabeled matrix (`W` given `Z`) from raw values.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, Var::W, vec![Var::Z], Vec::new())
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn target(&self) -> Var {
        self.target
    }

    pub fn given(&self) -> &[Var] {
        &self.given
    }

    pub fn stratum(&self) -> &[(Var, usize)] {
        &self.stratum
    }

    pub fn smoothing(&self) -> Option<f64> {
        self.smoothing
    }

    /// Row `a` as a vector over the conditioning levels, e.g. `P(y | Z, x)`.
    pub fn row(&self, a: usize) -> Vec<f64> {
        self.values.row(a).iter().copied().collect()
    }
}

/// Probability vector over a variable's levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPMF {
    pub var: Var,
    values: Vec<f64>,
}

impl MarginalPMF {
    pub fn new(var: Var, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("empty probability vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("probability entry {v} outside [0, 1]")));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Shape(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self { var, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Symmetric positive-definite covariance estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovEstimate {
    #[serde(serialize_with = "serialize_matrix")]
    values: DMatrix<f64>,
    pub floor_applied: bool,
}

impl CovEstimate {
    pub fn new(values: DMatrix<f64>, floor_applied: bool) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(Error::Shape("covariance must be a non-empty square matrix".into()));
        }
        for r in 0..values.nrows() {
            for c in 0..r {
                if (values[(r, c)] - values[(c, r)]).abs() > 1e-10 {
                    return Err(Error::Numeric("covariance is not symmetric".into()));
                }
            }
        }
        let is_diag = (0..values.nrows()).all(|r| (0..values.ncols()).all(|c| r == c || values[(r, c)] == 0.0));
        let min_eig = if is_diag {
            values.diagonal().min()
        } else {
            crate::linalg::smallest_eigenvalue(&values)
        };
        if !(min_eig > 0.0) {
            return Err(Error::Numeric(format!("covariance smallest eigenvalue {min_eig:e} is not positive")));
        }
        Ok(Self { values, floor_applied })
    }

    /// Diagonal covariance with every entry floored at `floor`.
    pub fn diagonal(diag: &[f64], floor: f64) -> Result<Self> {
        let mut floored = false;
        let d: Vec<f64> = diag
            .iter()
            .map(|&v| {
                if v < floor || !v.is_finite() {
                    floored = true;
                    floor
                } else {
                    v
                }
            })
            .collect();
        Self::new(DMatrix::from_diagonal(&DVector::from_vec(d)), floored)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }
}

/// Options shared by the empirical estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimationOptions {
    /// Laplace pseudo-count added to every target level (off by default).
    pub smoothing: Option<f64>,
}

/// Empirical `P(target | given, stratum)`.
pub fn cond_prob_matrix(
    data: &CategoricalDataset,
    target: Var,
    given: Var,
    stratum: &[(Var, usize)],
) -> Result<CondProbMatrix> {
    cond_prob_matrix_with(data, target, given, stratum, &EstimationOptions::default())
}

pub fn cond_prob_matrix_with(
    data: &CategoricalDataset,
    target: Var,
    given: Var,
    stratum: &[(Var, usize)],
    opts: &EstimationOptions,
) -> Result<CondProbMatrix> {
    let col_of = |v: Var| {
        data.column(v)
            .ok_or_else(|| Error::Schema(format!("dataset has no {v} column")))
    };
    let t = col_of(target)?;
    let g = col_of(given)?;
    let strata: Vec<(&[usize], usize)> = stratum
        .iter()
        .map(|&(v, l)| col_of(v).map(|c| (c, l)))
        .collect::<Result<_>>()?;
    let kt = data.card(target).unwrap_or(0);
    let kg = data.card(given).unwrap_or(0);

    let mut counts = DMatrix::<f64>::zeros(kt, kg);
    for row in 0..data.n() {
        if strata.iter().all(|(c, l)| c[row] == *l) {
            counts[(t[row], g[row])] += 1.0;
        }
    }
    let alpha = opts.smoothing.unwrap_or(0.0);
    if alpha < 0.0 {
        return Err(Error::InvalidConfig("smoothing pseudo-count must be non-negative".into()));
    }
    for b in 0..kg {
        let total: f64 = counts.column(b).sum();
        if total == 0.0 && alpha == 0.0 {
            return Err(Error::SparseCell {
                cell: describe_cell(given, b, stratum),
            });
        }
        let denom = total + alpha * kt as f64;
        for a in 0..kt {
            counts[(a, b)] = (counts[(a, b)] + alpha) / denom;
        }
    }
    let mut m = CondProbMatrix::new(counts, target, vec![given], stratum.to_vec())?;
    m.smoothing = opts.smoothing;
    Ok(m)
}

fn describe_cell(given: Var, level: usize, stratum: &[(Var, usize)]) -> String {
    let mut s = format!("{given}={level}");
    for (v, l) in stratum {
        s.push_str(&format!(", {v}={l}"));
    }
    s
}

/// Empirical marginal distribution of `target`.
pub fn marginal_pmf(data: &CategoricalDataset, target: Var) -> Result<MarginalPMF> {
    let col = data
        .column(target)
        .ok_or_else(|| Error::Schema(format!("dataset has no {target} column")))?;
    let k = data.card(target).unwrap_or(0);
    let mut counts = vec![0usize; k];
    for &v in col {
        counts[v] += 1;
    }
    let n = data.n() as f64;
    MarginalPMF::new(target, counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Joint counts of `(W, Y)` within each `(z, x)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedCounts {
    pub i: usize,
    pub j: usize,
    pub k_w: usize,
    pub m: usize,
    pub n: usize,
    /// Indexed `[cell][w][y]`.
    counts: Vec<f64>,
}

impl StratifiedCounts {
    pub fn new(data: &CategoricalDataset) -> Self {
        let c = data.cardinalities();
        let (i, j, k_w, m) = (c.x, c.z, c.w, c.y);
        let mut counts = vec![0.0; i * j * k_w * m];
        let (x, z, w, y) = (&data.x, &data.z, &data.w, &data.y);
        for r in 0..data.n() {
            let cell = x[r] * j + z[r];
            counts[(cell * k_w + w[r]) * m + y[r]] += 1.0;
        }
        Self {
            i,
            j,
            k_w,
            m,
            n: data.n(),
            counts,
        }
    }

    pub fn cells(&self) -> usize {
        self.i * self.j
    }

    pub fn joint(&self, cell: usize, w: usize, y: usize) -> f64 {
        self.counts[(cell * self.k_w + w) * self.m + y]
    }

    pub fn cell_total(&self, cell: usize) -> f64 {
        let base = cell * self.k_w * self.m;
        self.counts[base..base + self.k_w * self.m].iter().sum()
    }

    pub fn w_count(&self, cell: usize, w: usize) -> f64 {
        (0..self.m).map(|y| self.joint(cell, w, y)).sum()
    }

    pub fn y_count(&self, cell: usize, y: usize) -> f64 {
        (0..self.k_w).map(|w| self.joint(cell, w, y)).sum()
    }

    /// Fails with a sparse-cell error naming the first empty `(z, x)` cell.
    pub fn require_populated(&self) -> Result<()> {
        for cell in 0..self.cells() {
            if self.cell_total(cell) == 0.0 {
                return Err(Error::SparseCell {
                    cell: format!("Z={}, X={}", cell % self.j, cell / self.j),
                });
            }
        }
        Ok(())
    }
}

/// Plug-in covariance of `n^{1/2} q̂_y`: diagonal with entry
/// `p̂(1 − p̂) / p̂(z, x)` for each `(z, x)` cell, floored at [`DEFAULT_COV_FLOOR`].
pub fn plugin_covariance(data: &CategoricalDataset, y_level: usize) -> Result<CovEstimate> {
    plugin_covariance_with_floor(data, y_level, DEFAULT_COV_FLOOR)
}

pub fn plugin_covariance_with_floor(data: &CategoricalDataset, y_level: usize, floor: f64) -> Result<CovEstimate> {
    if y_level >= data.cardinalities().y {
        return Err(Error::Shape(format!("y level {y_level} out of range")));
    }
    let counts = StratifiedCounts::new(data);
    counts.require_populated()?;
    let n = counts.n as f64;
    let diag: Vec<f64> = (0..counts.cells())
        .map(|cell| {
            let tot = counts.cell_total(cell);
            let p = counts.y_count(cell, y_level) / tot;
            p * (1.0 - p) / (tot / n)
        })
        .collect();
    CovEstimate::diagonal(&diag, floor)
}

/// Bootstrap covariance of `n^{1/2}·statistic`. Resamples on which the
/// statistic fails (for example through an empty cell) are skipped; more than
/// half failing is an error. Eigenvalues are floored at `floor`.
pub fn bootstrap_covariance<F>(
    data: &CategoricalDataset,
    resamples: usize,
    seed: u64,
    floor: f64,
    statistic: F,
) -> Result<CovEstimate>
where
    F: Fn(&CategoricalDataset) -> Result<DVector<f64>>,
{
    if resamples < 2 {
        return Err(Error::InvalidConfig("bootstrap needs at least 2 resamples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<DVector<f64>> = Vec::with_capacity(resamples);
    let mut failures = 0usize;
    for _ in 0..resamples {
        match statistic(&data.resample(&mut rng)) {
            Ok(v) => draws.push(v),
            Err(_) => failures += 1,
        }
    }
    if draws.len() < 2 || failures * 2 > resamples {
        return Err(Error::Numeric(format!("{failures} of {resamples} bootstrap resamples failed")));
    }
    let d = draws[0].len();
    let b = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(d), |acc, v| acc + v) / b;
    let mut cov = DMatrix::zeros(d, d);
    for v in &draws {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    cov *= data.n() as f64 / (b - 1.0);
    cov = (&cov + cov.transpose()) * 0.5;

    let eig = SymmetricEigen::new(cov);
    let mut floored = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            floored = true;
            floor
        } else {
            v
        }
    });
    let mut rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
    CovEstimate::new(rebuilt, floored)
}

/// Observations of real-valued `(X, Z, W, Y)` with an optional hidden `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericDataset {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Option<Vec<f64>>,
}

impl NumericDataset {
    pub fn new(x: Vec<f64>, z: Vec<f64>, w: Vec<f64>, y: Vec<f64>, u: Option<Vec<f64>>) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        let lens = [z.len(), w.len(), y.len(), u.as_ref().map_or(n, Vec::len)];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Shape("numeric columns have different lengths".into()));
        }
        if x.iter().chain(&z).chain(&w).chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Ingestion("non-finite value in numeric data".into()));
        }
        Ok(Self { x, z, w, y, u })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

/// Reads real-valued `(x, z, w, y)` columns; `schema.z` and `schema.w` are required.
pub fn load_numeric_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<NumericDataset> {
    let path = path.as_ref();
    let z = schema
        .z
        .as_deref()
        .ok_or_else(|| Error::Schema("numeric analysis needs a z column".into()))?;
    let w = schema
        .w
        .as_deref()
        .ok_or_else(|| Error::Schema("numeric analysis needs a w column".into()))?;
    let mut names = vec![schema.x.as_str(), z, w, schema.y.as_str()];
    if let Some(u) = &schema.u {
        names.push(u);
    }
    let cols = read_csv_columns(path, &names)?;
    let parsed: Vec<Vec<f64>> = cols
        .iter()
        .zip(&names)
        .map(|(col, name)| {
            col.iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Ingestion(format!("value {v:?} in column {name:?} is not numeric")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut it = parsed.into_iter();
    let (x, z, w, y) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    NumericDataset::new(x, z, w, y, it.next())
}
