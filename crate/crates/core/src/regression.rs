//! Indicator design matrices and L2-penalized linear/logistic solvers.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{DnfClass, DnfPolicy, PolicyRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Constructor,
    Driver,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Constructor => "constructor",
            EntityKind::Driver => "driver",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constructor" => Ok(EntityKind::Constructor),
            "driver" => Ok(EntityKind::Driver),
            other => Err(Error::InvalidParameter(format!("unknown entity kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entity {
    pub kind: EntityKind,
    pub key: String,
}

impl Entity {
    pub fn driver(key: impl Into<String>) -> Self {
        Self {
            kind: EntityKind::Driver,
            key: key.into(),
        }
    }

    pub fn constructor(key: impl Into<String>) -> Self {
        Self {
            kind: EntityKind::Constructor,
            key: key.into(),
        }
    }
}

/// Column assignment: constructors first, then drivers, each sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityIndex {
    constructors: Vec<String>,
    drivers: Vec<String>,
    lookup: HashMap<Entity, usize>,
}

impl EntityIndex {
    pub fn new<C, D>(constructors: C, drivers: D) -> Self
    where
        C: IntoIterator,
        C::Item: Into<String>,
        D: IntoIterator,
        D::Item: Into<String>,
    {
        let mut constructors: Vec<String> = constructors.into_iter().map(Into::into).collect();
        let mut drivers: Vec<String> = drivers.into_iter().map(Into::into).collect();
        constructors.sort();
        constructors.dedup();
        drivers.sort();
        drivers.dedup();
        let lookup = constructors
            .iter()
            .map(|c| Entity::constructor(c.clone()))
            .chain(drivers.iter().map(|d| Entity::driver(d.clone())))
            .enumerate()
            .map(|(i, e)| (e, i))
            .collect();
        Self {
            constructors,
            drivers,
            lookup,
        }
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a PolicyRow>) -> Self {
        let (constructors, drivers): (Vec<_>, Vec<_>) = rows
            .into_iter()
            .map(|r| (r.entry.parent.clone(), r.entry.driver.clone()))
            .unzip();
        Self::new(constructors, drivers)
    }

    pub fn len(&self) -> usize {
        self.constructors.len() + self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, entity: &Entity) -> Option<usize> {
        self.lookup.get(entity).copied()
    }

    pub fn constructor_column(&self, key: &str) -> Option<usize> {
        self.constructors
            .binary_search_by(|c| c.as_str().cmp(key))
            .ok()
    }

    pub fn driver_column(&self, key: &str) -> Option<usize> {
        self.drivers
            .binary_search_by(|d| d.as_str().cmp(key))
            .ok()
            .map(|i| i + self.constructors.len())
    }

    pub fn entity(&self, column: usize) -> Entity {
        if column < self.constructors.len() {
            Entity::constructor(self.constructors[column].clone())
        } else {
            Entity::driver(self.drivers[column - self.constructors.len()].clone())
        }
    }

    pub fn kind(&self, column: usize) -> EntityKind {
        if column < self.constructors.len() {
            EntityKind::Constructor
        } else {
            EntityKind::Driver
        }
    }

    pub fn entities(&self) -> impl Iterator<Item = Entity> + '_ {
        (0..self.len()).map(|c| self.entity(c))
    }
}

/// One weighted observation in sparse form.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub features: Vec<(usize, f64)>,
    pub response: f64,
    pub weight: f64,
}

impl DesignRow {
    pub fn dense(values: &[f64], response: f64, weight: f64) -> Self {
        Self {
            features: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
            response,
            weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    /// `(field_size + 1) / 2 - position`; positive means better than the median car.
    CenteredRank,
    /// 1 when `position <= n`, else 0.
    TopN(u32),
}

/// Builds one design row per policy row.
///
/// Under [`DnfPolicy::Attribute`] a driver-fault DNF zeroes the constructor
/// indicator and any other DNF zeroes the driver indicator.
pub fn build_design(
    rows: &[PolicyRow],
    index: &EntityIndex,
    weights: &[f64],
    response: ResponseKind,
    policy: DnfPolicy,
) -> Result<Vec<DesignRow>> {
    if weights.len() != rows.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} rows",
            weights.len(),
            rows.len()
        )));
    }
    rows.iter()
        .zip(weights)
        .map(|(row, &weight)| {
            let c = index
                .constructor_column(&row.entry.parent)
                .ok_or_else(|| Error::UnknownEntity(row.entry.parent.clone()))?;
            let d = index
                .driver_column(&row.entry.driver)
                .ok_or_else(|| Error::UnknownEntity(row.entry.driver.clone()))?;
            let (cv, dv) = match (policy, row.class) {
                (DnfPolicy::Attribute, DnfClass::DriverFault) => (0.0, 1.0),
                (DnfPolicy::Attribute, DnfClass::ConstructorFault | DnfClass::Indeterminate) => {
                    (1.0, 0.0)
                }
                _ => (1.0, 1.0),
            };
            let response = match response {
                ResponseKind::CenteredRank => {
                    f64::from(row.field_size + 1) / 2.0 - f64::from(row.position)
                }
                ResponseKind::TopN(n) => f64::from(u8::from(row.position <= n)),
            };
            Ok(DesignRow {
                features: vec![(c, cv), (d, dv)],
                response,
                weight,
            })
        })
        .collect()
}

/// Keeps only features of one entity kind (used for single-group fits).
pub fn restrict_features(rows: &[DesignRow], index: &EntityIndex, keep: EntityKind) -> Vec<DesignRow> {
    rows.iter()
        .map(|r| DesignRow {
            features: r
                .features
                .iter()
                .copied()
                .filter(|(c, _)| index.kind(*c) == keep)
                .collect(),
            ..r.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    /// One coefficient per column.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub row_count: usize,
    pub column_count: usize,
}

impl RidgeSolution {
    pub fn coefficient(&self, index: &EntityIndex, entity: &Entity) -> Option<f64> {
        index.column(entity).map(|c| self.coefficients[c])
    }

    pub fn predict(&self, features: &[(usize, f64)]) -> f64 {
        features.iter().map(|&(c, v)| self.coefficients[c] * v).sum()
    }
}

fn validate_rows(rows: &[DesignRow], n_cols: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if !(r.weight >= 0.0 && r.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("row {i}: weight {}", r.weight)));
        }
        if !r.response.is_finite() {
            return Err(Error::InvalidParameter(format!("row {i}: non-finite response")));
        }
        if let Some(&(c, _)) = r.features.iter().find(|(c, _)| *c >= n_cols) {
            return Err(Error::InvalidParameter(format!(
                "row {i}: column {c} out of range ({n_cols} columns)"
            )));
        }
    }
    Ok(())
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(())
}

/// Columns touched by at least one positively weighted nonzero feature.
/// Untouched columns decouple from the system and solve to exactly zero.
fn active_columns(rows: &[DesignRow], n_cols: usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut touched = vec![false; n_cols];
    for r in rows.iter().filter(|r| r.weight > 0.0) {
        for &(c, v) in &r.features {
            if v != 0.0 {
                touched[c] = true;
            }
        }
    }
    let active: Vec<usize> = (0..n_cols).filter(|&c| touched[c]).collect();
    let mut slot = vec![None; n_cols];
    for (i, &c) in active.iter().enumerate() {
        slot[c] = Some(i);
    }
    (active, slot)
}

/// Solves `A x = b` for symmetric positive definite `A`, falling back to an
/// eigen-decomposition when Cholesky breaks down on a near-singular system.
fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let eig = a.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max <= 0.0 || !max.is_finite() {
        return Err(Error::Numeric("singular normal equations".into()));
    }
    let qtb = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        qtb.len(),
        qtb.iter().zip(eig.eigenvalues.iter()).map(|(v, &l)| {
            if l > max * 1e-15 {
                v / l
            } else {
                0.0
            }
        }),
    );
    let x = &eig.eigenvectors * scaled;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numeric("non-finite ridge solution".into()))
    }
}

/// Minimizes `Σ w (y - xβ)² + λ‖β‖²` through the weighted normal equations.
pub fn solve_ridge(rows: &[DesignRow], n_cols: usize, lambda: f64) -> Result<RidgeSolution> {
    validate_lambda(lambda)?;
    validate_rows(rows, n_cols)?;
    if !rows.iter().any(|r| r.weight > 0.0) {
        return Err(Error::EmptyInput("no row with positive weight".into()));
    }
    ridge_unchecked(rows, n_cols, lambda)
}

fn ridge_unchecked(rows: &[DesignRow], n_cols: usize, lambda: f64) -> Result<RidgeSolution> {
    let (active, slot) = active_columns(rows, n_cols);
    let p = active.len();
    let mut coefficients = vec![0.0; n_cols];
    if p > 0 {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        for r in rows.iter().filter(|r| r.weight > 0.0) {
            for &(ci, vi) in &r.features {
                let Some(i) = slot[ci] else { continue };
                let wv = r.weight * vi;
                xtwy[i] += wv * r.response;
                for &(cj, vj) in &r.features {
                    if let Some(j) = slot[cj] {
                        xtwx[(i, j)] += wv * vj;
                    }
                }
            }
        }
        for i in 0..p {
            xtwx[(i, i)] += lambda;
        }
        let beta = solve_spd(xtwx, &xtwy)?;
        for (i, &c) in active.iter().enumerate() {
            coefficients[c] = beta[i];
        }
    }
    Ok(RidgeSolution {
        coefficients,
        lambda,
        row_count: rows.len(),
        column_count: n_cols,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticSolution {
    pub solution: RidgeSolution,
    pub intercept: f64,
    /// Set when the training rows hold only one class.
    pub degenerate: bool,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticSolution {
    pub fn probability(&self, features: &[(usize, f64)]) -> f64 {
        sigmoid(self.intercept + self.solution.predict(features))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const LOGIT_CLIP: f64 = 15.0;
const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;

fn log1pexp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Penalized negative log-likelihood over the active columns.
fn logistic_objective(
    rows: &[DesignRow],
    slot: &[Option<usize>],
    intercept: f64,
    beta: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let mut nll = 0.0;
    for r in rows.iter().filter(|r| r.weight > 0.0) {
        let z = intercept + linear(&r.features, slot, beta);
        // -[y z - log(1 + e^z)]
        nll += r.weight * (log1pexp(z) - r.response * z);
    }
    nll + 0.5 * lambda * beta.norm_squared()
}

fn linear(features: &[(usize, f64)], slot: &[Option<usize>], beta: &DVector<f64>) -> f64 {
    features
        .iter()
        .filter_map(|&(c, v)| slot[c].map(|i| beta[i] * v))
        .sum()
}

/// Maximizes `Σ w [y log p + (1-y) log(1-p)] - (λ/2)‖β‖²` with an unpenalized
/// intercept, by Newton/IRLS steps with step halving.
pub fn solve_logistic_ridge(rows: &[DesignRow], n_cols: usize, lambda: f64) -> Result<LogisticSolution> {
    validate_lambda(lambda)?;
    validate_rows(rows, n_cols)?;
    if let Some(r) = rows.iter().find(|r| r.response != 0.0 && r.response != 1.0) {
        return Err(Error::InvalidParameter(format!(
            "logistic response must be 0 or 1, got {}",
            r.response
        )));
    }
    let (w_total, w_pos) = rows
        .iter()
        .filter(|r| r.weight > 0.0)
        .fold((0.0, 0.0), |(t, p), r| (t + r.weight, p + r.weight * r.response));
    if w_total <= 0.0 {
        return Err(Error::EmptyInput("no row with positive weight".into()));
    }
    let rate = w_pos / w_total;
    let base_logit = (rate / (1.0 - rate)).ln().clamp(-LOGIT_CLIP, LOGIT_CLIP);
    let zero_solution = RidgeSolution {
        coefficients: vec![0.0; n_cols],
        lambda,
        row_count: rows.len(),
        column_count: n_cols,
    };
    if w_pos <= 0.0 || w_pos >= w_total {
        log::debug!("single-class logistic input; returning base-rate intercept");
        return Ok(LogisticSolution {
            solution: zero_solution,
            intercept: base_logit,
            degenerate: true,
            iterations: 0,
            converged: true,
        });
    }

    let (active, slot) = active_columns(rows, n_cols);
    let p = active.len();
    let mut intercept = base_logit;
    let mut beta = DVector::<f64>::zeros(p);
    let mut objective = logistic_objective(rows, &slot, intercept, &beta, lambda);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        // Parameter 0 is the intercept, 1..=p the active columns.
        let mut hess = DMatrix::<f64>::zeros(p + 1, p + 1);
        let mut grad = DVector::<f64>::zeros(p + 1);
        for r in rows.iter().filter(|r| r.weight > 0.0) {
            let prob = sigmoid(intercept + linear(&r.features, &slot, &beta));
            let resid = r.weight * (r.response - prob);
            let curv = r.weight * prob * (1.0 - prob);
            let mut idx: Vec<(usize, f64)> = Vec::with_capacity(r.features.len() + 1);
            idx.push((0, 1.0));
            idx.extend(
                r.features
                    .iter()
                    .filter_map(|&(c, v)| slot[c].map(|i| (i + 1, v))),
            );
            for &(i, vi) in &idx {
                grad[i] += resid * vi;
                for &(j, vj) in &idx {
                    hess[(i, j)] += curv * vi * vj;
                }
            }
        }
        for i in 0..p {
            grad[i + 1] -= lambda * beta[i];
            hess[(i + 1, i + 1)] += lambda;
        }
        // Keeps the intercept pivot positive once probabilities saturate.
        hess[(0, 0)] += 1e-12;
        let step = solve_spd(hess, &grad)?;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand_b0 = intercept + scale * step[0];
            let cand_beta = DVector::from_iterator(p, (0..p).map(|i| beta[i] + scale * step[i + 1]));
            let cand = logistic_objective(rows, &slot, cand_b0, &cand_beta, lambda);
            if cand <= objective + 1e-12 * objective.abs().max(1.0) {
                intercept = cand_b0;
                beta = cand_beta;
                objective = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let max_change = step.iter().fold(0.0f64, |m, v| m.max(v.abs())) * scale;
        if !accepted || max_change < IRLS_TOL {
            converged = max_change < IRLS_TOL || !accepted;
            break;
        }
    }
    if !(intercept.is_finite() && beta.iter().all(|b| b.is_finite())) {
        return Err(Error::Numeric("logistic fit diverged".into()));
    }
    let mut solution = zero_solution;
    for (i, &c) in active.iter().enumerate() {
        solution.coefficients[c] = beta[i];
    }
    Ok(LogisticSolution {
        solution,
        intercept,
        degenerate: false,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSpread {
    pub replicates: usize,
    /// Sample standard deviation per column.
    pub stdev: Vec<f64>,
    pub seed: u64,
}

impl BootstrapSpread {
    pub fn zeros(n_cols: usize, seed: u64) -> Self {
        Self {
            replicates: 0,
            stdev: vec![0.0; n_cols],
            seed,
        }
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Row-level bootstrap of [`solve_ridge`]. Replicates run in parallel and are
/// reduced in replicate order.
pub fn bootstrap(
    rows: &[DesignRow],
    n_cols: usize,
    lambda: f64,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSpread> {
    if replicates < 2 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs >= 2 replicates, got {replicates}"
        )));
    }
    validate_lambda(lambda)?;
    validate_rows(rows, n_cols)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("bootstrap over zero rows".into()));
    }
    let fits: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let sample: Vec<DesignRow> = (0..rows.len())
                .map(|_| rows[rng.random_range(0..rows.len())].clone())
                .collect();
            ridge_unchecked(&sample, n_cols, lambda).map(|s| s.coefficients)
        })
        .collect::<Result<_>>()?;

    let n = replicates as f64;
    let stdev = (0..n_cols)
        .map(|c| {
            let mean = fits.iter().map(|f| f[c]).sum::<f64>() / n;
            let ss = fits.iter().map(|f| (f[c] - mean).powi(2)).sum::<f64>();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapSpread {
        replicates,
        stdev,
        seed,
    })
}
