//! Integer quadratic program instances.
//!
//! An instance optimizes `f(x) = sum_{i<=j} q_ij x_i x_j + sum_i c_i x_i`
//! over integer points `0 <= x <= u` satisfying `A x = b`. `A`, `b` and `u`
//! are integral; `q` and `c` may be fractional.

mod brute;
mod generate;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use brute::{brute_force_optimum, enumerate_feasible};
pub use generate::{generate_eiqp, generate_iep, generate_kcluster, InstanceRng};
pub use io::{load_instance, parse_instance, save_instance, to_canonical_json};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("enumeration too large: {size} points exceed the limit {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },
    #[error("infeasible instance: no integer point satisfies the equalities")]
    Infeasible,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, InstanceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Max,
    Min,
}

impl Sense {
    /// `+1` for maximization, `-1` for minimization.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Max => 1.0,
            Sense::Min => -1.0,
        }
    }

    /// True when `a` is strictly better than `b` under this sense.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Max => a > b,
            Sense::Min => a < b,
        }
    }
}

/// A point of the integer lattice, not tied to a particular instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntegerPoint(pub Vec<i64>);

impl IntegerPoint {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

impl From<Vec<i64>> for IntegerPoint {
    fn from(v: Vec<i64>) -> Self {
        IntegerPoint(v)
    }
}

/// Validated problem data. Immutable after construction.
///
/// Quadratic coefficients are kept sparse and upper triangular with 0-based
/// keys `(i, j)`, `i <= j`; zero coefficients are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct QpInstance {
    name: String,
    sense: Sense,
    n: usize,
    q: BTreeMap<(usize, usize), f64>,
    c: Vec<f64>,
    a: Vec<Vec<i64>>,
    b: Vec<i64>,
    u: Vec<i64>,
}

impl QpInstance {
    /// Builds an instance and checks every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        sense: Sense,
        n: usize,
        q: BTreeMap<(usize, usize), f64>,
        c: Vec<f64>,
        a: Vec<Vec<i64>>,
        b: Vec<i64>,
        u: Vec<i64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(InstanceError::Validation("n ≥ 1 violated".into()));
        }
        if c.len() != n {
            return Err(InstanceError::Validation(format!(
                "c has {} entries, expected n = {n}",
                c.len()
            )));
        }
        if u.len() != n {
            return Err(InstanceError::Validation(format!(
                "u has {} entries, expected n = {n}",
                u.len()
            )));
        }
        if let Some(i) = u.iter().position(|&ui| ui < 1) {
            return Err(InstanceError::Validation(format!(
                "u_i ≥ 1 violated (i = {}, u_i = {})",
                i + 1,
                u[i]
            )));
        }
        if a.len() != b.len() {
            return Err(InstanceError::Validation(format!(
                "A has {} rows but b has {} entries",
                a.len(),
                b.len()
            )));
        }
        for (r, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(InstanceError::Validation(format!(
                    "row {} of A has {} entries, expected n = {n}",
                    r + 1,
                    row.len()
                )));
            }
        }
        let mut clean = BTreeMap::new();
        for (&(i, j), &v) in &q {
            if i > j || j >= n {
                return Err(InstanceError::Validation(format!(
                    "Q entry ({}, {}) outside the upper triangle of order {n}",
                    i + 1,
                    j + 1
                )));
            }
            if !v.is_finite() {
                return Err(InstanceError::Validation(format!(
                    "Q entry ({}, {}) is not finite",
                    i + 1,
                    j + 1
                )));
            }
            if v != 0.0 {
                clean.insert((i, j), v);
            }
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(InstanceError::Validation("c contains a non-finite value".into()));
        }
        Ok(Self {
            name: name.into(),
            sense,
            n,
            q: clean,
            c,
            a,
            b,
            u,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of equality rows.
    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn q(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.q
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &[Vec<i64>] {
        &self.a
    }

    pub fn b(&self) -> &[i64] {
        &self.b
    }

    pub fn u(&self) -> &[i64] {
        &self.u
    }

    /// Quadratic coefficient `q_ij` for either ordering of the indices.
    pub fn q_entry(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.q.get(&key).copied().unwrap_or(0.0)
    }

    /// True when every binary bound holds (`u_i = 1` for all `i`).
    pub fn is_binary(&self) -> bool {
        self.u.iter().all(|&v| v == 1)
    }

    /// True when all of `q` and `c` are integers.
    pub fn has_integral_objective(&self) -> bool {
        self.q.values().chain(self.c.iter()).all(|v| v.fract() == 0.0)
    }

    /// Copy of the instance in maximization form: minimization instances get
    /// `q` and `c` negated. Reported values must be multiplied by
    /// `self.sense().sign()` to get back to the original sense.
    pub fn to_max_sense(&self) -> QpInstance {
        let s = self.sense.sign();
        QpInstance {
            name: self.name.clone(),
            sense: Sense::Max,
            n: self.n,
            q: self.q.iter().map(|(&k, &v)| (k, s * v)).collect(),
            c: self.c.iter().map(|v| s * v).collect(),
            a: self.a.clone(),
            b: self.b.clone(),
            u: self.u.clone(),
        }
    }

    /// Copy with every objective coefficient multiplied by `factor`.
    pub fn scaled_objective(&self, factor: f64) -> QpInstance {
        QpInstance {
            q: self.q.iter().map(|(&k, &v)| (k, factor * v)).collect(),
            c: self.c.iter().map(|v| factor * v).collect(),
            ..self.clone()
        }
    }

    /// Copy with `u_i` clipped to `cap` and `b` re-targeted so that the point
    /// with every coordinate at `min(u_i, ceil(cap / 2))` is feasible. Used to
    /// make general-integer instances small enough to enumerate.
    pub fn with_clipped_bounds(&self, cap: i64) -> Result<QpInstance> {
        if cap < 1 {
            return Err(InstanceError::Domain("cap ≥ 1 required".into()));
        }
        let u: Vec<i64> = self.u.iter().map(|&v| v.min(cap)).collect();
        let mid = (cap + 1) / 2;
        let b = self
            .a
            .iter()
            .map(|row| row.iter().zip(&u).map(|(&a, &ui)| a * mid.min(ui)).sum())
            .collect();
        QpInstance::new(
            format!("{}_clip{cap}", self.name),
            self.sense,
            self.n,
            self.q.clone(),
            self.c.clone(),
            self.a.clone(),
            b,
            u,
        )
    }

    /// Dense symmetric matrix `Q_sym` with `x^T Q_sym x = sum_{i<=j} q_ij x_i x_j`.
    pub fn quadratic_form(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (&(i, j), &v) in &self.q {
            if i == j {
                m[i][i] += v;
            } else {
                m[i][j] += 0.5 * v;
                m[j][i] += 0.5 * v;
            }
        }
        m
    }

    /// Checks the dimension and the box `0 <= x <= u`.
    pub fn in_box(&self, x: &IntegerPoint) -> bool {
        x.len() == self.n && x.0.iter().zip(&self.u).all(|(&v, &ui)| v >= 0 && v <= ui)
    }

    /// Exact check of `A x = b` in integer arithmetic.
    pub fn satisfies_equalities(&self, x: &IntegerPoint) -> bool {
        x.len() == self.n
            && self
                .a
                .iter()
                .zip(&self.b)
                .all(|(row, &br)| row.iter().zip(&x.0).map(|(&a, &v)| a * v).sum::<i64>() == br)
    }

    pub fn is_feasible(&self, x: &IntegerPoint) -> bool {
        self.in_box(x) && self.satisfies_equalities(x)
    }

    /// Number of lattice points in the box, saturating.
    pub fn box_size(&self) -> u128 {
        self.u
            .iter()
            .fold(1u128, |acc, &ui| acc.saturating_mul(ui as u128 + 1))
    }
}

/// `f(x)`. Feasibility is not checked.
pub fn evaluate_objective(inst: &QpInstance, x: &IntegerPoint) -> Result<f64> {
    if x.len() != inst.n() {
        return Err(InstanceError::DimensionMismatch {
            expected: inst.n(),
            got: x.len(),
        });
    }
    Ok(objective_at(inst, &x.as_f64()))
}

/// `f(x)` at a real point of matching dimension.
pub fn objective_at(inst: &QpInstance, x: &[f64]) -> f64 {
    let quad: f64 = inst.q.iter().map(|(&(i, j), &v)| v * x[i] * x[j]).sum();
    let lin: f64 = inst.c.iter().zip(x).map(|(c, v)| c * v).sum();
    quad + lin
}
