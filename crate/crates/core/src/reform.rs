//! Concave equivalent MIQP built from dual multipliers.
//!
//! With multipliers `(alpha, lambda, beta)` the objective becomes
//!
//! ```text
//! f(x) + alpha sum_r (a_r x - b_r)^2 + sum_i lambda_i (y_ii - x_i^2)
//!      + sum_{i<j} beta_ij (y_ij - x_i x_j)
//! ```
//!
//! and `y_ij = x_i x_j` is enforced at integer points through the binary
//! digits `t_ik` of `x_i` and the products `z_ijk = t_ik x_j`. Everything is
//! stored in maximization form.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use num::{BigInt, BigRational, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::DualSolution;
use crate::instances::{objective_at, to_canonical_json, IntegerPoint, QpInstance, Sense};

#[derive(Debug, Error)]
pub enum ReformError {
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("constraint {row} of family {family} fails at the induced point")]
    ConstraintViolated { family: Family, row: usize },
    #[error("eigensolver failure")]
    Eigen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VarKind {
    X { i: usize },
    /// Binary digit `k` of `x_i`.
    T { i: usize, k: u32 },
    /// Product `x_i x_j`, `i <= j`.
    Y { i: usize, j: usize },
    /// Product `t_ik x_j`.
    Z { i: usize, j: usize, k: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    #[serde(flatten)]
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
}

/// Constraint families of the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `A x = b`.
    Original,
    /// `x_i = sum_k 2^k t_ik`.
    DigitsX,
    /// `y_ij = sum_k 2^k z_ijk`.
    DigitsY,
    /// `z_ijk <= u_j t_ik`.
    ProductUpperT,
    /// `z_ijk <= x_j`.
    ProductUpperX,
    /// `z_ijk >= x_j - u_j (1 - t_ik)`.
    ProductLower,
    /// `y_ii >= x_i`.
    SquareInteger,
    /// `y_ii >= 2 u_i x_i - u_i^2`.
    SquareLower,
    /// `y_ii <= u_i x_i`.
    SquareSecant,
    /// `y_ij <= u_j x_i`.
    PairUpperI,
    /// `y_ij <= u_i x_j`.
    PairUpperJ,
    /// `y_ij >= u_j x_i + u_i x_j - u_i u_j`.
    PairLower,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// `sum coefs v = rhs` or `sum coefs v <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub family: Family,
    pub coefs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub equality: bool,
}

/// The reformulated problem `max 1/2 x^T H x + l^T v + constant` over the
/// variables `v = (x, t, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedMiqp {
    source: QpInstance,
    pub sense: Sense,
    pub n: usize,
    pub alpha: f64,
    pub lambda: Vec<f64>,
    /// Nonzero `beta_ij`, `i < j`.
    pub beta: BTreeMap<(usize, usize), f64>,
    pub zero_tol: f64,
    pub variables: Vec<Variable>,
    /// Hessian of the objective in `x`; the first `n` variables are `x`.
    pub hessian: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<LinearRow>,
}

fn bits(u: i64) -> u32 {
    63 - (u as u64).leading_zeros()
}

/// Builds the reformulation of `inst` for the multipliers in `dual`.
/// Multipliers with magnitude below `zero_tol` are treated as zero.
pub fn build_reformulation(inst: &QpInstance, dual: &DualSolution, zero_tol: f64) -> Result<ReformulatedMiqp, ReformError> {
    if dual.lambda.len() != inst.n() {
        return Err(ReformError::Inconsistent(format!(
            "lambda has {} entries for n = {}",
            dual.lambda.len(),
            inst.n()
        )));
    }
    let lambda: Vec<f64> = dual
        .lambda
        .iter()
        .map(|&l| if l.abs() < zero_tol { 0.0 } else { l })
        .collect();
    let mut beta = BTreeMap::new();
    for &(i, j, v) in &dual.beta {
        if i >= j || j >= inst.n() {
            return Err(ReformError::Inconsistent(format!("beta pair ({i}, {j})")));
        }
        if v.abs() >= zero_tol {
            *beta.entry((i, j)).or_insert(0.0) += v;
        }
    }
    assemble(inst.sense(), &inst.to_max_sense(), dual.alpha, lambda, beta, zero_tol)
}

fn assemble(
    sense: Sense,
    inst: &QpInstance,
    alpha: f64,
    lambda: Vec<f64>,
    beta: BTreeMap<(usize, usize), f64>,
    zero_tol: f64,
) -> Result<ReformulatedMiqp, ReformError> {
    let n = inst.n();
    let u = inst.u();
    if let Some(i) = u.iter().position(|&v| v < 1) {
        return Err(ReformError::Inconsistent(format!("u_{i} = {} < 1", u[i])));
    }
    let uf = |i: usize| u[i] as f64;

    let mut variables: Vec<Variable> = (0..n)
        .map(|i| Variable {
            kind: VarKind::X { i },
            lower: 0.0,
            upper: uf(i),
            integer: true,
        })
        .collect();

    // Lifted products: (i, i) for lambda_i != 0 with u_i > 1, and every
    // pair with beta_ij != 0.
    let mut products: Vec<(usize, usize)> = Vec::new();
    for (i, &l) in lambda.iter().enumerate() {
        if l != 0.0 && u[i] > 1 {
            products.push((i, i));
        }
    }
    products.extend(beta.keys().copied());
    products.sort();

    let mut t_index: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for &(i, _) in &products {
        if u[i] > 1 && !t_index.contains_key(&(i, 0)) {
            for k in 0..=bits(u[i]) {
                t_index.insert((i, k), variables.len());
                variables.push(Variable {
                    kind: VarKind::T { i, k },
                    lower: 0.0,
                    upper: 1.0,
                    integer: true,
                });
            }
        }
    }
    let mut y_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(i, j) in &products {
        y_index.insert((i, j), variables.len());
        variables.push(Variable {
            kind: VarKind::Y { i, j },
            lower: 0.0,
            upper: uf(i) * uf(j),
            integer: false,
        });
    }
    let mut z_index: BTreeMap<(usize, usize, u32), usize> = BTreeMap::new();
    for &(i, j) in &products {
        if u[i] > 1 {
            for k in 0..=bits(u[i]) {
                z_index.insert((i, j, k), variables.len());
                variables.push(Variable {
                    kind: VarKind::Z { i, j, k },
                    lower: 0.0,
                    upper: uf(j),
                    integer: false,
                });
            }
        }
    }

    let mut rows = Vec::new();
    for (r, arow) in inst.a().iter().enumerate() {
        rows.push(LinearRow {
            family: Family::Original,
            coefs: arow.iter().enumerate().filter(|(_, &a)| a != 0).map(|(i, &a)| (i, a as f64)).collect(),
            rhs: inst.b()[r] as f64,
            equality: true,
        });
    }
    let mut digit_rows_done = std::collections::BTreeSet::new();
    for &(i, j) in &products {
        let y = y_index[&(i, j)];
        if u[i] > 1 {
            if digit_rows_done.insert(i) {
                let mut coefs = vec![(i, 1.0)];
                for k in 0..=bits(u[i]) {
                    coefs.push((t_index[&(i, k)], -f64::powi(2.0, k as i32)));
                }
                rows.push(LinearRow {
                    family: Family::DigitsX,
                    coefs,
                    rhs: 0.0,
                    equality: true,
                });
            }
            let mut coefs = vec![(y, 1.0)];
            for k in 0..=bits(u[i]) {
                coefs.push((z_index[&(i, j, k)], -f64::powi(2.0, k as i32)));
            }
            rows.push(LinearRow {
                family: Family::DigitsY,
                coefs,
                rhs: 0.0,
                equality: true,
            });
            for k in 0..=bits(u[i]) {
                let z = z_index[&(i, j, k)];
                let t = t_index[&(i, k)];
                rows.push(LinearRow {
                    family: Family::ProductUpperT,
                    coefs: vec![(z, 1.0), (t, -uf(j))],
                    rhs: 0.0,
                    equality: false,
                });
                rows.push(LinearRow {
                    family: Family::ProductUpperX,
                    coefs: vec![(z, 1.0), (j, -1.0)],
                    rhs: 0.0,
                    equality: false,
                });
                rows.push(LinearRow {
                    family: Family::ProductLower,
                    coefs: vec![(z, -1.0), (j, 1.0), (t, uf(j))],
                    rhs: uf(j),
                    equality: false,
                });
            }
        }
        // With u_i = 1 the digit of x_i is x_i itself and the product rows
        // on y coincide with the pair rows below.
        if i == j {
            rows.push(LinearRow {
                family: Family::SquareInteger,
                coefs: vec![(y, -1.0), (i, 1.0)],
                rhs: 0.0,
                equality: false,
            });
            rows.push(LinearRow {
                family: Family::SquareLower,
                coefs: vec![(y, -1.0), (i, 2.0 * uf(i))],
                rhs: uf(i) * uf(i),
                equality: false,
            });
            rows.push(LinearRow {
                family: Family::SquareSecant,
                coefs: vec![(y, 1.0), (i, -uf(i))],
                rhs: 0.0,
                equality: false,
            });
        } else {
            rows.push(LinearRow {
                family: Family::PairUpperI,
                coefs: vec![(y, 1.0), (i, -uf(j))],
                rhs: 0.0,
                equality: false,
            });
            rows.push(LinearRow {
                family: Family::PairUpperJ,
                coefs: vec![(y, 1.0), (j, -uf(i))],
                rhs: 0.0,
                equality: false,
            });
            rows.push(LinearRow {
                family: Family::PairLower,
                coefs: vec![(y, -1.0), (i, uf(j)), (j, uf(i))],
                rhs: uf(i) * uf(j),
                equality: false,
            });
        }
    }

    // Objective.
    let qs = inst.quadratic_form();
    let mut quad = DMatrix::from_fn(n, n, |i, j| qs[i][j]);
    let mut linear = vec![0.0; variables.len()];
    linear[..n].copy_from_slice(inst.c());
    let mut constant = 0.0;
    for (arow, &br) in inst.a().iter().zip(inst.b()) {
        let br = br as f64;
        for i in 0..n {
            let ai = arow[i] as f64;
            if ai == 0.0 {
                continue;
            }
            linear[i] -= 2.0 * alpha * br * ai;
            for j in 0..n {
                quad[(i, j)] += alpha * ai * arow[j] as f64;
            }
        }
        constant += alpha * br * br;
    }
    for (i, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        quad[(i, i)] -= l;
        match y_index.get(&(i, i)) {
            Some(&y) => linear[y] += l,
            None => linear[i] += l,
        }
    }
    for (&(i, j), &b) in &beta {
        quad[(i, j)] -= 0.5 * b;
        quad[(j, i)] -= 0.5 * b;
        linear[y_index[&(i, j)]] += b;
    }
    let hessian = quad * 2.0;

    Ok(ReformulatedMiqp {
        source: inst.clone(),
        sense,
        n,
        alpha,
        lambda,
        beta,
        zero_tol,
        variables,
        hessian,
        linear,
        constant,
        rows,
    })
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(h: &DMatrix<f64>) -> Result<f64, ReformError> {
    if h.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 0).ok_or(ReformError::Eigen)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Margin added on top of the largest eigenvalue.
pub const CONCAVITY_MARGIN: f64 = 1e-8;

/// Shifts every `lambda_i` by `eps + CONCAVITY_MARGIN`, `eps` the largest
/// eigenvalue of the Hessian, when `eps > CONCAVITY_MARGIN`.
pub fn ensure_concavity(miqp: ReformulatedMiqp) -> Result<ReformulatedMiqp, ReformError> {
    let eps = lambda_max(&miqp.hessian)?;
    if eps <= CONCAVITY_MARGIN {
        return Ok(miqp);
    }
    let shift = eps + CONCAVITY_MARGIN;
    let lambda = miqp.lambda.iter().map(|l| l + shift).collect();
    assemble(miqp.sense, &miqp.source, miqp.alpha, lambda, miqp.beta.clone(), miqp.zero_tol)
}

impl ReformulatedMiqp {
    /// Instance in maximization form the reformulation was built from.
    pub fn source(&self) -> &QpInstance {
        &self.source
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// `1/2 x^T H x + l^T v + constant`.
    pub fn objective(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += v[i] * self.hessian[(i, j)] * v[j];
            }
        }
        0.5 * quad + self.linear.iter().zip(v).map(|(l, x)| l * x).sum::<f64>() + self.constant
    }

    /// True when `q` and `c` are integral.
    pub fn integral_objective(&self) -> bool {
        self.source.has_integral_objective()
    }

    /// The point `(x, t, y, z)` induced by an integer `x`.
    pub fn induced_point(&self, x: &IntegerPoint) -> Vec<i64> {
        self.variables
            .iter()
            .map(|var| match var.kind {
                VarKind::X { i } => x.0[i],
                VarKind::T { i, k } => (x.0[i] >> k) & 1,
                VarKind::Y { i, j } => x.0[i] * x.0[j],
                VarKind::Z { i, j, k } => ((x.0[i] >> k) & 1) * x.0[j],
            })
            .collect()
    }

    /// Human-readable JSON: the source instance, multipliers, variables,
    /// objective and constraints.
    pub fn to_json(&self) -> serde_json::Value {
        let source: serde_json::Value =
            serde_json::from_str(&to_canonical_json(&self.source)).expect("canonical instance is valid JSON");
        let hessian: Vec<Vec<f64>> = (0..self.n).map(|i| (0..self.n).map(|j| self.hessian[(i, j)]).collect()).collect();
        serde_json::json!({
            "instance": source,
            "sense": self.sense,
            "alpha": self.alpha,
            "lambda": self.lambda,
            "beta": self.beta.iter().map(|(&(i, j), &v)| (i, j, v)).collect::<Vec<_>>(),
            "zero_tol": self.zero_tol,
            "variables": self.variables,
            "hessian": hessian,
            "linear": self.linear,
            "constant": self.constant,
            "rows": self.rows,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arithmetic {
    Rational,
    Float,
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite coefficient")
}

fn rat_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Checks that the point induced by `x` satisfies every constraint and
/// that the reformulated objective equals `f(x)`.
///
/// `Rational` evaluates the reformulated function term by term in exact
/// arithmetic; `Float` evaluates the assembled quadratic in `f64` and
/// accepts a difference up to `1e-9` times the largest term magnitude.
pub fn check_equivalence(
    inst: &QpInstance,
    miqp: &ReformulatedMiqp,
    x: &IntegerPoint,
    mode: Arithmetic,
) -> Result<bool, ReformError> {
    if !inst.is_feasible(x) {
        return Err(ReformError::Precondition("x violates the equalities or the box".into()));
    }
    if inst.n() != miqp.n {
        return Err(ReformError::Inconsistent("dimension".into()));
    }
    let v = miqp.induced_point(x);
    for (r, row) in miqp.rows.iter().enumerate() {
        let mut lhs = BigRational::zero();
        for &(k, c) in &row.coefs {
            lhs += rat(c) * rat_int(v[k]);
        }
        let rhs = rat(row.rhs);
        let ok = if row.equality { lhs == rhs } else { lhs <= rhs };
        if !ok {
            return Err(ReformError::ConstraintViolated { family: row.family, row: r });
        }
    }
    for (var, &val) in miqp.variables.iter().zip(&v) {
        if (val as f64) < var.lower || (val as f64) > var.upper {
            return Err(ReformError::Precondition(format!("{:?} outside its bounds", var.kind)));
        }
    }
    let src = miqp.source();
    match mode {
        Arithmetic::Rational => {
            let xr: Vec<BigRational> = x.0.iter().map(|&v| rat_int(v)).collect();
            let mut f = BigRational::zero();
            for (&(i, j), &q) in src.q() {
                f += rat(q) * &xr[i] * &xr[j];
            }
            for (i, &c) in src.c().iter().enumerate() {
                f += rat(c) * &xr[i];
            }
            let mut g = f.clone();
            let alpha = rat(miqp.alpha);
            for (arow, &br) in src.a().iter().zip(src.b()) {
                let mut s = -rat_int(br);
                for (i, &a) in arow.iter().enumerate() {
                    s += rat_int(a) * &xr[i];
                }
                g += &alpha * &s * &s;
            }
            let y_of = |i: usize, j: usize| -> BigRational {
                miqp.variables
                    .iter()
                    .position(|var| var.kind == VarKind::Y { i, j })
                    .map(|k| rat_int(v[k]))
                    .unwrap_or_else(|| xr[i].clone())
            };
            for (i, &l) in miqp.lambda.iter().enumerate() {
                if l != 0.0 {
                    g += rat(l) * (y_of(i, i) - &xr[i] * &xr[i]);
                }
            }
            for (&(i, j), &b) in &miqp.beta {
                g += rat(b) * (y_of(i, j) - &xr[i] * &xr[j]);
            }
            Ok((g - f).is_zero())
        }
        Arithmetic::Float => {
            let vf: Vec<f64> = v.iter().map(|&a| a as f64).collect();
            let g = miqp.objective(&vf);
            let f = objective_at(src, &x.as_f64());
            let mut scale = f.abs().max(miqp.constant.abs());
            for i in 0..miqp.n {
                scale = scale.max((0.5 * miqp.hessian[(i, i)] * vf[i] * vf[i]).abs());
            }
            for (l, val) in miqp.linear.iter().zip(&vf) {
                scale = scale.max((l * val).abs());
            }
            Ok((g - f).abs() <= 1e-9 * (1.0 + scale))
        }
    }
}
