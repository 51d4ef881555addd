//! The SDP + RLT relaxation of an instance and its catalog of dualizable
//! product inequalities.
//!
//! The PSD block is `Z = [[1, x^T], [x, X]]` of order `n + 1`: index 0 is
//! the homogenizing coordinate and `x_i`, `X_ij` sit at `Z[0][i+1]` and
//! `Z[i+1][j+1]` (0-based `i`, `j`). The base program holds the equalities,
//! the aggregated squared equality and the three diagonal inequality
//! families; the four product families over pairs `i < j` form the catalog
//! and only ever enter the objective through Lagrange multipliers.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{
    check_kkt, solve_conic_opts, ConicError, ConicOptions, ConicProgram, ConicRow, ConicSolution, ConicStatus,
    KktReport, SymMatrix,
};
use crate::linalg::{eigen_extremes, symmetrize};
use crate::instances::QpInstance;
use crate::par;

#[derive(Debug, Error)]
pub enum RelaxationError {
    #[error("sum of squared right-hand sides overflows exact arithmetic")]
    Overflow,
    #[error("descriptor ({i}, {j}, {t}) outside 0 <= i < j < {n}, t in 1..=4")]
    Domain { i: usize, j: usize, t: u8, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Label of a row of the base program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConstraintKey {
    /// `Z[0][0] = 1`.
    Homogenizing,
    /// `sum_i a_ri x_i = b_r`.
    Equality(usize),
    /// The equalities squared, summed and linearized; carries `alpha`.
    SquaredEqualities,
    /// `-X_ii + x_i <= 0`.
    DiagIntegrality(usize),
    /// `-X_ii + 2 u_i x_i - u_i^2 <= 0`.
    DiagLowerMc(usize),
    /// `X_ii - u_i x_i <= 0`.
    DiagSecant(usize),
}

/// `h(X, x) = x_ij * X_ij + x_i * x_i + x_j * x_j + constant <= 0` for
/// the pair `i < j` (0-based) and family `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationDescriptor {
    pub i: usize,
    pub j: usize,
    pub t: u8,
    pub coef_xij: f64,
    pub coef_xi: f64,
    pub coef_xj: f64,
    pub constant: f64,
}

/// Coefficients of family `t` for the pair `i < j` under bounds `u`.
///
/// | t | h                                       |
/// |---|-----------------------------------------|
/// | 1 | `X_ij - u_j x_i`                        |
/// | 2 | `X_ij - u_i x_j`                        |
/// | 3 | `-X_ij + u_j x_i + u_i x_j - u_i u_j`   |
/// | 4 | `-X_ij`                                 |
pub fn descriptor(u: &[i64], i: usize, j: usize, t: u8) -> Result<LinearizationDescriptor, RelaxationError> {
    let n = u.len();
    if i >= j || j >= n || !(1..=4).contains(&t) {
        return Err(RelaxationError::Domain { i, j, t, n });
    }
    let (ui, uj) = (u[i] as f64, u[j] as f64);
    let (coef_xij, coef_xi, coef_xj, constant) = match t {
        1 => (1.0, -uj, 0.0, 0.0),
        2 => (1.0, 0.0, -ui, 0.0),
        3 => (-1.0, uj, ui, -ui * uj),
        _ => (-1.0, 0.0, 0.0, 0.0),
    };
    Ok(LinearizationDescriptor {
        i,
        j,
        t,
        coef_xij,
        coef_xi,
        coef_xj,
        constant,
    })
}

/// `h(X, x)`; positive means violated.
pub fn violation(desc: &LinearizationDescriptor, xmat: &DMatrix<f64>, x: &[f64]) -> f64 {
    desc.coef_xij * xmat[(desc.i, desc.j)] + desc.coef_xi * x[desc.i] + desc.coef_xj * x[desc.j] + desc.constant
}

impl LinearizationDescriptor {
    /// `h` evaluated on the lifted block `Z`.
    pub fn eval_lifted(&self, z: &DMatrix<f64>) -> f64 {
        self.coef_xij * z[(self.i + 1, self.j + 1)]
            + self.coef_xi * z[(0, self.i + 1)]
            + self.coef_xj * z[(0, self.j + 1)]
            + self.constant * z[(0, 0)]
    }

    /// Adds `weight * h` to the linear form `m` over `Z`.
    fn add_to(&self, m: &mut SymMatrix, weight: f64) {
        m.add_linear(self.i + 1, self.j + 1, weight * self.coef_xij);
        m.add_linear(0, self.i + 1, weight * self.coef_xi);
        m.add_linear(0, self.j + 1, weight * self.coef_xj);
        m.add(0, 0, weight * self.constant);
    }
}

/// Multipliers of the base rows that define the reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerDuals {
    pub alpha: f64,
    /// Per variable: multipliers of the integrality, lower McCormick and
    /// secant rows, each nonnegative up to solver accuracy.
    pub lambda_parts: Vec<[f64; 3]>,
}

impl InnerDuals {
    /// `lambda_i = -l1 - l2 + l3`.
    pub fn lambda(&self) -> Vec<f64> {
        self.lambda_parts.iter().map(|l| -l[0] - l[1] + l[2]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SdpRelaxation {
    n: usize,
    u: Vec<i64>,
    base: ConicProgram,
    row_keys: Vec<ConstraintKey>,
    /// Each stored row equals the source row times this factor.
    row_scale: Vec<f64>,
    catalog: Vec<LinearizationDescriptor>,
}

/// Builds the relaxation of `inst` in maximization form.
pub fn build_base_relaxation(inst: &QpInstance) -> Result<SdpRelaxation, RelaxationError> {
    let inst = inst.to_max_sense();
    let n = inst.n();
    let order = n + 1;
    let u = inst.u().to_vec();

    let mut b_sq: i128 = 0;
    for &b in inst.b() {
        b_sq = b_sq.checked_add((b as i128).checked_mul(b as i128).ok_or(RelaxationError::Overflow)?)
            .ok_or(RelaxationError::Overflow)?;
    }
    if b_sq > (1i128 << 53) {
        return Err(RelaxationError::Overflow);
    }

    let mut prog = ConicProgram::new(order, 3 * n);
    for (&(i, j), &q) in inst.q() {
        prog.objective.add_linear(i + 1, j + 1, q);
    }
    for (i, &c) in inst.c().iter().enumerate() {
        prog.objective.add_linear(0, i + 1, c);
    }

    let mut rows: Vec<(ConstraintKey, SymMatrix, Option<usize>, f64)> = Vec::new();
    let mut h = SymMatrix::new(order);
    h.add(0, 0, 1.0);
    rows.push((ConstraintKey::Homogenizing, h, None, 1.0));

    for (r, (arow, &br)) in inst.a().iter().zip(inst.b()).enumerate() {
        let mut m = SymMatrix::new(order);
        for (i, &a) in arow.iter().enumerate() {
            if a != 0 {
                m.add_linear(0, i + 1, a as f64);
            }
        }
        rows.push((ConstraintKey::Equality(r), m, None, br as f64));
    }

    if inst.m() > 0 {
        let mut m = SymMatrix::new(order);
        for i in 0..n {
            let mut lin = 0i128;
            for (arow, &br) in inst.a().iter().zip(inst.b()) {
                lin += arow[i] as i128 * br as i128;
            }
            if lin != 0 {
                m.add_linear(0, i + 1, -2.0 * lin as f64);
            }
            for j in i..n {
                let g: i128 = inst.a().iter().map(|a| a[i] as i128 * a[j] as i128).sum();
                if g != 0 {
                    let coef = if i == j { g } else { 2 * g };
                    m.add_linear(i + 1, j + 1, coef as f64);
                }
            }
        }
        rows.push((ConstraintKey::SquaredEqualities, m, None, -(b_sq as f64)));
    }

    for i in 0..n {
        let ui = u[i] as f64;
        let d = i + 1;
        let mut m5 = SymMatrix::new(order);
        m5.add(d, d, -1.0);
        m5.add_linear(0, d, 1.0);
        rows.push((ConstraintKey::DiagIntegrality(i), m5, Some(3 * i), 0.0));
        let mut m6 = SymMatrix::new(order);
        m6.add(d, d, -1.0);
        m6.add_linear(0, d, 2.0 * ui);
        rows.push((ConstraintKey::DiagLowerMc(i), m6, Some(3 * i + 1), ui * ui));
        let mut m7 = SymMatrix::new(order);
        m7.add(d, d, 1.0);
        m7.add_linear(0, d, -ui);
        rows.push((ConstraintKey::DiagSecant(i), m7, Some(3 * i + 2), 0.0));
    }

    let mut row_keys = Vec::with_capacity(rows.len());
    let mut row_scale = Vec::with_capacity(rows.len());
    for (key, m, slack, rhs) in rows {
        let big = m.upper_entries().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
        let scale = if big > 0.0 { 1.0 / big } else { 1.0 };
        prog.rows.push(ConicRow {
            matrix: m.scaled(scale),
            slacks: slack.map(|s| vec![(s, scale)]).unwrap_or_default(),
            rhs: rhs * scale,
        });
        row_keys.push(key);
        row_scale.push(scale);
    }

    let mut catalog = Vec::with_capacity(2 * n * n.saturating_sub(1));
    for i in 0..n {
        for j in i + 1..n {
            for t in 1..=4 {
                catalog.push(descriptor(&u, i, j, t).expect("indices in range"));
            }
        }
    }

    Ok(SdpRelaxation {
        n,
        u,
        base: prog,
        row_keys,
        row_scale,
        catalog,
    })
}

impl SdpRelaxation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn u(&self) -> &[i64] {
        &self.u
    }

    pub fn base(&self) -> &ConicProgram {
        &self.base
    }

    pub fn row_keys(&self) -> &[ConstraintKey] {
        &self.row_keys
    }

    pub fn row_of(&self, key: ConstraintKey) -> Option<usize> {
        self.row_keys.iter().position(|&k| k == key)
    }

    /// Factor applied to row `k` when it was stored.
    pub fn row_scale(&self, k: usize) -> f64 {
        self.row_scale[k]
    }

    pub fn catalog(&self) -> &[LinearizationDescriptor] {
        &self.catalog
    }

    /// Position of `(i, j, t)` in the catalog, which is sorted
    /// lexicographically by `(i, j, t)`.
    pub fn catalog_index(&self, i: usize, j: usize, t: u8) -> Option<usize> {
        if i >= j || j >= self.n || !(1..=4).contains(&t) {
            return None;
        }
        let before_i = i * self.n - i * (i + 1) / 2;
        Some(4 * (before_i + (j - i - 1)) + (t as usize - 1))
    }

    pub fn descriptor(&self, i: usize, j: usize, t: u8) -> Result<LinearizationDescriptor, RelaxationError> {
        descriptor(&self.u, i, j, t)
    }

    /// The base program with `sum_t beta_t h_t` subtracted from the
    /// objective; `beta` pairs catalog positions with multipliers.
    pub fn oracle_program(&self, beta: &[(usize, f64)]) -> ConicProgram {
        let mut prog = self.base.clone();
        for &(idx, b) in beta {
            if b != 0.0 {
                self.catalog[idx].add_to(&mut prog.objective, -b);
            }
        }
        prog
    }

    /// `(X, x)` read off a lifted block.
    pub fn split_point(&self, z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.n;
        let xmat = z.view((1, 1), (n, n)).into_owned();
        let x = (0..n).map(|i| z[(0, i + 1)]).collect();
        (xmat, x)
    }

    /// `Z = (1, x)(1, x)^T`.
    pub fn embed_point(&self, x: &[f64]) -> Result<DMatrix<f64>, RelaxationError> {
        if x.len() != self.n {
            return Err(RelaxationError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let v: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
        Ok(DMatrix::from_fn(self.n + 1, self.n + 1, |a, b| v[a] * v[b]))
    }

    /// Slack values that make `Z` satisfy the inequality rows exactly.
    pub fn slacks_for(&self, z: &DMatrix<f64>) -> Vec<f64> {
        let mut s = vec![0.0; self.base.nn_count];
        for row in &self.base.rows {
            if let Some(&(j, coef)) = row.slacks.first() {
                s[j] = (row.rhs - row.matrix.inner(z)) / coef;
            }
        }
        s
    }

    /// `h_t(Z)` for every catalog entry.
    pub fn violations(&self, z: &DMatrix<f64>) -> Vec<f64> {
        par::map_chunked(&self.catalog, 1024, |d| d.eval_lifted(z))
    }

    /// Up to `count` catalog positions outside `exclude` with violation
    /// above `threshold`, most violated first; ties go to the
    /// lexicographically smaller `(i, j, t)`.
    pub fn most_violated(
        &self,
        z: &DMatrix<f64>,
        exclude: &BTreeSet<usize>,
        count: usize,
        threshold: f64,
    ) -> Vec<usize> {
        if count == 0 {
            return Vec::new();
        }
        let viol = self.violations(z);
        let mut cand: Vec<usize> = (0..viol.len())
            .filter(|k| !exclude.contains(k) && viol[*k] > threshold)
            .collect();
        cand.sort_by(|&a, &b| viol[b].total_cmp(&viol[a]).then(a.cmp(&b)));
        cand.truncate(count);
        cand
    }

    /// Multipliers of the squared-equality and diagonal rows in the sign
    /// convention of the source rows.
    pub fn inner_duals(&self, sol: &ConicSolution) -> InnerDuals {
        let mut alpha = 0.0;
        let mut parts = vec![[0.0; 3]; self.n];
        for (k, key) in self.row_keys.iter().enumerate() {
            let y = sol.dual[k] * self.row_scale[k];
            match *key {
                ConstraintKey::SquaredEqualities => alpha = -y,
                ConstraintKey::DiagIntegrality(i) => parts[i][0] = y,
                ConstraintKey::DiagLowerMc(i) => parts[i][1] = y,
                ConstraintKey::DiagSecant(i) => parts[i][2] = y,
                _ => {}
            }
        }
        InnerDuals {
            alpha,
            lambda_parts: parts,
        }
    }
}

/// Result of one oracle evaluation on the face of the PSD cone that
/// contains every feasible point.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Dual objective of the solve; an upper bound on the oracle maximum.
    pub value: f64,
    pub primal_value: f64,
    /// Solution in terms of the full program returned by
    /// [`SdpRelaxation::oracle_program`], with a completed dual.
    pub solution: ConicSolution,
    pub duals: InnerDuals,
    pub status: ConicStatus,
    pub iterations: usize,
    /// Residuals of the reduced solve.
    pub kkt: KktReport,
}

/// How a row of the reduced program maps back to the full program.
#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Kept(usize),
    /// Secant row of a binary variable turned into an equality; carries the
    /// integrality row it absorbs.
    Merged { secant: usize, integrality: usize },
}

impl SdpRelaxation {
    /// `P = sum_r v_r v_r^T` with `v_r = (-b_r, a_r)`; every feasible `Z`
    /// has `<P, Z> = 0` and hence `P Z = 0`.
    fn face_generator(&self) -> Option<DMatrix<f64>> {
        let k = self.row_of(ConstraintKey::SquaredEqualities)?;
        let row = &self.base.rows[k];
        let mut p = row.matrix.scaled(1.0 / self.row_scale[k]).to_dense();
        p[(0, 0)] -= row.rhs / self.row_scale[k];
        Some(p)
    }

    /// Orthonormal basis of the null space of the face generator, or the
    /// identity without equalities.
    fn face_basis(&self) -> DMatrix<f64> {
        let order = self.n + 1;
        let Some(p) = self.face_generator() else {
            return DMatrix::identity(order, order);
        };
        let eig = SymmetricEigen::new(p);
        let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cols: Vec<usize> = (0..order)
            .filter(|&c| eig.eigenvalues[c].abs() <= 1e-10 * top.max(1.0))
            .collect();
        let mut v = DMatrix::zeros(order, cols.len());
        for (dst, &c) in cols.iter().enumerate() {
            v.set_column(dst, &eig.eigenvectors.column(c));
        }
        v
    }

    fn binary_pair(&self, i: usize) -> Option<(usize, usize)> {
        if self.u[i] != 1 {
            return None;
        }
        Some((
            self.row_of(ConstraintKey::DiagSecant(i))?,
            self.row_of(ConstraintKey::DiagIntegrality(i))?,
        ))
    }

    fn reduce(&self, prog: &ConicProgram, v: &DMatrix<f64>) -> (ConicProgram, Vec<RowOrigin>, Vec<Option<usize>>) {
        let d = v.ncols();
        let project = |m: &SymMatrix| -> SymMatrix {
            let dense = v.transpose() * m.to_dense() * v;
            let mut out = SymMatrix::new(d);
            for a in 0..d {
                for b in a..d {
                    let val = 0.5 * (dense[(a, b)] + dense[(b, a)]);
                    if val.abs() > 1e-14 {
                        out.add(a, b, val);
                    }
                }
            }
            out
        };
        let mut slack_map = vec![None; prog.nn_count];
        let mut nn = 0;
        let mut rows = Vec::new();
        let mut origin = Vec::new();
        let merged: BTreeMap<usize, usize> = (0..self.n).filter_map(|i| self.binary_pair(i)).collect();
        let absorbed: BTreeSet<usize> = merged.values().copied().collect();
        let has_face = self.row_of(ConstraintKey::SquaredEqualities).is_some();
        for (k, key) in self.row_keys.iter().enumerate() {
            match key {
                ConstraintKey::Equality(_) | ConstraintKey::SquaredEqualities if has_face => continue,
                _ if absorbed.contains(&k) => continue,
                _ => {}
            }
            let row = &prog.rows[k];
            if let Some(&integrality) = merged.get(&k) {
                rows.push(ConicRow {
                    matrix: project(&row.matrix),
                    slacks: Vec::new(),
                    rhs: row.rhs,
                });
                origin.push(RowOrigin::Merged { secant: k, integrality });
                continue;
            }
            let slacks = row
                .slacks
                .iter()
                .map(|&(j, c)| {
                    let idx = *slack_map[j].get_or_insert_with(|| {
                        nn += 1;
                        nn - 1
                    });
                    (idx, c)
                })
                .collect();
            rows.push(ConicRow {
                matrix: project(&row.matrix),
                slacks,
                rhs: row.rhs,
            });
            origin.push(RowOrigin::Kept(k));
        }
        let reduced = ConicProgram {
            psd_order: d,
            nn_count: nn,
            objective: project(&prog.objective),
            objective_slacks: vec![0.0; nn],
            rows,
        };
        (reduced, origin, slack_map)
    }

    /// Maximizes the Lagrangian for multipliers `beta` (catalog position,
    /// value) over the relaxation.
    ///
    /// The program is solved on the minimal face: `Z = V R V^T` where the
    /// columns of `V` span the null space of the squared-equality row, and
    /// for binary variables the integrality and secant rows collapse to
    /// `X_ii = x_i`. On that face the squared-equality row is void, so its
    /// multiplier `alpha` is completed afterwards: the smallest shift that
    /// makes the x-block of the dual slack positive semidefinite up to
    /// [`ALPHA_SLACK`]. The shift leaves the dual objective unchanged. The
    /// exact completion of the whole dual slack is typically unbounded
    /// because the relaxation has no interior point.
    /// The oracle program restricted to the face of the binary coordinates,
    /// as handed to the conic solver.
    pub fn reduced_program(&self, beta: &[(usize, f64)]) -> ConicProgram {
        let full = self.oracle_program(beta);
        self.reduce(&full, &self.face_basis()).0
    }

    pub fn solve_oracle(&self, beta: &[(usize, f64)], opts: &ConicOptions) -> Result<OracleResult, ConicError> {
        let full = self.oracle_program(beta);
        let v = self.face_basis();
        let (reduced, origin, slack_map) = self.reduce(&full, &v);
        let red = solve_conic_opts(&reduced, opts)?;
        let kkt = check_kkt(&reduced, &red);

        let mut z = &v * &red.z * v.transpose();
        symmetrize(&mut z);
        let mut s = vec![0.0; full.nn_count];
        for (j, m) in slack_map.iter().enumerate() {
            if let Some(r) = m {
                s[j] = red.s[*r];
            }
        }
        let mut y = vec![0.0; full.rows.len()];
        for (o, &yr) in origin.iter().zip(&red.dual) {
            match *o {
                RowOrigin::Kept(k) => y[k] = yr,
                RowOrigin::Merged { secant, integrality } => {
                    if yr >= 0.0 {
                        y[secant] = yr;
                    } else {
                        y[integrality] = -yr * self.row_scale[integrality] / self.row_scale[secant];
                    }
                }
            }
        }
        if let Some(k4) = self.row_of(ConstraintKey::SquaredEqualities) {
            let (w0, _) = full.dual_slack(&y);
            let n = self.n;
            let wx = w0.view((1, 1), (n, n)).into_owned();
            let g = self.face_generator().expect("row present").view((1, 1), (n, n)).into_owned();
            let scale = 1.0 + full.objective.upper_entries().map(|(_, _, v)| v.abs()).fold(0.0, f64::max);
            let delta = complete_along(&wx, &g, ALPHA_SLACK * scale);
            let k0 = self.row_of(ConstraintKey::Homogenizing).expect("always present");
            let rhs4 = full.rows[k4].rhs / self.row_scale[k4];
            y[k4] += delta / self.row_scale[k4];
            y[k0] -= delta * rhs4;
        }
        let (w, w_slacks) = full.dual_slack(&y);
        let solution = ConicSolution {
            obj_primal: full.primal_objective(&z, &s),
            obj_dual: full.rows.iter().zip(&y).map(|(r, yk)| r.rhs * yk).sum(),
            z,
            s,
            dual: y,
            w,
            w_slacks,
            status: red.status,
            iterations: red.iterations,
            dropped_rows: Vec::new(),
            log: red.log.clone(),
        };
        let duals = self.inner_duals(&solution);
        Ok(OracleResult {
            value: red.obj_dual,
            primal_value: red.obj_primal,
            duals,
            status: red.status,
            iterations: red.iterations,
            kkt,
            solution,
        })
    }
}

/// Relative eigenvalue slack left on the x-block when completing `alpha`;
/// the reformulation absorbs it through its concavity repair.
pub const ALPHA_SLACK: f64 = 1e-7;

/// Smallest `delta >= 0` (to bisection accuracy) with
/// `lambda_min(w0 + delta p) >= -slack`, capped at a large multiple of the
/// data scale.
fn complete_along(w0: &DMatrix<f64>, p: &DMatrix<f64>, slack: f64) -> f64 {
    let lmin = |d: f64| eigen_extremes(&(w0 + p * d)).0;
    let base = lmin(0.0);
    if base >= 0.0 {
        return 0.0;
    }
    let scale = 1.0 + w0.amax();
    let target = -slack;
    let pnorm = p.amax().max(1e-300);
    let mut hi = scale / pnorm;
    let cap = 1e14 * scale / pnorm;
    while lmin(hi) < target && hi < cap {
        hi *= 4.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if lmin(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
