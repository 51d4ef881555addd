//! Primal-dual interior-point method for convex quadratic programs
//!
//! ```text
//! min  1/2 v^T P v + q^T v
//! s.t. A v = b,   G v <= h,   l <= v <= u
//! ```
//!
//! with `P` positive semidefinite. Bounds are folded into `G`. Steps follow
//! Mehrotra's predictor-corrector on the reduced system
//! `(P + G^T D G) dv + A^T dy = r`, solved by Cholesky and a Schur
//! complement on `A`. Dependent equality rows are dropped up front.
//!
//! Infeasibility is decided in two stages: an interval test on each
//! equality row against the bounds, then, when the main solve does not
//! converge, an elastic phase-1 program minimizing the total violation of
//! the equalities. A positive phase-1 optimum, with its multipliers, is the
//! infeasibility certificate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, max_step_nn};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("malformed QP: {0}")]
    Malformed(String),
}

/// Sparse row `sum_k coef_k v_{idx_k}`.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub n: usize,
    /// Dense symmetric positive semidefinite Hessian.
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub eq_rows: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    pub ineq_rows: Vec<SparseRow>,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p: DMatrix::zeros(n, n),
            q: vec![0.0; n],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        let vv = DVector::from_column_slice(v);
        0.5 * vv.dot(&(&self.p * &vv)) + linalg::dot(&self.q, v)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.n;
        if self.p.nrows() != n || self.p.ncols() != n || self.q.len() != n {
            return Err(QpError::Malformed("objective dimensions".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Malformed("bound dimensions".into()));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.ineq_rows.len() != self.ineq_rhs.len() {
            return Err(QpError::Malformed("row and rhs counts differ".into()));
        }
        let bad_idx = |rows: &[SparseRow]| rows.iter().flatten().any(|&(j, _)| j >= n);
        if bad_idx(&self.eq_rows) || bad_idx(&self.ineq_rows) {
            return Err(QpError::Malformed("row index out of range".into()));
        }
        Ok(())
    }

    /// Largest violation of the constraints at `v`.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let row = |r: &SparseRow| r.iter().map(|&(j, c)| c * v[j]).sum::<f64>();
        let mut worst: f64 = 0.0;
        for (r, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((row(r) - b).abs());
        }
        for (r, &h) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(row(r) - h);
        }
        for j in 0..self.n {
            worst = worst.max(self.lower[j] - v[j]).max(v[j] - self.upper[j]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    /// Relative gap and residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub obj_primal: f64,
    /// Lagrangian dual objective; a lower bound up to the dual residual.
    pub obj_dual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Total violation of the equalities found by phase 1 when infeasible.
    pub infeasibility: f64,
    /// Multipliers of `ineq_rows`, in order.
    pub ineq_duals: Vec<f64>,
}

/// Box implied by the bounds for each equality row: infeasible when `b`
/// lies outside `[min a^T v, max a^T v]` by more than `tol`.
fn interval_infeasible(prob: &QpProblem, tol: f64) -> bool {
    prob.eq_rows.iter().zip(&prob.eq_rhs).any(|(row, &b)| {
        let (mut lo, mut hi) = (0.0, 0.0);
        for &(j, c) in row {
            let (l, u) = (prob.lower[j], prob.upper[j]);
            if c > 0.0 {
                lo += c * l;
                hi += c * u;
            } else {
                lo += c * u;
                hi += c * l;
            }
        }
        b < lo - tol * (1.0 + b.abs()) || b > hi + tol * (1.0 + b.abs())
    })
}

/// Best-iterate merit still returned, as `MaxIter`, when the run fails.
const INACCURATE_TOL: f64 = 1e-6;

pub fn solve_qp(prob: &QpProblem, opts: &QpOptions) -> Result<QpSolution, QpError> {
    prob.validate()?;
    if (0..prob.n).any(|j| prob.lower[j] > prob.upper[j]) || interval_infeasible(prob, 1e-9) {
        return Ok(infeasible(prob.n, f64::INFINITY));
    }
    let sol = ipm(prob, opts);
    if sol.status == QpStatus::Optimal {
        return Ok(sol);
    }
    let violation = phase_one(prob, opts);
    let scale = 1.0 + linalg::norm_inf(&prob.eq_rhs);
    if violation > 1e-6 * scale {
        return Ok(infeasible(prob.n, violation));
    }
    Ok(sol)
}

fn infeasible(n: usize, violation: f64) -> QpSolution {
    QpSolution {
        x: vec![0.0; n],
        obj_primal: f64::INFINITY,
        obj_dual: f64::INFINITY,
        status: QpStatus::Infeasible,
        iterations: 0,
        infeasibility: violation,
        ineq_duals: Vec::new(),
    }
}

/// Optimal total violation of `A v = b` over the remaining constraints.
fn phase_one(prob: &QpProblem, opts: &QpOptions) -> f64 {
    let n = prob.n;
    let m = prob.eq_rows.len();
    if m == 0 {
        return 0.0;
    }
    let mut p1 = QpProblem::new(n + 2 * m);
    for j in 0..n {
        p1.lower[j] = prob.lower[j];
        p1.upper[j] = prob.upper[j];
    }
    for k in 0..2 * m {
        p1.q[n + k] = 1.0;
        p1.lower[n + k] = 0.0;
    }
    for (r, (row, &b)) in prob.eq_rows.iter().zip(&prob.eq_rhs).enumerate() {
        let mut row = row.clone();
        row.push((n + 2 * r, 1.0));
        row.push((n + 2 * r + 1, -1.0));
        p1.eq_rows.push(row);
        p1.eq_rhs.push(b);
    }
    p1.ineq_rows = prob.ineq_rows.clone();
    p1.ineq_rhs = prob.ineq_rhs.clone();
    let sol = ipm(&p1, opts);
    match sol.status {
        QpStatus::Optimal => sol.obj_dual.max(0.0),
        _ => sol.obj_primal.max(0.0),
    }
}

/// Dense inequality system `G v <= h` with bounds appended.
fn inequality_system(prob: &QpProblem) -> (Vec<SparseRow>, Vec<f64>) {
    let mut g = prob.ineq_rows.clone();
    let mut h = prob.ineq_rhs.clone();
    for j in 0..prob.n {
        if prob.upper[j].is_finite() {
            g.push(vec![(j, 1.0)]);
            h.push(prob.upper[j]);
        }
        if prob.lower[j].is_finite() {
            g.push(vec![(j, -1.0)]);
            h.push(-prob.lower[j]);
        }
    }
    (g, h)
}

fn row_dot(row: &SparseRow, v: &[f64]) -> f64 {
    row.iter().map(|&(j, c)| c * v[j]).sum()
}

fn ipm(prob: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = prob.n;
    let (g, h) = inequality_system(prob);
    let mi = g.len();

    let dense_eq: Vec<Vec<f64>> = prob
        .eq_rows
        .iter()
        .map(|r| {
            let mut d = vec![0.0; n];
            for &(j, c) in r {
                d[j] += c;
            }
            d
        })
        .collect();
    let keep = linalg::independent_rows(&dense_eq, 1e-10);
    if keep.len() < dense_eq.len() {
        log::debug!("qp presolve dropped {} dependent equality row(s)", dense_eq.len() - keep.len());
    }
    let a_rows: Vec<&SparseRow> = keep.iter().map(|&k| &prob.eq_rows[k]).collect();
    let b: Vec<f64> = keep.iter().map(|&k| prob.eq_rhs[k]).collect();
    let me = a_rows.len();
    let a_mat = DMatrix::from_fn(me, n, |r, j| dense_eq[keep[r]][j]);

    let scale_p = 1.0 + prob.p.amax() + linalg::norm_inf(&prob.q);
    let scale_b = 1.0 + linalg::norm_inf(&b).max(linalg::norm_inf(&h));

    // start: mid-box point, slacks at least 1
    let mut x: Vec<f64> = (0..n)
        .map(|j| {
            let (l, u) = (prob.lower[j], prob.upper[j]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l + 1.0,
                (false, true) => u - 1.0,
                _ => 0.0,
            }
        })
        .collect();
    let mut s: Vec<f64> = (0..mi).map(|k| (h[k] - row_dot(&g[k], &x)).max(1.0)).collect();
    let mut z = vec![1.0; mi];
    let mut y = vec![0.0; me];

    let pobj_of = |x: &[f64]| prob.objective(x);
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut dobj = f64::NEG_INFINITY;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, f64)> = None;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let xv = DVector::from_column_slice(&x);
        let px = &prob.p * &xv;
        // rd = P x + q + A^T y + G^T z
        let mut rd: Vec<f64> = (0..n).map(|j| px[j] + prob.q[j]).collect();
        for (r, row) in a_rows.iter().enumerate() {
            for &(j, c) in row.iter() {
                rd[j] += c * y[r];
            }
        }
        for (k, row) in g.iter().enumerate() {
            for &(j, c) in row {
                rd[j] += c * z[k];
            }
        }
        let rp: Vec<f64> = (0..me).map(|r| row_dot(a_rows[r], &x) - b[r]).collect();
        let ri: Vec<f64> = (0..mi).map(|k| row_dot(&g[k], &x) + s[k] - h[k]).collect();
        let mu = if mi > 0 { linalg::dot(&s, &z) / mi as f64 } else { 0.0 };

        let xpx = xv.dot(&px);
        let pobj = 0.5 * xpx + linalg::dot(&prob.q, &x);
        dobj = -0.5 * xpx - linalg::dot(&b, &y) - linalg::dot(&h, &z);
        let dres = linalg::norm_inf(&rd) / scale_p;
        let pres = linalg::norm_inf(&rp).max(linalg::norm_inf(&ri)) / scale_b;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
        log::trace!("qp {iter}: pobj {pobj:.10e} dobj {dobj:.10e} dres {dres:.2e} pres {pres:.2e} gap {gap:.2e} mu {mu:.2e}");
        if dres <= opts.tol && pres <= opts.tol && gap <= opts.tol {
            status = QpStatus::Optimal;
            best = None;
            break;
        }
        let merit = dres.max(pres).max(gap);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, x.clone(), z.clone(), dobj));
        } else if best.as_ref().is_some_and(|b| b.0 <= INACCURATE_TOL && merit > 1e6 * b.0) {
            log::debug!("qp: diverging after a near-optimal iterate at iteration {iter}");
            break;
        }
        // Complementarity exhausted: further steps only amplify rounding.
        if mu <= 1e-6 * opts.tol * (1.0 + pobj.abs()) {
            break;
        }

        let d: Vec<f64> = (0..mi).map(|k| z[k] / s[k]).collect();
        let mut kmat = prob.p.clone();
        for (k, row) in g.iter().enumerate() {
            for &(j1, c1) in row {
                for &(j2, c2) in row {
                    kmat[(j1, j2)] += d[k] * c1 * c2;
                }
            }
        }
        let reg = 1e-12 * scale_p;
        for j in 0..n {
            kmat[(j, j)] += reg;
        }
        // Large z/s ratios near the boundary can defeat the factorization;
        // escalate a diagonal shift relative to the largest pivot.
        let max_diag = (0..n).map(|j| kmat[(j, j)]).fold(0.0, f64::max);
        let mut kchol = if max_diag.is_finite() { kmat.clone().cholesky() } else { None };
        let mut shift = 1e-14 * max_diag.max(1.0);
        for _ in 0..4 {
            if kchol.is_some() || !max_diag.is_finite() {
                break;
            }
            let mut shifted = kmat.clone();
            for j in 0..n {
                shifted[(j, j)] += shift;
            }
            kchol = shifted.cholesky();
            shift *= 100.0;
        }
        let Some(kchol) = kchol else {
            log::debug!("qp: K not positive definite at iteration {iter}");
            status = QpStatus::NumericalFailure;
            break;
        };
        let kinv_at = kchol.solve(&a_mat.transpose());
        let schur = &a_mat * &kinv_at;
        let schur_chol = if me > 0 {
            match schur.clone().cholesky() {
                Some(c) => Some(c),
                None => {
                    let mut r = schur.clone();
                    for i in 0..me {
                        r[(i, i)] += 1e-12 * (1.0 + schur.amax());
                    }
                    match r.cholesky() {
                        Some(c) => Some(c),
                        None => {
                            status = QpStatus::NumericalFailure;
                            break;
                        }
                    }
                }
            }
        } else {
            None
        };

        // rc: target complementarity residual s z - sigma mu + corr
        let solve = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            // r1 = -rd - G^T (D ri - rc / s)
            let mut r1 = DVector::from_iterator(n, rd.iter().map(|v| -v));
            for (k, row) in g.iter().enumerate() {
                let t = d[k] * ri[k] - rc[k] / s[k];
                for &(j, c) in row {
                    r1[j] -= c * t;
                }
            }
            // K dx + A^T dy = r1, A dx = -rp
            let reduced = |e1: &DVector<f64>, e2: &DVector<f64>| {
                let ke1 = kchol.solve(e1);
                let dy = match &schur_chol {
                    Some(sc) => {
                        let rhs = &a_mat * &ke1 - e2;
                        let mut dy = sc.solve(&rhs);
                        for _ in 0..2 {
                            let res = &rhs - &schur * &dy;
                            dy += sc.solve(&res);
                        }
                        dy
                    }
                    None => DVector::zeros(0),
                };
                let dx = &ke1 - &kinv_at * &dy;
                (dx, dy)
            };
            let e2 = -DVector::from_column_slice(&rp);
            let (mut dx, mut dy) = reduced(&r1, &e2);
            for _ in 0..2 {
                let res1 = &r1 - &kmat * &dx - a_mat.transpose() * &dy;
                let res2 = &e2 - &a_mat * &dx;
                let (cx, cy) = reduced(&res1, &res2);
                dx += cx;
                dy += cy;
            }
            let dxv: Vec<f64> = dx.iter().copied().collect();
            let gdx: Vec<f64> = g.iter().map(|row| row_dot(row, &dxv)).collect();
            let dz: Vec<f64> = (0..mi).map(|k| d[k] * (gdx[k] + ri[k]) - rc[k] / s[k]).collect();
            let ds: Vec<f64> = (0..mi).map(|k| -ri[k] - gdx[k]).collect();
            (dxv, dy.iter().copied().collect(), dz, ds)
        };

        let rc_aff: Vec<f64> = (0..mi).map(|k| s[k] * z[k]).collect();
        let (_, _, dz_a, ds_a) = solve(&rc_aff);
        let ap_a = max_step_nn(&s, &ds_a).min(1.0);
        let ad_a = max_step_nn(&z, &dz_a).min(1.0);
        let mu_aff = if mi > 0 {
            (0..mi)
                .map(|k| (s[k] + ap_a * ds_a[k]) * (z[k] + ad_a * dz_a[k]))
                .sum::<f64>()
                / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let rc: Vec<f64> = (0..mi)
            .map(|k| s[k] * z[k] - sigma * mu + ds_a[k] * dz_a[k])
            .collect();
        let (dx, dy, dz, ds) = solve(&rc);
        if dx.iter().chain(&dz).any(|v| !v.is_finite()) {
            status = QpStatus::NumericalFailure;
            break;
        }
        let ap = (0.99 * max_step_nn(&s, &ds)).min(1.0);
        let ad = (0.99 * max_step_nn(&z, &dz)).min(1.0);
        for j in 0..n {
            x[j] += ap * dx[j];
        }
        for k in 0..mi {
            s[k] += ap * ds[k];
            z[k] += ad * dz[k];
        }
        for r in 0..me {
            y[r] += ad * dy[r];
        }
        iterations = iter + 1;
        if ap < 1e-12 && ad < 1e-12 {
            log::debug!("qp: step collapsed at iteration {iter}");
            status = QpStatus::NumericalFailure;
            break;
        }
    }

    if status != QpStatus::Optimal {
        if let Some((merit, bx, bz, bd)) = best {
            if merit <= INACCURATE_TOL {
                status = if merit <= 10.0 * opts.tol { QpStatus::Optimal } else { QpStatus::MaxIter };
                x = bx;
                z = bz;
                dobj = bd;
            }
        }
    }
    QpSolution {
        obj_primal: pobj_of(&x),
        obj_dual: dobj,
        x,
        status,
        iterations,
        infeasibility: 0.0,
        ineq_duals: z[..prob.ineq_rows.len()].to_vec(),
    }
}
