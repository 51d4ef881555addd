//! Dense primal-dual interior-point method for conic programs with a single
//! PSD block and a nonnegative orthant:
//!
//! ```text
//! max  <C, Z> + c^T s
//! s.t. <A_k, Z> + a_k^T s = b_k      k = 1..M
//!      Z PSD (order N),  s >= 0
//! ```
//!
//! with dual `min b^T y` s.t. `W = sum_k y_k A_k - C` PSD and
//! `w = sum_k y_k a_k - c >= 0`.
//!
//! Iterates follow the HKM search direction with Mehrotra's
//! predictor-corrector from the infeasible start `Z = W = I`, `s = w = 1`,
//! `y = 0`. Dependent equality rows are removed before the solve and get a
//! zero multiplier. A single solve is sequential and deterministic.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, eigen_extremes, max_step_nn, max_step_psd, symmetrize};

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Symmetric matrix stored as its upper triangle, `(i, j)` with `i <= j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    order: usize,
    upper: BTreeMap<(usize, usize), f64>,
}

impl SymMatrix {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            upper: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Adds `v` to entries `(i, j)` and `(j, i)` (once when `i == j`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.order && j < self.order, "entry outside the matrix");
        let key = (i.min(j), i.max(j));
        *self.upper.entry(key).or_insert(0.0) += v;
    }

    /// Adds the coefficient `v` of the scalar `Z_ij` to the linear form
    /// `<self, Z>`: off-diagonal coefficients are split over both halves.
    pub fn add_linear(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.add(i, i, v);
        } else {
            self.add(i, j, 0.5 * v);
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    pub fn nnz_upper(&self) -> usize {
        self.upper.len()
    }

    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    /// `(i, j, v)` for every nonzero position of the full matrix.
    pub fn full_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.upper.len());
        for (&(i, j), &v) in &self.upper {
            if v == 0.0 {
                continue;
            }
            out.push((i, j, v));
            if i != j {
                out.push((j, i, v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.order, self.order);
        for (i, j, v) in self.full_entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// `<self, Z>` = trace(self Z) for symmetric `Z`.
    pub fn inner(&self, z: &DMatrix<f64>) -> f64 {
        self.upper
            .iter()
            .map(|(&(i, j), &v)| if i == j { v * z[(i, i)] } else { 2.0 * v * z[(i, j)] })
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            order: self.order,
            upper: self.upper.iter().map(|(&k, &v)| (k, factor * v)).collect(),
        }
    }
}

/// One equality row `<matrix, Z> + sum slack_coef * s = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicRow {
    pub matrix: SymMatrix,
    pub slacks: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub psd_order: usize,
    pub nn_count: usize,
    pub objective: SymMatrix,
    pub objective_slacks: Vec<f64>,
    pub rows: Vec<ConicRow>,
}

impl ConicProgram {
    pub fn new(psd_order: usize, nn_count: usize) -> Self {
        Self {
            psd_order,
            nn_count,
            objective: SymMatrix::new(psd_order),
            objective_slacks: vec![0.0; nn_count],
            rows: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        if self.objective.order() != self.psd_order {
            return Err(ConicError::Malformed("objective order differs from the PSD block".into()));
        }
        if self.objective_slacks.len() != self.nn_count {
            return Err(ConicError::Malformed("objective slack length differs from nn_count".into()));
        }
        for (k, row) in self.rows.iter().enumerate() {
            if row.matrix.order() != self.psd_order {
                return Err(ConicError::Malformed(format!("row {k} has the wrong matrix order")));
            }
            if row.slacks.iter().any(|&(j, _)| j >= self.nn_count) {
                return Err(ConicError::Malformed(format!("row {k} references a missing slack")));
            }
            if !row.rhs.is_finite() {
                return Err(ConicError::Malformed(format!("row {k} has a non-finite rhs")));
            }
        }
        Ok(())
    }

    /// `<A_k, Z> + a_k^T s` for every row.
    pub fn apply(&self, z: &DMatrix<f64>, s: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.matrix.inner(z) + r.slacks.iter().map(|&(j, v)| v * s[j]).sum::<f64>())
            .collect()
    }

    pub fn primal_objective(&self, z: &DMatrix<f64>, s: &[f64]) -> f64 {
        self.objective.inner(z) + linalg::dot(&self.objective_slacks, s)
    }

    /// `(sum y_k A_k - C, sum y_k a_k - c)`.
    pub fn dual_slack(&self, y: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let mut w = -self.objective.to_dense();
        let mut ws: Vec<f64> = self.objective_slacks.iter().map(|v| -v).collect();
        for (row, &yk) in self.rows.iter().zip(y) {
            if yk == 0.0 {
                continue;
            }
            for (i, j, v) in row.matrix.full_entries() {
                w[(i, j)] += yk * v;
            }
            for &(j, v) in &row.slacks {
                ws[j] += yk * v;
            }
        }
        (w, ws)
    }

    /// Copy with the objective multiplied by `factor`.
    pub fn scaled_objective(&self, factor: f64) -> ConicProgram {
        ConicProgram {
            objective: self.objective.scaled(factor),
            objective_slacks: self.objective_slacks.iter().map(|v| factor * v).collect(),
            ..self.clone()
        }
    }
}

/// Relative stopping tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// `|pobj - dobj| <= gap * (1 + |pobj|)`.
    pub gap: f64,
    /// Primal and dual residual norms relative to `1 + ||data||`.
    pub feas: f64,
    /// Admissible negative eigenvalue of `Z`.
    pub psd: f64,
    /// Admissible negative slack.
    pub nn: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            gap: 1e-8,
            feas: 1e-8,
            psd: 1e-9,
            nn: 1e-9,
        }
    }
}

impl Tolerances {
    /// Looser gap used for binary benchmarks.
    pub fn loose() -> Self {
        Self {
            gap: 1e-4,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicOptions {
    pub tol: Tolerances,
    pub max_iter: usize,
    /// Initial iterate `Z = W = start_scale * I`, `s = w = start_scale`.
    pub start_scale: f64,
    /// Fraction of the step to the boundary taken by the corrector.
    pub step_fraction: f64,
    pub keep_log: bool,
}

impl Default for ConicOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            max_iter: 100,
            start_scale: 1.0,
            step_fraction: 0.95,
            keep_log: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConicStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub obj_primal: f64,
    pub obj_dual: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub z: DMatrix<f64>,
    pub s: Vec<f64>,
    /// One multiplier per row of the input program.
    pub dual: Vec<f64>,
    pub w: DMatrix<f64>,
    pub w_slacks: Vec<f64>,
    pub obj_primal: f64,
    pub obj_dual: f64,
    pub status: ConicStatus,
    pub iterations: usize,
    /// Rows dropped as linearly dependent.
    pub dropped_rows: Vec<usize>,
    pub log: Vec<IterateRecord>,
}

impl ConicSolution {
    pub fn write_log_csv(&self, mut out: impl Write) -> Result<(), ConicError> {
        writeln!(out, "iteration,obj_primal,obj_dual,primal_infeas,dual_infeas,mu,step_primal,step_dual")?;
        for r in &self.log {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.3e},{:.3e},{:.3e},{:.4},{:.4}",
                r.iteration, r.obj_primal, r.obj_dual, r.primal_infeas, r.dual_infeas, r.mu, r.step_primal, r.step_dual
            )?;
        }
        Ok(())
    }
}

/// Row data in the form used inside the iteration.
struct Row {
    entries: Vec<(usize, usize, f64)>,
    dense: Option<DMatrix<f64>>,
    slacks: Vec<(usize, f64)>,
}

impl Row {
    fn inner(&self, m: &DMatrix<f64>) -> f64 {
        self.entries.iter().map(|&(i, j, v)| v * m[(i, j)]).sum()
    }
}

struct Workspace<'a> {
    prog: &'a ConicProgram,
    rows: Vec<Row>,
    b: Vec<f64>,
    c_mat: DMatrix<f64>,
    c_nn: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn adjoint(&self, y: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.prog.psd_order;
        let mut m = DMatrix::zeros(n, n);
        let mut v = vec![0.0; self.prog.nn_count];
        for (row, &yk) in self.rows.iter().zip(y) {
            for &(i, j, a) in &row.entries {
                m[(i, j)] += yk * a;
            }
            for &(j, a) in &row.slacks {
                v[j] += yk * a;
            }
        }
        (m, v)
    }

    fn apply(&self, z: &DMatrix<f64>, s: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.inner(z) + r.slacks.iter().map(|&(j, a)| a * s[j]).sum::<f64>())
            .collect()
    }

    /// Schur complement `M_kl = tr(A_k Z A_l W^-1) + sum_j a_kj a_lj s_j / w_j`.
    fn schur(&self, z: &DMatrix<f64>, winv: &DMatrix<f64>, s: &[f64], w: &[f64]) -> DMatrix<f64> {
        let m = self.rows.len();
        let n = self.prog.psd_order;
        let mut out = DMatrix::zeros(m, m);
        for k in 0..m {
            // G_k = Z A_k W^-1
            let g = match &self.rows[k].dense {
                Some(d) => z * d * winv,
                None => {
                    let mut g = DMatrix::zeros(n, n);
                    for &(a, b, v) in &self.rows[k].entries {
                        for r in 0..n {
                            let zr = z[(r, a)] * v;
                            if zr == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                g[(r, c)] += zr * winv[(b, c)];
                            }
                        }
                    }
                    g
                }
            };
            for l in k..m {
                let val = self.rows[l].inner(&g);
                out[(k, l)] = val;
                out[(l, k)] = val;
            }
        }
        let d: Vec<f64> = s.iter().zip(w).map(|(a, b)| a / b).collect();
        for k in 0..m {
            for &(j1, a1) in &self.rows[k].slacks {
                for l in k..m {
                    for &(j2, a2) in &self.rows[l].slacks {
                        if j1 == j2 {
                            let v = a1 * a2 * d[j1];
                            out[(k, l)] += v;
                            if l != k {
                                out[(l, k)] += v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    /// Cholesky of `m`, retried with a growing diagonal shift when `m` is
    /// numerically singular; LU as the last resort.
    fn new(m: DMatrix<f64>) -> Option<Self> {
        if let Some(c) = m.clone().cholesky() {
            return Some(Factor::Chol(c));
        }
        let scale = m.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut shift = 1e-14;
        while shift <= 1e-6 {
            let mut r = m.clone();
            for i in 0..r.nrows() {
                r[(i, i)] += shift * scale;
            }
            if let Some(c) = r.cholesky() {
                return Some(Factor::Chol(c));
            }
            shift *= 100.0;
        }
        let lu = m.lu();
        if lu.is_invertible() {
            Some(Factor::Lu(lu))
        } else {
            None
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Chol(c) => Some(c.solve(rhs)),
            Factor::Lu(l) => l.solve(rhs),
        }
    }
}

struct Direction {
    dz: DMatrix<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
    dw: DMatrix<f64>,
    dws: Vec<f64>,
}

/// Solves `prog` from the default start; when that start stalls, retries
/// once from a shifted start scaled by the data magnitude.
pub fn solve_conic(prog: &ConicProgram, tol: Tolerances, max_iter: usize) -> Result<ConicSolution, ConicError> {
    solve_conic_opts(
        prog,
        &ConicOptions {
            tol,
            max_iter,
            ..ConicOptions::default()
        },
    )
}

/// [`solve_conic`] with explicit options; the restart keeps every option
/// except the start scale.
pub fn solve_conic_opts(prog: &ConicProgram, opts: &ConicOptions) -> Result<ConicSolution, ConicError> {
    let first = solve_conic_with(prog, opts)?;
    if first.status == ConicStatus::Optimal {
        return Ok(first);
    }
    let scale = 1.0
        + prog
            .rows
            .iter()
            .map(|r| r.rhs.abs())
            .fold(0.0, f64::max)
            .sqrt();
    let mut restart = 10.0 * scale;
    if (restart - opts.start_scale).abs() <= 1e-12 * restart {
        restart *= 10.0;
    }
    log::debug!("conic restart from a shifted start, scale {restart}");
    let retry = solve_conic_with(
        prog,
        &ConicOptions {
            start_scale: restart,
            ..*opts
        },
    )?;
    let better = retry.status == ConicStatus::Optimal || kkt_merit(prog, &retry) < kkt_merit(prog, &first);
    Ok(if better { retry } else { first })
}

fn kkt_merit(prog: &ConicProgram, sol: &ConicSolution) -> f64 {
    let r = check_kkt(prog, sol);
    r.primal_residual.max(r.dual_residual).max(r.gap)
}

/// Full-control variant of [`solve_conic`] without the restart.
pub fn solve_conic_with(prog: &ConicProgram, opts: &ConicOptions) -> Result<ConicSolution, ConicError> {
    prog.validate()?;
    let n = prog.psd_order;
    let nn = prog.nn_count;

    // presolve: drop dependent rows
    let vecs: Vec<Vec<f64>> = prog
        .rows
        .iter()
        .map(|r| {
            let mut v = vec![0.0; n * (n + 1) / 2 + nn];
            for (i, j, a) in r.matrix.upper_entries() {
                let idx = j * (j + 1) / 2 + i;
                v[idx] = if i == j { a } else { a * std::f64::consts::SQRT_2 };
            }
            for &(j, a) in &r.slacks {
                v[n * (n + 1) / 2 + j] += a;
            }
            v
        })
        .collect();
    let keep = linalg::independent_rows(&vecs, 1e-10);
    let dropped: Vec<usize> = (0..prog.rows.len()).filter(|k| !keep.contains(k)).collect();
    if !dropped.is_empty() {
        log::warn!("conic presolve dropped {} dependent row(s): {:?}", dropped.len(), dropped);
    }
    let rows: Vec<Row> = keep
        .iter()
        .map(|&k| {
            let r = &prog.rows[k];
            let entries = r.matrix.full_entries();
            let dense = (entries.len() > 4 * n).then(|| r.matrix.to_dense());
            Row {
                entries,
                dense,
                slacks: r.slacks.clone(),
            }
        })
        .collect();
    let ws = Workspace {
        prog,
        rows,
        b: keep.iter().map(|&k| prog.rows[k].rhs).collect(),
        c_mat: prog.objective.to_dense(),
        c_nn: prog.objective_slacks.clone(),
    };
    let m = ws.rows.len();
    let nu = (n + nn).max(1) as f64;
    let b_norm = 1.0 + ws.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let c_norm = 1.0 + (ws.c_mat.norm_squared() + ws.c_nn.iter().map(|v| v * v).sum::<f64>()).sqrt();

    let s0 = opts.start_scale;
    let mut z = DMatrix::identity(n, n) * s0;
    let mut s = vec![s0; nn];
    let mut y = vec![0.0; m];
    let mut w = DMatrix::identity(n, n) * s0;
    let mut wv = vec![s0; nn];

    let mut log = Vec::new();
    let mut status = ConicStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let az = ws.apply(&z, &s);
        let rp: Vec<f64> = ws.b.iter().zip(&az).map(|(b, a)| b - a).collect();
        let (aty, aty_nn) = ws.adjoint(&y);
        let rd_mat = &aty - &ws.c_mat - &w;
        let rd_nn: Vec<f64> = aty_nn
            .iter()
            .zip(&ws.c_nn)
            .zip(&wv)
            .map(|((a, c), w)| a - c - w)
            .collect();
        let pobj = ws.c_mat.dot(&z) + linalg::dot(&ws.c_nn, &s);
        let dobj = linalg::dot(&ws.b, &y);
        let pinf = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        let dinf = (rd_mat.norm_squared() + rd_nn.iter().map(|v| v * v).sum::<f64>()).sqrt() / c_norm;
        let mu = (z.dot(&w) + linalg::dot(&s, &wv)) / nu;
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs());

        if pinf <= opts.tol.feas && dinf <= opts.tol.feas && rel_gap <= opts.tol.gap {
            status = ConicStatus::Optimal;
            if opts.keep_log {
                log.push(IterateRecord {
                    iteration: iter,
                    obj_primal: pobj,
                    obj_dual: dobj,
                    primal_infeas: pinf,
                    dual_infeas: dinf,
                    mu,
                    step_primal: 0.0,
                    step_dual: 0.0,
                });
            }
            break;
        }

        let Some(winv) = w.clone().cholesky().map(|c| c.inverse()) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: dual slack matrix lost definiteness");
            break;
        };
        let schur = ws.schur(&z, &winv, &s, &wv);
        let Some(factor) = Factor::new(schur.clone()) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: singular Schur complement");
            break;
        };

        let solve_dir = |sigma_mu: f64, corr: Option<(&DMatrix<f64>, &[f64])>| -> Option<Direction> {
            // K = sigma mu W^-1 - Z - corr
            let mut k_mat = &winv * sigma_mu - &z;
            if let Some((cz, _)) = corr {
                k_mat -= cz;
            }
            let k_nn: Vec<f64> = (0..nn)
                .map(|j| {
                    let c = corr.map_or(0.0, |(_, cs)| cs[j]);
                    (sigma_mu - s[j] * wv[j] - c) / wv[j]
                })
                .collect();
            let r_mat = &k_mat - &z * &rd_mat * &winv;
            let rhs = DVector::from_iterator(
                m,
                (0..m).map(|k| {
                    let row = &ws.rows[k];
                    let lin: f64 = row
                        .slacks
                        .iter()
                        .map(|&(j, a)| a * (k_nn[j] - s[j] / wv[j] * rd_nn[j]))
                        .sum();
                    row.inner(&r_mat) + lin - rp[k]
                }),
            );
            let mut dy = factor.solve(&rhs)?;
            for _ in 0..2 {
                let res = &rhs - &schur * &dy;
                dy += factor.solve(&res)?;
            }
            let dy: Vec<f64> = dy.iter().copied().collect();
            let (ady, ady_nn) = ws.adjoint(&dy);
            let dw = ady + &rd_mat;
            let dws: Vec<f64> = ady_nn.iter().zip(&rd_nn).map(|(a, r)| a + r).collect();
            let mut dz = k_mat - &z * &dw * &winv;
            symmetrize(&mut dz);
            let ds: Vec<f64> = (0..nn).map(|j| k_nn[j] - s[j] / wv[j] * dws[j]).collect();
            if dz.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            Some(Direction { dz, ds, dy, dw, dws })
        };

        let steps = |d: &Direction| -> Option<(f64, f64)> {
            let ap = max_step_psd(&z, &d.dz)?.min(max_step_nn(&s, &d.ds));
            let ad = max_step_psd(&w, &d.dw)?.min(max_step_nn(&wv, &d.dws));
            Some((ap, ad))
        };

        let Some(aff) = solve_dir(0.0, None) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: predictor direction failed");
            break;
        };
        let Some((ap_a, ad_a)) = steps(&aff) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: predictor step length failed");
            break;
        };
        let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
        let z_a = &z + &aff.dz * ap_a;
        let w_a = &w + &aff.dw * ad_a;
        let s_a: Vec<f64> = s.iter().zip(&aff.ds).map(|(v, d)| v + ap_a * d).collect();
        let wv_a: Vec<f64> = wv.iter().zip(&aff.dws).map(|(v, d)| v + ad_a * d).collect();
        let mu_aff = (z_a.dot(&w_a) + linalg::dot(&s_a, &wv_a)) / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let corr_mat = &aff.dz * &aff.dw * &winv;
        let corr_nn: Vec<f64> = aff.ds.iter().zip(&aff.dws).map(|(a, b)| a * b).collect();
        let Some(dir) = solve_dir(sigma * mu, Some((&corr_mat, &corr_nn))) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: corrector direction failed");
            break;
        };
        let Some((ap, ad)) = steps(&dir) else {
            status = ConicStatus::NumericalFailure;
            log::debug!("conic iteration {iter}: corrector step length failed");
            break;
        };
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);

        if opts.keep_log {
            log.push(IterateRecord {
                iteration: iter,
                obj_primal: pobj,
                obj_dual: dobj,
                primal_infeas: pinf,
                dual_infeas: dinf,
                mu,
                step_primal: ap,
                step_dual: ad,
            });
        }

        z += &dir.dz * ap;
        symmetrize(&mut z);
        for (v, d) in s.iter_mut().zip(&dir.ds) {
            *v += ap * d;
        }
        w += &dir.dw * ad;
        symmetrize(&mut w);
        for (v, d) in wv.iter_mut().zip(&dir.dws) {
            *v += ad * d;
        }
        for (v, d) in y.iter_mut().zip(&dir.dy) {
            *v += ad * d;
        }
        if ap < 1e-10 && ad < 1e-10 {
            status = ConicStatus::NumericalFailure;
            iterations = iter + 1;
            break;
        }
        iterations = iter + 1;
    }

    let mut dual = vec![0.0; prog.rows.len()];
    for (&k, &v) in keep.iter().zip(&y) {
        dual[k] = v;
    }
    Ok(ConicSolution {
        obj_primal: prog.primal_objective(&z, &s),
        obj_dual: linalg::dot(&ws.b, &y),
        z,
        s,
        dual,
        w,
        w_slacks: wv,
        status,
        iterations,
        dropped_rows: dropped,
        log,
    })
}

/// Diagnostic residuals of a candidate solution. All residuals are relative
/// in the same sense as [`Tolerances`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `||A(Z, s) - b||_inf / (1 + ||b||_inf)`.
    pub primal_residual: f64,
    /// Negative part of the smallest eigenvalue of `sum y A - C` and of the
    /// smallest entry of `sum y a - c`, over `1 + ||C||_inf`.
    pub dual_residual: f64,
    /// `|pobj - dobj| / (1 + |pobj|)`.
    pub gap: f64,
    pub lambda_min_z: f64,
    pub min_slack: f64,
}

impl KktReport {
    /// Every residual within `factor` times the tolerances.
    pub fn within(&self, tol: &Tolerances, factor: f64) -> bool {
        self.primal_residual <= factor * tol.feas
            && self.dual_residual <= factor * tol.feas
            && self.gap <= factor * tol.gap
            && self.lambda_min_z >= -factor * tol.psd
            && self.min_slack >= -factor * tol.nn
    }
}

pub fn check_kkt(prog: &ConicProgram, sol: &ConicSolution) -> KktReport {
    let az = prog.apply(&sol.z, &sol.s);
    let b_inf = prog.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let primal = az
        .iter()
        .zip(&prog.rows)
        .map(|(a, r)| (a - r.rhs).abs())
        .fold(0.0, f64::max)
        / (1.0 + b_inf);
    let (wm, wv) = prog.dual_slack(&sol.dual);
    let c_inf = prog
        .objective
        .upper_entries()
        .map(|(_, _, v)| v.abs())
        .chain(prog.objective_slacks.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let (w_min, _) = eigen_extremes(&wm);
    let wv_min = wv.iter().copied().fold(0.0, f64::min);
    let dual = (-w_min).max(-wv_min).max(0.0) / (1.0 + c_inf);
    let pobj = prog.primal_objective(&sol.z, &sol.s);
    let dobj: f64 = prog.rows.iter().zip(&sol.dual).map(|(r, y)| r.rhs * y).sum();
    let (z_min, _) = eigen_extremes(&sol.z);
    KktReport {
        primal_residual: primal,
        dual_residual: dual,
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        lambda_min_z: z_min,
        min_slack: sol.s.iter().copied().fold(f64::INFINITY, f64::min).min(f64::INFINITY),
    }
}
