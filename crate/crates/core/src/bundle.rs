//! Dynamic proximal bundle method for the partial Lagrangian dual.
//!
//! `g(beta) = max_{Z in S} <C, Z> - sum_t beta_t h_t(Z)` is convex in
//! `beta >= 0`, and `-h(Z_beta)` is a subgradient at `beta`. Each oracle call
//! yields a minorant `L(beta) = offset - <h(Z_beta), beta>`, stored with
//! `h` over the whole catalog so that it stays valid whatever the active set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{ConicError, ConicOptions, ConicStatus};
use crate::qp::{solve_qp, QpOptions, QpProblem, QpStatus};
use crate::relaxation::{OracleResult, SdpRelaxation};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("oracle failure after {calls} calls: {source}")]
    Oracle {
        calls: usize,
        #[source]
        source: ConicError,
        history: Vec<IterationRecord>,
    },
    #[error("p = {p} exceeds the catalog size {size}")]
    CapTooLarge { p: usize, size: usize },
    #[error("empty bundle")]
    EmptyBundle,
    #[error("master problem failed: {0}")]
    Master(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    /// Stop when the predicted decrease is at most `tol * (1 + |g(center)|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Descent test parameter `m`.
    pub descent: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub bundle_cap: usize,
    /// Members with a multiplier below this may leave the active set.
    pub drop_threshold: f64,
    /// Violations above `violation_tol * (1 + max_ij u_i u_j)` count as
    /// violated.
    pub violation_tol: f64,
    pub oracle: ConicOptions,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self::integer()
    }
}

impl BundleOptions {
    /// Preset for binary benchmarks.
    pub fn binary() -> Self {
        Self {
            tol: 1e-4,
            ..Self::integer()
        }
    }

    /// Preset for general-integer instances.
    pub fn integer() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 300,
            descent: 0.1,
            tau_init: 1.0,
            tau_min: 1e-6,
            tau_max: 1e10,
            bundle_cap: 50,
            drop_threshold: 1e-8,
            violation_tol: 1e-7,
            oracle: ConicOptions::default(),
        }
    }
}

/// One oracle evaluation.
#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    pub xmat: DMatrix<f64>,
    pub x: Vec<f64>,
    pub alpha: f64,
    /// `[l1, l2, l3]` per variable.
    pub lambda_parts: Vec<[f64; 3]>,
    /// `h_t(X, x)` over the whole catalog.
    pub violations: Vec<f64>,
    pub status: ConicStatus,
    pub oracle: OracleResult,
}

/// Evaluates `g` at the sparse multipliers `beta` (catalog index, value).
pub fn evaluate_dual_function(
    relax: &SdpRelaxation,
    beta: &BTreeMap<usize, f64>,
    opts: &ConicOptions,
) -> Result<DualEvaluation, ConicError> {
    let b: Vec<(usize, f64)> = beta.iter().filter(|(_, &v)| v != 0.0).map(|(&k, &v)| (k, v)).collect();
    let res = relax.solve_oracle(&b, opts)?;
    if res.status != ConicStatus::Optimal {
        log::warn!("oracle ended with status {:?}; value kept as an approximate bound", res.status);
    }
    let (xmat, x) = relax.split_point(&res.solution.z);
    let violations = relax.violations(&res.solution.z);
    Ok(DualEvaluation {
        value: res.value,
        xmat,
        x,
        alpha: res.duals.alpha,
        lambda_parts: res.duals.lambda_parts.clone(),
        violations,
        status: res.status,
        oracle: res,
    })
}

/// `L(beta) = offset - sum_t beta_t violations_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Minorant {
    pub offset: f64,
    pub violations: Vec<f64>,
    /// Multipliers at which the minorant was computed.
    pub anchor: BTreeMap<usize, f64>,
}

impl Minorant {
    /// Minorant exact at `anchor` with value `value`.
    pub fn new(anchor: BTreeMap<usize, f64>, value: f64, violations: Vec<f64>) -> Self {
        let offset = value + anchor.iter().map(|(&k, &b)| b * violations[k]).sum::<f64>();
        Self {
            offset,
            violations,
            anchor,
        }
    }

    pub fn value(&self, beta: &BTreeMap<usize, f64>) -> f64 {
        self.offset - beta.iter().map(|(&k, &b)| b * self.violations[k]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Initial,
    Descent,
    Null,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `g` at the evaluated point.
    pub value: f64,
    pub center_value: f64,
    pub active_size: usize,
    pub step: StepKind,
    /// Absent for the initial evaluation.
    pub predicted_decrease: Option<f64>,
    pub oracle_status: ConicStatus,
    pub tau: f64,
}

/// Writes the iteration log as CSV.
pub fn write_history_csv(history: &[IterationRecord], path: impl AsRef<Path>) -> Result<(), BundleError> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    for r in history {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleState {
    /// `beta_hat` over the active set; every value is nonnegative.
    pub center: BTreeMap<usize, f64>,
    pub center_value: f64,
    pub bundle: Vec<Minorant>,
    pub active_set: BTreeSet<usize>,
    pub weight: f64,
    pub iteration: usize,
    /// Convexity weights of the last master solve, one per minorant.
    pub last_weights: Vec<f64>,
}

impl BundleState {
    /// State centered at `center` where `g = value`, with the single
    /// minorant `first`.
    pub fn new(center: BTreeMap<usize, f64>, value: f64, first: Minorant, active_set: BTreeSet<usize>, weight: f64) -> Self {
        Self {
            center,
            center_value: value,
            bundle: vec![first],
            active_set,
            weight,
            iteration: 0,
            last_weights: vec![1.0],
        }
    }

    /// Adds a minorant, folding the lightest ones into an aggregate when
    /// the bundle is at `cap`.
    pub fn push_minorant(&mut self, m: Minorant, cap: usize) {
        let cap = cap.max(2);
        if self.bundle.len() >= cap {
            let weights = if self.last_weights.len() == self.bundle.len() {
                self.last_weights.clone()
            } else {
                vec![1.0 / self.bundle.len() as f64; self.bundle.len()]
            };
            let total: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            let len = self.violations_len();
            let mut agg = Minorant {
                offset: 0.0,
                violations: vec![0.0; len],
                anchor: self.center.clone(),
            };
            for (b, &w) in self.bundle.iter().zip(&weights) {
                let w = w / total;
                agg.offset += w * b.offset;
                for (a, v) in agg.violations.iter_mut().zip(&b.violations) {
                    *a += w * v;
                }
            }
            let mut order: Vec<usize> = (0..self.bundle.len()).collect();
            order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
            let keep: BTreeSet<usize> = order.into_iter().take(cap - 2).collect();
            self.bundle = self
                .bundle
                .drain(..)
                .enumerate()
                .filter(|(k, _)| keep.contains(k))
                .map(|(_, b)| b)
                .collect();
            self.bundle.push(agg);
        }
        self.bundle.push(m);
        self.last_weights.clear();
    }

    fn violations_len(&self) -> usize {
        self.bundle.first().map_or(0, |b| b.violations.len())
    }

    /// Cutting-plane model at `beta`.
    pub fn model(&self, beta: &BTreeMap<usize, f64>) -> f64 {
        self.bundle.iter().map(|b| b.value(beta)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Proximal step on the cutting-plane model over the active set.
    pub fn master_step(&self) -> Result<MasterStep, BundleError> {
        if self.bundle.is_empty() {
            return Err(BundleError::EmptyBundle);
        }
        let coords: Vec<usize> = self.active_set.iter().copied().collect();
        let tau = self.weight;
        let hat: Vec<f64> = coords.iter().map(|k| self.center.get(k).copied().unwrap_or(0.0)).collect();
        // a_j = L_j(beta_hat); s_j = -h_j on the active set.
        let a: Vec<f64> = self.bundle.iter().map(|b| b.value(&self.center)).collect();
        let s: Vec<Vec<f64>> = self
            .bundle
            .iter()
            .map(|b| coords.iter().map(|&k| -b.violations[k]).collect())
            .collect();

        let (d, weights) = match dual_master(&a, &s, &hat, tau) {
            Some(r) => r,
            None => primal_master(&a, &s, &hat, tau)?,
        };

        let mut candidate = BTreeMap::new();
        for (idx, &k) in coords.iter().enumerate() {
            let mut v = hat[idx] + d[idx];
            if v < 1e-12 * (1.0 + hat[idx]) {
                v = 0.0;
            }
            candidate.insert(k, v);
        }
        let step_sq: f64 = coords
            .iter()
            .zip(&hat)
            .map(|(k, h)| (candidate[k] - h).powi(2))
            .sum();
        let model_value = self.model(&candidate);
        let predicted = (self.center_value - model_value - 0.5 * tau * step_sq).max(0.0);
        Ok(MasterStep {
            candidate,
            predicted_decrease: predicted,
            model_value,
            weights,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterStep {
    pub candidate: BTreeMap<usize, f64>,
    /// `g(center) - model(candidate) - tau/2 |candidate - center|^2`.
    pub predicted_decrease: f64,
    pub model_value: f64,
    pub weights: Vec<f64>,
}

/// Solves the master problem through its dual over the simplex of
/// convexity weights, guessing which coordinates sit at `beta = 0` and
/// refining the guess until it is consistent. Returns `None` if the guess
/// does not settle.
fn dual_master(a: &[f64], s: &[Vec<f64>], hat: &[f64], tau: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let nb = a.len();
    let nc = hat.len();
    let g_of = |theta: &[f64]| -> Vec<f64> {
        (0..nc).map(|i| theta.iter().zip(s).map(|(t, sj)| t * sj[i]).sum()).collect()
    };
    let mut theta = vec![0.0; nb];
    theta[nb - 1] = 1.0;
    let mut clamped: Vec<bool> = {
        let g = g_of(&theta);
        (0..nc).map(|i| g[i] > tau * hat[i]).collect()
    };
    for _ in 0..50 {
        let mut prob = QpProblem::new(nb);
        for j in 0..nb {
            for l in j..nb {
                let v: f64 = (0..nc).filter(|&i| !clamped[i]).map(|i| s[j][i] * s[l][i]).sum::<f64>() / tau;
                prob.p[(j, l)] = v;
                prob.p[(l, j)] = v;
            }
            prob.q[j] = -a[j] + (0..nc).filter(|&i| clamped[i]).map(|i| s[j][i] * hat[i]).sum::<f64>();
            prob.lower[j] = 0.0;
        }
        prob.eq_rows.push((0..nb).map(|j| (j, 1.0)).collect());
        prob.eq_rhs.push(1.0);
        let sol = solve_qp(&prob, &QpOptions { tol: 1e-12, max_iter: 200 }).ok()?;
        if !matches!(sol.status, QpStatus::Optimal | QpStatus::MaxIter) {
            return None;
        }
        theta = sol.x.iter().map(|v| v.max(0.0)).collect();
        let sum: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|v| *v /= sum);
        let g = g_of(&theta);
        let scale = 1e-10 * (1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let next: Vec<bool> = (0..nc)
            .map(|i| {
                let gap = g[i] - tau * hat[i];
                if gap.abs() <= scale {
                    clamped[i]
                } else {
                    gap > 0.0
                }
            })
            .collect();
        if next == clamped {
            let d = (0..nc)
                .map(|i| if clamped[i] { -hat[i] } else { (-g[i] / tau).max(-hat[i]) })
                .collect();
            return Some((d, theta));
        }
        clamped = next;
    }
    log::debug!("master active-set guess did not settle; solving the primal form");
    None
}

/// Master problem in primal form: `min r + tau/2 |d|^2` subject to
/// `r >= a_j + s_j d` and `d >= -hat`.
fn primal_master(a: &[f64], s: &[Vec<f64>], hat: &[f64], tau: f64) -> Result<(Vec<f64>, Vec<f64>), BundleError> {
    let nc = hat.len();
    let mut prob = QpProblem::new(nc + 1);
    for i in 0..nc {
        prob.p[(i, i)] = tau;
        prob.lower[i] = -hat[i];
    }
    prob.q[nc] = 1.0;
    for (aj, sj) in a.iter().zip(s) {
        let mut row: Vec<(usize, f64)> = sj.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, v)).collect();
        row.push((nc, -1.0));
        prob.ineq_rows.push(row);
        prob.ineq_rhs.push(-aj);
    }
    let sol = solve_qp(&prob, &QpOptions { tol: 1e-12, max_iter: 200 }).map_err(|e| BundleError::Master(e.to_string()))?;
    if !matches!(sol.status, QpStatus::Optimal | QpStatus::MaxIter) {
        return Err(BundleError::Master(format!("status {:?}", sol.status)));
    }
    let d = sol.x[..nc].iter().zip(hat).map(|(v, h)| v.max(-h)).collect();
    let mut w: Vec<f64> = sol.ineq_duals.iter().map(|v| v.max(0.0)).collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|v| *v /= sum);
    }
    Ok((d, w))
}

/// New active set: members with a multiplier below `drop_threshold` and no
/// violation at the latest point leave; the most violated non-members
/// enter until the set holds `p` entries.
pub fn update_active_set(
    state: &BundleState,
    violations: &[f64],
    p: usize,
    drop_threshold: f64,
    violated_above: f64,
) -> BTreeSet<usize> {
    if p == 0 {
        return BTreeSet::new();
    }
    let mut next: BTreeSet<usize> = state
        .active_set
        .iter()
        .copied()
        .filter(|k| state.center.get(k).copied().unwrap_or(0.0) >= drop_threshold || violations[*k] > 0.0)
        .collect();
    let room = p.saturating_sub(next.len());
    next.extend(top_violated(violations, &next, room, violated_above));
    next
}

fn top_violated(viol: &[f64], exclude: &BTreeSet<usize>, count: usize, threshold: f64) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..viol.len())
        .filter(|k| !exclude.contains(k) && viol[*k] > threshold)
        .collect();
    cand.sort_by(|&a, &b| viol[b].total_cmp(&viol[a]).then(a.cmp(&b)));
    cand.truncate(count);
    cand
}

/// Multipliers `(alpha, lambda, beta)` defining the reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub alpha: f64,
    pub lambda: Vec<f64>,
    /// `(i, j, beta_ij)` with `i < j`, 0-based, only nonzero aggregates.
    pub beta: Vec<(usize, usize, f64)>,
    /// Family multipliers `(i, j, t, beta^t_ij)`, only nonzero ones.
    pub beta_families: Vec<(usize, usize, u8, f64)>,
    pub dual_value: f64,
    pub converged: bool,
    pub oracle_calls: usize,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl DualSolution {
    /// All multipliers zero.
    pub fn zero(n: usize) -> Self {
        Self {
            alpha: 0.0,
            lambda: vec![0.0; n],
            beta: Vec::new(),
            beta_families: Vec::new(),
            dual_value: f64::NAN,
            converged: true,
            oracle_calls: 0,
            iterations: 0,
            history: Vec::new(),
        }
    }

    pub fn beta_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.beta.iter().map(|&(i, j, v)| ((i, j), v)).collect()
    }

    /// Number of pairs with a nonzero aggregate.
    pub fn support(&self) -> usize {
        self.beta.iter().filter(|e| e.2 != 0.0).count()
    }

    fn from_center(relax: &SdpRelaxation, center: &BTreeMap<usize, f64>, eval: &DualEvaluation) -> Self {
        let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut families = Vec::new();
        for (&k, &v) in center {
            if v == 0.0 {
                continue;
            }
            let d = relax.catalog()[k];
            families.push((d.i, d.j, d.t, v));
            let sign = if d.t <= 2 { 1.0 } else { -1.0 };
            *agg.entry((d.i, d.j)).or_insert(0.0) += sign * v;
        }
        Self {
            alpha: eval.alpha,
            lambda: eval.lambda_parts.iter().map(|l| -l[0] - l[1] + l[2]).collect(),
            beta: agg.into_iter().filter(|(_, v)| *v != 0.0).map(|((i, j), v)| (i, j, v)).collect(),
            beta_families: families,
            dual_value: eval.value,
            converged: false,
            oracle_calls: 0,
            iterations: 0,
            history: Vec::new(),
        }
    }
}

/// Minimizes the partial dual with at most `p` dualized inequalities.
pub fn compute_beta(relax: &SdpRelaxation, p: usize, opts: &BundleOptions) -> Result<DualSolution, BundleError> {
    let size = relax.catalog().len();
    if p > size {
        return Err(BundleError::CapTooLarge { p, size });
    }
    let umax = relax.u().iter().copied().max().unwrap_or(1) as f64;
    let violated_above = opts.violation_tol * (1.0 + umax * umax);
    let mut calls = 0usize;
    let mut history: Vec<IterationRecord> = Vec::new();

    let eval_at = |beta: &BTreeMap<usize, f64>, calls: &mut usize, history: &[IterationRecord]| {
        *calls += 1;
        evaluate_dual_function(relax, beta, &opts.oracle).map_err(|source| BundleError::Oracle {
            calls: *calls,
            source,
            history: history.to_vec(),
        })
    };

    let zero = BTreeMap::new();
    let mut center_eval = eval_at(&zero, &mut calls, &history)?;
    let initial_set: BTreeSet<usize> = if p == 0 {
        BTreeSet::new()
    } else {
        top_violated(&center_eval.violations, &BTreeSet::new(), p, violated_above)
            .into_iter()
            .collect()
    };
    history.push(IterationRecord {
        iteration: 0,
        value: center_eval.value,
        center_value: center_eval.value,
        active_size: initial_set.len(),
        step: StepKind::Initial,
        predicted_decrease: None,
        oracle_status: center_eval.status,
        tau: opts.tau_init,
    });
    let center0: BTreeMap<usize, f64> = initial_set.iter().map(|&k| (k, 0.0)).collect();
    let first = Minorant::new(BTreeMap::new(), center_eval.value, center_eval.violations.clone());
    let mut state = BundleState::new(center0, center_eval.value, first, initial_set, opts.tau_init);

    let mut center_point: BTreeMap<usize, f64> = BTreeMap::new();
    let mut converged = p == 0 || state.active_set.is_empty();
    while !converged && state.iteration < opts.max_iter {
        state.iteration += 1;
        let step = state.master_step()?;
        if step.predicted_decrease <= opts.tol * (1.0 + state.center_value.abs()) {
            converged = true;
            break;
        }
        state.last_weights = step.weights.clone();
        let eval = eval_at(&step.candidate, &mut calls, &history)?;
        let minorant = Minorant::new(step.candidate.clone(), eval.value, eval.violations.clone());
        state.push_minorant(minorant, opts.bundle_cap);

        let kind = if state.center_value - eval.value >= opts.descent * step.predicted_decrease {
            state.center = step.candidate.clone();
            state.center_value = eval.value;
            state.weight = (state.weight / 2.0).max(opts.tau_min);
            StepKind::Descent
        } else {
            state.weight = (state.weight * 2.0).min(opts.tau_max);
            StepKind::Null
        };

        let next = update_active_set(&state, &eval.violations, p, opts.drop_threshold, violated_above);
        let truncated = state.center.iter().any(|(k, &v)| v > 0.0 && !next.contains(k));
        state.center.retain(|k, _| next.contains(k));
        for &k in &next {
            state.center.entry(k).or_insert(0.0);
        }
        state.active_set = next;
        let eval_value = eval.value;
        let eval_status = eval.status;
        if kind == StepKind::Descent {
            center_eval = eval;
            center_point = step.candidate.clone();
        }
        if truncated {
            let point = positive_part(&state.center);
            center_eval = eval_at(&point, &mut calls, &history)?;
            state.center_value = center_eval.value;
            state.push_minorant(
                Minorant::new(point.clone(), center_eval.value, center_eval.violations.clone()),
                opts.bundle_cap,
            );
            center_point = point;
        }
        history.push(IterationRecord {
            iteration: state.iteration,
            value: eval_value,
            center_value: state.center_value,
            active_size: state.active_set.len(),
            step: kind,
            predicted_decrease: Some(step.predicted_decrease),
            oracle_status: eval_status,
            tau: state.weight,
        });
    }

    let center = positive_part(&state.center);
    if center != positive_part(&center_point) {
        center_eval = eval_at(&center, &mut calls, &history)?;
    }

    let mut sol = DualSolution::from_center(relax, &center, &center_eval);
    sol.converged = converged;
    sol.oracle_calls = calls;
    sol.iterations = state.iteration;
    sol.history = history;
    Ok(sol)
}

fn positive_part(beta: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    beta.iter().filter(|(_, &v)| v > 0.0).map(|(&k, &v)| (k, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{brute_force_optimum, generate_kcluster};
    use crate::relaxation::build_base_relaxation;

    /// One coordinate, center `c`, one minorant with value 10 at the center
    /// and subgradient +1.
    fn linear_state(c: f64, slope: f64) -> BundleState {
        let center: BTreeMap<usize, f64> = [(0, c)].into();
        let m = Minorant::new(center.clone(), 10.0, vec![-slope]);
        BundleState::new(center, 10.0, m, [0].into(), 1.0)
    }

    #[test]
    fn master_unconstrained_prox_step() {
        let st = linear_state(2.0, 1.0);
        let step = st.master_step().unwrap();
        assert!((step.candidate[&0] - 1.0).abs() < 1e-9);
        assert!((step.predicted_decrease - 0.5).abs() < 1e-9);
    }

    #[test]
    fn master_projected_step() {
        let st = linear_state(0.5, 1.0);
        let step = st.master_step().unwrap();
        assert_eq!(step.candidate[&0], 0.0);
        // min over b >= 0 of 10 + (b - 0.5) + (b - 0.5)^2 / 2 at b = 0.
        let pred = 10.0 - (10.0 - 0.5 + 0.125);
        assert!((step.predicted_decrease - pred).abs() < 1e-9);
        assert!((step.predicted_decrease - 0.375).abs() < 1e-9);
    }

    #[test]
    fn master_stationary_model() {
        let st = linear_state(0.7, 0.0);
        let step = st.master_step().unwrap();
        assert!((step.candidate[&0] - 0.7).abs() < 1e-12);
        assert!(step.predicted_decrease.abs() < 1e-12);
    }

    #[test]
    fn master_two_cuts_matches_primal_form() {
        let center: BTreeMap<usize, f64> = [(0, 1.0), (1, 0.2)].into();
        let mut st = BundleState::new(
            center.clone(),
            5.0,
            Minorant::new(center.clone(), 5.0, vec![0.8, -0.3]),
            [0, 1].into(),
            0.5,
        );
        st.push_minorant(Minorant::new([(0, 0.0), (1, 0.0)].into(), 4.0, vec![-0.5, 1.5]), 50);
        let step = st.master_step().unwrap();
        let hat = [1.0, 0.2];
        let a: Vec<f64> = st.bundle.iter().map(|b| b.value(&center)).collect();
        let s: Vec<Vec<f64>> = st.bundle.iter().map(|b| b.violations.iter().map(|v| -v).collect()).collect();
        let (d, _) = primal_master(&a, &s, &hat, 0.5).unwrap();
        for i in 0..2 {
            assert!((step.candidate[&i] - (hat[i] + d[i]).max(0.0)).abs() < 1e-6, "{step:?} {d:?}");
        }
    }

    #[test]
    fn active_set_rules() {
        let st = linear_state(0.0, 1.0);
        assert!(update_active_set(&st, &[5.0, 3.0], 0, 1e-8, 0.0).is_empty());
        let mut st = linear_state(0.0, 1.0);
        st.active_set = [0].into();
        assert!(update_active_set(&st, &[-1.0, -2.0, 0.0], 3, 1e-8, 0.0).is_empty());
        st.active_set.clear();
        let next = update_active_set(&st, &[0.1, 0.3, -1.0, 0.2], 2, 1e-8, 0.0);
        assert_eq!(next, [1, 3].into());
    }

    #[test]
    fn qcr_mode_single_call() {
        let inst = generate_kcluster(6, 0.5, 3, 2).unwrap();
        let relax = build_base_relaxation(&inst).unwrap();
        let sol = compute_beta(&relax, 0, &BundleOptions::binary()).unwrap();
        assert_eq!(sol.oracle_calls, 1);
        assert!(sol.beta.is_empty());
        assert_eq!(sol.history.len(), 1);
        let g0 = evaluate_dual_function(&relax, &BTreeMap::new(), &ConicOptions::default()).unwrap();
        assert!((sol.dual_value - g0.value).abs() < 1e-9 * (1.0 + g0.value.abs()));
    }

    #[test]
    fn full_cap_on_complete_graph() {
        let inst = generate_kcluster(6, 1.0, 3, 1).unwrap();
        let relax = build_base_relaxation(&inst).unwrap();
        let p = relax.catalog().len();
        let opts = BundleOptions::binary();
        let sol = compute_beta(&relax, p, &opts).unwrap();
        let g0 = sol.history[0].value;
        assert!(sol.dual_value >= 3.0 - 1e-6, "{}", sol.dual_value);
        assert!(sol.dual_value <= g0 + opts.tol * (1.0 + g0.abs()));
        assert!(sol.support() <= p);
    }

    #[test]
    fn subgradient_inequality() {
        let inst = generate_kcluster(6, 0.5, 3, 3).unwrap();
        let relax = build_base_relaxation(&inst).unwrap();
        let opts = ConicOptions::default();
        let e0 = evaluate_dual_function(&relax, &BTreeMap::new(), &opts).unwrap();
        let k = relax.catalog_index(0, 1, 1).unwrap();
        let e1 = evaluate_dual_function(&relax, &[(k, 0.5)].into(), &opts).unwrap();
        assert!(e1.value >= e0.value - 0.5 * e0.violations[k] - 1e-7 * (1.0 + e0.value.abs()));
    }

    #[test]
    fn kcluster_bundle_is_monotone_and_valid() {
        let inst = generate_kcluster(8, 0.5, 4, 5).unwrap();
        let (opt, _) = brute_force_optimum(&inst, 1 << 20).unwrap();
        let relax = build_base_relaxation(&inst).unwrap();
        let p = relax.catalog().len() / 2;
        let sol = compute_beta(&relax, p, &BundleOptions::binary()).unwrap();
        let mut last = f64::INFINITY;
        for r in &sol.history {
            assert!(r.value >= opt - 1e-6 * (1.0 + opt.abs()));
            assert!(r.center_value <= last + 1e-12 || r.step == StepKind::Null);
            last = r.center_value;
        }
        assert!(sol.support() <= p);
        assert!(sol.dual_value <= sol.history[0].value + 1e-9);
    }
}
