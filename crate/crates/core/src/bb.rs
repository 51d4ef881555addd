//! Branch-and-bound for the concave reformulation.
//!
//! Nodes are chosen by best bound (ties to the older node); the branching
//! variable is the integer variable whose fractional part is closest to
//! 1/2 (ties to the lowest index). Values in [`BbReport`] are in the sense
//! of the source instance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{objective_at, IntegerPoint};
use crate::qp::{solve_qp, QpOptions, QpProblem, QpStatus};
use crate::reform::ReformulatedMiqp;

#[derive(Debug, Error)]
pub enum BbError {
    #[error("node relaxation is infeasible")]
    InfeasibleNode,
    #[error("numerical failure in a node relaxation: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer variables closer than this to an integer count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

/// Continuous relaxation at a node, in maximization form.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRelaxation {
    pub value: f64,
    /// Valid upper bound: the larger of the primal value and the negated
    /// dual objective of the minimization solved.
    pub bound: f64,
    pub point: Vec<f64>,
}

/// Maximizes the concave objective over the linear system with integrality
/// dropped. `lower` and `upper` override the variable bounds.
pub fn solve_continuous_relaxation(
    miqp: &ReformulatedMiqp,
    lower: &[f64],
    upper: &[f64],
) -> Result<NodeRelaxation, BbError> {
    let nv = miqp.num_vars();
    let n = miqp.n;
    let mut prob = QpProblem::new(nv);
    for i in 0..n {
        for j in 0..n {
            prob.p[(i, j)] = -miqp.hessian[(i, j)];
        }
    }
    prob.q = miqp.linear.iter().map(|v| -v).collect();
    for row in &miqp.rows {
        if row.equality {
            prob.eq_rows.push(row.coefs.clone());
            prob.eq_rhs.push(row.rhs);
        } else {
            prob.ineq_rows.push(row.coefs.clone());
            prob.ineq_rhs.push(row.rhs);
        }
    }
    prob.lower = lower.to_vec();
    prob.upper = upper.to_vec();
    let sol = solve_qp(&prob, &QpOptions::default()).map_err(|e| BbError::NumericalFailure(e.to_string()))?;
    match sol.status {
        QpStatus::Infeasible => Err(BbError::InfeasibleNode),
        QpStatus::NumericalFailure => Err(BbError::NumericalFailure("interior point stalled".into())),
        QpStatus::Optimal | QpStatus::MaxIter => {
            if sol.status == QpStatus::MaxIter {
                log::warn!("node relaxation hit the iteration limit");
            }
            let value = -sol.obj_primal + miqp.constant;
            let dual_bound = -sol.obj_dual + miqp.constant;
            let bound = if dual_bound.is_finite() { value.max(dual_bound) } else { value };
            Ok(NodeRelaxation {
                value,
                bound,
                point: sol.x,
            })
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BbOptions {
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    /// Node log CSV destination.
    pub node_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BbStatus {
    Optimal,
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbReport {
    pub best_value: Option<f64>,
    pub best_point: Option<Vec<i64>>,
    pub nodes: usize,
    pub root_bound: Option<f64>,
    /// `|c - v| / |v| * 100` with `c` the root bound and `v` the best value.
    pub root_gap: Option<f64>,
    pub status: BbStatus,
    /// `|(v - b) / v| * 100` with `b` the best open bound, when stopped early.
    pub final_gap: Option<f64>,
    /// Node at which each improving incumbent was found, with its value.
    pub incumbents: Vec<(usize, f64)>,
}

/// Percentage gap `|c - v| / |v| * 100`; `None` when `v = 0`.
pub fn percent_gap(bound: f64, value: f64) -> Option<f64> {
    if value == 0.0 {
        None
    } else {
        Some((bound - value).abs() / value.abs() * 100.0)
    }
}

struct OpenNode {
    id: usize,
    depth: usize,
    bound: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    solved: Option<NodeRelaxation>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then(other.id.cmp(&self.id))
    }
}

/// Node trace; bounds are written in the sense of the instance.
struct NodeLog {
    writer: Option<csv::Writer<std::fs::File>>,
    sign: f64,
}

impl NodeLog {
    fn open(path: &Option<PathBuf>, sign: f64) -> Result<Self, BbError> {
        let writer = match path {
            Some(p) => {
                let mut w = csv::Writer::from_path(p).map_err(std::io::Error::from)?;
                w.write_record(["node", "depth", "bound", "variable", "action"])
                    .map_err(std::io::Error::from)?;
                Some(w)
            }
            None => None,
        };
        Ok(NodeLog { writer, sign })
    }

    fn line(&mut self, id: usize, depth: usize, bound: f64, var: Option<usize>, action: &str) -> Result<(), BbError> {
        if let Some(w) = &mut self.writer {
            let var = var.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                id.to_string(),
                depth.to_string(),
                format!("{:.12e}", bound * self.sign),
                var,
                action.to_string(),
            ])
            .map_err(std::io::Error::from)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<(), BbError> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }
}

/// Exact feasibility of `x` for the source constraints.
fn feasible(miqp: &ReformulatedMiqp, x: &[i64]) -> bool {
    miqp.source().is_feasible(&IntegerPoint(x.to_vec()))
}

/// Rounds the `x` part of `point`; if infeasible, tries every change of one
/// or two coordinates by one unit and keeps the best feasible candidate.
fn round_and_repair(miqp: &ReformulatedMiqp, point: &[f64]) -> Option<(Vec<i64>, f64)> {
    let src = miqp.source();
    let u = src.u();
    let n = miqp.n;
    let base: Vec<i64> = (0..n).map(|i| (point[i].round() as i64).clamp(0, u[i])).collect();
    let value = |x: &[i64]| objective_at(src, &x.iter().map(|&v| v as f64).collect::<Vec<_>>());
    if feasible(miqp, &base) {
        let v = value(&base);
        return Some((base, v));
    }
    let mut best: Option<(Vec<i64>, f64)> = None;
    let consider = |x: Vec<i64>, best: &mut Option<(Vec<i64>, f64)>| {
        if feasible(miqp, &x) {
            let v = value(&x);
            if best.as_ref().is_none_or(|(_, b)| v > *b) {
                *best = Some((x, v));
            }
        }
    };
    let shift = |x: &mut Vec<i64>, i: usize, d: i64| -> bool {
        let v = x[i] + d;
        if v < 0 || v > u[i] {
            return false;
        }
        x[i] = v;
        true
    };
    for i in 0..n {
        for d in [-1, 1] {
            let mut x = base.clone();
            if shift(&mut x, i, d) {
                consider(x, &mut best);
            }
        }
    }
    if best.is_some() {
        return best;
    }
    for i in 0..n {
        for j in i + 1..n {
            for di in [-1, 1] {
                for dj in [-1, 1] {
                    let mut x = base.clone();
                    if shift(&mut x, i, di) && shift(&mut x, j, dj) {
                        consider(x, &mut best);
                    }
                }
            }
        }
    }
    best
}

/// Integer variable with fractional part closest to 1/2.
fn branching_variable(miqp: &ReformulatedMiqp, point: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, var) in miqp.variables.iter().enumerate() {
        if !var.integer {
            continue;
        }
        let frac = point[k] - point[k].floor();
        if frac.min(1.0 - frac) <= INTEGRALITY_TOL {
            continue;
        }
        let score = (frac - 0.5).abs();
        if best.is_none_or(|(_, s)| score < s) {
            best = Some((k, score));
        }
    }
    best.map(|(k, _)| k)
}

/// Solves the reformulation to optimality or until a limit is hit.
pub fn branch_and_bound(miqp: &ReformulatedMiqp, opts: &BbOptions) -> Result<BbReport, BbError> {
    let start = Instant::now();
    let sign = miqp.sense.sign();
    let mut log = NodeLog::open(&opts.node_log, sign)?;
    let integral = miqp.integral_objective();
    let prune = |bound: f64, inc: Option<f64>| -> bool {
        match inc {
            None => false,
            Some(v) => {
                let b = bound + 1e-6 * (1.0 + bound.abs());
                if integral {
                    b <= v + 0.99
                } else {
                    b <= v + 1e-6 * v.abs().max(1.0)
                }
            }
        }
    };

    let lower0: Vec<f64> = miqp.variables.iter().map(|v| v.lower).collect();
    let upper0: Vec<f64> = miqp.variables.iter().map(|v| v.upper).collect();
    let root = match solve_continuous_relaxation(miqp, &lower0, &upper0) {
        Ok(r) => r,
        Err(BbError::InfeasibleNode) => {
            log.line(0, 0, f64::NAN, None, "infeasible")?;
            log.finish()?;
            return Ok(BbReport {
                best_value: None,
                best_point: None,
                nodes: 1,
                root_bound: None,
                root_gap: None,
                status: BbStatus::Infeasible,
                final_gap: None,
                incumbents: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let root_bound = root.value;

    let mut incumbent: Option<(Vec<i64>, f64)> = round_and_repair(miqp, &root.point);
    let mut incumbents = Vec::new();
    if let Some((_, v)) = &incumbent {
        incumbents.push((0, *v * sign));
    }

    let mut heap = BinaryHeap::new();
    heap.push(OpenNode {
        id: 0,
        depth: 0,
        bound: root.bound,
        lower: lower0,
        upper: upper0,
        solved: Some(root),
    });
    let mut next_id = 1;
    let mut nodes = 0usize;
    let mut stopped = false;

    while let Some(node) = heap.peek() {
        let limit_hit = opts.node_limit.is_some_and(|l| nodes >= l)
            || opts
                .time_limit
                .is_some_and(|t| start.elapsed() >= Duration::from_secs_f64(t));
        if limit_hit {
            stopped = true;
            break;
        }
        let inc_val = incumbent.as_ref().map(|x| x.1);
        if prune(node.bound, inc_val) {
            // Best-bound order: every remaining node is dominated.
            while let Some(n) = heap.pop() {
                log.line(n.id, n.depth, n.bound, None, "pruned")?;
            }
            break;
        }
        let mut node = heap.pop().expect("peeked");
        nodes += 1;
        let rel = match node.solved.take() {
            Some(r) => r,
            None => match solve_continuous_relaxation(miqp, &node.lower, &node.upper) {
                Ok(r) => r,
                Err(BbError::InfeasibleNode) => {
                    log.line(node.id, node.depth, node.bound, None, "infeasible")?;
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        let bound = rel.bound.min(node.bound);
        if prune(bound, inc_val) {
            log.line(node.id, node.depth, bound, None, "pruned")?;
            continue;
        }
        match branching_variable(miqp, &rel.point) {
            None => {
                let x: Vec<i64> = (0..miqp.n).map(|i| rel.point[i].round() as i64).collect();
                if feasible(miqp, &x) {
                    let v = objective_at(miqp.source(), &x.iter().map(|&a| a as f64).collect::<Vec<_>>());
                    if inc_val.is_none_or(|b| v > b) {
                        incumbent = Some((x, v));
                        incumbents.push((node.id, v * sign));
                    }
                    log.line(node.id, node.depth, bound, None, "integral")?;
                } else {
                    log::warn!("integral relaxation point rounds to an infeasible x at node {}", node.id);
                    log.line(node.id, node.depth, bound, None, "discarded")?;
                }
            }
            Some(k) => {
                if let Some((x, v)) = round_and_repair(miqp, &rel.point) {
                    if incumbent.as_ref().is_none_or(|b| v > b.1) {
                        incumbent = Some((x, v));
                        incumbents.push((node.id, v * sign));
                    }
                }
                let v = rel.point[k];
                log.line(node.id, node.depth, bound, Some(k), "branch")?;
                let mut down_upper = node.upper.clone();
                down_upper[k] = v.floor();
                let mut up_lower = node.lower.clone();
                up_lower[k] = v.ceil();
                for (lower, upper) in [(node.lower.clone(), down_upper), (up_lower, node.upper.clone())] {
                    heap.push(OpenNode {
                        id: next_id,
                        depth: node.depth + 1,
                        bound,
                        lower,
                        upper,
                        solved: None,
                    });
                    next_id += 1;
                }
            }
        }
    }

    let best_value = incumbent.as_ref().map(|x| x.1 * sign);
    let best_point = incumbent.as_ref().map(|x| x.0.clone());
    let root_bound_s = root_bound * sign;
    let status = if stopped && !heap.is_empty() {
        BbStatus::TimeLimit
    } else if incumbent.is_some() {
        BbStatus::Optimal
    } else {
        BbStatus::Infeasible
    };
    let final_gap = if status == BbStatus::TimeLimit {
        let open = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
        best_value.and_then(|v| percent_gap(open * sign, v))
    } else {
        None
    };
    log.finish()?;
    Ok(BbReport {
        best_value,
        best_point,
        nodes,
        root_bound: Some(root_bound_s),
        root_gap: best_value.and_then(|v| percent_gap(root_bound_s, v)),
        status,
        final_gap,
        incumbents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::DualSolution;
    use crate::instances::{brute_force_optimum, generate_kcluster, QpInstance, Sense};
    use crate::reform::{build_reformulation, ensure_concavity};

    fn plain(inst: &QpInstance) -> ReformulatedMiqp {
        ensure_concavity(build_reformulation(inst, &DualSolution::zero(inst.n()), 1e-6).unwrap()).unwrap()
    }

    #[test]
    fn linear_objective_forced_by_constraint() {
        let inst = QpInstance::new(
            "lin",
            Sense::Max,
            4,
            Default::default(),
            vec![1.0; 4],
            vec![vec![1; 4]],
            vec![2],
            vec![1; 4],
        )
        .unwrap();
        let m = build_reformulation(&inst, &DualSolution::zero(4), 1e-6).unwrap();
        let lo = vec![0.0; 4];
        let up = vec![1.0; 4];
        let r = solve_continuous_relaxation(&m, &lo, &up).unwrap();
        assert!((r.value - 2.0).abs() < 1e-7);
        let r = solve_continuous_relaxation(&m, &lo, &lo);
        assert!(matches!(r, Err(BbError::InfeasibleNode)));
    }

    #[test]
    fn complete_graph_four_choose_two() {
        // k = 2 lies outside the generator's range.
        let q = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)].into_iter().map(|k| (k, 1.0)).collect();
        let inst = QpInstance::new("k4", Sense::Max, 4, q, vec![0.0; 4], vec![vec![1; 4]], vec![2], vec![1; 4]).unwrap();
        let rep = branch_and_bound(&plain(&inst), &BbOptions::default()).unwrap();
        assert_eq!(rep.status, BbStatus::Optimal);
        assert_eq!(rep.best_value, Some(1.0));
    }

    #[test]
    fn matches_brute_force_with_plain_repair() {
        for seed in 1..4 {
            let inst = generate_kcluster(8, 0.5, 4, seed).unwrap();
            let (opt, _) = brute_force_optimum(&inst, 1 << 20).unwrap();
            let rep = branch_and_bound(&plain(&inst), &BbOptions::default()).unwrap();
            assert_eq!(rep.best_value, Some(opt), "seed {seed}");
            let inc: Vec<f64> = rep.incumbents.iter().map(|x| x.1).collect();
            assert!(inc.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn node_limit_zero() {
        let inst = generate_kcluster(8, 0.5, 4, 2).unwrap();
        let rep = branch_and_bound(
            &plain(&inst),
            &BbOptions {
                node_limit: Some(0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.status, BbStatus::TimeLimit);
        assert_eq!(rep.nodes, 0);
        assert!(rep.root_bound.is_some());
        if let Some(v) = rep.best_value {
            assert!(rep.final_gap.is_some() || v == 0.0);
        }
    }

    #[test]
    fn minimization_sense() {
        let inst = QpInstance::new(
            "min",
            Sense::Min,
            3,
            [((0, 0), 2.0), ((0, 1), -3.0), ((1, 2), 1.0)].into(),
            vec![1.0, 0.0, -2.0],
            vec![vec![1, 1, 1]],
            vec![4],
            vec![2, 3, 2],
        )
        .unwrap();
        let (opt, _) = brute_force_optimum(&inst, 1 << 16).unwrap();
        let rep = branch_and_bound(&plain(&inst), &BbOptions::default()).unwrap();
        assert_eq!(rep.best_value, Some(opt));
        assert!(rep.root_bound.unwrap() <= opt + 1e-6);
    }
}
