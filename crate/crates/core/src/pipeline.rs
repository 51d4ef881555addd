//! End-to-end runs: relaxation, bundle, reformulation, branch-and-bound.
//!
//! Times are wall-clock seconds. `tt` is defined as `p1 + p2`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bb::{branch_and_bound, percent_gap, BbOptions, BbStatus};
use crate::bundle::{compute_beta, write_history_csv, BundleOptions, DualSolution};
use crate::instances::{generate_eiqp, generate_iep, generate_kcluster, load_instance, QpInstance};
use crate::par;
use crate::reform::{build_reformulation, ensure_concavity};
use crate::relaxation::build_base_relaxation;

#[derive(Debug, Error)]
#[error("{stage} failed: {message}")]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
    /// Report filled up to the failing stage.
    pub partial: Box<RunReport>,
}

/// Tolerance presets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Bundle tolerance 1e-4, zero threshold 1e-4.
    Binary,
    /// Bundle tolerance 1e-8, zero threshold 1e-6.
    Integer,
    /// `binary` when every `u_i = 1`, else `integer`.
    #[default]
    Auto,
}

impl Mode {
    pub fn resolve(self, inst: &QpInstance) -> Mode {
        match self {
            Mode::Auto if inst.is_binary() => Mode::Binary,
            Mode::Auto => Mode::Integer,
            m => m,
        }
    }

    /// `(bundle tolerance, zero threshold)`.
    pub fn tolerances(self) -> (f64, f64) {
        match self {
            Mode::Binary => (1e-4, 1e-4),
            _ => (1e-8, 1e-6),
        }
    }
}

/// Where the instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum InstanceSpec {
    File { path: PathBuf },
    Kcluster { n: usize, d: f64, k: usize, seed: u64 },
    Eiqp { class: u8, n: usize, seed: u64, clip: Option<i64> },
    Iep { types: usize, per_type: usize, sets: usize, seed: u64 },
}

impl InstanceSpec {
    pub fn load(&self) -> Result<QpInstance, crate::instances::InstanceError> {
        match self {
            InstanceSpec::File { path } => load_instance(path),
            &InstanceSpec::Kcluster { n, d, k, seed } => generate_kcluster(n, d, k, seed),
            &InstanceSpec::Eiqp { class, n, seed, clip } => {
                let inst = generate_eiqp(class, n, seed)?;
                match clip {
                    Some(c) => inst.with_clipped_bounds(c),
                    None => Ok(inst),
                }
            }
            &InstanceSpec::Iep { types, per_type, sets, seed } => generate_iep(types, per_type, sets, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    /// Fraction `delta` of the `4 C(n, 2)` product inequalities that may be
    /// dualized.
    pub delta: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Overrides the bundle tolerance of the mode.
    #[serde(default)]
    pub tol: Option<f64>,
    /// Overrides the zero threshold of the mode.
    #[serde(default)]
    pub zero_tol: Option<f64>,
    #[serde(default)]
    pub time_limit: Option<f64>,
    #[serde(default)]
    pub node_limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Receives the bundle and node logs as CSV.
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
    /// Batch summary group; defaults to `delta=<delta>`.
    #[serde(default)]
    pub group: Option<String>,
}

impl RunConfig {
    pub fn new(instance: InstanceSpec, delta: f64) -> Self {
        Self {
            instance,
            delta,
            mode: Mode::Auto,
            tol: None,
            zero_tol: None,
            time_limit: None,
            node_limit: None,
            seed: 0,
            log_dir: None,
            group: None,
        }
    }

    fn group_key(&self) -> String {
        self.group.clone().unwrap_or_else(|| format!("delta={}", self.delta))
    }
}

/// `round(delta * 4 C(n, 2))`.
pub fn cap_for(n: usize, delta: f64) -> usize {
    let full = 2 * n * n.saturating_sub(1);
    ((delta * full as f64).round() as usize).min(full)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    TimeLimit,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub p: usize,
    pub mode: Mode,
    pub tol: f64,
    pub zero_tol: f64,
    pub seed: u64,
    /// Final value of the partial dual, in the sense of the instance.
    pub dual_value: Option<f64>,
    /// Continuous relaxation of the reformulation at the root.
    pub root_bound: Option<f64>,
    /// Optimum, or best value found when stopped early.
    pub optimum: Option<f64>,
    pub solution: Option<Vec<i64>>,
    /// `|root_bound - optimum| / |optimum| * 100`.
    pub gap: Option<f64>,
    /// `|root_bound - optimum|`, reported when the optimum is zero.
    pub abs_gap: Option<f64>,
    pub final_gap: Option<f64>,
    pub p1: f64,
    pub p2: f64,
    pub tt: f64,
    pub nodes: usize,
    pub bundle_iterations: usize,
    pub oracle_calls: usize,
    pub bundle_converged: bool,
    /// Pairs with a nonzero aggregate multiplier.
    pub support: usize,
    /// Dualized family multipliers that are nonzero.
    pub family_support: usize,
    pub status: RunStatus,
}

impl RunReport {
    fn empty(config: &RunConfig) -> Self {
        Self {
            name: String::new(),
            n: 0,
            m: 0,
            delta: config.delta,
            p: 0,
            mode: config.mode,
            tol: f64::NAN,
            zero_tol: f64::NAN,
            seed: config.seed,
            dual_value: None,
            root_bound: None,
            optimum: None,
            solution: None,
            gap: None,
            abs_gap: None,
            final_gap: None,
            p1: 0.0,
            p2: 0.0,
            tt: 0.0,
            nodes: 0,
            bundle_iterations: 0,
            oracle_calls: 0,
            bundle_converged: false,
            support: 0,
            family_support: 0,
            status: RunStatus::Failed,
        }
    }

    /// JSON text with the timing fields removed.
    pub fn without_timing(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        if let Some(obj) = v.as_object_mut() {
            for k in ["p1", "p2", "tt"] {
                obj.remove(k);
            }
        }
        v
    }
}

/// Everything a run produces, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub dual: DualSolution,
    pub bb: crate::bb::BbReport,
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, PipelineError> {
    let report = RunReport::empty(config);
    let inst = config.instance.load().map_err(|e| PipelineError {
        stage: "load".into(),
        message: e.to_string(),
        partial: Box::new(report.clone()),
    })?;
    run_instance(&inst, config).map(|a| a.report)
}

/// Runs the pipeline on an instance already in memory.
pub fn run_instance(inst: &QpInstance, config: &RunConfig) -> Result<RunArtifacts, PipelineError> {
    let mut report = RunReport::empty(config);
    let fail = |stage: &str, message: String, report: &RunReport| PipelineError {
        stage: stage.into(),
        message,
        partial: Box::new(report.clone()),
    };
    if !(0.0..=1.0).contains(&config.delta) {
        return Err(fail("config", format!("delta = {} outside [0, 1]", config.delta), &report));
    }
    let mode = config.mode.resolve(inst);
    let (tol, zero_tol) = mode.tolerances();
    let tol = config.tol.unwrap_or(tol);
    let zero_tol = config.zero_tol.unwrap_or(zero_tol);
    let n = inst.n();
    let p = cap_for(n, config.delta);
    let sign = inst.sense().sign();
    report.name = inst.name().to_string();
    report.n = n;
    report.m = inst.m();
    report.p = p;
    report.mode = mode;
    report.tol = tol;
    report.zero_tol = zero_tol;

    let t1 = Instant::now();
    let relax = build_base_relaxation(inst).map_err(|e| fail("relaxation", e.to_string(), &report))?;
    let bopts = BundleOptions {
        tol,
        ..BundleOptions::integer()
    };
    let dual = compute_beta(&relax, p, &bopts).map_err(|e| {
        report.p1 = t1.elapsed().as_secs_f64();
        fail("phase 1", e.to_string(), &report)
    })?;
    report.p1 = t1.elapsed().as_secs_f64();
    report.dual_value = Some(dual.dual_value * sign);
    report.bundle_iterations = dual.iterations;
    report.oracle_calls = dual.oracle_calls;
    report.bundle_converged = dual.converged;
    report.family_support = dual.beta_families.len();

    let stem = sanitize(inst.name());
    if let Some(dir) = &config.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| fail("logging", e.to_string(), &report))?;
        let path = dir.join(format!("{stem}_d{}_bundle.csv", config.delta));
        write_history_csv(&dual.history, path).map_err(|e| fail("logging", e.to_string(), &report))?;
    }

    let t2 = Instant::now();
    let stage2 = |report: &mut RunReport| -> Result<crate::bb::BbReport, (String, String)> {
        let miqp = build_reformulation(inst, &dual, zero_tol).map_err(|e| ("reformulation".to_string(), e.to_string()))?;
        report.support = miqp.beta.len();
        let miqp = ensure_concavity(miqp).map_err(|e| ("concavity".to_string(), e.to_string()))?;
        let opts = BbOptions {
            time_limit: config.time_limit.map(|t| (t - report.p1).max(0.0)),
            node_limit: config.node_limit,
            node_log: config
                .log_dir
                .as_ref()
                .map(|d| d.join(format!("{stem}_d{}_nodes.csv", config.delta))),
        };
        branch_and_bound(&miqp, &opts).map_err(|e| ("phase 2".to_string(), e.to_string()))
    };
    let bb = stage2(&mut report);
    report.p2 = t2.elapsed().as_secs_f64();
    report.tt = report.p1 + report.p2;
    let bb = bb.map_err(|(stage, msg)| fail(&stage, msg, &report))?;

    report.nodes = bb.nodes;
    report.root_bound = bb.root_bound;
    report.optimum = bb.best_value;
    report.solution = bb.best_point.clone();
    report.final_gap = bb.final_gap;
    if let (Some(c), Some(v)) = (bb.root_bound, bb.best_value) {
        report.gap = percent_gap(c, v);
        if v == 0.0 {
            report.abs_gap = Some((c - v).abs());
        }
    }
    report.status = match bb.status {
        BbStatus::Optimal => RunStatus::Optimal,
        BbStatus::TimeLimit => RunStatus::TimeLimit,
        BbStatus::Infeasible => RunStatus::Infeasible,
    };
    Ok(RunArtifacts { report, dual, bb })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One row per `RunConfig::group`.
    ByGroup,
    /// A single row over all runs.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub group: String,
    pub runs: usize,
    /// Runs solved to optimality; only these enter the means.
    pub solved: usize,
    pub gap: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub tt: Option<f64>,
    pub nodes: Option<f64>,
    pub tt_min: Option<f64>,
    pub tt_max: Option<f64>,
    /// `"(k)"` when only `k` of the runs were solved.
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub reports: Vec<Result<RunReport, String>>,
    pub summary: Vec<BatchRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Summarizes finished runs into one row per group.
pub fn summarize(groups: &[(String, Option<&RunReport>)]) -> Vec<BatchRow> {
    let mut by: BTreeMap<&str, Vec<Option<&RunReport>>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for (g, r) in groups {
        if !by.contains_key(g.as_str()) {
            order.push(g);
        }
        by.entry(g).or_default().push(*r);
    }
    order
        .into_iter()
        .map(|g| {
            let runs = &by[g];
            let ok: Vec<&RunReport> = runs
                .iter()
                .flatten()
                .copied()
                .filter(|r| r.status == RunStatus::Optimal)
                .collect();
            let col = |f: fn(&RunReport) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let gaps: Vec<f64> = ok.iter().filter_map(|r| r.gap).collect();
            let tts = col(|r| r.tt);
            BatchRow {
                group: g.to_string(),
                runs: runs.len(),
                solved: ok.len(),
                gap: mean(&gaps),
                p1: mean(&col(|r| r.p1)),
                p2: mean(&col(|r| r.p2)),
                tt: mean(&tts),
                nodes: mean(&col(|r| r.nodes as f64)),
                tt_min: tts.iter().copied().reduce(f64::min),
                tt_max: tts.iter().copied().reduce(f64::max),
                annotation: (ok.len() < runs.len()).then(|| format!("({})", ok.len())),
            }
        })
        .collect()
}

/// Runs every configuration, in parallel when enabled, and summarizes.
pub fn run_batch(configs: &[RunConfig], aggregation: Aggregation) -> BatchOutcome {
    let reports: Vec<Result<RunReport, String>> = par::map(configs, |c| run_pipeline(c).map_err(|e| e.to_string()));
    let keyed: Vec<(String, Option<&RunReport>)> = configs
        .iter()
        .zip(&reports)
        .map(|(c, r)| {
            let key = match aggregation {
                Aggregation::ByGroup => c.group_key(),
                Aggregation::All => "all".to_string(),
            };
            (key, r.as_ref().ok())
        })
        .collect();
    let summary = summarize(&keyed);
    BatchOutcome { reports, summary }
}
