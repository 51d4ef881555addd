//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use miqcr::bb::percent_gap;
use miqcr::bundle::DualSolution;
use miqcr::conic::{ConicOptions, Tolerances};
use miqcr::instances::{brute_force_optimum, enumerate_feasible, generate_eiqp, generate_kcluster};
use miqcr::pipeline::{cap_for, run_instance, RunArtifacts};
use miqcr::reform::{check_equivalence, Arithmetic};
use miqcr::{build_base_relaxation, build_reformulation, compute_beta, ensure_concavity, par, BundleOptions, InstanceSpec, Mode, QpInstance, RunConfig};

const BRUTE_LIMIT: u128 = 10_000_000;
/// Weak duality slack, relative to `1 + |opt|`.
const WEAK_DUALITY_TOL: f64 = 1e-6;
/// Root relaxation against dual value, relative.
const BOUND_MATCH_TOL: f64 = 1e-3;
/// Largest admissible eigenvalue after repair.
const CONCAVITY_TOL: f64 = 1e-8;
/// Float-mode equivalence tolerance.
const FLOAT_EQ_TOL: f64 = 1e-9;
/// Allowed root-gap increase per delta step, in gap percent.
const TREND_SLACK: f64 = 1e-4;
/// KKT residuals against requested tolerances.
const KKT_FACTOR: f64 = 10.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn below(r: &mut ChaCha8Rng, n: u64) -> u64 {
    r.next_u64() % n
}

fn kc_set() -> Vec<QpInstance> {
    let ns = [8usize, 10, 12];
    let ds = [0.25, 0.5, 0.75];
    (0..50u64)
        .map(|idx| {
            let n = ns[(idx % 3) as usize];
            let d = ds[((idx / 3) % 3) as usize];
            let (lo, hi) = ((n / 4).max(3), (3 * n / 4).min(n - 2));
            let k = lo + (idx as usize * 7) % (hi - lo + 1);
            generate_kcluster(n, d, k, 1000 + idx).expect("kc instance")
        })
        .collect()
}

fn eiqp_set() -> Vec<QpInstance> {
    (0..20u64)
        .map(|idx| {
            let n = 3 + (idx % 4) as usize;
            generate_eiqp(1, n, 2000 + idx)
                .and_then(|i| i.with_clipped_bounds(3))
                .expect("eiqp instance")
        })
        .collect()
}

fn config(inst: &QpInstance, delta: f64) -> RunConfig {
    let mut c = RunConfig::new(InstanceSpec::File { path: "<memory>".into() }, delta);
    c.mode = Mode::Auto;
    let _ = inst;
    c
}

fn run(inst: &QpInstance, delta: f64) -> Result<RunArtifacts, String> {
    run_instance(inst, &config(inst, delta)).map_err(|e| e.to_string())
}

/// Optimum in the maximization sense.
fn max_sense_opt(inst: &QpInstance) -> f64 {
    let (v, _) = brute_force_optimum(inst, BRUTE_LIMIT).expect("enumerable");
    v * inst.sense().sign()
}

fn criteria_1_2(kc_runs: &[(QpInstance, Result<RunArtifacts, String>)]) -> (Outcome, Outcome) {
    let mut exact_fail = Vec::new();
    let mut weak_fail = Vec::new();
    for (inst, res) in kc_runs {
        let (opt, _) = brute_force_optimum(inst, BRUTE_LIMIT).expect("enumerable");
        match res {
            Ok(a) => {
                if a.report.optimum != Some(opt) {
                    exact_fail.push(format!("{}: {:?} vs {opt}", inst.name(), a.report.optimum));
                }
                let slack = WEAK_DUALITY_TOL * (1.0 + opt.abs());
                if let Some(r) = a.dual.history.iter().find(|r| r.value < opt - slack) {
                    weak_fail.push(format!("{} it {}: {}", inst.name(), r.iteration, r.value));
                }
            }
            Err(e) => {
                exact_fail.push(format!("{}: {e}", inst.name()));
                weak_fail.push(format!("{}: {e}", inst.name()));
            }
        }
    }
    let eiqp = eiqp_set();
    let eiqp_fail: Vec<String> = par::map(&eiqp, |inst| {
        let opt = max_sense_opt(inst);
        let relax = build_base_relaxation(inst).map_err(|e| e.to_string())?;
        let p = cap_for(inst.n(), 1.0);
        let dual = compute_beta(&relax, p, &BundleOptions::integer()).map_err(|e| e.to_string())?;
        let slack = WEAK_DUALITY_TOL * (1.0 + opt.abs());
        match dual.history.iter().find(|r| r.value < opt - slack) {
            Some(r) => Err(format!("it {}: {} < {opt}", r.iteration, r.value)),
            None => Ok(()),
        }
    })
    .into_iter()
    .zip(&eiqp)
    .filter_map(|(r, inst)| r.err().map(|e| format!("{}: {e}", inst.name())))
    .collect();
    weak_fail.extend(eiqp_fail);
    let c1 = outcome(
        exact_fail.is_empty(),
        format!("{}/{} optima exact {:?}", kc_runs.len() - exact_fail.len(), kc_runs.len(), exact_fail),
    );
    let c2 = outcome(
        weak_fail.is_empty(),
        format!("{} instances, violations {:?}", kc_runs.len() + eiqp.len(), weak_fail),
    );
    (c1, c2)
}

fn criterion_3(kc_runs: &[(QpInstance, Result<RunArtifacts, String>)]) -> Outcome {
    let mut checked = 0;
    let mut worst = 0.0f64;
    let mut fails = Vec::new();
    for (inst, res) in kc_runs {
        if checked == 20 {
            break;
        }
        let Ok(a) = res else { continue };
        if !a.dual.converged {
            continue;
        }
        let (Some(root), Some(dual)) = (a.report.root_bound, a.report.dual_value) else {
            continue;
        };
        checked += 1;
        let rel = (root - dual).abs() / dual.abs().max(1e-12);
        worst = worst.max(rel);
        if rel > BOUND_MATCH_TOL {
            fails.push(format!("{}: root {root} dual {dual}", inst.name()));
        }
    }
    outcome(
        checked == 20 && fails.is_empty(),
        format!("{checked} converged runs, worst relative mismatch {worst:.2e} {fails:?}"),
    )
}

/// Largest eigenvalue by cyclic Jacobi rotations.
fn jacobi_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

fn random_dual(inst: &QpInstance, r: &mut ChaCha8Rng) -> DualSolution {
    let n = inst.n();
    let mut dual = DualSolution::zero(n);
    dual.alpha = if inst.m() > 0 { 5.0 * unit(r) } else { 0.0 };
    dual.lambda = (0..n).map(|_| 10.0 * unit(r) - 5.0).collect();
    for i in 0..n {
        for j in i + 1..n {
            let mut agg = 0.0;
            for t in 1..=4u8 {
                if below(r, 3) == 0 {
                    let v = 4.0 * unit(r);
                    dual.beta_families.push((i, j, t, v));
                    agg += if t <= 2 { v } else { -v };
                }
            }
            if agg != 0.0 {
                dual.beta.push((i, j, agg));
            }
        }
    }
    dual
}

fn criterion_4() -> Outcome {
    let cases: Vec<u64> = (0..100).collect();
    let results: Vec<Result<f64, String>> = par::map(&cases, |&c| {
        let mut r = rng(4000 + c);
        let inst = match c % 3 {
            0 => generate_kcluster(5 + below(&mut r, 7) as usize, 0.5, 3, c),
            1 => generate_eiqp(1, 2 + below(&mut r, 4) as usize, c).and_then(|i| i.with_clipped_bounds(3)),
            _ => generate_eiqp(1, 2 + below(&mut r, 3) as usize, c),
        }
        .map_err(|e| e.to_string())?;
        let dual = random_dual(&inst, &mut r);
        let miqp = build_reformulation(&inst, &dual, 0.0).map_err(|e| e.to_string())?;
        let miqp = ensure_concavity(miqp).map_err(|e| e.to_string())?;
        Ok(jacobi_max_eigenvalue(&miqp.hessian))
    });
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let worst = results.iter().filter_map(|r| r.as_ref().ok()).copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        errors.is_empty() && worst <= CONCAVITY_TOL,
        format!("100 pairs, largest eigenvalue {worst:.3e}, errors {errors:?}"),
    )
}

fn criterion_5() -> Outcome {
    let cases: Vec<u64> = (0..20).collect();
    let results: Vec<Result<usize, String>> = par::map(&cases, |&c| {
        let inst = if c % 2 == 0 {
            generate_kcluster(5 + (c % 4) as usize, 0.5, 3, 5000 + c)
        } else {
            generate_eiqp(1, 3 + (c % 3) as usize, 5000 + c).and_then(|i| i.with_clipped_bounds(3))
        }
        .map_err(|e| e.to_string())?;
        let relax = build_base_relaxation(&inst).map_err(|e| e.to_string())?;
        let dual = compute_beta(&relax, cap_for(inst.n(), 1.0), &BundleOptions::integer()).map_err(|e| e.to_string())?;
        let miqp = build_reformulation(&inst, &dual, 1e-6).map_err(|e| e.to_string())?;
        let miqp = ensure_concavity(miqp).map_err(|e| e.to_string())?;
        let points = enumerate_feasible(&inst, BRUTE_LIMIT).map_err(|e| e.to_string())?;
        for x in &points {
            for mode in [Arithmetic::Rational, Arithmetic::Float] {
                if !check_equivalence(&inst, &miqp, x, mode).map_err(|e| e.to_string())? {
                    return Err(format!("{} at {:?} ({mode:?})", inst.name(), x.0));
                }
            }
        }
        Ok(points.len())
    });
    let points: usize = results.iter().filter_map(|r| r.as_ref().ok()).sum();
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    outcome(
        errors.is_empty(),
        format!("20 instances, {points} points, float tolerance {FLOAT_EQ_TOL:e}, failures {errors:?}"),
    )
}

fn criteria_6_10() -> (Outcome, Outcome) {
    let deltas = [0.0, 0.1, 0.5, 1.0];
    let insts: Vec<QpInstance> = (0..10u64)
        .map(|s| generate_kcluster(12, 0.5, 3 + (s % 7) as usize, 6000 + s).expect("kc instance"))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..insts.len()).flat_map(|i| (0..deltas.len()).map(move |d| (i, d))).collect();
    let runs = par::map(&jobs, |&(i, d)| run(&insts[i], deltas[d]));
    let mut trend_fail = Vec::new();
    let mut nodes = [0usize; 4];
    let mut errors = Vec::new();
    for (i, inst) in insts.iter().enumerate() {
        let mut prev: Option<f64> = None;
        for d in 0..deltas.len() {
            match &runs[i * deltas.len() + d] {
                Ok(a) => {
                    nodes[d] += a.report.nodes;
                    let p = a.report.p;
                    if a.dual.beta_families.len() > p {
                        trend_fail.push(format!("{} delta {}: support {} > p {p}", inst.name(), deltas[d], a.dual.beta_families.len()));
                    }
                    let gap = a.bb.root_gap.or_else(|| a.report.root_bound.zip(a.report.optimum).and_then(|(c, v)| percent_gap(c, v)));
                    match (prev, gap) {
                        (Some(pg), Some(g)) if g > pg + TREND_SLACK => {
                            trend_fail.push(format!("{} delta {}: {g:.6} > {pg:.6}", inst.name(), deltas[d]));
                        }
                        _ => {}
                    }
                    prev = gap;
                }
                Err(e) => errors.push(format!("{} delta {}: {e}", inst.name(), deltas[d])),
            }
        }
    }
    let c6 = outcome(
        errors.is_empty() && trend_fail.is_empty(),
        format!("10 instances x deltas {deltas:?}, violations {trend_fail:?}, errors {errors:?}"),
    );
    let c10 = outcome(
        errors.is_empty() && nodes[3] <= nodes[0],
        format!("total nodes by delta {deltas:?}: {nodes:?}"),
    );
    (c6, c10)
}

fn criterion_7(kc: &[QpInstance]) -> Outcome {
    let mut all: Vec<QpInstance> = kc.iter().take(20).cloned().collect();
    all.extend(eiqp_set().into_iter().take(10));
    let results = par::map(&all, |inst| {
        let relax = build_base_relaxation(inst).map_err(|e| e.to_string())?;
        let dual = compute_beta(&relax, cap_for(inst.n(), 0.0), &BundleOptions::binary()).map_err(|e| e.to_string())?;
        let ok = dual.oracle_calls == 1 && dual.history.len() == 1 && dual.beta.is_empty() && dual.beta_families.is_empty();
        Ok::<_, String>(ok)
    });
    let bad: Vec<String> = results
        .iter()
        .zip(&all)
        .filter(|(r, _)| !matches!(r, Ok(true)))
        .map(|(r, i)| format!("{}: {r:?}", i.name()))
        .collect();
    outcome(bad.is_empty(), format!("{} instances, failures {bad:?}", all.len()))
}

fn criterion_8() -> Outcome {
    let cases: Vec<u64> = (0..100).collect();
    let opts = ConicOptions::default();
    let tol: Tolerances = opts.tol;
    let results: Vec<Result<(bool, f64), String>> = par::map(&cases, |&c| {
        let mut r = rng(8000 + c);
        let inst = if c % 4 == 3 {
            generate_eiqp(1, 2 + below(&mut r, 5) as usize, c).and_then(|i| i.with_clipped_bounds(3))
        } else {
            let n = 5 + below(&mut r, 11) as usize;
            let d = 0.2 + 0.7 * unit(&mut r);
            let k = 3 + below(&mut r, (n - 4) as u64) as usize;
            generate_kcluster(n, d, k, c)
        }
        .map_err(|e| e.to_string())?;
        let relax = build_base_relaxation(&inst).map_err(|e| e.to_string())?;
        let res = relax.solve_oracle(&[], &opts).map_err(|e| e.to_string())?;
        let k = res.kkt;
        let worst = (k.primal_residual / tol.feas).max(k.dual_residual / tol.feas).max(k.gap / tol.gap);
        Ok((k.within(&tol, KKT_FACTOR), worst))
    });
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let fails = results.iter().filter(|r| matches!(r, Ok((false, _)))).count();
    let worst = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.1).fold(0.0, f64::max);
    outcome(
        errors.is_empty() && fails == 0,
        format!("100 relaxations, {fails} outside {KKT_FACTOR}x, worst residual ratio {worst:.2}, errors {errors:?}"),
    )
}

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_miqcr");
    let solve = || -> Result<String, String> {
        let out = Command::new(bin)
            .args(["solve", "--family", "kcluster", "--n", "10", "--density", "0.5", "--k", "4", "--seed", "9", "--delta", "0.5"])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        let obj = v.as_object_mut().ok_or("report is not an object")?;
        for k in ["p1", "p2", "tt"] {
            obj.remove(k);
        }
        serde_json::to_string(&v).map_err(|e| e.to_string())
    };
    match (solve(), solve()) {
        (Ok(a), Ok(b)) => outcome(a == b, format!("{} report bytes, identical: {}", a.len(), a == b)),
        (a, b) => outcome(false, format!("{:?} {:?}", a.err(), b.err())),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let kc = kc_set();
    let kc_runs: Vec<(QpInstance, Result<RunArtifacts, String>)> = kc.iter().cloned().zip(par::map(&kc, |i| run(i, 1.0))).collect();
    let (c1, c2) = criteria_1_2(&kc_runs);
    let c3 = criterion_3(&kc_runs);
    let c4 = criterion_4();
    let c5 = criterion_5();
    let (c6, c10) = criteria_6_10();
    let c7 = criterion_7(&kc);
    let c8 = criterion_8();
    let c9 = criterion_9();
    let all = [
        ("exactness", c1),
        ("weak duality", c2),
        ("bound consistency", c3),
        ("concavity", c4),
        ("objective equivalence", c5),
        ("p-trend", c6),
        ("QCR degeneracy", c7),
        ("oracle quality", c8),
        ("determinism", c9),
        ("node-count direction", c10),
    ];
    let mut failed = 0;
    for (k, (name, o)) in all.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {tag} {name}: {}", k + 1, o.detail);
    }
    println!("acceptance: {} of 10 passed in {:.1}s", 10 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
