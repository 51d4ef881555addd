//! Exhaustive enumeration over the integer box; the test oracle.

use super::{objective_at, InstanceError, IntegerPoint, QpInstance, Result};

/// Calls `visit` on every point of the box `0 <= x <= u` in
/// co-lexicographic order: the first coordinate varies fastest, so points
/// are ordered by comparing `x_n` first.
fn for_each_box_point(u: &[i64], mut visit: impl FnMut(&[i64])) {
    let n = u.len();
    let mut x = vec![0i64; n];
    'outer: loop {
        visit(&x);
        for pos in 0..n {
            if x[pos] < u[pos] {
                x[pos] += 1;
                for v in &mut x[..pos] {
                    *v = 0;
                }
                continue 'outer;
            }
        }
        return;
    }
}

fn check_limit(inst: &QpInstance, limit: u128) -> Result<()> {
    let size = inst.box_size();
    if size > limit {
        return Err(InstanceError::EnumerationTooLarge { size, limit });
    }
    Ok(())
}

/// Best feasible point by full enumeration. Ties go to the first point in
/// co-lexicographic order, e.g. `(1, 1, 0, 0)` before `(0, 0, 1, 1)`.
pub fn brute_force_optimum(inst: &QpInstance, limit: u128) -> Result<(f64, IntegerPoint)> {
    check_limit(inst, limit)?;
    let sense = inst.sense();
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut xf = vec![0.0; inst.n()];
    for_each_box_point(inst.u(), |x| {
        let p = IntegerPoint(x.to_vec());
        if !inst.satisfies_equalities(&p) {
            return;
        }
        for (dst, &v) in xf.iter_mut().zip(x) {
            *dst = v as f64;
        }
        let val = objective_at(inst, &xf);
        match &best {
            Some((bv, _)) if !sense.better(val, *bv) => {}
            _ => best = Some((val, p.0)),
        }
    });
    best.map(|(v, x)| (v, IntegerPoint(x))).ok_or(InstanceError::Infeasible)
}

/// Every feasible integer point, in co-lexicographic order.
pub fn enumerate_feasible(inst: &QpInstance, limit: u128) -> Result<Vec<IntegerPoint>> {
    check_limit(inst, limit)?;
    let mut out = Vec::new();
    for_each_box_point(inst.u(), |x| {
        let p = IntegerPoint(x.to_vec());
        if inst.satisfies_equalities(&p) {
            out.push(p);
        }
    });
    Ok(out)
}
