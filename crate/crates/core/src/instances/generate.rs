//! Seeded generators for the k-cluster, EIQP and IEP families.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(seed)`. Draws are converted explicitly so other
//! implementations can reproduce instances bit for bit:
//!
//! - a unit draw is `(next_u64() >> 11) * 2^-53`,
//! - an integer in `[lo, hi]` takes `v = next_u64()` and rejects
//!   `v >= zone`, where `zone = floor(2^64 / range) * range` and
//!   `range = hi - lo + 1`; the result is `lo + v % range`.

use std::collections::BTreeMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InstanceError, QpInstance, Result, Sense};

/// Deterministic source for instance generation.
pub struct InstanceRng(ChaCha8Rng);

impl InstanceRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo <= hi);
        let range = (hi - lo) as u64 + 1;
        let zone = (u64::MAX / range) * range;
        loop {
            let v = self.0.next_u64();
            if v < zone {
                return lo + (v % range) as i64;
            }
        }
    }
}

/// k-cluster: maximize the number of edges inside a `k`-subset of a random
/// graph on `n` vertices with edge density `d`.
///
/// Edges are drawn as independent Bernoulli(`d`) trials over pairs `i < j`
/// in lexicographic order.
pub fn generate_kcluster(n: usize, d: f64, k: usize, seed: u64) -> Result<QpInstance> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(InstanceError::Domain(format!("density d = {d} outside (0, 1]")));
    }
    if n < 5 || k < 3 || k > n - 2 {
        return Err(InstanceError::Domain(format!(
            "k = {k} outside {{3, …, n−2}} for n = {n}"
        )));
    }
    let mut rng = InstanceRng::new(seed);
    let mut q = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(d) {
                q.insert((i, j), 1.0);
            }
        }
    }
    QpInstance::new(
        format!("kc_n{n}_d{d}_k{k}_s{seed}"),
        Sense::Max,
        n,
        q,
        vec![0.0; n],
        vec![vec![1; n]],
        vec![k as i64],
        vec![1; n],
    )
}

/// Equality integer quadratic problem, class 1 or 2 (minimization).
///
/// Draw order: `q_ij` for `i <= j` lexicographically, then `c`, then `a`.
pub fn generate_eiqp(class: u8, n: usize, seed: u64) -> Result<QpInstance> {
    let (a_max, mu, ub) = match class {
        1 => (50, 15, 30),
        2 => (100, 20, 50),
        _ => return Err(InstanceError::Domain(format!("EIQP class {class} not in {{1, 2}}"))),
    };
    if n == 0 {
        return Err(InstanceError::Domain("n ≥ 1 required".into()));
    }
    let mut rng = InstanceRng::new(seed);
    let mut q = BTreeMap::new();
    for i in 0..n {
        for j in i..n {
            let v = rng.int_in(-100, 100);
            if v != 0 {
                q.insert((i, j), v as f64);
            }
        }
    }
    let c = (0..n).map(|_| rng.int_in(-100, 100) as f64).collect();
    let a: Vec<i64> = (0..n).map(|_| rng.int_in(1, a_max)).collect();
    let b = mu * a.iter().sum::<i64>();
    QpInstance::new(
        format!("eiqp{class}_n{n}_s{seed}"),
        Sense::Min,
        n,
        q,
        c,
        vec![a],
        vec![b],
        vec![ub; n],
    )
}

/// Integer equipartition: `types` item types with `per_type` items each,
/// split into `sets` equally sized sets. Variable `x_ik` (index
/// `i * sets + k`) counts the items of type `i` placed in set `k`.
///
/// Costs `c_ij`, `i <= j`, are drawn lexicographically from `[1, 10]`.
/// Rows are the set sizes first, then the type totals.
pub fn generate_iep(types: usize, per_type: usize, sets: usize, seed: u64) -> Result<QpInstance> {
    if types == 0 || per_type == 0 || sets == 0 {
        return Err(InstanceError::Domain("n, m, p must be positive".into()));
    }
    let total = types * per_type;
    if !total.is_multiple_of(sets) {
        return Err(InstanceError::Domain(format!(
            "p = {sets} does not divide n·m = {total}"
        )));
    }
    let set_size = total / sets;
    let mut rng = InstanceRng::new(seed);
    let mut cost = vec![vec![0i64; types]; types];
    for i in 0..types {
        for j in i..types {
            cost[i][j] = rng.int_in(1, 10);
        }
    }
    let idx = |i: usize, k: usize| i * sets + k;
    let nv = types * sets;
    let mut q = BTreeMap::new();
    for i in 0..types {
        for j in i + 1..types {
            for k in 0..sets {
                for l in 0..sets {
                    if k != l {
                        q.insert((idx(i, k), idx(j, l)), cost[i][j] as f64);
                    }
                }
            }
        }
        for k in 0..sets {
            for l in k + 1..sets {
                q.insert((idx(i, k), idx(i, l)), cost[i][i] as f64);
            }
        }
    }
    let mut a = Vec::with_capacity(types + sets);
    let mut b = Vec::with_capacity(types + sets);
    for k in 0..sets {
        let mut row = vec![0; nv];
        for i in 0..types {
            row[idx(i, k)] = 1;
        }
        a.push(row);
        b.push(set_size as i64);
    }
    for i in 0..types {
        let mut row = vec![0; nv];
        for k in 0..sets {
            row[idx(i, k)] = 1;
        }
        a.push(row);
        b.push(per_type as i64);
    }
    let ub = per_type.min(set_size) as i64;
    QpInstance::new(
        format!("iep_n{types}_m{per_type}_p{sets}_s{seed}"),
        Sense::Min,
        nv,
        q,
        vec![0.0; nv],
        a,
        b,
        vec![ub; nv],
    )
}
