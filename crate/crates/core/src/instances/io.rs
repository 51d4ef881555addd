//! JSON instance files.
//!
//! ```text
//! {"name": str, "sense": "max"|"min", "n": int, "u": [int], "c": [num],
//!  "Q": [[i, j, q], ...], "A": [[num, ...], ...], "b": [num]}
//! ```
//!
//! `Q` indices are 1-based with `i <= j`. An entry given as `(j, i)` is
//! folded onto `(i, j)`; giving both with different values is an error.
//! [`save_instance`] writes the canonical layout, one key per line, which
//! [`load_instance`] reads back byte-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{InstanceError, QpInstance, Result, Sense};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    name: String,
    sense: Sense,
    n: usize,
    u: Vec<f64>,
    c: Vec<f64>,
    #[serde(rename = "Q")]
    q: Vec<(f64, f64, f64)>,
    #[serde(rename = "A", default)]
    a: Vec<Vec<f64>>,
    #[serde(default)]
    b: Vec<f64>,
}

fn integral(field: &str, v: f64) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() || v.abs() > 9.0e15 {
        return Err(InstanceError::Validation(format!(
            "{field} must be integral, got {v}"
        )));
    }
    Ok(v as i64)
}

fn index(field: &str, v: f64, n: usize) -> Result<usize> {
    let i = integral(field, v)?;
    if i < 1 || i as usize > n {
        return Err(InstanceError::Validation(format!(
            "{field} = {i} outside 1..={n}"
        )));
    }
    Ok(i as usize - 1)
}

/// Parses and validates an instance from JSON text.
pub fn parse_instance(text: &str) -> Result<QpInstance> {
    let raw: RawInstance =
        serde_json::from_str(text).map_err(|e| InstanceError::Parse(e.to_string()))?;
    let n = raw.n;
    let mut q = BTreeMap::new();
    let mut seen: BTreeMap<(usize, usize, bool), f64> = BTreeMap::new();
    for (pos, &(qi, qj, v)) in raw.q.iter().enumerate() {
        let field = format!("Q[{pos}]");
        let i = index(&format!("{field}.i"), qi, n)?;
        let j = index(&format!("{field}.j"), qj, n)?;
        let (lo, hi) = (i.min(j), i.max(j));
        let flipped = i > j;
        if seen.insert((lo, hi, flipped), v).is_some() {
            return Err(InstanceError::Validation(format!(
                "duplicate Q entry ({}, {})",
                i + 1,
                j + 1
            )));
        }
        if let Some(&other) = seen.get(&(lo, hi, !flipped)) {
            if other != v {
                return Err(InstanceError::Validation(format!(
                    "non-symmetric duplicate Q entries ({0}, {1}) = {2} and ({1}, {0}) = {3}",
                    lo + 1,
                    hi + 1,
                    if flipped { other } else { v },
                    if flipped { v } else { other }
                )));
            }
            continue;
        }
        q.insert((lo, hi), v);
    }
    let u = raw
        .u
        .iter()
        .enumerate()
        .map(|(i, &v)| integral(&format!("u[{i}]"), v))
        .collect::<Result<Vec<_>>>()?;
    let b = raw
        .b
        .iter()
        .enumerate()
        .map(|(r, &v)| integral(&format!("b[{r}]"), v))
        .collect::<Result<Vec<_>>>()?;
    let a = raw
        .a
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| integral(&format!("A[{r}][{i}]"), v))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    QpInstance::new(raw.name, raw.sense, n, q, raw.c, a, b, u)
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<QpInstance> {
    let text = fs::read_to_string(path)?;
    parse_instance(&text)
}

fn num(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

/// Canonical text of an instance.
pub fn to_canonical_json(inst: &QpInstance) -> String {
    let line = |v: Value| serde_json::to_string(&v).expect("json values always serialize");
    let u = Value::from(inst.u().to_vec());
    let c = Value::Array(inst.c().iter().map(|&v| num(v)).collect());
    let q = Value::Array(
        inst.q()
            .iter()
            .map(|(&(i, j), &v)| Value::Array(vec![Value::from(i + 1), Value::from(j + 1), num(v)]))
            .collect(),
    );
    let a = Value::from(inst.a().to_vec());
    let b = Value::from(inst.b().to_vec());
    let sense = match inst.sense() {
        Sense::Max => "max",
        Sense::Min => "min",
    };
    format!(
        "{{\n  \"name\": {},\n  \"sense\": \"{sense}\",\n  \"n\": {},\n  \"u\": {},\n  \"c\": {},\n  \"Q\": {},\n  \"A\": {},\n  \"b\": {}\n}}\n",
        line(Value::from(inst.name())),
        inst.n(),
        line(u),
        line(c),
        line(q),
        line(a),
        line(b),
    )
}

pub fn save_instance(inst: &QpInstance, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_canonical_json(inst))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{evaluate_objective, generate_eiqp, generate_kcluster, IntegerPoint};

    #[test]
    fn minimal_file() {
        let text = r#"{"name":"one","sense":"max","n":1,"u":[1],"c":[0],"Q":[[1,1,1]],"A":[],"b":[]}"#;
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.n(), 1);
        assert_eq!(inst.m(), 0);
        assert_eq!(evaluate_objective(&inst, &IntegerPoint(vec![1])).unwrap(), 1.0);
    }

    #[test]
    fn zero_bound_file_rejected() {
        let text = r#"{"name":"z","sense":"max","n":1,"u":[0],"c":[0],"Q":[],"A":[],"b":[]}"#;
        let err = parse_instance(text).unwrap_err();
        assert!(err.to_string().contains("u_i ≥ 1 violated"), "{err}");
    }

    #[test]
    fn symmetric_entries() {
        let ok = r#"{"name":"s","sense":"max","n":2,"u":[1,1],"c":[0,0],"Q":[[1,2,3],[2,1,3]],"A":[],"b":[]}"#;
        assert_eq!(parse_instance(ok).unwrap().q_entry(1, 0), 3.0);
        let bad = r#"{"name":"s","sense":"max","n":2,"u":[1,1],"c":[0,0],"Q":[[1,2,3],[2,1,4]],"A":[],"b":[]}"#;
        let err = parse_instance(bad).unwrap_err();
        assert!(err.to_string().contains("non-symmetric"), "{err}");
        let dup = r#"{"name":"s","sense":"max","n":2,"u":[1,1],"c":[0,0],"Q":[[1,2,3],[1,2,3]],"A":[],"b":[]}"#;
        assert!(parse_instance(dup).is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_instance("{\"name\": \"x\",\n \"sense\": 3}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let err = parse_instance(
            r#"{"name":"s","sense":"max","n":1,"u":[1.5],"c":[0],"Q":[],"A":[],"b":[]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("u[0]"));
    }

    #[test]
    fn generated_instances_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for inst in [
            generate_kcluster(8, 0.5, 4, 1).unwrap(),
            generate_eiqp(2, 5, 9).unwrap(),
            generate_eiqp(1, 4, 2).unwrap().scaled_objective(0.37),
        ] {
            let path = dir.path().join("inst.json");
            save_instance(&inst, &path).unwrap();
            let back = load_instance(&path).unwrap();
            assert_eq!(back, inst);
            assert_eq!(to_canonical_json(&back), fs::read_to_string(&path).unwrap());
        }
    }
}
