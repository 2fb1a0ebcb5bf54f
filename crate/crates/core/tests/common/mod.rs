#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn kcbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcbs"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

/// Validation errors of `instance` against `schemas/<name>.schema.json`.
pub fn schema_errors(name: &str, instance: &Value) -> Vec<String> {
    let path = repo_root().join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    validator
        .iter_errors(instance)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Facet description of the five-cycle correlation polytope: every signed
/// sum with an odd number of minus signs is at most 3. `tol` widens each
/// coordinate as in the sup-norm band of the oracle.
pub fn facet_feasible(c: &[f64], tol: f64) -> bool {
    (0..32u32).filter(|m| m.count_ones() % 2 == 1).all(|m| {
        let s: f64 = (0..5)
            .map(|i| if m >> i & 1 == 1 { -c[i] } else { c[i] })
            .sum();
        s <= 3.0 + 5.0 * tol
    })
}

/// Independent brute force of the cycle sums over all `+-1` assignments.
pub fn brute_min(n: usize, extended: bool) -> i32 {
    (0..1u32 << n)
        .map(|k| {
            let a: Vec<i32> = (0..n).map(|i| if k >> i & 1 == 1 { -1 } else { 1 }).collect();
            if extended {
                a[0] * a[1] + a[1] * a[2] + a[2] * a[3] + a[3] * a[4] + a[4] * a[5] - a[0] * a[5]
            } else {
                (0..n).map(|i| a[i] * a[(i + 1) % n]).sum()
            }
        })
        .min()
        .unwrap()
}
