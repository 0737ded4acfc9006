//! End-to-end acceptance run. Prints one line per criterion.
//!
//! The trained pipeline is cached under the cargo target tmp dir, keyed by
//! the config hash. `ACCEPTANCE_ONLY=1,4,7` selects criteria;
//! `ACCEPTANCE_STRICT=1` fails on any red criterion, including known ones.

mod fixture;
mod oracles;
mod pipeline;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Check = fn() -> Verdict;

/// Criteria that stay red at desk scale; see the README.
const KNOWN_RED: &[usize] = &[8];

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let criteria: [(usize, &str, Check); 10] = [
        (1, "rendering oracle", oracles::rendering),
        (2, "loss oracle", oracles::losses),
        (3, "gradient suite", oracles::gradients),
        (4, "cnf correctness", oracles::cnf),
        (5, "training smoke", pipeline::training_smoke),
        (6, "disentanglement", pipeline::disentanglement),
        (7, "editing monotonicity", pipeline::monotonicity),
        (8, "mode-collapse ablation", pipeline::mode_collapse),
        (9, "video temporal consistency", pipeline::video_consistency),
        (10, "determinism", pipeline::determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Verdict::new(false, format!("panicked: {msg}"))
            }
        };
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), v.detail);
        if !v.pass && (strict || !KNOWN_RED.contains(&id)) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("acceptance failed: criteria {unexpected:?}");
        std::process::exit(1);
    }
}
