#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use collective_clock::cc::{CcOptions, CcProtocol};
use collective_clock::sim::{run, NoProtocol, ProgressPolicy, RequestAt, SimConfig, SimResult};
use collective_clock::twopc::TwoPcProtocol;
use collective_clock::workload::{parse_workload, Workload};
use collective_clock::SimError;

pub fn workloads_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../workloads")
}

pub fn load(rel: &str) -> Workload {
    let path = workloads_dir().join(rel);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_workload(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn list(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "workload"))
        .collect();
    out.sort();
    out
}

/// Every shipped workload that is meant to be correct, with its path
/// relative to the workloads directory.
pub fn correct_corpus() -> Vec<(String, Workload)> {
    let root = workloads_dir();
    let mut paths = list(&root);
    paths.extend(list(&root.join("small")));
    paths
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(&root).unwrap().display().to_string();
            let w = load(&rel);
            (rel, w)
        })
        .collect()
}

/// The exhaustively checked corpus: small hand-written workloads plus the
/// two dependency shapes.
pub fn small_corpus() -> Vec<(String, Workload)> {
    let mut out: Vec<(String, Workload)> = list(&workloads_dir().join("small"))
        .into_iter()
        .map(|p| {
            let rel = format!("small/{}", p.file_name().unwrap().to_string_lossy());
            let w = load(&rel);
            (rel, w)
        })
        .collect();
    for f in ["transitive-dependency.workload", "intermediate-node.workload"] {
        out.push((f.to_string(), load(f)));
    }
    out
}

pub fn config(w: &Workload, seed: u64, policy: ProgressPolicy) -> SimConfig {
    SimConfig::new(w.world_size).seed(seed).policy(policy)
}

pub fn run_cc(w: &Workload, seed: u64, policy: ProgressPolicy, at: Option<RequestAt>) -> Result<SimResult, SimError> {
    run(&config(w, seed, policy), w, CcProtocol::new(w.world_size, CcOptions::default()), at)
}

pub fn run_native(w: &Workload, seed: u64, policy: ProgressPolicy) -> Result<SimResult, SimError> {
    run(&config(w, seed, policy), w, NoProtocol, None)
}

pub fn run_2pc(w: &Workload, seed: u64, at: Option<RequestAt>) -> Result<SimResult, SimError> {
    run(&config(w, seed, ProgressPolicy::Eager), w, TwoPcProtocol::new(w.world_size), at)
}

/// Explains why a snapshot result is not safe, or `None` if it is.
pub fn unsafe_reason(r: &SimResult) -> Option<String> {
    if r.is_safe() {
        return None;
    }
    let mut why = Vec::new();
    match &r.verdict {
        None => why.push("no snapshot verdict".to_string()),
        Some(v) => {
            for c in v.failures_for(r.protocol) {
                why.push(format!("{}: {}", c.check, c.witnesses.join("; ")));
            }
        }
    }
    if let Some(m) = &r.target_mismatches {
        why.extend(m.iter().cloned());
    }
    Some(why.join(" | "))
}
